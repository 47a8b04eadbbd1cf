//! Categorical distributions over plain slices, used outside the tape for
//! acting and for reporting.

use rand::Rng;

use super::graph::{log_softmax_in_place, softmax_in_place};
use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-6;

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("softmax"));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("log_softmax"));
    }
    let mut out = logits.to_vec();
    log_softmax_in_place(&mut out);
    Ok(out)
}

fn validate(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::EmptyInput("categorical"));
    }
    let sum: f64 = probs.iter().sum();
    let min = probs.iter().cloned().fold(f64::INFINITY, f64::min);
    if (sum - 1.0).abs() > NORMALIZATION_TOL || min < 0.0 || !sum.is_finite() {
        return Err(Error::NotADistribution { sum, min });
    }
    Ok(())
}

/// Inverse-CDF sample. Consumes exactly one uniform draw.
pub fn categorical_sample<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    validate(probs)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc && p > 0.0 {
            return Ok(i);
        }
    }
    Ok(last_positive)
}

pub fn categorical_log_prob(probs: &[f64], action: usize) -> Result<f64> {
    validate(probs)?;
    probs
        .get(action)
        .map(|p| p.ln())
        .ok_or(Error::IndexOutOfRange {
            index: action,
            len: probs.len(),
        })
}

pub fn categorical_entropy(probs: &[f64]) -> Result<f64> {
    validate(probs)?;
    Ok(-probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
}

pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}
