//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::Result;

/// Denominator floor for relative errors; below it the comparison is absolute.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many randomly chosen coordinates per parameter.
    pub max_coords_per_block: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_coords_per_block: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    /// Coordinates whose stencil crossed a relu kink and were not compared.
    pub skipped_kinks: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self, tolerance: f64) -> Vec<&BlockReport> {
        self.blocks.iter().filter(|b| !(b.max_rel_err < tolerance)).collect()
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.failures(tolerance).is_empty()
    }

    pub fn checked(&self) -> usize {
        self.blocks.iter().map(|b| b.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.blocks.iter().map(|b| b.skipped_kinks).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn evaluate<F>(store: &ParamStore, loss_fn: &F) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let loss = loss_fn(&mut g)?;
    Ok((g.scalar_value(loss)?, g.activation_signature()))
}

/// Compares the tape gradient of `loss_fn` against central differences for
/// every trainable parameter block in `store`. The store is restored before
/// returning.
pub fn finite_difference_check<F>(store: &mut ParamStore, loss_fn: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let (analytic, base_sig) = {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        let grads = g.backward(loss)?;
        let per_param: Vec<Option<Vec<f64>>> = store.ids().map(|id| grads.param(id).map(<[f64]>::to_vec)).collect();
        (per_param, g.activation_signature())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = opts.step;
    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (name, len, trainable) = {
            let p = store.get(id);
            (p.name.clone(), p.tensor.len(), p.trainable)
        };
        if !trainable {
            continue;
        }
        let coords: Vec<usize> = match opts.max_coords_per_block {
            Some(k) if k < len => {
                let mut c = sample(&mut rng, len, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };
        let mut block = BlockReport {
            name,
            checked: 0,
            skipped_kinks: 0,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
        };
        for j in coords {
            let orig = store.tensor(id).values()[j];
            store.tensor_mut(id).values_mut()[j] = orig + h;
            let plus = evaluate(store, &loss_fn);
            store.tensor_mut(id).values_mut()[j] = orig - h;
            let minus = evaluate(store, &loss_fn);
            store.tensor_mut(id).values_mut()[j] = orig;
            let ((fp, sp), (fm, sm)) = (plus?, minus?);
            if sp != base_sig || sm != base_sig {
                block.skipped_kinks += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[id.index()].as_ref().map_or(0.0, |g| g[j]);
            block.checked += 1;
            block.max_abs_err = block.max_abs_err.max((a - numeric).abs());
            block.max_rel_err = block.max_rel_err.max(relative_error(a, numeric));
        }
        report.blocks.push(block);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::params::Linear;
    use crate::diff::Tensor;

    #[test]
    fn affine_layer_passes_tight_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "l", 4, 3, &mut rng).unwrap();
        let x = Tensor::matrix(2, 4, vec![0.3, -0.2, 1.1, 0.5, -0.7, 0.9, 0.0, 0.25]).unwrap();
        let report = finite_difference_check(
            &mut store,
            |g| {
                let xv = g.constant(x.clone());
                let y = lin.forward(g, xv)?;
                let sq = g.square(y);
                Ok(g.mean(sq))
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passes(1e-6), "{report:?}");
        assert_eq!(report.checked(), 15);
    }

    #[test]
    fn relu_at_kink_free_input() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::vector(vec![-1.3, 0.4, 2.2, -0.05]).unwrap()).unwrap();
        let id = store.find("x").unwrap();
        let report = finite_difference_check(
            &mut store,
            |g| {
                let x = g.param(id);
                let r = g.relu(x);
                let t = g.tanh(r);
                Ok(g.mean(t))
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passes(1e-6), "{report:?}");
        assert_eq!(report.skipped(), 0);
    }

    #[test]
    fn stencil_across_kink_is_skipped() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![1e-7, 1.0]).unwrap()).unwrap();
        let report = finite_difference_check(
            &mut store,
            |g| {
                let x = g.param(id);
                let r = g.relu(x);
                Ok(g.mean(r))
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.skipped(), 1);
        assert_eq!(report.checked(), 1);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // The tape sees `detach(x) * x`; the true derivative of x² is 2x.
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(1.5)).unwrap();
        let report = finite_difference_check(
            &mut store,
            |g| {
                let x = g.param(id);
                let d = g.detach(x);
                let p = g.mul(x, d)?;
                Ok(g.mean(p))
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.passes(1e-4));
        assert!((report.max_rel_err() - 0.5).abs() < 1e-6);
    }
}
