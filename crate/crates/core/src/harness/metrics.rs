use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of `metrics.csv`. Field order is the column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub rollout_idx: usize,
    pub env_steps: usize,
    /// Mean return of the most recent completed episodes (moving window);
    /// empty until an episode has finished.
    pub mean_extrinsic_reward: Option<f64>,
    pub mean_intrinsic_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    #[serde(rename = "J_fwd")]
    pub j_fwd: f64,
    #[serde(rename = "J_inv")]
    pub j_inv: f64,
    pub feature_std: f64,
    pub attn_weight_entropy: Option<f64>,
    pub trap_time_fraction: Option<f64>,
    pub wall_time_s: Option<f64>,
}

pub const METRICS_COLUMNS: [&str; 13] = [
    "rollout_idx",
    "env_steps",
    "mean_extrinsic_reward",
    "mean_intrinsic_reward",
    "policy_loss",
    "value_loss",
    "entropy",
    "J_fwd",
    "J_inv",
    "feature_std",
    "attn_weight_entropy",
    "trap_time_fraction",
    "wall_time_s",
];

/// Bins of `n·w` for attention-weight histograms, `n` being the number of
/// positions: uniform weights land in the bin starting at 1.
pub const WEIGHT_BIN_EDGES: [f64; 8] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 4.0];

/// One row of `diagnostics.csv`: quantities that are useful for inspection
/// but not part of the metrics schema.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiagnosticsRecord {
    pub rollout_idx: usize,
    pub windowed_success: Option<f64>,
    pub episodes_completed: usize,
    pub grad_norm_total: f64,
    pub grad_norm_features: f64,
    pub grad_norm_actor: f64,
    pub grad_norm_critic: f64,
    pub grad_norm_head_attention: f64,
    pub grad_norm_forward: f64,
    pub grad_norm_inverse: f64,
    pub grad_norm_curiosity_attention: f64,
    /// Single attention: share of forward-gate weight on the features.
    pub attn_feature_mass: Option<f64>,
    /// Fraction of attention weights per [`WEIGHT_BIN_EDGES`] bin.
    pub attn_weight_hist: Option<[f64; 8]>,
}

impl DiagnosticsRecord {
    pub fn header() -> Vec<String> {
        let mut h: Vec<String> = [
            "rollout_idx",
            "windowed_success",
            "episodes_completed",
            "grad_norm_total",
            "grad_norm_features",
            "grad_norm_actor",
            "grad_norm_critic",
            "grad_norm_head_attention",
            "grad_norm_forward",
            "grad_norm_inverse",
            "grad_norm_curiosity_attention",
            "attn_feature_mass",
        ]
        .map(String::from)
        .to_vec();
        h.extend(WEIGHT_BIN_EDGES.iter().map(|e| format!("attn_hist_{e}")));
        h
    }

    fn fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut f = vec![
            self.rollout_idx.to_string(),
            opt(self.windowed_success),
            self.episodes_completed.to_string(),
            self.grad_norm_total.to_string(),
            self.grad_norm_features.to_string(),
            self.grad_norm_actor.to_string(),
            self.grad_norm_critic.to_string(),
            self.grad_norm_head_attention.to_string(),
            self.grad_norm_forward.to_string(),
            self.grad_norm_inverse.to_string(),
            self.grad_norm_curiosity_attention.to_string(),
            opt(self.attn_feature_mass),
        ];
        match self.attn_weight_hist {
            Some(h) => f.extend(h.iter().map(|v| v.to_string())),
            None => f.extend(std::iter::repeat(String::new()).take(WEIGHT_BIN_EDGES.len())),
        }
        f
    }
}

/// Fractions of `n·w` values falling in each [`WEIGHT_BIN_EDGES`] bin.
pub fn weight_histogram(weights: &[f64], cols: usize) -> [f64; 8] {
    let mut h = [0.0; 8];
    if weights.is_empty() {
        return h;
    }
    for &w in weights {
        let x = w * cols as f64;
        let bin = WEIGHT_BIN_EDGES.iter().rposition(|&e| x >= e).unwrap_or(0);
        h[bin] += 1.0;
    }
    let n = weights.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Writes `metrics.csv` and `diagnostics.csv`, flushing after every row.
pub struct RunLogger {
    metrics: csv::Writer<File>,
    diagnostics: csv::Writer<File>,
}

impl RunLogger {
    pub fn create(dir: &Path) -> Result<Self> {
        let open = |name: &str| {
            let path = dir.join(name);
            File::create(&path).map_err(|e| Error::io(&path, e))
        };
        let metrics = csv::WriterBuilder::new().has_headers(false).from_writer(open("metrics.csv")?);
        let diagnostics = csv::WriterBuilder::new().has_headers(false).from_writer(open("diagnostics.csv")?);
        let mut logger = RunLogger { metrics, diagnostics };
        logger.metrics.write_record(METRICS_COLUMNS)?;
        logger.diagnostics.write_record(DiagnosticsRecord::header())?;
        logger.flush()?;
        Ok(logger)
    }

    pub fn log(&mut self, metrics: &MetricsRecord, diagnostics: &DiagnosticsRecord) -> Result<()> {
        self.metrics.serialize(metrics)?;
        self.diagnostics.write_record(diagnostics.fields())?;
        self.flush()
    }

    fn flush(&mut self) -> Result<()> {
        let io = |e| Error::io("run log", e);
        self.metrics.flush().map_err(io)?;
        self.diagnostics.flush().map_err(io)
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Reads one numeric column of a CSV file as `(rollout_idx, value)` pairs,
/// skipping empty cells.
pub fn read_column(path: &Path, column: &str) -> Result<Vec<(usize, f64)>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (xi, yi) = (find("rollout_idx")?, find(column)?);
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let cell = |i: usize| row.get(i).unwrap_or("").trim().to_string();
        let y = cell(yi);
        if y.is_empty() {
            continue;
        }
        let x: usize = cell(xi)
            .parse()
            .map_err(|_| Error::config(format!("bad rollout_idx in {}", path.display())))?;
        let y: f64 = y
            .parse()
            .map_err(|_| Error::config(format!("bad `{column}` value in {}", path.display())))?;
        out.push((x, y));
    }
    Ok(out)
}

/// Mean over feature dimensions of the population standard deviation of
/// each dimension across the `rows` states in `phi` (`[rows, cols]`).
pub fn feature_std(phi: &[f64], cols: usize) -> Result<f64> {
    if cols == 0 || phi.len() % cols != 0 {
        return Err(Error::InvalidShape {
            shape: vec![cols],
            len: phi.len(),
        });
    }
    let rows = phi.len() / cols;
    if rows < 2 {
        return Err(Error::config(format!("feature_std needs at least 2 states, got {rows}")));
    }
    let mut total = 0.0;
    for j in 0..cols {
        let mean = (0..rows).map(|r| phi[r * cols + j]).sum::<f64>() / rows as f64;
        let var = (0..rows).map(|r| (phi[r * cols + j] - mean).powi(2)).sum::<f64>() / rows as f64;
        total += var.sqrt();
    }
    Ok(total / cols as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(i: usize) -> MetricsRecord {
        MetricsRecord {
            rollout_idx: i,
            env_steps: i * 20,
            mean_extrinsic_reward: (i > 1).then_some(0.5),
            mean_intrinsic_reward: 0.01,
            policy_loss: -0.2,
            value_loss: 0.3,
            entropy: 1.38,
            j_fwd: 0.05,
            j_inv: 1.2,
            feature_std: 0.4,
            attn_weight_entropy: None,
            trap_time_fraction: Some(0.1),
            wall_time_s: None,
        }
    }

    #[test]
    fn header_matches_record_fields() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = RunLogger::create(dir.path()).unwrap();
        for i in 1..=3 {
            log.log(&record(i), &DiagnosticsRecord::default()).unwrap();
        }
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_COLUMNS.join(","));
        let back = read_metrics(&dir.path().join("metrics.csv")).unwrap();
        assert_eq!(back, (1..=3).map(record).collect::<Vec<_>>());
        let diag = std::fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
        let cols = diag.lines().next().unwrap().split(',').count();
        assert!(diag.lines().all(|l| l.split(',').count() == cols));
    }

    #[test]
    fn column_reader_skips_empty_and_names_missing() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = RunLogger::create(dir.path()).unwrap();
        for i in 1..=3 {
            log.log(&record(i), &DiagnosticsRecord::default()).unwrap();
        }
        let path = dir.path().join("metrics.csv");
        assert_eq!(read_column(&path, "mean_extrinsic_reward").unwrap(), vec![(2, 0.5), (3, 0.5)]);
        match read_column(&path, "nonexistent") {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "nonexistent"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn feature_std_examples() {
        assert_eq!(feature_std(&[1.0, 2.0, 1.0, 2.0, 1.0, 2.0], 2).unwrap(), 0.0);
        assert_eq!(feature_std(&[0.0, 2.0], 1).unwrap(), 1.0);
        assert!(feature_std(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn histogram_bins() {
        let h = weight_histogram(&[0.25, 0.25, 0.25, 0.25, 0.0, 0.0, 0.0, 1.0], 4);
        assert_eq!(h[4], 0.5);
        assert_eq!(h[0], 0.375);
        assert_eq!(h[7], 0.125);
    }

    proptest! {
        #[test]
        fn feature_std_row_permutation_invariant(
            rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 2..8),
            rot in 0usize..8,
        ) {
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let mut perm = rows.clone();
            perm.rotate_left(rot % rows.len());
            perm.reverse();
            let pflat: Vec<f64> = perm.iter().flatten().copied().collect();
            let a = feature_std(&flat, 3).unwrap();
            let b = feature_std(&pflat, 3).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
