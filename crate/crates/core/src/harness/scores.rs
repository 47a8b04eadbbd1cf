use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::RunSummary;
use crate::error::{Error, Result};

/// Best score per environment and agent: `table[env][agent]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
}

impl ScoreTable {
    pub fn insert(&mut self, env: &str, agent: &str, score: f64) {
        self.scores.entry(env.to_string()).or_default().insert(agent.to_string(), score);
    }

    pub fn agents(&self) -> Vec<String> {
        let mut all: Vec<String> = self.scores.values().flat_map(|m| m.keys().cloned()).collect();
        all.sort();
        all.dedup();
        all
    }

    /// Builds a table from run directories: each run contributes its best
    /// windowed mean reward, averaged over seeds of the same (env, agent).
    pub fn from_runs(dirs: &[impl AsRef<Path>]) -> Result<Self> {
        let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for dir in dirs {
            let dir = dir.as_ref();
            let s = RunSummary::load(&dir.join("summary.json"))?;
            let best = s
                .best_mean_reward
                .ok_or_else(|| Error::Missing(format!("completed episodes in {}", dir.display())))?;
            cells.entry((s.env, s.agent.to_string())).or_default().push(best);
        }
        if cells.is_empty() {
            return Err(Error::EmptyInput("score table"));
        }
        let mut table = ScoreTable::default();
        for ((env, agent), v) in cells {
            table.insert(&env, &agent, v.iter().sum::<f64>() / v.len() as f64);
        }
        Ok(table)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedScores {
    /// `normalized[env][agent]`, the best agent of each env at 100.
    pub normalized: BTreeMap<String, BTreeMap<String, f64>>,
    /// Per agent: mean and population standard deviation across envs.
    pub summary: BTreeMap<String, (f64, f64)>,
}

impl NormalizedScores {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let envs: Vec<&String> = self.normalized.keys().collect();
        let _ = write!(out, "{:<10}", "agent");
        for e in &envs {
            let _ = write!(out, " {:>22}", e);
        }
        let _ = writeln!(out, " {:>8} {:>8}", "mean", "std");
        for (agent, (mean, std)) in &self.summary {
            let _ = write!(out, "{agent:<10}");
            for e in &envs {
                let _ = write!(out, " {:>22.2}", self.normalized[*e][agent]);
            }
            let _ = writeln!(out, " {mean:>8.2} {std:>8.2}");
        }
        out
    }
}

/// Scales each env's scores so its best agent reads 100, then summarizes
/// each agent across envs. An env where every agent scored the same
/// non-positive value maps to 100 for all.
pub fn normalize_scores(table: &ScoreTable) -> Result<NormalizedScores> {
    let agents = table.agents();
    if agents.is_empty() {
        return Err(Error::EmptyInput("score table"));
    }
    let mut normalized = BTreeMap::new();
    for (env, row) in &table.scores {
        let mut vals = Vec::with_capacity(agents.len());
        for a in &agents {
            let v = *row.get(a).ok_or_else(|| Error::Missing(format!("score for {a} on {env}")))?;
            if !v.is_finite() {
                return Err(Error::config(format!("non-finite score for {a} on {env}")));
            }
            vals.push(v);
        }
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let norm: BTreeMap<String, f64> = if max > 0.0 {
            agents.iter().zip(&vals).map(|(a, v)| (a.clone(), 100.0 * (v / max))).collect()
        } else if vals.iter().all(|v| *v == max) {
            agents.iter().map(|a| (a.clone(), 100.0)).collect()
        } else {
            return Err(Error::config(format!(
                "cannot normalize {env}: best score {max} is not positive"
            )));
        };
        normalized.insert(env.clone(), norm);
    }
    let n = normalized.len() as f64;
    let summary = agents
        .iter()
        .map(|a| {
            let xs: Vec<f64> = normalized.values().map(|m| m[a]).collect();
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            (a.clone(), (mean, var.sqrt()))
        })
        .collect();
    Ok(NormalizedScores { normalized, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(rows: &[(&str, &[(&str, f64)])]) -> ScoreTable {
        let mut t = ScoreTable::default();
        for (env, cells) in rows {
            for (a, v) in *cells {
                t.insert(env, a, *v);
            }
        }
        t
    }

    #[test]
    fn two_env_example() {
        let t = table(&[("env1", &[("A", 10.0), ("B", 20.0)]), ("env2", &[("A", 30.0), ("B", 30.0)])]);
        let n = normalize_scores(&t).unwrap();
        assert_eq!(n.summary["A"].0, 75.0);
        assert_eq!(n.summary["B"], (100.0, 0.0));
        assert_eq!(n.summary["A"].1, 25.0);
    }

    #[test]
    fn single_env_is_proportional() {
        let n = normalize_scores(&table(&[("e", &[("A", 2.0), ("B", 8.0), ("C", 4.0)])])).unwrap();
        assert_eq!(n.normalized["e"]["B"], 100.0);
        assert_eq!(n.normalized["e"]["A"], 25.0);
        assert_eq!(n.normalized["e"]["C"], 50.0);
    }

    #[test]
    fn equal_scores_all_hundred() {
        let n = normalize_scores(&table(&[("e1", &[("A", 3.0), ("B", 3.0)]), ("e2", &[("A", 0.0), ("B", 0.0)])]))
            .unwrap();
        for (mean, std) in n.summary.values() {
            assert_eq!((*mean, *std), (100.0, 0.0));
        }
    }

    #[test]
    fn missing_cell_and_bad_max_rejected() {
        let t = table(&[("e1", &[("A", 1.0), ("B", 2.0)]), ("e2", &[("A", 1.0)])]);
        assert!(matches!(normalize_scores(&t), Err(Error::Missing(_))));
        assert!(normalize_scores(&table(&[("e", &[("A", -1.0), ("B", -2.0)])])).is_err());
        assert!(normalize_scores(&ScoreTable::default()).is_err());
    }

    #[test]
    fn render_lists_every_agent() {
        let n = normalize_scores(&table(&[("e", &[("icm", 1.0), ("rcm", 2.0)])])).unwrap();
        let text = n.render();
        assert!(text.contains("icm") && text.contains("rcm") && text.contains("100.00"));
    }

    proptest! {
        #[test]
        fn per_env_scale_invariance(
            scores in prop::collection::vec(prop::collection::vec(0.01f64..100.0, 4), 1..5),
            env in 0usize..5,
            c in 0.01f64..100.0,
        ) {
            let names = ["a", "b", "c", "d"];
            let mut t = ScoreTable::default();
            for (i, row) in scores.iter().enumerate() {
                for (a, v) in names.iter().zip(row) {
                    t.insert(&format!("env{i}"), a, *v);
                }
            }
            let mut scaled = t.clone();
            let key = format!("env{}", env % scores.len());
            for v in scaled.scores.get_mut(&key).unwrap().values_mut() {
                *v *= c;
            }
            let (x, y) = (normalize_scores(&t).unwrap(), normalize_scores(&scaled).unwrap());
            for (e, row) in &x.normalized {
                for (a, v) in row {
                    prop_assert!((v - y.normalized[e][a]).abs() < 1e-9);
                }
            }
            for row in x.normalized.values() {
                prop_assert!(row.values().any(|v| *v == 100.0));
            }
        }
    }
}
