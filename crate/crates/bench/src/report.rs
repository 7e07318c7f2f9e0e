//! Per-instance results, aggregates and their CSV/JSON forms.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use dualarm_core::Scheme;
use serde::{Deserialize, Serialize};

use crate::BenchError;

/// Bumped whenever a column is added, removed or changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub schema_version: u32,
    pub policy: String,
    pub scheme: Scheme,
    pub n: usize,
    pub seed: u64,
    pub makespan: u64,
    pub delay_total: u64,
    pub delay_proportion: f64,
    pub rounds: usize,
    pub episode_return: f64,
    /// Seconds spent inside the policy for the whole episode.
    pub decision_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub schema_version: u32,
    pub policy: String,
    pub scheme: Scheme,
    pub n: usize,
    pub count: usize,
    pub mean_makespan: f64,
    pub stderr_makespan: f64,
    pub mean_delay_proportion: f64,
    pub mean_decision_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub aggregates: Vec<AggregateRow>,
    pub instances: Vec<InstanceRow>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard error of the mean; 0 for fewer than two values.
fn stderr(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

/// Groups rows by (policy, scheme, n), in that sort order.
pub fn aggregate(rows: &[InstanceRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, String, usize), Vec<&InstanceRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.policy.clone(), r.scheme.to_string(), r.n))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let col = |f: fn(&InstanceRow) -> f64| g.iter().map(|r| f(r)).collect::<Vec<_>>();
            let makespans = col(|r| r.makespan as f64);
            AggregateRow {
                schema_version: SCHEMA_VERSION,
                policy: g[0].policy.clone(),
                scheme: g[0].scheme,
                n: g[0].n,
                count: g.len(),
                mean_makespan: mean(&makespans),
                stderr_makespan: stderr(&makespans),
                mean_delay_proportion: mean(&col(|r| r.delay_proportion)),
                mean_decision_time_s: mean(&col(|r| r.decision_time_s)),
            }
        })
        .collect()
}

impl BenchReport {
    pub fn new(instances: Vec<InstanceRow>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            aggregates: aggregate(&instances),
            instances,
        }
    }

    /// Writes `<prefix>.csv` (per instance), `<prefix>.summary.csv` and
    /// `<prefix>.json` (both tables).
    pub fn write(&self, prefix: &Path) -> Result<(), BenchError> {
        let with_ext = |ext: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(ext);
            std::path::PathBuf::from(s)
        };
        write_csv(&with_ext(".csv"), &self.instances)?;
        write_csv(&with_ext(".summary.csv"), &self.aggregates)?;
        let path = with_ext(".json");
        let file = File::create(&path).map_err(BenchError::io(&path))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self).map_err(|e| BenchError::Data(e.to_string()))
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| BenchError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    for r in rows {
        w.serialize(r).map_err(|e| BenchError::Data(e.to_string()))?;
    }
    w.flush().map_err(BenchError::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(policy: &str, n: usize, makespan: u64, delay: u64) -> InstanceRow {
        InstanceRow {
            schema_version: SCHEMA_VERSION,
            policy: policy.into(),
            scheme: Scheme::CA,
            n,
            seed: makespan,
            makespan,
            delay_total: delay,
            delay_proportion: delay as f64 / makespan as f64,
            rounds: n / 2,
            episode_return: -(makespan as f64),
            decision_time_s: 1e-3,
        }
    }

    #[test]
    fn aggregates_group_and_average() {
        let rows = vec![
            row("greedy", 4, 100, 10),
            row("greedy", 4, 110, 0),
            row("random", 4, 120, 30),
            row("greedy", 6, 150, 15),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 3);
        assert_eq!((agg[0].policy.as_str(), agg[0].n, agg[0].count), ("greedy", 4, 2));
        assert_eq!(agg[0].mean_makespan, 105.0);
        assert!((agg[0].stderr_makespan - 5.0).abs() < 1e-12);
        assert!((agg[0].mean_delay_proportion - 0.05).abs() < 1e-12);
        assert_eq!(agg[1].n, 6);
        assert_eq!(agg[2].stderr_makespan, 0.0);
    }

    #[test]
    fn files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("out");
        let report = BenchReport::new(vec![row("greedy", 4, 100, 10)]);
        report.write(&prefix).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
        assert!(csv.starts_with("schema_version,policy,scheme,n,seed,makespan"));
        let json: BenchReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("out.json")).unwrap()).unwrap();
        assert_eq!(json, report);
        assert!(dir.path().join("out.summary.csv").exists());
    }
}
