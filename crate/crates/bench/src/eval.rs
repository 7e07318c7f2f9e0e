//! Batch evaluation and computation-time scaling.

use dualarm_core::env::EnvOptions;
use dualarm_core::policy::{run_episode, EpisodeOutcome, PolicyFactory};
use dualarm_core::{Instance, SamplerSpec, Scheme};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::generate;
use crate::report::{InstanceRow, SCHEMA_VERSION};
use crate::BenchError;

/// Instances excluded from timing at the start of every run.
pub const WARMUP_INSTANCES: usize = 3;

fn row(policy: &str, inst: &Instance, out: &EpisodeOutcome) -> InstanceRow {
    InstanceRow {
        schema_version: SCHEMA_VERSION,
        policy: policy.to_string(),
        scheme: inst.scheme,
        n: inst.len(),
        seed: inst.seed,
        makespan: out.log.makespan,
        delay_total: out.log.delay_total,
        delay_proportion: out.log.delay_proportion(),
        rounds: out.log.rounds.len(),
        episode_return: out.episode_return,
        decision_time_s: out.decision_time.as_secs_f64(),
    }
}

/// Runs one episode per instance. Instances are spread over the rayon pool
/// (`jobs` threads, or the global pool); each worker owns its own policy.
/// Rows come back in instance order.
pub fn evaluate(
    policy: &str,
    factory: &PolicyFactory,
    instances: &[Instance],
    options: EnvOptions,
    jobs: Option<usize>,
) -> Result<Vec<InstanceRow>, BenchError> {
    let work = || {
        instances
            .par_iter()
            .map_init(
                || factory(),
                |p, inst| {
                    run_episode(p.as_mut(), inst, options)
                        .map(|out| row(policy, inst, &out))
                        .map_err(|e| BenchError::Policy(format!("{policy} on seed {}: {e}", inst.seed)))
                },
            )
            .collect::<Result<Vec<_>, _>>()
    };
    match jobs {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| BenchError::Args(e.to_string()))?
            .install(work),
        None => work(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub schema_version: u32,
    pub policy: String,
    pub scheme: Scheme,
    pub n: usize,
    pub count: usize,
    /// Mean in-policy seconds per instance.
    pub mean_decision_time_s: f64,
    /// Mean wall-clock seconds per episode including the environment.
    pub mean_episode_time_s: f64,
}

/// Times `count` fresh instances (after [`WARMUP_INSTANCES`] untimed ones)
/// on the calling thread.
pub fn time_policy(
    policy: &str,
    factory: &PolicyFactory,
    n: usize,
    scheme: Scheme,
    count: usize,
    seed: u64,
) -> Result<TimingRow, BenchError> {
    let instances = generate(&SamplerSpec::new(n, scheme, seed), count + WARMUP_INSTANCES)?;
    let mut p = factory();
    let (mut decision, mut wall) = (0.0, 0.0);
    for (k, inst) in instances.iter().enumerate() {
        let started = std::time::Instant::now();
        let out = run_episode(p.as_mut(), inst, EnvOptions::default())
            .map_err(|e| BenchError::Policy(format!("{policy} on seed {}: {e}", inst.seed)))?;
        let elapsed = started.elapsed().as_secs_f64();
        if k >= WARMUP_INSTANCES {
            decision += out.decision_time.as_secs_f64();
            wall += elapsed;
        }
    }
    let count_f = count.max(1) as f64;
    Ok(TimingRow {
        schema_version: SCHEMA_VERSION,
        policy: policy.to_string(),
        scheme,
        n,
        count,
        mean_decision_time_s: decision / count_f,
        mean_episode_time_s: wall / count_f,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
