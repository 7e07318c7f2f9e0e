//! Assignment policies behind a common trait, selectable by name.
//!
//! Every policy sees the live environment and returns one legal
//! [`AssignmentPair`] per round. Offline policies do their planning in
//! [`Policy::begin_episode`]. The [`PolicyRegistry`] maps CLI/config names
//! (`random`, `greedy`, `matching_dp`, `oracle`, `attention:<weights>`) to
//! factories that produce fresh policy instances for parallel workers.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::env::{EnvError, EnvOptions, RearrangeEnv};
use crate::model::{AssignmentPair, EpisodeLog, Instance};
use crate::planner::PlanError;

pub mod attention;
pub mod greedy;
pub mod matching;
pub mod oracle;
pub mod random;

pub use attention::AttentionPolicy;
pub use greedy::GreedyPolicy;
pub use matching::MatchingDpPolicy;
pub use oracle::OraclePolicy;
pub use random::RandomSplitPolicy;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Weights(#[from] attention::WeightError),
    #[error("instance has {n} objects; {policy} supports at most {max}")]
    TooLarge { policy: &'static str, n: usize, max: usize },
    #[error("no feasible pairing: {0}")]
    Infeasible(String),
    #[error("no legal action: {0}")]
    NoLegalAction(String),
    #[error("unknown policy '{0}'")]
    UnknownPolicy(String),
    #[error("policy '{policy}': {message}")]
    BadParameter { policy: String, message: String },
}

pub trait Policy: Send {
    fn name(&self) -> &str;

    /// Called before the first round of every episode.
    fn begin_episode(&mut self, _instance: &Instance) -> Result<(), PolicyError> {
        Ok(())
    }

    fn decide(&mut self, env: &RearrangeEnv) -> Result<AssignmentPair, PolicyError>;
}

pub type PolicyFactory = Arc<dyn Fn() -> Box<dyn Policy> + Send + Sync>;

type Builder = Box<dyn Fn(Option<&str>) -> Result<PolicyFactory, PolicyError> + Send + Sync>;

pub struct PolicyRegistry {
    builders: BTreeMap<String, Builder>,
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        Self {
            builders: BTreeMap::new(),
        }
    }

    /// Registry with every built-in policy.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register("random", |param| {
            let salt = match param {
                None => 0,
                Some(s) => s.parse::<u64>().map_err(|e| PolicyError::BadParameter {
                    policy: "random".into(),
                    message: format!("seed salt '{s}': {e}"),
                })?,
            };
            Ok(Arc::new(move || Box::new(RandomSplitPolicy::new(salt)) as Box<dyn Policy>))
        });
        reg.register("greedy", |_| Ok(Arc::new(|| Box::new(GreedyPolicy) as Box<dyn Policy>)));
        reg.register("matching_dp", |_| {
            Ok(Arc::new(|| Box::new(MatchingDpPolicy::default()) as Box<dyn Policy>))
        });
        reg.register("oracle", |_| Ok(Arc::new(|| Box::new(OraclePolicy::default()) as Box<dyn Policy>)));
        reg.register("attention", |param| {
            let path = param.ok_or_else(|| PolicyError::BadParameter {
                policy: "attention".into(),
                message: "expected attention:<weights file>".into(),
            })?;
            let net = Arc::new(attention::AttentionNet::load(path)?);
            Ok(Arc::new(move || Box::new(AttentionPolicy::new(net.clone())) as Box<dyn Policy>))
        });
        reg
    }

    pub fn register<F>(&mut self, name: &str, builder: F)
    where
        F: Fn(Option<&str>) -> Result<PolicyFactory, PolicyError> + Send + Sync + 'static,
    {
        self.builders.insert(name.to_string(), Box::new(builder));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }

    /// Resolves `name` or `name:param`.
    pub fn build(&self, spec: &str) -> Result<PolicyFactory, PolicyError> {
        let (name, param) = match spec.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (spec, None),
        };
        let builder = self
            .builders
            .get(name)
            .ok_or_else(|| PolicyError::UnknownPolicy(name.to_string()))?;
        builder(param)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub log: EpisodeLog,
    /// Undiscounted sum of rewards.
    pub episode_return: f64,
    /// Time spent inside the policy (planning and decisions), excluding the
    /// environment's own round planning.
    pub decision_time: Duration,
}

pub fn run_episode(
    policy: &mut dyn Policy,
    instance: &Instance,
    options: EnvOptions,
) -> Result<EpisodeOutcome, PolicyError> {
    let mut env = RearrangeEnv::with_options(instance.clone(), options);
    let mut decision_time = Duration::ZERO;
    let started = Instant::now();
    policy.begin_episode(instance)?;
    decision_time += started.elapsed();
    let mut episode_return = 0.0;
    while !env.is_done() {
        let started = Instant::now();
        let pair = policy.decide(&env)?;
        decision_time += started.elapsed();
        episode_return += env.step(pair)?.reward;
    }
    Ok(EpisodeOutcome {
        log: env.log().clone(),
        episode_return,
        decision_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Scheme;
    use crate::sampler::{sample_instance, SamplerSpec};

    #[test]
    fn registry_resolves_builtin_names() {
        let reg = PolicyRegistry::builtin();
        let names: Vec<_> = reg.names().collect();
        assert_eq!(names, ["attention", "greedy", "matching_dp", "oracle", "random"]);
        for spec in ["random", "random:7", "greedy", "matching_dp", "oracle"] {
            let factory = reg.build(spec).unwrap();
            let p = factory();
            assert_eq!(p.name(), spec.split(':').next().unwrap());
        }
        assert!(matches!(reg.build("nope"), Err(PolicyError::UnknownPolicy(_))));
        assert!(matches!(reg.build("attention"), Err(PolicyError::BadParameter { .. })));
        assert!(matches!(reg.build("random:x"), Err(PolicyError::BadParameter { .. })));
        assert!(reg.build("attention:/nonexistent/weights.darw").is_err());
    }

    #[test]
    fn custom_policies_can_be_registered() {
        struct First;
        impl Policy for First {
            fn name(&self) -> &str {
                "first"
            }
            fn decide(&mut self, env: &RearrangeEnv) -> Result<AssignmentPair, PolicyError> {
                Ok(env.legal_pairs()[0])
            }
        }
        let mut reg = PolicyRegistry::empty();
        reg.register("first", |_| Ok(Arc::new(|| Box::new(First) as Box<dyn Policy>)));
        let mut p = reg.build("first").unwrap()();
        let inst = sample_instance(&SamplerSpec::new(5, Scheme::FS, 3)).unwrap();
        let out = run_episode(p.as_mut(), &inst, EnvOptions::default()).unwrap();
        out.log.check_complete(5).unwrap();
        assert_eq!(out.episode_return, -(out.log.makespan as f64));
    }
}
