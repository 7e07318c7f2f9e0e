//! Random Split: a uniformly random legal pair every round.

use crate::env::RearrangeEnv;
use crate::model::{AssignmentPair, Instance};
use crate::sampler::UnitStream;

use super::{Policy, PolicyError};

pub struct RandomSplitPolicy {
    salt: u64,
    stream: UnitStream,
}

impl RandomSplitPolicy {
    /// The per-episode stream is seeded with `instance.seed ^ salt`.
    pub fn new(salt: u64) -> Self {
        Self {
            salt,
            stream: UnitStream::new(salt),
        }
    }
}

/// Draws uniformly from the legal ordered pairs of the current state.
pub fn random_split(env: &RearrangeEnv, stream: &mut UnitStream) -> Result<AssignmentPair, PolicyError> {
    let pairs = env.legal_pairs();
    if pairs.is_empty() {
        return Err(PolicyError::NoLegalAction("episode finished".into()));
    }
    Ok(pairs[stream.next_below(pairs.len() as u64) as usize])
}

impl Policy for RandomSplitPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn begin_episode(&mut self, instance: &Instance) -> Result<(), PolicyError> {
        self.stream = UnitStream::new(instance.seed ^ self.salt);
        Ok(())
    }

    fn decide(&mut self, env: &RearrangeEnv) -> Result<AssignmentPair, PolicyError> {
        random_split(env, &mut self.stream)
    }
}
