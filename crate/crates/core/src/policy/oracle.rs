//! Exhaustive search over every legal round sequence. Only for tiny
//! instances; used as the optimality reference in tests and benchmarks.

use std::collections::{HashMap, VecDeque};

use crate::env::RearrangeEnv;
use crate::model::{AssignmentPair, Instance};

use super::{Policy, PolicyError};

pub const ORACLE_MAX_OBJECTS: usize = 6;

type Key = (u64, [u64; 4]);

fn key(env: &RearrangeEnv) -> Key {
    let mask = env
        .mask()
        .iter()
        .enumerate()
        .fold(0u64, |acc, (i, &m)| acc | (m as u64) << i);
    let [a, b] = env.ee();
    let ((w, x), (y, z)) = (a.key(), b.key());
    (mask, [w, x, y, z])
}

fn solve(env: &RearrangeEnv, memo: &mut HashMap<Key, (u64, Option<AssignmentPair>)>) -> Result<u64, PolicyError> {
    if env.is_done() {
        return Ok(0);
    }
    let k = key(env);
    if let Some(&(c, _)) = memo.get(&k) {
        return Ok(c);
    }
    let mut best = (u64::MAX, None);
    for pair in env.legal_pairs() {
        let plan = env.preview(pair)?;
        let mut next = env.clone();
        next.apply(pair, &plan);
        let c = plan.m_tau + solve(&next, memo)?;
        if c < best.0 {
            best = (c, Some(pair));
        }
    }
    memo.insert(k, best);
    Ok(best.0)
}

/// Optimal makespan and one optimal round sequence (the first in
/// lexicographic pair order among ties).
pub fn brute_force_oracle(instance: &Instance) -> Result<(u64, Vec<AssignmentPair>), PolicyError> {
    if instance.len() > ORACLE_MAX_OBJECTS {
        return Err(PolicyError::TooLarge {
            policy: "oracle",
            n: instance.len(),
            max: ORACLE_MAX_OBJECTS,
        });
    }
    let mut memo = HashMap::new();
    let mut env = RearrangeEnv::new(instance.clone());
    let best = solve(&env, &mut memo)?;
    let mut seq = Vec::new();
    while !env.is_done() {
        let pair = memo[&key(&env)].1.expect("non-terminal states store a pair");
        env.step(pair)?;
        seq.push(pair);
    }
    debug_assert_eq!(env.log().makespan, best);
    Ok((best, seq))
}

#[derive(Default)]
pub struct OraclePolicy {
    plan: VecDeque<AssignmentPair>,
}

impl Policy for OraclePolicy {
    fn name(&self) -> &str {
        "oracle"
    }

    fn begin_episode(&mut self, instance: &Instance) -> Result<(), PolicyError> {
        self.plan = brute_force_oracle(instance)?.1.into();
        Ok(())
    }

    fn decide(&mut self, _env: &RearrangeEnv) -> Result<AssignmentPair, PolicyError> {
        self.plan
            .pop_front()
            .ok_or_else(|| PolicyError::NoLegalAction("oracle plan exhausted".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ObjectSpec, Scheme, WorkspaceConfig};
    use crate::sampler::{sample_instance, SamplerSpec};

    #[test]
    fn two_objects_enumeration() {
        let inst = sample_instance(&SamplerSpec::new(2, Scheme::CA, 3)).unwrap();
        let (best, seq) = brute_force_oracle(&inst).unwrap();
        // Explicit enumeration: two concurrent orientations, or four
        // single-arm sequences where the second round is forced.
        let mut options = Vec::new();
        for pair in [AssignmentPair::both(0, 1), AssignmentPair::both(1, 0)] {
            let mut env = RearrangeEnv::new(inst.clone());
            env.step(pair).unwrap();
            options.push(env.log().makespan);
        }
        let env = RearrangeEnv::new(inst.clone());
        assert_eq!(env.legal_pairs().len(), 2);
        assert_eq!(best, *options.iter().min().unwrap());
        assert_eq!(seq.len(), 1);
    }

    #[test]
    fn opposite_exclusive_objects_finish_in_one_round() {
        let inst = Instance::new(
            WorkspaceConfig::default(),
            Scheme::FS,
            0,
            vec![
                ObjectSpec::new([90.0, 10.0], [80.0, 30.0]),
                ObjectSpec::new([10.0, 10.0], [20.0, 30.0]),
            ],
        )
        .unwrap();
        let (best, seq) = brute_force_oracle(&inst).unwrap();
        assert_eq!(seq, vec![AssignmentPair::both(1, 0)]);
        let mut env = RearrangeEnv::new(inst);
        assert_eq!(env.step(seq[0]).unwrap().info.m_tau, best);
    }

    #[test]
    fn refuses_large_instances() {
        let inst = sample_instance(&SamplerSpec::new(7, Scheme::CA, 3)).unwrap();
        assert!(matches!(brute_force_oracle(&inst), Err(PolicyError::TooLarge { .. })));
    }
}
