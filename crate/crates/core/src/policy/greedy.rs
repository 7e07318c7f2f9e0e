//! Greedy Search: simulate every legal pair from the current state and take
//! the one with the shortest round.

use crate::env::RearrangeEnv;
use crate::model::AssignmentPair;
use crate::planner::RoundPlan;

use super::{Policy, PolicyError};

pub struct GreedyPolicy;

/// Minimum-`m_tau` legal pair. Ties go to the lower arm-1 index, then the
/// lower arm-2 index, with IDLE ordered after every object.
pub fn greedy_choice(env: &RearrangeEnv) -> Result<(AssignmentPair, RoundPlan), PolicyError> {
    let mut best: Option<(AssignmentPair, RoundPlan)> = None;
    for pair in env.legal_pairs() {
        let plan = env.preview(pair)?;
        if best.as_ref().is_none_or(|(_, b)| plan.m_tau < b.m_tau) {
            best = Some((pair, plan));
        }
    }
    best.ok_or_else(|| PolicyError::NoLegalAction("episode finished".into()))
}

impl Policy for GreedyPolicy {
    fn name(&self) -> &str {
        "greedy"
    }

    fn decide(&mut self, env: &RearrangeEnv) -> Result<AssignmentPair, PolicyError> {
        greedy_choice(env).map(|(pair, _)| pair)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Instance, ObjectSpec, Scheme, WorkspaceConfig};

    #[test]
    fn prefers_delay_free_orientation() {
        // Object 0 on the left, object 1 on the right: crossing them forces a
        // concession, the natural orientation does not.
        let inst = Instance::new(
            WorkspaceConfig::default(),
            Scheme::CA,
            0,
            vec![
                ObjectSpec::new([30.0, 10.0], [35.0, 40.0]),
                ObjectSpec::new([70.0, 10.0], [65.0, 40.0]),
            ],
        )
        .unwrap();
        let env = RearrangeEnv::new(inst);
        let a = env.preview(AssignmentPair::both(0, 1)).unwrap();
        let b = env.preview(AssignmentPair::both(1, 0)).unwrap();
        assert_eq!(a.delay_steps, 0);
        assert!(b.delay_steps > 0 && b.m_tau > a.m_tau);
        let (pair, plan) = greedy_choice(&env).unwrap();
        assert_eq!(pair, AssignmentPair::both(0, 1));
        assert_eq!(plan, a);
    }

    #[test]
    fn single_legal_pair_is_returned() {
        let inst = Instance::new(
            WorkspaceConfig::default(),
            Scheme::FS,
            0,
            vec![ObjectSpec::new([10.0, 10.0], [20.0, 40.0])],
        )
        .unwrap();
        let env = RearrangeEnv::new(inst);
        assert_eq!(env.legal_pairs().len(), 1);
        assert_eq!(greedy_choice(&env).unwrap().0, AssignmentPair::new(Some(0), None));
    }
}
