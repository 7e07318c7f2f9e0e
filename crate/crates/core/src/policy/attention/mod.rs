//! Attention-based assignment policy (inference only).
//!
//! Arm and object states are embedded by small MLPs, arms cross-attend to
//! each other, objects self-attend, and a per-arm pointer decoder scores
//! every remaining object. Each arm then takes its most probable object,
//! with argmax collisions resolved by [`select_greedy`].

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use super::{Policy, PolicyError};
use crate::env::{Observation, RearrangeEnv};
use crate::model::{Arm, AssignmentPair, Instance};

pub mod network;
pub mod weights;

pub use network::{masked_softmax, pointer_logits, AttentionNet, ObjectCache};
pub use weights::{sidecar_path, NetworkConfig, Tensor, WeightBundle, WeightError};

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    /// Row `i` is arm `i`'s distribution over all objects; unavailable
    /// objects have probability exactly 0. An arm with nothing available
    /// gets an all-zero row.
    pub probs: [Vec<f64>; 2],
    pub chosen: AssignmentPair,
    pub attention_map: [Vec<f64>; 2],
    pub value: f64,
}

/// Row-wise masked softmax. Fails if a row has no finite logit.
pub fn assignment_distribution(logits: &[Vec<f64>; 2]) -> Result<[Vec<f64>; 2], PolicyError> {
    let row = |arm: Arm| {
        masked_softmax(&logits[arm.index()])
            .ok_or_else(|| PolicyError::NoLegalAction(format!("every object is masked for {arm}")))
    };
    Ok([row(Arm::Left)?, row(Arm::Right)?])
}

/// Legal objects of one arm sorted by descending probability, ties to the
/// lower index.
fn ranked(probs: &[f64], legal: &[bool]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).filter(|&j| legal[j]).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx
}

/// Each arm takes its argmax over its legal objects. When both want the same
/// object the more confident arm keeps it (arm 1 on ties) and the other
/// falls back to its runner-up, or idles if it has none.
pub fn select_greedy(probs: &[Vec<f64>; 2], legal: &[Vec<bool>; 2]) -> AssignmentPair {
    let r1 = ranked(&probs[0], &legal[0]);
    let r2 = ranked(&probs[1], &legal[1]);
    match (r1.first().copied(), r2.first().copied()) {
        (Some(a), Some(b)) if a == b => {
            if probs[0][a] >= probs[1][b] {
                AssignmentPair::new(Some(a), r2.get(1).copied())
            } else {
                AssignmentPair::new(r1.get(1).copied(), Some(b))
            }
        }
        (a, b) => AssignmentPair::new(a, b),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttentionRow {
    pub round: usize,
    pub arm: usize,
    pub object: usize,
    pub probability: f64,
}

/// One row per (arm, object); arms are numbered 1 and 2.
pub fn export_attention_map(output: &PolicyOutput, round: usize) -> Vec<AttentionRow> {
    Arm::BOTH
        .iter()
        .flat_map(|&arm| {
            output.attention_map[arm.index()]
                .iter()
                .enumerate()
                .map(move |(object, &probability)| AttentionRow {
                    round,
                    arm: arm.index() + 1,
                    object,
                    probability,
                })
        })
        .collect()
}

/// CSV with header `round,arm,object,probability`. Probabilities are written
/// in shortest round-trip form.
pub fn attention_csv(rows: &[AttentionRow]) -> String {
    let mut out = String::from("round,arm,object,probability\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.round, r.arm, r.object, r.probability);
    }
    out
}

impl AttentionNet {
    /// Full forward pass from an observation.
    pub fn forward(&self, obs: &Observation) -> Result<PolicyOutput, PolicyError> {
        self.forward_cached(&self.cache_objects(&obs.object_states), obs)
    }

    /// Forward pass reusing a per-instance object cache.
    pub fn forward_cached(&self, cache: &ObjectCache, obs: &Observation) -> Result<PolicyOutput, PolicyError> {
        if cache.states.len() != obs.object_states.len() {
            return Err(PolicyError::BadParameter {
                policy: "attention".into(),
                message: "object cache belongs to another instance".into(),
            });
        }
        let arms = self.encode_arms(&obs.arm_states);
        let probs = Arm::BOTH.map(|arm| {
            let mask = &obs.reach_mask[arm.index()];
            let logits = self.decode_cached(arm, arms.row(arm.index()), cache, mask);
            masked_softmax(&logits).unwrap_or_else(|| vec![0.0; logits.len()])
        });
        let chosen = select_greedy(&probs, &obs.reach_mask);
        if chosen.a1.is_none() && chosen.a2.is_none() {
            return Err(PolicyError::NoLegalAction("no object is available to either arm".into()));
        }
        let value = self.value(arms.view(), cache.embeddings.view(), &obs.global_mask);
        Ok(PolicyOutput {
            attention_map: probs.clone(),
            probs,
            chosen,
            value,
        })
    }
}

pub struct AttentionPolicy {
    net: Arc<AttentionNet>,
    cache: Option<ObjectCache>,
    last: Option<PolicyOutput>,
}

impl AttentionPolicy {
    pub fn new(net: Arc<AttentionNet>) -> Self {
        Self {
            net,
            cache: None,
            last: None,
        }
    }

    pub fn net(&self) -> &AttentionNet {
        &self.net
    }

    /// Output of the most recent decision, for attention-map export.
    pub fn last_output(&self) -> Option<&PolicyOutput> {
        self.last.as_ref()
    }
}

impl Policy for AttentionPolicy {
    fn name(&self) -> &str {
        "attention"
    }

    fn begin_episode(&mut self, instance: &Instance) -> Result<(), PolicyError> {
        let obs = RearrangeEnv::new(instance.clone()).observation();
        self.cache = Some(self.net.cache_objects(&obs.object_states));
        self.last = None;
        Ok(())
    }

    fn decide(&mut self, env: &RearrangeEnv) -> Result<AssignmentPair, PolicyError> {
        let obs = env.observation();
        if self.cache.as_ref().is_none_or(|c| c.states != obs.object_states) {
            self.cache = Some(self.net.cache_objects(&obs.object_states));
        }
        let out = self.net.forward_cached(self.cache.as_ref().unwrap(), &obs)?;
        let pair = out.chosen;
        self.last = Some(out);
        Ok(pair)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvOptions;
    use crate::model::Scheme;
    use crate::policy::run_episode;
    use crate::sampler::{sample_instance, SamplerSpec};

    fn net(seed: u64) -> Arc<AttentionNet> {
        let cfg = NetworkConfig {
            d: 32,
            heads: 4,
            mlp_hidden: 16,
            ..NetworkConfig::default()
        };
        Arc::new(AttentionNet::from_bundle(&WeightBundle::random(cfg, seed)).unwrap())
    }

    #[test]
    fn greedy_selection_examples() {
        let all = [vec![true, true], vec![true, true]];
        let p = [vec![0.9, 0.1], vec![0.2, 0.8]];
        assert_eq!(select_greedy(&p, &all), AssignmentPair::both(0, 1));
        let p = [vec![0.9, 0.1], vec![0.6, 0.4]];
        assert_eq!(select_greedy(&p, &all), AssignmentPair::both(0, 1));
        let p = [vec![0.4], vec![0.7]];
        assert_eq!(select_greedy(&p, &[vec![true], vec![true]]), AssignmentPair::new(None, Some(0)));
        // Equal confidence goes to arm 1.
        let p = [vec![0.5, 0.5], vec![0.5, 0.5]];
        assert_eq!(select_greedy(&p, &all), AssignmentPair::both(0, 1));
        // Illegal objects are never chosen even with mass on them; arm 1 loses
        // the conflict and has no runner-up.
        let p = [vec![0.0, 1.0], vec![0.7, 0.3]];
        let legal = [vec![true, false], vec![true, true]];
        assert_eq!(select_greedy(&p, &legal), AssignmentPair::new(None, Some(0)));
        let legal = [vec![true, true], vec![true, false]];
        assert_eq!(select_greedy(&p, &legal), AssignmentPair::both(1, 0));
    }

    #[test]
    fn distribution_rejects_all_masked_row() {
        let ninf = f64::NEG_INFINITY;
        assert!(assignment_distribution(&[vec![0.0, 1.0], vec![ninf, ninf]]).is_err());
        let [a, b] = assignment_distribution(&[vec![0.0, 0.0], vec![ninf, 3.2]]).unwrap();
        assert_eq!((a, b), (vec![0.5, 0.5], vec![0.0, 1.0]));
    }

    #[test]
    fn forward_respects_masks_and_rows_sum_to_one() {
        let net = net(1);
        let inst = sample_instance(&SamplerSpec::new(9, Scheme::FS, 4)).unwrap();
        let mut env = RearrangeEnv::new(inst);
        env.step(env.legal_pairs()[0]).unwrap();
        let obs = env.observation();
        let out = net.forward(&obs).unwrap();
        for arm in 0..2 {
            let row = &out.probs[arm];
            if obs.reach_mask[arm].iter().any(|&m| m) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
            for (p, &m) in row.iter().zip(&obs.reach_mask[arm]) {
                assert_eq!(*p == 0.0, !m || *p == 0.0);
                if !m {
                    assert_eq!(*p, 0.0);
                }
            }
        }
        assert!(env.check_pair(out.chosen).is_ok());
        assert_eq!(net.forward(&obs).unwrap(), out);
    }

    #[test]
    fn attention_map_export() {
        let net = net(2);
        let inst = sample_instance(&SamplerSpec::new(5, Scheme::CA, 1)).unwrap();
        let mut env = RearrangeEnv::new(inst);
        env.step(env.legal_pairs()[1]).unwrap();
        let out = net.forward(&env.observation()).unwrap();
        let rows = export_attention_map(&out, 1);
        assert_eq!(rows.len(), 10);
        for r in &rows {
            assert_eq!(r.probability, out.probs[r.arm - 1][r.object]);
            if !env.mask()[r.object] {
                assert_eq!(r.probability, 0.0);
            }
        }
        let csv = attention_csv(&rows);
        assert_eq!(csv.lines().count(), 11);
        let parsed: f64 = csv.lines().nth(3).unwrap().rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(parsed, rows[2].probability);
    }

    #[test]
    fn any_object_count_evaluates() {
        let net = net(3);
        for n in [1, 2, 3, 10, 25] {
            let inst = sample_instance(&SamplerSpec::new(n, Scheme::CA, n as u64)).unwrap();
            let mut p = AttentionPolicy::new(net.clone());
            let out = run_episode(&mut p, &inst, EnvOptions::default()).unwrap();
            out.log.check_complete(n).unwrap();
            assert!(p.last_output().is_some());
        }
    }

    #[test]
    fn cache_is_rebuilt_for_a_new_instance() {
        let net = net(4);
        let a = sample_instance(&SamplerSpec::new(6, Scheme::CA, 1)).unwrap();
        let b = sample_instance(&SamplerSpec::new(6, Scheme::CA, 2)).unwrap();
        let mut p = AttentionPolicy::new(net.clone());
        p.begin_episode(&a).unwrap();
        let env = RearrangeEnv::new(b);
        let chosen = p.decide(&env).unwrap();
        assert_eq!(chosen, net.forward(&env.observation()).unwrap().chosen);
    }
}
