//! Round-based rearrangement environment.
//!
//! One step publishes a task pair to both arms, plans the round and advances
//! until both arms are done. The reward is the negated round length, so the
//! undiscounted return of an episode is exactly `-makespan`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{reachable_by, Arm, AssignmentPair, EpisodeLog, Instance, Point, RoundRecord};
use crate::planner::{plan_round, PlanError, RoundPlan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("illegal action {pair}: {reason}")]
    IllegalAction { pair: AssignmentPair, reason: String },
    #[error("episode already finished")]
    EpisodeDone,
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `-m_tau` after every round.
    #[default]
    PerRound,
    /// Zero until the last round, which returns `-makespan`.
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvOptions {
    pub reward_mode: RewardMode,
    /// Reported to learners; rewards themselves are never discounted here.
    pub gamma: f64,
}

impl Default for EnvOptions {
    fn default() -> Self {
        Self {
            reward_mode: RewardMode::PerRound,
            gamma: 1.0,
        }
    }
}

/// Coordinates are normalized by the workspace width (x) and height (y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub arm_states: [[f64; 2]; 2],
    pub object_states: Vec<[f64; 4]>,
    pub global_mask: Vec<bool>,
    pub reach_mask: [Vec<bool>; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepInfo {
    pub m_tau: u64,
    pub delay: u64,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct RearrangeEnv {
    instance: Instance,
    options: EnvOptions,
    reachable: [Vec<bool>; 2],
    ee: [Point; 2],
    mask: Vec<bool>,
    log: EpisodeLog,
}

impl RearrangeEnv {
    pub fn new(instance: Instance) -> Self {
        Self::with_options(instance, EnvOptions::default())
    }

    pub fn with_options(instance: Instance, options: EnvOptions) -> Self {
        let reachable = Arm::BOTH.map(|arm| {
            instance
                .objects
                .iter()
                .map(|o| reachable_by(o, arm, &instance.config))
                .collect()
        });
        let n = instance.len();
        let ee = Arm::BOTH.map(|a| instance.config.home(a));
        Self {
            instance,
            options,
            reachable,
            ee,
            mask: vec![true; n],
            log: EpisodeLog::default(),
        }
    }

    /// Returns the arms home, clears masks and the log.
    pub fn reset(&mut self) -> Observation {
        self.ee = Arm::BOTH.map(|a| self.instance.config.home(a));
        self.mask.iter_mut().for_each(|m| *m = true);
        self.log = EpisodeLog::default();
        self.observation()
    }

    pub fn instance(&self) -> &Instance {
        &self.instance
    }

    pub fn options(&self) -> &EnvOptions {
        &self.options
    }

    pub fn ee(&self) -> [Point; 2] {
        self.ee
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn round(&self) -> usize {
        self.log.rounds.len()
    }

    pub fn remaining(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_done(&self) -> bool {
        self.remaining() == 0
    }

    /// Whether `arm` may take object `i` right now.
    pub fn available(&self, arm: Arm, i: usize) -> bool {
        self.mask.get(i).copied().unwrap_or(false) && self.reachable[arm.index()][i]
    }

    pub fn available_objects(&self, arm: Arm) -> impl Iterator<Item = usize> + '_ {
        (0..self.mask.len()).filter(move |&i| self.available(arm, i))
    }

    pub fn observation(&self) -> Observation {
        let cfg = &self.instance.config;
        let norm = |p: Point| [p.x / cfg.width, p.y / cfg.height];
        Observation {
            arm_states: self.ee.map(norm),
            object_states: self
                .instance
                .objects
                .iter()
                .map(|o| {
                    let [a, b] = norm(o.pick);
                    let [c, d] = norm(o.place);
                    [a, b, c, d]
                })
                .collect(),
            global_mask: self.mask.clone(),
            reach_mask: Arm::BOTH.map(|arm| (0..self.mask.len()).map(|i| self.available(arm, i)).collect()),
        }
    }

    /// Validates a pair against the masks. An arm may only idle when no
    /// object remains for it once the other arm's choice is taken.
    pub fn check_pair(&self, pair: AssignmentPair) -> Result<(), EnvError> {
        let illegal = |reason: String| Err(EnvError::IllegalAction { pair, reason });
        if self.is_done() {
            return Err(EnvError::EpisodeDone);
        }
        match (pair.a1, pair.a2) {
            (None, None) => return illegal("both arms idle".into()),
            (Some(i), Some(j)) if i == j => return illegal(format!("object {i} assigned to both arms")),
            _ => {}
        }
        for arm in Arm::BOTH {
            let other = pair.slot(arm.other());
            match pair.slot(arm) {
                Some(i) if i >= self.mask.len() => return illegal(format!("object {i} does not exist")),
                Some(i) if !self.mask[i] => return illegal(format!("object {i} already transferred")),
                Some(i) if !self.reachable[arm.index()][i] => {
                    return illegal(format!("object {i} unreachable by {arm}"))
                }
                Some(_) => {}
                None => {
                    if let Some(j) = self.available_objects(arm).find(|&j| Some(j) != other) {
                        return illegal(format!("{arm} idles while object {j} is available"));
                    }
                }
            }
        }
        Ok(())
    }

    /// All legal pairs in lexicographic order (IDLE after every index).
    pub fn legal_pairs(&self) -> Vec<AssignmentPair> {
        if self.is_done() {
            return Vec::new();
        }
        let slots = |arm: Arm| {
            self.available_objects(arm)
                .map(Some)
                .chain(std::iter::once(None))
                .collect::<Vec<_>>()
        };
        let (s1, s2) = (slots(Arm::Left), slots(Arm::Right));
        let mut pairs = Vec::new();
        for &a1 in &s1 {
            for &a2 in &s2 {
                let pair = AssignmentPair::new(a1, a2);
                if self.check_pair(pair).is_ok() {
                    pairs.push(pair);
                }
            }
        }
        pairs
    }

    /// Plans a round from the current state without applying it.
    pub fn preview(&self, pair: AssignmentPair) -> Result<RoundPlan, EnvError> {
        self.check_pair(pair)?;
        Ok(plan_round(self.ee, pair, &self.instance)?)
    }

    pub fn step(&mut self, pair: AssignmentPair) -> Result<StepResult, EnvError> {
        let plan = self.preview(pair)?;
        Ok(self.apply(pair, &plan))
    }

    /// Applies a plan previously obtained from [`Self::preview`] for `pair`.
    pub fn apply(&mut self, pair: AssignmentPair, plan: &RoundPlan) -> StepResult {
        self.ee = plan.final_positions();
        for i in pair.objects() {
            self.mask[i] = false;
        }
        self.log.push(RoundRecord {
            pair,
            m_tau: plan.m_tau,
            delay: plan.delay_steps,
        });
        let done = self.is_done();
        let reward = match self.options.reward_mode {
            RewardMode::PerRound => -(plan.m_tau as f64),
            RewardMode::Terminal if done => -(self.log.makespan as f64),
            RewardMode::Terminal => 0.0,
        };
        StepResult {
            observation: self.observation(),
            reward,
            done,
            info: StepInfo {
                m_tau: plan.m_tau,
                delay: plan.delay_steps,
                round: self.log.rounds.len(),
            },
        }
    }
}
