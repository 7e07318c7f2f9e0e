//! Lower-level dual-arm motion planning for a single assignment round.
//!
//! Both carriages share the x rail, so the only collision condition is the
//! x gap: `x2(t) - x1(t) >= d_safe` at every discrete step. A round is planned
//! by discretizing both nominal paths, scanning for the first interfering
//! step and, if one exists, letting one arm keep its nominal trajectory while
//! the other replays its path under a per-step clamp (it waits or backs off
//! whenever the gap would shrink below `d_safe`). Dwells at pick/place points
//! are never interrupted: a dwell only begins once the whole dwell window is
//! clear of the priority arm.
//!
//! An arm that has finished its trajectory holds its final position, except
//! when the other arm still needs the space: then it backs away along the
//! rail just far enough to keep the gap.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{reachable_by, Arm, AssignmentPair, Instance, ObjectSpec, Point, WorkspaceConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("object {object} is not reachable by {arm}")]
    Unreachable { arm: Arm, object: usize },
    #[error("trajectories start too close: gap {gap} < d_safe {d_safe}")]
    StartCollision { gap: f64, d_safe: f64 },
    #[error("priority decision requested for trajectories that do not interfere")]
    NoInterference,
    #[error("invalid assignment pair {0}")]
    InvalidPair(AssignmentPair),
    #[error("infeasible replan: {0}")]
    Infeasible(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub target: Point,
    pub dwell_after: u32,
}

/// Ordered waypoints for one arm in one round: travel to the pick point,
/// dwell, travel to the place point, dwell. Empty for an idle arm.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Waypath {
    pub segments: Vec<Segment>,
}

impl Waypath {
    pub fn idle() -> Self {
        Self::default()
    }

    pub fn is_idle(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Per-step end-effector positions; index 0 is the start state.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTrajectory {
    pub positions: Vec<Point>,
}

impl DiscreteTrajectory {
    pub fn stationary(at: Point) -> Self {
        Self { positions: vec![at] }
    }

    /// Number of time steps (positions after the start state).
    pub fn steps(&self) -> usize {
        self.positions.len() - 1
    }

    /// Position at step `t`; a finished trajectory holds its last position.
    pub fn at(&self, t: usize) -> Point {
        self.positions[t.min(self.positions.len() - 1)]
    }

    pub fn last(&self) -> Point {
        *self.positions.last().expect("trajectory is never empty")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub m1: DiscreteTrajectory,
    pub m2: DiscreteTrajectory,
    pub m_tau: u64,
    /// Steps of `m_tau` beyond the longer nominal trajectory.
    pub delay_steps: u64,
    pub nominal_m_tau: u64,
    /// Which arm kept its nominal trajectory, when a replan was needed.
    pub priority: Option<Arm>,
    pub ee1_final: Point,
    pub ee2_final: Point,
}

impl RoundPlan {
    pub fn replanned(&self) -> bool {
        self.priority.is_some()
    }

    pub fn final_positions(&self) -> [Point; 2] {
        [self.ee1_final, self.ee2_final]
    }

    /// Debug dump with columns `step,x1,y1,x2,y2,gap`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,x1,y1,x2,y2,gap\n");
        for t in 0..=self.m_tau as usize {
            let (a, b) = (self.m1.at(t), self.m2.at(t));
            let _ = writeln!(out, "{t},{},{},{},{},{}", a.x, a.y, b.x, b.y, b.x - a.x);
        }
        out
    }
}

pub fn init_plan(arm: Arm, obj: &ObjectSpec, object: usize, config: &WorkspaceConfig) -> Result<Waypath, PlanError> {
    if !reachable_by(obj, arm, config) || !config.contains(obj.pick) || !config.contains(obj.place) {
        return Err(PlanError::Unreachable { arm, object });
    }
    Ok(Waypath {
        segments: vec![
            Segment {
                target: obj.pick,
                dwell_after: config.pick_dwell,
            },
            Segment {
                target: obj.place,
                dwell_after: config.place_dwell,
            },
        ],
    })
}

/// Steps needed to travel from `a` to `b` with both axes driven at `speed`.
pub fn leg_steps(a: Point, b: Point, speed: f64) -> u32 {
    let d = (b.x - a.x).abs().max((b.y - a.y).abs()) / speed;
    if d <= 0.0 {
        0
    } else {
        // Absorb representation error so that e.g. 10.000000000000002 is 10 steps.
        (d * (1.0 - 1e-12)).ceil().max(1.0) as u32
    }
}

/// Position after `s` of `k` steps of the uniform leg `a -> b`.
fn lerp_leg(a: Point, b: Point, s: u32, k: u32) -> Point {
    if s >= k {
        return b;
    }
    let f = s as f64 / k as f64;
    Point::new(a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f)
}

pub fn discretize(path: &Waypath, start: Point, config: &WorkspaceConfig) -> DiscreteTrajectory {
    let mut positions = vec![start];
    let mut cur = start;
    for seg in &path.segments {
        let k = leg_steps(cur, seg.target, config.speed);
        positions.extend((1..=k).map(|s| lerp_leg(cur, seg.target, s, k)));
        cur = seg.target;
        positions.extend(std::iter::repeat_n(cur, seg.dwell_after as usize));
    }
    DiscreteTrajectory { positions }
}

/// Smallest `t >= 1` at which the x gap drops below `d_safe`.
pub fn check_collision(
    m1: &DiscreteTrajectory,
    m2: &DiscreteTrajectory,
    config: &WorkspaceConfig,
) -> Result<Option<usize>, PlanError> {
    let gap0 = m2.at(0).x - m1.at(0).x;
    if gap0 < config.d_safe {
        return Err(PlanError::StartCollision {
            gap: gap0,
            d_safe: config.d_safe,
        });
    }
    let horizon = m1.steps().max(m2.steps());
    Ok((1..=horizon).find(|&t| m2.at(t).x - m1.at(t).x < config.d_safe))
}

/// Largest x for the left carriage that keeps exactly `d_safe` clearance.
fn left_limit(right_x: f64, d_safe: f64) -> f64 {
    let mut lim = right_x - d_safe;
    while right_x - lim < d_safe {
        lim = lim.next_down();
    }
    lim
}

/// Smallest x for the right carriage that keeps exactly `d_safe` clearance.
fn right_limit(left_x: f64, d_safe: f64) -> f64 {
    let mut lim = left_x + d_safe;
    while lim - left_x < d_safe {
        lim = lim.next_up();
    }
    lim
}

fn gap_ok(arm: Arm, own_x: f64, other_x: f64, d_safe: f64) -> bool {
    match arm {
        Arm::Left => other_x - own_x >= d_safe,
        Arm::Right => own_x - other_x >= d_safe,
    }
}

#[derive(Debug, Clone, Copy)]
enum Phase {
    Travel { origin: Point, k: u32, s: u32 },
    Dwell { left: u32 },
    Done,
}

/// Replays a waypath one step at a time, subject to an x clamp.
struct Follower<'a> {
    segments: &'a [Segment],
    seg: usize,
    phase: Phase,
    pos: Point,
    speed: f64,
}

impl<'a> Follower<'a> {
    fn new(path: &'a Waypath, start: Point, speed: f64) -> Self {
        let mut f = Self {
            segments: &path.segments,
            seg: 0,
            phase: Phase::Done,
            pos: start,
            speed,
        };
        f.enter_segment();
        f
    }

    fn enter_segment(&mut self) {
        self.phase = match self.segments.get(self.seg) {
            Some(seg) => Phase::Travel {
                origin: self.pos,
                k: leg_steps(self.pos, seg.target, self.speed),
                s: 0,
            },
            None => Phase::Done,
        };
    }

    fn advance(&mut self) {
        self.seg += 1;
        self.enter_segment();
    }

    fn target(&self) -> Point {
        self.segments[self.seg].target
    }

    fn restart_leg(&mut self) {
        let target = self.target();
        self.phase = Phase::Travel {
            origin: self.pos,
            k: leg_steps(self.pos, target, self.speed),
            s: 0,
        };
    }

    fn done(&self) -> bool {
        matches!(self.phase, Phase::Done)
    }

    /// Resolves zero-time transitions at the start of step `t`. `dwell_ok`
    /// reports whether a dwell of the given length may begin now.
    fn resolve(&mut self, mut dwell_ok: impl FnMut(Point, u32) -> bool) {
        while let Phase::Travel { k, s, .. } = self.phase {
            if s < k {
                break;
            }
            let dwell = self.segments[self.seg].dwell_after;
            if dwell == 0 {
                self.advance();
                continue;
            }
            if dwell_ok(self.pos, dwell) {
                self.phase = Phase::Dwell { left: dwell };
            }
            break;
        }
    }

    /// Leaves legs that ended without a dwell, so an arm that just arrived
    /// at its last waypoint counts as done on that step.
    fn settle(&mut self) {
        while let Phase::Travel { k, s, .. } = self.phase {
            if s < k || self.segments[self.seg].dwell_after > 0 {
                break;
            }
            self.advance();
        }
    }

    /// Takes one step. `clamp` maps a desired x to the admissible x.
    fn step(&mut self, clamp: impl Fn(f64) -> f64) {
        match self.phase {
            Phase::Done => {
                let x = clamp(self.pos.x);
                self.pos.x = x;
            }
            Phase::Dwell { left } => {
                // The dwell window was cleared before it began.
                if left <= 1 {
                    self.advance();
                } else {
                    self.phase = Phase::Dwell { left: left - 1 };
                }
            }
            Phase::Travel { origin, k, s } => {
                let desired = if s >= k {
                    self.pos
                } else {
                    lerp_leg(origin, self.target(), s + 1, k)
                };
                let x = clamp(desired.x);
                if x == desired.x {
                    self.pos = desired;
                    if s < k {
                        self.phase = Phase::Travel { origin, k, s: s + 1 };
                    }
                } else {
                    self.pos = Point::new(x, desired.y);
                    self.restart_leg();
                }
            }
        }
    }
}

/// Result of replanning the yielding arm against a fixed priority trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldOutcome {
    pub yielder: DiscreteTrajectory,
    /// The priority trajectory, extended only if the finished priority arm
    /// had to back away.
    pub priority: DiscreteTrajectory,
}

impl YieldOutcome {
    pub fn cost(&self) -> usize {
        self.yielder.steps().max(self.priority.steps())
    }
}

/// Clamped-following replan of `yield_path` for `yield_arm` against the
/// unchanged `priority` trajectory of the other arm.
pub fn replan_yield(
    priority: &DiscreteTrajectory,
    yield_arm: Arm,
    yield_path: &Waypath,
    yield_start: Point,
    config: &WorkspaceConfig,
) -> Result<YieldOutcome, PlanError> {
    let d = config.d_safe;
    let p0 = priority.at(0);
    if !gap_ok(yield_arm, yield_start.x, p0.x, d) {
        let gap = (p0.x - yield_start.x).abs();
        return Err(PlanError::StartCollision { gap, d_safe: d });
    }
    let (reach_lo, reach_hi) = config.reach(yield_arm);
    for seg in &yield_path.segments {
        if !(reach_lo..=reach_hi).contains(&seg.target.x) {
            return Err(PlanError::Infeasible(format!(
                "waypoint x={} outside the reach of {yield_arm}",
                seg.target.x
            )));
        }
    }

    let t_pri = priority.steps();
    let longest_leg = leg_steps(Point::new(0.0, 0.0), Point::new(config.width, config.height), config.speed) as usize;
    let dwell_total: usize = yield_path.segments.iter().map(|s| s.dwell_after as usize).sum();
    // After the priority arm stops, every remaining leg runs unclamped.
    let max_steps = t_pri + (yield_path.segments.len() + 1) * (longest_leg + 1) + dwell_total + 2;

    let mut follower = Follower::new(yield_path, yield_start, config.speed);
    let mut yielder = vec![yield_start];
    let mut passive = vec![p0];
    let mut finished_at = if follower.done() { Some(0) } else { None };
    let mut t = 0usize;
    loop {
        t += 1;
        let active = t <= t_pri;
        if !active && finished_at.is_some() {
            break;
        }
        if t > max_steps {
            return Err(PlanError::Infeasible(format!(
                "{yield_arm} did not finish within {max_steps} steps"
            )));
        }
        follower.resolve(|at, dwell| {
            (t..t + dwell as usize)
                .take_while(|&s| s <= t_pri)
                .all(|s| gap_ok(yield_arm, at.x, priority.at(s).x, d))
        });
        if active {
            let px = priority.at(t).x;
            follower.step(|x| match yield_arm {
                Arm::Left => x.min(left_limit(px, d)),
                Arm::Right => x.max(right_limit(px, d)),
            });
            passive.push(priority.at(t));
        } else {
            follower.step(|x| x);
            let prev = *passive.last().expect("non-empty");
            let yx = follower.pos.x;
            let pushed = match yield_arm {
                Arm::Left => prev.x.max(right_limit(yx, d)),
                Arm::Right => prev.x.min(left_limit(yx, d)),
            };
            passive.push(Point::new(pushed, prev.y));
        }
        follower.settle();
        yielder.push(follower.pos);
        if finished_at.is_none() && follower.done() {
            finished_at = Some(t);
        }
    }

    // Trim trailing holds: a finished arm keeps its last position anyway.
    let finished = finished_at.unwrap_or(0);
    let keep_yield = last_change(&yielder).max(finished);
    yielder.truncate(keep_yield + 1);
    let keep_pri = last_change(&passive).max(t_pri);
    passive.truncate(keep_pri + 1);

    Ok(YieldOutcome {
        yielder: DiscreteTrajectory { positions: yielder },
        priority: DiscreteTrajectory { positions: passive },
    })
}

fn last_change(positions: &[Point]) -> usize {
    (1..positions.len())
        .rev()
        .find(|&i| positions[i] != positions[i - 1])
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriorityDecision {
    pub first: Arm,
    pub second: Arm,
    /// Round length when arm 1 (index 0) or arm 2 (index 1) has priority.
    pub predicted_costs: [usize; 2],
}

struct Candidate {
    decision: PriorityDecision,
    outcome: YieldOutcome,
}

fn decide_priority(
    m: [&DiscreteTrajectory; 2],
    paths: [&Waypath; 2],
    config: &WorkspaceConfig,
) -> Result<Candidate, PlanError> {
    if check_collision(m[0], m[1], config)?.is_none() {
        return Err(PlanError::NoInterference);
    }
    let left_first = replan_yield(m[0], Arm::Right, paths[1], m[1].at(0), config)?;
    let right_first = replan_yield(m[1], Arm::Left, paths[0], m[0].at(0), config)?;
    let costs = [left_first.cost(), right_first.cost()];
    let (first, outcome) = if costs[1] < costs[0] {
        (Arm::Right, right_first)
    } else {
        (Arm::Left, left_first)
    };
    Ok(Candidate {
        decision: PriorityDecision {
            first,
            second: first.other(),
            predicted_costs: costs,
        },
        outcome,
    })
}

/// Simulates both yield options and keeps the one with the shorter round;
/// ties give arm 1 priority.
pub fn priority_decide(
    m1: &DiscreteTrajectory,
    m2: &DiscreteTrajectory,
    paths: [&Waypath; 2],
    config: &WorkspaceConfig,
) -> Result<PriorityDecision, PlanError> {
    decide_priority([m1, m2], paths, config).map(|c| c.decision)
}

fn path_for(arm: Arm, slot: Option<usize>, instance: &Instance) -> Result<Waypath, PlanError> {
    match slot {
        None => Ok(Waypath::idle()),
        Some(i) => {
            let obj = instance
                .objects
                .get(i)
                .ok_or(PlanError::Unreachable { arm, object: i })?;
            init_plan(arm, obj, i, &instance.config)
        }
    }
}

/// Plans one synchronous round from the current end-effector positions.
pub fn plan_round(ee: [Point; 2], pair: AssignmentPair, instance: &Instance) -> Result<RoundPlan, PlanError> {
    let config = &instance.config;
    if pair.a1.is_none() && pair.a2.is_none() || (pair.a1.is_some() && pair.a1 == pair.a2) {
        return Err(PlanError::InvalidPair(pair));
    }
    let paths = [
        path_for(Arm::Left, pair.a1, instance)?,
        path_for(Arm::Right, pair.a2, instance)?,
    ];
    let nominal = [
        discretize(&paths[0], ee[0], config),
        discretize(&paths[1], ee[1], config),
    ];
    let nominal_m_tau = nominal[0].steps().max(nominal[1].steps()) as u64;

    let Some(_) = check_collision(&nominal[0], &nominal[1], config)? else {
        let [m1, m2] = nominal;
        return Ok(RoundPlan {
            ee1_final: m1.last(),
            ee2_final: m2.last(),
            m1,
            m2,
            m_tau: nominal_m_tau,
            delay_steps: 0,
            nominal_m_tau,
            priority: None,
        });
    };

    let cand = decide_priority([&nominal[0], &nominal[1]], [&paths[0], &paths[1]], config)?;
    let YieldOutcome { yielder, priority } = cand.outcome;
    let (m1, m2) = match cand.decision.first {
        Arm::Left => (priority, yielder),
        Arm::Right => (yielder, priority),
    };
    // Clamped following leaves nothing for a second pass to fix.
    if let Some(t) = check_collision(&m1, &m2, config)? {
        return Err(PlanError::Infeasible(format!("interference remains at step {t} after replanning")));
    }
    let m_tau = m1.steps().max(m2.steps()) as u64;
    Ok(RoundPlan {
        ee1_final: m1.last(),
        ee2_final: m2.last(),
        m1,
        m2,
        m_tau,
        delay_steps: m_tau.saturating_sub(nominal_m_tau),
        nominal_m_tau,
        priority: Some(cand.decision.first),
    })
}
