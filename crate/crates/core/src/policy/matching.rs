//! Offline Perfect Matching + DP baseline.
//!
//! Objects are paired by a minimum-weight matching over a transfer graph
//! whose edge weights are simulated round lengths with both arms starting at
//! home. The resulting rounds are then ordered by a dynamic program over
//! subsets of rounds that simulates the real arm carry-over between rounds.

use std::collections::{BTreeMap, VecDeque};

use crate::env::RearrangeEnv;
use crate::model::{reachable_by, Arm, AssignmentPair, Instance, Point};
use crate::planner::plan_round;

use super::greedy::greedy_choice;
use super::{Policy, PolicyError};

/// Largest object count matched exactly by subset DP.
pub const EXACT_MATCHING_MAX: usize = 16;
/// Largest round count ordered exactly.
pub const EXACT_ORDER_MAX_ROUNDS: usize = 12;

/// Ordered pair costs: `get(i, j)` is the round length with object `i` on
/// arm 1 and `j` on arm 2, `+inf` when illegal. Singleton costs are used for
/// rounds where one arm idles.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCostMatrix {
    n: usize,
    cost: Vec<f64>,
    single: Vec<(f64, Arm)>,
}

impl PairCostMatrix {
    pub fn from_fn(n: usize, pair: impl Fn(usize, usize) -> f64, single: impl Fn(usize) -> (f64, Arm)) -> Self {
        let mut cost = vec![f64::INFINITY; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    cost[i * n + j] = pair(i, j);
                }
            }
        }
        Self {
            n,
            cost,
            single: (0..n).map(single).collect(),
        }
    }

    /// Transfer graph of an instance, every round simulated from home.
    pub fn from_instance(instance: &Instance) -> Result<Self, PolicyError> {
        let cfg = &instance.config;
        let home = [cfg.home(Arm::Left), cfg.home(Arm::Right)];
        let n = instance.len();
        let reach: Vec<[bool; 2]> = instance
            .objects
            .iter()
            .map(|o| Arm::BOTH.map(|a| reachable_by(o, a, cfg)))
            .collect();
        let mut cost = vec![f64::INFINITY; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j && reach[i][0] && reach[j][1] {
                    cost[i * n + j] = plan_round(home, AssignmentPair::both(i, j), instance)?.m_tau as f64;
                }
            }
        }
        let mut single = Vec::with_capacity(n);
        for (i, r) in reach.iter().enumerate() {
            let mut best = (f64::INFINITY, Arm::Left);
            for arm in Arm::BOTH.into_iter().filter(|a| r[a.index()]) {
                let pair = match arm {
                    Arm::Left => AssignmentPair::new(Some(i), None),
                    Arm::Right => AssignmentPair::new(None, Some(i)),
                };
                let c = plan_round(home, pair, instance)?.m_tau as f64;
                if c < best.0 {
                    best = (c, arm);
                }
            }
            single.push(best);
        }
        Ok(Self { n, cost, single })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.n + j]
    }

    pub fn single(&self, i: usize) -> (f64, Arm) {
        self.single[i]
    }

    /// Unordered edge weight and the orientation achieving it (ties keep
    /// the lower index on arm 1).
    pub fn weight(&self, i: usize, j: usize) -> (f64, AssignmentPair) {
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        let (a, b) = (self.get(lo, hi), self.get(hi, lo));
        if b < a {
            (b, AssignmentPair::both(hi, lo))
        } else {
            (a, AssignmentPair::both(lo, hi))
        }
    }

    fn singleton(&self, i: usize) -> (f64, AssignmentPair) {
        let (c, arm) = self.single[i];
        let pair = match arm {
            Arm::Left => AssignmentPair::new(Some(i), None),
            Arm::Right => AssignmentPair::new(None, Some(i)),
        };
        (c, pair)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// Oriented rounds, sorted by their lowest object index.
    pub rounds: Vec<AssignmentPair>,
    pub total: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Singletons {
    /// One singleton for odd `n`, none otherwise.
    Parity,
    Any,
}

impl Singletons {
    fn allowed(self, n: usize) -> usize {
        match self {
            Singletons::Parity => n % 2,
            Singletons::Any => n,
        }
    }
}

/// Minimum-weight perfect matching (one singleton for odd `n`). Exact for
/// `n <= 16`; a 2-opt local search from a greedy matching beyond.
pub fn perfect_matching(costs: &PairCostMatrix) -> Result<Matching, PolicyError> {
    solve_matching(costs, Singletons::Parity)
}

/// Minimum-weight matching where any object may form a singleton round.
pub fn matching_with_singletons(costs: &PairCostMatrix) -> Result<Matching, PolicyError> {
    solve_matching(costs, Singletons::Any)
}

fn solve_matching(costs: &PairCostMatrix, rule: Singletons) -> Result<Matching, PolicyError> {
    let n = costs.n();
    if n == 0 {
        return Ok(Matching {
            rounds: Vec::new(),
            total: 0.0,
            exact: true,
        });
    }
    let mut m = if n <= EXACT_MATCHING_MAX {
        exact_matching(costs, rule)?
    } else {
        local_search_matching(costs, rule)?
    };
    m.rounds.sort_by_key(|p| p.objects().min());
    Ok(m)
}

fn exact_matching(costs: &PairCostMatrix, rule: Singletons) -> Result<Matching, PolicyError> {
    let n = costs.n();
    let full = (1usize << n) - 1;
    let states = full + 1;
    // Layer s counts singletons used (capped at 1 under the parity rule).
    let layers = if rule == Singletons::Parity { 2 } else { 1 };
    let mut dp = vec![f64::INFINITY; states * layers];
    let mut pred: Vec<(usize, usize, AssignmentPair)> = vec![(0, 0, AssignmentPair::new(None, None)); states * layers];
    dp[0] = 0.0;
    for mask in 0..full {
        for s in 0..layers {
            let here = dp[mask * layers + s];
            if !here.is_finite() {
                continue;
            }
            let i = (!mask).trailing_zeros() as usize;
            let mut relax = |next: usize, ns: usize, w: f64, pair: AssignmentPair| {
                let slot = next * layers + ns;
                if here + w < dp[slot] {
                    dp[slot] = here + w;
                    pred[slot] = (mask, s, pair);
                }
            };
            for j in i + 1..n {
                if mask & (1 << j) == 0 {
                    let (w, pair) = costs.weight(i, j);
                    if w.is_finite() {
                        relax(mask | 1 << i | 1 << j, s, w, pair);
                    }
                }
            }
            let single_ok = match rule {
                Singletons::Any => true,
                Singletons::Parity => n % 2 == 1 && s == 0,
            };
            if single_ok {
                let (w, pair) = costs.singleton(i);
                if w.is_finite() {
                    relax(mask | 1 << i, if rule == Singletons::Parity { 1 } else { 0 }, w, pair);
                }
            }
        }
    }
    let end = match rule {
        Singletons::Parity => n % 2,
        Singletons::Any => 0,
    };
    let total = dp[full * layers + end];
    if !total.is_finite() {
        return Err(PolicyError::Infeasible(format!("no finite matching over {n} objects")));
    }
    let mut rounds = Vec::new();
    let (mut mask, mut s) = (full, end);
    while mask != 0 {
        let (pm, ps, pair) = pred[mask * layers + s];
        rounds.push(pair);
        mask = pm;
        s = ps;
    }
    Ok(Matching {
        rounds,
        total,
        exact: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unit {
    Pair(usize, usize),
    Single(usize),
}

fn local_search_matching(costs: &PairCostMatrix, rule: Singletons) -> Result<Matching, PolicyError> {
    let n = costs.n();
    let allowed = rule.allowed(n);
    let unit_cost = |u: Unit| match u {
        Unit::Pair(a, b) => costs.weight(a, b).0,
        Unit::Single(a) => costs.single(a).0,
    };
    // Lexicographic objective: excess singletons first, then weight.
    let score = |units: &[Unit]| {
        let singles = units.iter().filter(|u| matches!(u, Unit::Single(_))).count();
        let w: f64 = units.iter().map(|&u| unit_cost(u)).sum();
        (singles.saturating_sub(allowed), w)
    };

    let mut edges: Vec<(f64, usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| (costs.weight(i, j).0, i, j))
        .filter(|e| e.0.is_finite())
        .collect();
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used = vec![false; n];
    let mut units = Vec::new();
    for (_, i, j) in edges {
        if !used[i] && !used[j] {
            used[i] = true;
            used[j] = true;
            units.push(Unit::Pair(i, j));
        }
    }
    units.extend((0..n).filter(|&i| !used[i]).map(Unit::Single));

    let better = |a: (usize, f64), b: (usize, f64)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1 - 1e-9);
    loop {
        let current = score(&units);
        let mut improved = false;
        'search: for x in 0..units.len() {
            for y in x + 1..units.len() {
                for (ux, uy) in recombine(units[x], units[y]) {
                    let finite = [ux, uy].iter().flatten().all(|&u| unit_cost(u).is_finite());
                    if !finite {
                        continue;
                    }
                    let mut trial: Vec<Unit> = units
                        .iter()
                        .enumerate()
                        .filter(|&(k, _)| k != x && k != y)
                        .map(|(_, &u)| u)
                        .collect();
                    trial.extend(ux);
                    trial.extend(uy);
                    if better(score(&trial), current) {
                        units = trial;
                        improved = true;
                        break 'search;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    let (excess, total) = score(&units);
    if excess > 0 || !total.is_finite() {
        return Err(PolicyError::Infeasible(format!(
            "local search left {excess} unpaired objects over {n}"
        )));
    }
    let rounds = units
        .into_iter()
        .map(|u| match u {
            Unit::Pair(a, b) => costs.weight(a, b).1,
            Unit::Single(a) => costs.singleton(a).1,
        })
        .collect();
    Ok(Matching {
        rounds,
        total,
        exact: false,
    })
}

/// Alternative groupings of the objects in two units.
fn recombine(x: Unit, y: Unit) -> Vec<(Option<Unit>, Option<Unit>)> {
    use Unit::*;
    match (x, y) {
        (Pair(a, b), Pair(c, d)) => vec![
            (Some(Pair(a, c)), Some(Pair(b, d))),
            (Some(Pair(a, d)), Some(Pair(b, c))),
        ],
        (Pair(a, b), Single(s)) | (Single(s), Pair(a, b)) => vec![
            (Some(Pair(a, s)), Some(Single(b))),
            (Some(Pair(b, s)), Some(Single(a))),
            (Some(Single(a)), Some(Single(b))),
        ],
        (Single(s), Single(t)) => vec![(Some(Pair(s, t)), None)],
    }
}

/// Orders the matched rounds to minimize the simulated makespan, carrying
/// the arm positions from round to round. Exact for up to
/// [`EXACT_ORDER_MAX_ROUNDS`] rounds (states keyed by the done-set and the
/// exact arm positions); cheapest-next greedy beyond.
pub fn pair_order_dp(rounds: &[AssignmentPair], instance: &Instance) -> Result<Vec<AssignmentPair>, PolicyError> {
    if rounds.len() <= EXACT_ORDER_MAX_ROUNDS {
        exact_order(rounds, instance)
    } else {
        greedy_order(rounds, instance)
    }
}

type StateKey = (u32, [u64; 4]);

fn state_key(mask: u32, ee: [Point; 2]) -> StateKey {
    let (a, b) = ee[0].key();
    let (c, d) = ee[1].key();
    (mask, [a, b, c, d])
}

struct OrderNode {
    cost: u64,
    env: RearrangeEnv,
    seq: Vec<usize>,
}

fn exact_order(rounds: &[AssignmentPair], instance: &Instance) -> Result<Vec<AssignmentPair>, PolicyError> {
    let k = rounds.len();
    let start = RearrangeEnv::new(instance.clone());
    let mut layer: BTreeMap<StateKey, OrderNode> = BTreeMap::new();
    layer.insert(
        state_key(0, start.ee()),
        OrderNode {
            cost: 0,
            env: start,
            seq: Vec::new(),
        },
    );
    for _ in 0..k {
        let mut next: BTreeMap<StateKey, OrderNode> = BTreeMap::new();
        for ((mask, _), node) in &layer {
            for (r, &pair) in rounds.iter().enumerate() {
                if mask & (1 << r) != 0 || node.env.check_pair(pair).is_err() {
                    continue;
                }
                let plan = node.env.preview(pair)?;
                let cost = node.cost + plan.m_tau;
                let nmask = mask | 1 << r;
                let key = state_key(nmask, plan.final_positions());
                if next.get(&key).is_some_and(|n| n.cost <= cost) {
                    continue;
                }
                let mut env = node.env.clone();
                env.apply(pair, &plan);
                let mut seq = node.seq.clone();
                seq.push(r);
                next.insert(key, OrderNode { cost, env, seq });
            }
        }
        layer = next;
    }
    let best = layer
        .values()
        .min_by(|a, b| a.cost.cmp(&b.cost).then_with(|| a.seq.cmp(&b.seq)))
        .ok_or_else(|| PolicyError::Infeasible("no legal order of the matched rounds".into()))?;
    Ok(best.seq.iter().map(|&r| rounds[r]).collect())
}

fn greedy_order(rounds: &[AssignmentPair], instance: &Instance) -> Result<Vec<AssignmentPair>, PolicyError> {
    let mut env = RearrangeEnv::new(instance.clone());
    let mut left: Vec<AssignmentPair> = rounds.to_vec();
    let mut out = Vec::with_capacity(rounds.len());
    while !left.is_empty() {
        let mut best = None;
        for (r, &pair) in left.iter().enumerate() {
            if env.check_pair(pair).is_err() {
                continue;
            }
            let plan = env.preview(pair)?;
            if best.as_ref().is_none_or(|(_, b): &(usize, crate::planner::RoundPlan)| plan.m_tau < b.m_tau) {
                best = Some((r, plan));
            }
        }
        let (r, plan) = best.ok_or_else(|| PolicyError::Infeasible("no legal next round".into()))?;
        let pair = left.remove(r);
        env.apply(pair, &plan);
        out.push(pair);
    }
    Ok(out)
}

/// Plans every round offline, then replays the plan. A planned round that is
/// illegal when its turn comes is skipped in favour of the next legal one;
/// if none is legal the greedy pair is used and the plan is patched.
#[derive(Default)]
pub struct MatchingDpPolicy {
    queue: VecDeque<AssignmentPair>,
}

impl MatchingDpPolicy {
    pub fn plan(instance: &Instance) -> Result<Vec<AssignmentPair>, PolicyError> {
        let costs = PairCostMatrix::from_instance(instance)?;
        let matching = match perfect_matching(&costs) {
            Ok(m) => m,
            Err(PolicyError::Infeasible(_)) => matching_with_singletons(&costs)?,
            Err(e) => return Err(e),
        };
        match pair_order_dp(&matching.rounds, instance) {
            Ok(order) => Ok(order),
            Err(PolicyError::Infeasible(_)) => Ok(matching.rounds),
            Err(e) => Err(e),
        }
    }
}

impl Policy for MatchingDpPolicy {
    fn name(&self) -> &str {
        "matching_dp"
    }

    fn begin_episode(&mut self, instance: &Instance) -> Result<(), PolicyError> {
        self.queue = Self::plan(instance)?.into();
        Ok(())
    }

    fn decide(&mut self, env: &RearrangeEnv) -> Result<AssignmentPair, PolicyError> {
        if let Some(pos) = self.queue.iter().position(|&p| env.check_pair(p).is_ok()) {
            return Ok(self.queue.remove(pos).expect("position is in range"));
        }
        let (pair, _) = greedy_choice(env)?;
        let taken: Vec<usize> = pair.objects().collect();
        let strip = |s: Option<usize>| s.filter(|i| !taken.contains(i));
        self.queue = self
            .queue
            .iter()
            .map(|p| AssignmentPair::new(strip(p.a1), strip(p.a2)))
            .filter(|p| p.a1.is_some() || p.a2.is_some())
            .collect();
        Ok(pair)
    }
}
