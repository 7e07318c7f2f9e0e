//! Shared domain types: workspace geometry, objects, instances, assignment
//! pairs and the per-episode round log.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("coordinate x={x} lies outside the rail [0, {width}]")]
    OutOfRange { x: f64, width: f64 },
    #[error("invalid workspace configuration: {0}")]
    InvalidConfig(String),
    #[error("object {index}: {reason}")]
    InvalidObject { index: usize, reason: String },
    #[error("an instance needs at least one object")]
    EmptyInstance,
}

/// A planar position in workspace length units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Bit pattern of both coordinates, usable as an exact hash key.
    pub fn key(&self) -> (u64, u64) {
        (self.x.to_bits(), self.y.to_bits())
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// The two carriages sharing the x rail. `Left` (arm 1) is always to the
/// left of `Right` (arm 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    Left,
    Right,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Left, Arm::Right];

    /// Zero-based slot index (0 for arm 1, 1 for arm 2).
    pub fn index(self) -> usize {
        match self {
            Arm::Left => 0,
            Arm::Right => 1,
        }
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::Left => Arm::Right,
            Arm::Right => Arm::Left,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "arm{}", self.index() + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    ExclusiveLeft,
    Common,
    ExclusiveRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceConfig {
    pub width: f64,
    pub height: f64,
    /// Length units per time step, per axis.
    pub speed: f64,
    pub pick_dwell: u32,
    pub place_dwell: u32,
    /// Minimum x gap between the two carriages.
    pub d_safe: f64,
    pub arm1_x_max: f64,
    pub arm2_x_min: f64,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        Self {
            width: 100.0,
            height: 50.0,
            speed: 1.0,
            pick_dwell: 2,
            place_dwell: 2,
            d_safe: 10.0,
            arm1_x_max: 75.0,
            arm2_x_min: 25.0,
        }
    }
}

impl WorkspaceConfig {
    /// Builds a configuration whose reach limits sit at the quarter points of
    /// the rail.
    pub fn with_dimensions(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            arm1_x_max: 0.75 * width,
            arm2_x_min: 0.25 * width,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        let finite = [
            self.width,
            self.height,
            self.speed,
            self.d_safe,
            self.arm1_x_max,
            self.arm2_x_min,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return bad("all lengths must be finite".into());
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return bad(format!("width {} and height {} must be positive", self.width, self.height));
        }
        if self.speed <= 0.0 {
            return bad(format!("speed {} must be positive", self.speed));
        }
        if self.d_safe <= 0.0 {
            return bad(format!("d_safe {} must be positive", self.d_safe));
        }
        if !(0.0 < self.arm2_x_min && self.arm2_x_min < self.arm1_x_max && self.arm1_x_max < self.width) {
            return bad(format!(
                "need 0 < arm2_x_min ({}) < arm1_x_max ({}) < width ({})",
                self.arm2_x_min, self.arm1_x_max, self.width
            ));
        }
        let common = self.arm1_x_max - self.arm2_x_min;
        if (common - 0.5 * self.width).abs() > 1e-9 * self.width {
            return bad(format!("common area width {common} must be half the rail ({})", 0.5 * self.width));
        }
        // The yielding arm must always be able to back away from the other
        // carriage and still reach every target in the common area.
        if self.d_safe > common || self.d_safe > self.arm2_x_min || self.d_safe > self.width - self.arm1_x_max {
            return bad(format!(
                "d_safe {} exceeds the common area or an exclusive area",
                self.d_safe
            ));
        }
        Ok(())
    }

    pub fn home(&self, arm: Arm) -> Point {
        match arm {
            Arm::Left => Point::new(0.0, 0.0),
            Arm::Right => Point::new(self.width, 0.0),
        }
    }

    /// Closed interval of x positions the given carriage can occupy.
    pub fn reach(&self, arm: Arm) -> (f64, f64) {
        match arm {
            Arm::Left => (0.0, self.arm1_x_max),
            Arm::Right => (self.arm2_x_min, self.width),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }
}

/// Classifies a rail coordinate. Boundary points belong to the common area.
pub fn region_of(x: f64, config: &WorkspaceConfig) -> Result<Region, ModelError> {
    if !(0.0..=config.width).contains(&x) {
        return Err(ModelError::OutOfRange { x, width: config.width });
    }
    Ok(if x < config.arm2_x_min {
        Region::ExclusiveLeft
    } else if x > config.arm1_x_max {
        Region::ExclusiveRight
    } else {
        Region::Common
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub pick: Point,
    pub place: Point,
}

impl ObjectSpec {
    pub fn new(pick: impl Into<Point>, place: impl Into<Point>) -> Self {
        Self {
            pick: pick.into(),
            place: place.into(),
        }
    }
}

pub fn reachable_by(obj: &ObjectSpec, arm: Arm, config: &WorkspaceConfig) -> bool {
    match arm {
        Arm::Left => obj.pick.x <= config.arm1_x_max && obj.place.x <= config.arm1_x_max,
        Arm::Right => obj.pick.x >= config.arm2_x_min && obj.place.x >= config.arm2_x_min,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Full-space sampling.
    FS,
    /// Common-area-only sampling.
    CA,
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "FS" => Ok(Scheme::FS),
            "CA" => Ok(Scheme::CA),
            other => Err(format!("unknown sampling scheme '{other}' (expected FS or CA)")),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::FS => "FS",
            Scheme::CA => "CA",
        })
    }
}

/// A rearrangement problem. Serialized as the canonical on-disk instance
/// format: `{"config":{..},"scheme":"FS"|"CA","seed":u64,"objects":[..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub config: WorkspaceConfig,
    pub scheme: Scheme,
    pub seed: u64,
    pub objects: Vec<ObjectSpec>,
}

impl Instance {
    /// Validates and wraps a set of objects.
    pub fn new(
        config: WorkspaceConfig,
        scheme: Scheme,
        seed: u64,
        objects: Vec<ObjectSpec>,
    ) -> Result<Self, ModelError> {
        let instance = Self {
            config,
            scheme,
            seed,
            objects,
        };
        instance.validate()?;
        Ok(instance)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.config.validate()?;
        if self.objects.is_empty() {
            return Err(ModelError::EmptyInstance);
        }
        let cfg = &self.config;
        for (index, obj) in self.objects.iter().enumerate() {
            let invalid = |reason: String| Err(ModelError::InvalidObject { index, reason });
            for (what, p) in [("pick", obj.pick), ("place", obj.place)] {
                if !p.x.is_finite() || !p.y.is_finite() || !cfg.contains(p) {
                    return invalid(format!("{what} ({}, {}) lies outside the workspace", p.x, p.y));
                }
                if self.scheme == Scheme::CA && !(cfg.arm2_x_min..=cfg.arm1_x_max).contains(&p.x) {
                    return invalid(format!("{what}.x {} lies outside the common area", p.x));
                }
            }
            if !reachable_by(obj, Arm::Left, cfg) && !reachable_by(obj, Arm::Right, cfg) {
                return invalid("not operable by either arm".into());
            }
        }
        Ok(())
    }
}

/// One task per arm for a single round; `None` is the IDLE action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AssignmentPair {
    pub a1: Option<usize>,
    pub a2: Option<usize>,
}

impl AssignmentPair {
    pub const fn new(a1: Option<usize>, a2: Option<usize>) -> Self {
        Self { a1, a2 }
    }

    pub const fn both(i: usize, j: usize) -> Self {
        Self::new(Some(i), Some(j))
    }

    pub fn slot(&self, arm: Arm) -> Option<usize> {
        match arm {
            Arm::Left => self.a1,
            Arm::Right => self.a2,
        }
    }

    pub fn objects(&self) -> impl Iterator<Item = usize> {
        self.a1.into_iter().chain(self.a2)
    }

    /// Lexicographic key with IDLE ordered after every object index.
    pub fn order_key(&self) -> (usize, usize) {
        (self.a1.unwrap_or(usize::MAX), self.a2.unwrap_or(usize::MAX))
    }
}

impl fmt::Display for AssignmentPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |s: Option<usize>| s.map_or_else(|| "IDLE".to_string(), |i| i.to_string());
        write!(f, "({}, {})", show(self.a1), show(self.a2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub pair: AssignmentPair,
    pub m_tau: u64,
    pub delay: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub rounds: Vec<RoundRecord>,
    pub makespan: u64,
    pub delay_total: u64,
}

impl EpisodeLog {
    pub fn push(&mut self, record: RoundRecord) {
        self.makespan += record.m_tau;
        self.delay_total += record.delay;
        self.rounds.push(record);
    }

    pub fn delay_proportion(&self) -> f64 {
        if self.makespan == 0 {
            0.0
        } else {
            self.delay_total as f64 / self.makespan as f64
        }
    }

    /// Checks the completed-episode invariants against an instance of `n`
    /// objects. Returns a description of the first violation.
    pub fn check_complete(&self, n: usize) -> Result<(), String> {
        let sum: u64 = self.rounds.iter().map(|r| r.m_tau).sum();
        if sum != self.makespan {
            return Err(format!("makespan {} != round sum {sum}", self.makespan));
        }
        let delay: u64 = self.rounds.iter().map(|r| r.delay).sum();
        if delay != self.delay_total || self.delay_total > self.makespan {
            return Err(format!("delay total {} inconsistent", self.delay_total));
        }
        let mut seen = vec![false; n];
        for r in &self.rounds {
            for i in r.pair.objects() {
                if i >= n || seen[i] {
                    return Err(format!("object {i} transferred twice or out of range"));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(format!("object {i} never transferred"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> WorkspaceConfig {
        WorkspaceConfig::default()
    }

    #[test]
    fn regions_follow_quarter_split() {
        assert_eq!(region_of(10.0, &cfg()).unwrap(), Region::ExclusiveLeft);
        assert_eq!(region_of(50.0, &cfg()).unwrap(), Region::Common);
        assert_eq!(region_of(75.0, &cfg()).unwrap(), Region::Common);
        assert_eq!(region_of(25.0, &cfg()).unwrap(), Region::Common);
        assert_eq!(region_of(75.000001, &cfg()).unwrap(), Region::ExclusiveRight);
        assert_eq!(region_of(0.0, &cfg()).unwrap(), Region::ExclusiveLeft);
        assert_eq!(region_of(100.0, &cfg()).unwrap(), Region::ExclusiveRight);
        assert!(matches!(region_of(-0.1, &cfg()), Err(ModelError::OutOfRange { .. })));
        assert!(matches!(region_of(100.5, &cfg()), Err(ModelError::OutOfRange { .. })));
    }

    #[test]
    fn region_measures_under_defaults() {
        // Midpoint rule over a fine grid.
        let steps = 100_000;
        let mut counts = [0usize; 3];
        for k in 0..steps {
            let x = (k as f64 + 0.5) * 100.0 / steps as f64;
            let idx = match region_of(x, &cfg()).unwrap() {
                Region::ExclusiveLeft => 0,
                Region::Common => 1,
                Region::ExclusiveRight => 2,
            };
            counts[idx] += 1;
        }
        assert_eq!(counts, [25_000, 50_000, 25_000]);
    }

    #[test]
    fn reachability_examples() {
        let c = cfg();
        let o = ObjectSpec::new([10.0, 0.0], [30.0, 0.0]);
        assert!(!reachable_by(&o, Arm::Right, &c));
        assert!(reachable_by(&o, Arm::Left, &c));
        let o = ObjectSpec::new([50.0, 0.0], [60.0, 0.0]);
        assert!(reachable_by(&o, Arm::Left, &c) && reachable_by(&o, Arm::Right, &c));
        let o = ObjectSpec::new([80.0, 0.0], [90.0, 0.0]);
        assert!(!reachable_by(&o, Arm::Left, &c));
        assert!(reachable_by(&o, Arm::Right, &c));
    }

    #[test]
    fn default_config_is_valid() {
        cfg().validate().unwrap();
        let c = WorkspaceConfig::with_dimensions(200.0, 80.0);
        assert_eq!((c.arm2_x_min, c.arm1_x_max), (50.0, 150.0));
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = cfg();
        c.arm1_x_max = 70.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.speed = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.d_safe = 30.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn instance_rejects_inoperable_object() {
        let objs = vec![ObjectSpec::new([10.0, 5.0], [90.0, 5.0])];
        let err = Instance::new(cfg(), Scheme::FS, 0, objs).unwrap_err();
        assert!(matches!(err, ModelError::InvalidObject { index: 0, .. }));
        assert_eq!(
            Instance::new(cfg(), Scheme::FS, 0, vec![]).unwrap_err(),
            ModelError::EmptyInstance
        );
        let objs = vec![ObjectSpec::new([10.0, 5.0], [50.0, 5.0])];
        assert!(Instance::new(cfg(), Scheme::CA, 0, objs.clone()).is_err());
        assert!(Instance::new(cfg(), Scheme::FS, 0, objs).is_ok());
    }

    #[test]
    fn instance_json_format() {
        let inst = Instance::new(
            cfg(),
            Scheme::CA,
            7,
            vec![ObjectSpec::new([30.0, 1.5], [60.0, 2.0])],
        )
        .unwrap();
        let json = serde_json::to_value(&inst).unwrap();
        assert_eq!(json["scheme"], "CA");
        assert_eq!(json["seed"], 7);
        assert_eq!(json["objects"][0]["pick"], serde_json::json!([30.0, 1.5]));
        assert_eq!(json["config"]["d_safe"], 10.0);
        let back: Instance = serde_json::from_value(json).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn episode_log_accounting() {
        let mut log = EpisodeLog::default();
        log.push(RoundRecord { pair: AssignmentPair::both(0, 1), m_tau: 20, delay: 3 });
        log.push(RoundRecord { pair: AssignmentPair::new(Some(2), None), m_tau: 15, delay: 0 });
        assert_eq!(log.makespan, 35);
        assert_eq!(log.delay_total, 3);
        log.check_complete(3).unwrap();
        assert!(log.check_complete(4).is_err());
        assert!((log.delay_proportion() - 3.0 / 35.0).abs() < 1e-15);
    }

    #[test]
    fn pair_order_puts_idle_last() {
        let a = AssignmentPair::new(Some(3), None);
        let b = AssignmentPair::both(3, 9);
        assert!(b.order_key() < a.order_key());
        assert_eq!(a.to_string(), "(3, IDLE)");
    }
}
