//! Dual-arm Cartesian robot rearrangement engine.
//!
//! Two gantry carriages share one x rail and transfer objects from pick to
//! place positions in synchronous rounds. The crate provides the round-level
//! motion planner, a step-per-round environment, and a family of assignment
//! policies selectable by name through [`policy::PolicyRegistry`].

pub mod env;
pub mod model;
pub mod planner;
pub mod policy;
pub mod sampler;

pub use env::{EnvError, Observation, RearrangeEnv, RewardMode, StepInfo, StepResult};
pub use model::{
    reachable_by, region_of, Arm, AssignmentPair, EpisodeLog, Instance, ModelError, ObjectSpec, Point,
    Region, RoundRecord, Scheme, WorkspaceConfig,
};
pub use planner::{plan_round, PlanError, RoundPlan};
pub use sampler::{sample_batch, sample_instance, SamplerSpec};
