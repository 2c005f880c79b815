pub mod error;
pub mod harness;
pub mod kv;
pub mod numerics;
pub mod optim;
pub mod problems;
pub mod schedules;
pub mod verify;

pub use error::{Error, Result};
pub use harness::{run, RunConfig, RunRecord};
pub use numerics::{Matrix, Rng};
pub use problems::{BatchKey, Problem, ProblemSpec};
pub use optim::{Hyper, Optimizer, OptimizerKind, ParamBlock, Role, StepContext, StepOutcome};
pub use schedules::{EmaScheduleSpec, ScheduleFamily, ScheduleSpec};
