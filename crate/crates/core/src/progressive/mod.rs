//! Stage schedules, growable models and per-strategy update masks.

mod model;
mod schedule;
mod strategy;

pub use model::{Architecture, Growth, ParamStore, Path, StagedModel, UNetSpec};
pub use schedule::{make_schedule, StageSchedule};
pub use strategy::{train_plan, TrainPlan, UpdateStrategy, ALL_STRATEGIES};
