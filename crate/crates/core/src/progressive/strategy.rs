use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::model::{Path, StagedModel};
use crate::error::{Error, Result};
use crate::nn::ParamId;

/// How the staged model is trained across the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateStrategy {
    /// Grow the sub-model stage by stage; train all of `M^s`.
    Progressive,
    /// Train the complete network every round.
    #[serde(alias = "e2e")]
    EndToEnd,
    /// Run the complete network, update only block `s` and the final head.
    Layerwise,
    /// Run the complete network, update blocks `1..=s` and the final head.
    Partial,
    /// Sum the losses of the final head and the head of stage `s`.
    Mixed,
    /// Draw a stage uniformly every round and train that sub-model.
    RandomStage,
}

pub const ALL_STRATEGIES: [UpdateStrategy; 6] = [
    UpdateStrategy::Progressive,
    UpdateStrategy::EndToEnd,
    UpdateStrategy::Layerwise,
    UpdateStrategy::Partial,
    UpdateStrategy::Mixed,
    UpdateStrategy::RandomStage,
];

impl UpdateStrategy {
    pub fn name(self) -> &'static str {
        match self {
            UpdateStrategy::Progressive => "progressive",
            UpdateStrategy::EndToEnd => "end-to-end",
            UpdateStrategy::Layerwise => "layerwise",
            UpdateStrategy::Partial => "partial",
            UpdateStrategy::Mixed => "mixed",
            UpdateStrategy::RandomStage => "random-stage",
        }
    }

    /// Whether the active stage comes from the stage schedule.
    pub fn follows_schedule(self) -> bool {
        !matches!(self, UpdateStrategy::EndToEnd | UpdateStrategy::RandomStage)
    }

    /// Whether the strategy reinitializes blocks on growth (as opposed to
    /// running the complete network from the start).
    pub fn grows(self) -> bool {
        self == UpdateStrategy::Progressive
    }

    /// Whether intermediate heads are kept alive while the stage is active.
    pub fn needs_stage_head(self) -> bool {
        matches!(
            self,
            UpdateStrategy::Progressive | UpdateStrategy::Mixed | UpdateStrategy::RandomStage
        )
    }

    /// Forward path used for training at stage `s`.
    pub fn train_path(self, s: usize, stages: usize) -> Path {
        match self {
            UpdateStrategy::Progressive | UpdateStrategy::RandomStage => Path::Sub(s),
            UpdateStrategy::Mixed if s < stages => Path::Mixed(s),
            _ => Path::Full,
        }
    }

    /// Forward path used for evaluation at stage `s`.
    pub fn eval_path(self, s: usize) -> Path {
        match self {
            UpdateStrategy::Progressive => Path::Sub(s),
            _ => Path::Full,
        }
    }
}

impl fmt::Display for UpdateStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UpdateStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "e2e" {
            return Ok(UpdateStrategy::EndToEnd);
        }
        ALL_STRATEGIES
            .into_iter()
            .find(|st| st.name() == lower)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy '{s}'")))
    }
}

/// What one round at a given stage runs and updates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainPlan {
    pub stage: usize,
    pub path: Path,
    /// Parameters the forward pass touches, ascending. These are shipped to
    /// clients.
    pub shipped: Vec<ParamId>,
    /// Subset of `shipped` that receives updates, ascending.
    pub trainable: Vec<ParamId>,
}

/// Builds the round plan for stage `s`. During warm-up blocks `1..s` are
/// frozen so only the newest block and its head move.
pub fn train_plan(model: &StagedModel, strategy: UpdateStrategy, s: usize, warmup: bool) -> Result<TrainPlan> {
    let stages = model.stages();
    if s == 0 || s > stages {
        return Err(Error::Stage(format!("stage {s} outside [1, {stages}]")));
    }
    let path = strategy.train_path(s, stages);
    let shipped = model.path_params(path)?;
    let mut trainable: Vec<ParamId> = match strategy {
        UpdateStrategy::EndToEnd => shipped.clone(),
        UpdateStrategy::Progressive | UpdateStrategy::RandomStage => {
            let mut ids = model.prefix_params(s);
            ids.extend(model.head_params(s)?);
            ids
        }
        UpdateStrategy::Layerwise => {
            let mut ids = model.block_params(s);
            ids.extend(model.final_head_params());
            ids
        }
        UpdateStrategy::Partial => {
            let mut ids = model.prefix_params(s);
            ids.extend(model.final_head_params());
            ids
        }
        UpdateStrategy::Mixed => {
            let mut ids = model.prefix_params(s);
            ids.extend(model.final_head_params());
            ids.extend(model.head_params(s)?);
            ids
        }
    };
    if warmup && s > 1 && strategy.follows_schedule() {
        let frozen = model.prefix_params(s - 1);
        trainable.retain(|id| frozen.binary_search(id).is_err());
    }
    trainable.sort_unstable();
    trainable.dedup();
    debug_assert!(trainable.iter().all(|id| shipped.binary_search(id).is_ok()));
    Ok(TrainPlan {
        stage: s,
        path,
        shipped,
        trainable,
    })
}
