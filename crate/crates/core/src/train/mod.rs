//! Losses, the Adam optimizer, the alternating (EM-style) schedule and the
//! joint-training baseline.

mod adam;
mod batch;
mod em;
mod losses;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{validate, Result};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use batch::Batch;
pub use em::{
    branch_update, common_update, em_epoch, em_step, joint_step, phase_gradients, EmState, MergedGradient, Phase,
    PhaseGradients,
};
pub use losses::{cross_entropy_loss, l1_depth_loss, LossRecord, LossValue, StepKind};
pub use trainer::Trainer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Alternate depth-side and semantic-side updates.
    Em,
    /// One step on the weighted sum of both losses.
    Joint,
}

/// When the alternating schedule flips phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseGranularity {
    Batch,
    Epoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub semantic: f64,
    pub depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { semantic: 1.0, depth: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Weights of the three sub-branches whose backbone gradients are
    /// merged in each alternating phase: the phase's own decoder path, the
    /// common path, and the opposite task's decoder path.
    pub branch_weights: [f64; 3],
    pub batch_size: usize,
    pub epochs: u64,
    /// Optimizer step budget; overrides `epochs` when set.
    pub max_steps: Option<u64>,
    pub adam: AdamConfig,
    pub schedule: Schedule,
    pub phase_granularity: PhaseGranularity,
    pub loss_weights: LossWeights,
    pub ignore_id: Option<usize>,
    pub augment: AugmentConfig,
    pub checkpoint_every: Option<u64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            branch_weights: [1.0; 3],
            batch_size: 8,
            epochs: 1,
            max_steps: None,
            adam: AdamConfig::default(),
            schedule: Schedule::Em,
            phase_granularity: PhaseGranularity::Batch,
            loss_weights: LossWeights::default(),
            ignore_id: None,
            augment: AugmentConfig::default(),
            checkpoint_every: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        validate(self.learning_rate >= 0.0 && self.learning_rate.is_finite(), || {
            format!("learning_rate must be non-negative, got {}", self.learning_rate)
        })?;
        validate(self.branch_weights.iter().all(|&a| a >= 0.0 && a.is_finite()), || {
            format!("branch_weights must be non-negative, got {:?}", self.branch_weights)
        })?;
        validate(self.batch_size >= 1, || "batch_size must be at least 1".into())?;
        let w = self.loss_weights;
        validate(w.semantic >= 0.0 && w.depth >= 0.0 && w.semantic.is_finite() && w.depth.is_finite(), || {
            format!("loss weights must be non-negative, got {w:?}")
        })?;
        validate(self.checkpoint_every != Some(0), || "checkpoint_every must be positive".into())?;
        self.adam.validate()?;
        self.augment.validate()
    }
}
