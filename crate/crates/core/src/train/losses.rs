use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::Result;

/// A scalar loss node, its value, and how many pixels contributed.
#[derive(Debug, Clone, Copy)]
pub struct LossValue {
    pub var: Var,
    pub value: f64,
    pub count: usize,
}

/// Mean softmax negative log-likelihood over pixels whose label is not
/// `ignore`. Zero, with zero gradient, when every pixel is ignored.
pub fn cross_entropy_loss(g: &mut Graph, logits: Var, labels: &[usize], ignore: Option<usize>) -> Result<LossValue> {
    let (var, count) = g.cross_entropy(logits, labels, ignore)?;
    Ok(LossValue { var, value: g.value(var).data()[0], count })
}

/// Mean absolute error over valid pixels. Zero, with zero gradient, when no
/// pixel is valid.
pub fn l1_depth_loss(g: &mut Graph, pred: Var, gt: &[f64], mask: &[bool]) -> Result<LossValue> {
    let (var, count) = g.masked_l1(pred, gt, mask)?;
    Ok(LossValue { var, value: g.value(var).data()[0], count })
}

/// What an optimizer step trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Depth,
    Semantic,
    Joint,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub phase: StepKind,
    #[serde(rename = "L_semantic")]
    pub l_semantic: Option<f64>,
    #[serde(rename = "L_depth")]
    pub l_depth: Option<f64>,
    /// Valid depth pixels behind `L_depth`.
    #[serde(rename = "valid_N")]
    pub valid_n: usize,
    /// Non-ignored pixels behind `L_semantic`.
    pub labeled_n: usize,
    /// The optimized objective.
    pub loss: f64,
    pub wall_ms: f64,
    /// Set when a loss had no contributing pixels and was defined as zero.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}
