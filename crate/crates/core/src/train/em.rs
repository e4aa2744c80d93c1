use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::batch::Batch;
use super::losses::{cross_entropy_loss, l1_depth_loss, LossRecord, StepKind};
use super::{PhaseGranularity, TrainConfig};
use crate::autodiff::RunningStats;
use crate::error::{Error, Result};
use crate::model::{forward, BranchScale, Forward, Group, Heads, Mode, Model, Variant};

/// Which task the alternating schedule is currently learning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// `p = 0`.
    Depth,
    /// `p = 1`.
    Semantic,
}

impl Phase {
    pub fn flag(self) -> u8 {
        match self {
            Phase::Depth => 0,
            Phase::Semantic => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Phase::Depth => Phase::Semantic,
            Phase::Semantic => Phase::Depth,
        }
    }

    /// The sub-branch groups stepped in this phase.
    pub fn groups(self) -> [Group; 3] {
        match self {
            Phase::Depth => [Group::Dep, Group::Dep3d, Group::TwoD],
            Phase::Semantic => [Group::Sem, Group::Sem3d, Group::InvDepth2],
        }
    }

    /// The opposite task's exclusive groups, held fixed in this phase.
    pub fn frozen(self) -> [Group; 3] {
        self.flipped().groups()
    }

    fn kind(self) -> StepKind {
        match self {
            Phase::Depth => StepKind::Depth,
            Phase::Semantic => StepKind::Semantic,
        }
    }

    /// Gradient multipliers for the decoder paths given the sub-branch
    /// weights `(own path, common path, other path)`.
    fn branch_scale(self, alpha: [f64; 3]) -> BranchScale {
        match self {
            Phase::Depth => BranchScale { depth_path: alpha[0], common_path: alpha[1], semantic_path: alpha[2] },
            Phase::Semantic => BranchScale { semantic_path: alpha[0], common_path: alpha[1], depth_path: alpha[2] },
        }
    }
}

/// Alternation state: the phase flag and how often each phase has run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmState {
    pub phase: Phase,
    pub outer_iteration: u64,
    pub depth_steps: u64,
    pub semantic_steps: u64,
}

impl Default for EmState {
    fn default() -> Self {
        Self { phase: Phase::Depth, outer_iteration: 0, depth_steps: 0, semantic_steps: 0 }
    }
}

impl EmState {
    fn record(&mut self, phase: Phase) {
        match phase {
            Phase::Depth => self.depth_steps += 1,
            Phase::Semantic => self.semantic_steps += 1,
        }
    }

    fn flip(&mut self) {
        self.phase = self.phase.flipped();
        self.outer_iteration += 1;
    }
}

/// Gradients of one phase's loss. Frozen parameters have none.
#[derive(Debug, Clone)]
pub struct PhaseGradients {
    pub record: LossRecord,
    pub grads: Vec<Option<Vec<f64>>>,
    pub running: Vec<RunningStats>,
}

/// The merged gradient of the shared parameters, `Σ_t α^t ∇θ^com`.
#[derive(Debug, Clone)]
pub struct MergedGradient {
    pub grads: Vec<Option<Vec<f64>>>,
    pub alpha: [f64; 3],
}

fn check_finite(record: &LossRecord) -> Result<()> {
    let bad = |v: Option<f64>| v.is_some_and(|v| !v.is_finite());
    if bad(record.l_depth) || bad(record.l_semantic) || !record.loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss at step {}: L_semantic {:?}, L_depth {:?}",
            record.step, record.l_semantic, record.l_depth
        )));
    }
    Ok(())
}

fn check_grads(grads: &[Option<Vec<f64>>], model: &Model, step: u64) -> Result<()> {
    for (g, p) in grads.iter().zip(&model.store.params) {
        if g.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("gradient of {} at step {step}", p.name)));
        }
    }
    Ok(())
}

fn empty_flag(flags: &mut Vec<String>, count: usize, what: &str) {
    if count == 0 {
        flags.push(format!("empty-{what}"));
    }
}

/// Forward and backward for one phase: the phase's task loss, gradients
/// for the phase's groups and the shared parameters, with the shared
/// gradient of each sub-branch weighted by `alpha`.
pub fn phase_gradients(
    model: &Model,
    batch: &Batch,
    phase: Phase,
    alpha: [f64; 3],
    cfg: &TrainConfig,
    step: u64,
) -> Result<PhaseGradients> {
    if model.config.variant != Variant::Sosd {
        return Err(Error::Contract(format!(
            "alternating updates need the sosd variant, not {}",
            model.config.variant.name()
        )));
    }
    let start = Instant::now();
    let g = phase.groups();
    let mut fw = Forward::new(model, Mode::Train).with_trainable(&[g[0], g[1], g[2], Group::Com]);
    fw.branch_scale = phase.branch_scale(alpha);
    let x = fw.input(batch.image.clone())?;
    let mut flags = Vec::new();
    let (record, loss) = match phase {
        Phase::Depth => {
            let out = forward(&mut fw, x, Heads::DEPTH)?;
            let pred = out.depth.expect("sosd has a depth head");
            let l = l1_depth_loss(&mut fw.graph, pred, &batch.depth, &batch.mask)?;
            empty_flag(&mut flags, l.count, "depth");
            let rec = LossRecord {
                step,
                phase: phase.kind(),
                l_semantic: None,
                l_depth: Some(l.value),
                valid_n: l.count,
                labeled_n: 0,
                loss: l.value,
                wall_ms: 0.0,
                flags,
            };
            (rec, l.var)
        }
        Phase::Semantic => {
            let out = forward(&mut fw, x, Heads::SEMANTIC)?;
            let logits = out.logits.expect("sosd has a semantic head");
            let l = cross_entropy_loss(&mut fw.graph, logits, &batch.labels, cfg.ignore_id)?;
            empty_flag(&mut flags, l.count, "semantic");
            let rec = LossRecord {
                step,
                phase: phase.kind(),
                l_semantic: Some(l.value),
                l_depth: None,
                valid_n: 0,
                labeled_n: l.count,
                loss: l.value,
                wall_ms: 0.0,
                flags,
            };
            (rec, l.var)
        }
    };
    check_finite(&record)?;
    fw.graph.backward(loss)?;
    let grads = fw.param_grads();
    check_grads(&grads, model, step)?;
    let mut record = record;
    record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(PhaseGradients { record, grads, running: fw.running })
}

/// One phase's forward/backward and an Adam step on that phase's three
/// sub-branch groups. The opposite task's groups are evaluated but left
/// untouched. Returns the merged shared-parameter gradient for
/// [`common_update`].
pub fn branch_update(
    model: &mut Model,
    adam: &mut AdamState,
    batch: &Batch,
    phase: Phase,
    cfg: &TrainConfig,
    step: u64,
) -> Result<(LossRecord, MergedGradient)> {
    let pg = phase_gradients(model, batch, phase, cfg.branch_weights, cfg, step)?;
    for (b, r) in model.store.buffers.iter_mut().zip(pg.running) {
        b.stats = r;
    }
    let groups = phase.groups();
    adam_step(&mut model.store, &pg.grads, |_, p| groups.contains(&p.group), adam, cfg.learning_rate, &cfg.adam)?;
    let grads = pg
        .grads
        .into_iter()
        .zip(&model.store.params)
        .map(|(g, p)| if p.group == Group::Com { g } else { None })
        .collect();
    Ok((pg.record, MergedGradient { grads, alpha: cfg.branch_weights }))
}

/// Adam step on the shared parameters with the merged gradient. Skipped
/// entirely (moments included) when every sub-branch weight is zero.
/// Returns whether a step was taken.
pub fn common_update(
    model: &mut Model,
    adam: &mut AdamState,
    merged: &MergedGradient,
    cfg: &TrainConfig,
) -> Result<bool> {
    if merged.alpha.iter().all(|&a| a == 0.0) {
        return Ok(false);
    }
    adam_step(&mut model.store, &merged.grads, |_, p| p.group == Group::Com, adam, cfg.learning_rate, &cfg.adam)?;
    Ok(true)
}

/// One outer iteration of the alternating schedule: branch and shared
/// updates for the current phase, then the phase flips (every batch, or at
/// `epoch_end` under epoch granularity).
pub fn em_step(
    model: &mut Model,
    adam: &mut AdamState,
    state: &mut EmState,
    batch: &Batch,
    cfg: &TrainConfig,
    step: u64,
    epoch_end: bool,
) -> Result<LossRecord> {
    let start = Instant::now();
    let phase = state.phase;
    let (mut record, merged) = branch_update(model, adam, batch, phase, cfg, step)?;
    common_update(model, adam, &merged, cfg)?;
    state.record(phase);
    if cfg.phase_granularity == PhaseGranularity::Batch || epoch_end {
        state.flip();
    }
    record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(record)
}

/// Runs the alternating schedule over every batch of one epoch.
pub fn em_epoch<I>(
    model: &mut Model,
    adam: &mut AdamState,
    state: &mut EmState,
    batches: I,
    cfg: &TrainConfig,
    first_step: u64,
) -> Result<Vec<LossRecord>>
where
    I: IntoIterator<Item = Batch>,
{
    let batches: Vec<Batch> = batches.into_iter().collect();
    if batches.is_empty() {
        return Err(Error::Validation("cannot run an epoch over an empty dataset".into()));
    }
    let last = batches.len() - 1;
    batches
        .iter()
        .enumerate()
        .map(|(i, b)| em_step(model, adam, state, b, cfg, first_step + i as u64, i == last))
        .collect()
}

/// One step on `w_s·L_semantic + w_d·L_depth` over every parameter the
/// loss reaches. A task with zero weight is not evaluated.
pub fn joint_step(
    model: &mut Model,
    adam: &mut AdamState,
    batch: &Batch,
    cfg: &TrainConfig,
    step: u64,
) -> Result<LossRecord> {
    let start = Instant::now();
    let v = model.config.variant;
    let w = cfg.loss_weights;
    let heads = Heads { depth: v.has_depth() && w.depth > 0.0, semantic: v.has_semantic() && w.semantic > 0.0 };
    if !heads.depth && !heads.semantic {
        return Err(Error::Validation(format!("loss weights {w:?} train nothing for variant {}", v.name())));
    }
    let (grads, running, mut record) = {
        let mut fw = Forward::new(model, Mode::Train);
        let x = fw.input(batch.image.clone())?;
        let out = forward(&mut fw, x, heads)?;
        let mut flags = Vec::new();
        let mut rec = LossRecord {
            step,
            phase: StepKind::Joint,
            l_semantic: None,
            l_depth: None,
            valid_n: 0,
            labeled_n: 0,
            loss: 0.0,
            wall_ms: 0.0,
            flags: Vec::new(),
        };
        let mut terms = Vec::new();
        if let Some(logits) = out.logits {
            let l = cross_entropy_loss(&mut fw.graph, logits, &batch.labels, cfg.ignore_id)?;
            empty_flag(&mut flags, l.count, "semantic");
            rec.l_semantic = Some(l.value);
            rec.labeled_n = l.count;
            rec.loss += w.semantic * l.value;
            terms.push(fw.graph.scale(l.var, w.semantic));
        }
        if let Some(depth) = out.depth {
            let l = l1_depth_loss(&mut fw.graph, depth, &batch.depth, &batch.mask)?;
            empty_flag(&mut flags, l.count, "depth");
            rec.l_depth = Some(l.value);
            rec.valid_n = l.count;
            rec.loss += w.depth * l.value;
            terms.push(fw.graph.scale(l.var, w.depth));
        }
        rec.flags = flags;
        check_finite(&rec)?;
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = fw.graph.add(total, t)?;
        }
        fw.graph.backward(total)?;
        (fw.param_grads(), fw.running, rec)
    };
    check_grads(&grads, model, step)?;
    for (b, r) in model.store.buffers.iter_mut().zip(running) {
        b.stats = r;
    }
    let reached: Vec<bool> = grads.iter().map(Option::is_some).collect();
    adam_step(&mut model.store, &grads, |i, _| reached[i], adam, cfg.learning_rate, &cfg.adam)?;
    record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(record)
}
