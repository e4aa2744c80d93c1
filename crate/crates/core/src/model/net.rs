//! Network assembly and forward passes.
//!
//! Layout at input size `H×W` with base width `B`:
//!
//! * backbone: three stride-2 conv/BN/ReLU stages (`B`, `B`, `2B` channels);
//!   the stride-4 output is the refined feature, the stride-8 output feeds
//!   dilated ASPP branches, a 1×1 cross-channel branch and a global-pool
//!   branch, fused by a 1×1 conv into the `2B`-channel global feature;
//! * decoder: per task path a 1×1 conv on the refined feature, concatenated
//!   with the ×2-upsampled global feature, then one conv (semantic, common)
//!   or two convs (depth), all at stride 4 with `B` channels;
//! * heads: plain convs for the single-task and multi-task variants, or the
//!   two fusion units for the fusion variant, followed by ×4 bilinear
//!   upsampling.

use super::config::{Group, NetConfig, Variant};
use super::params::{Builder, Conv, Norm, ParamStore};
use crate::autodiff::{BnMode, Graph, Padding, RunningStats, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct Backbone {
    stem: (Conv, Option<Norm>),
    down: (Conv, Option<Norm>),
    deep: (Conv, Option<Norm>),
    aspp: Vec<Conv>,
    cross: Conv,
    global: Conv,
    fuse: Conv,
}

#[derive(Debug, Clone)]
struct TaskPath {
    reduce: Conv,
    convs: Vec<Conv>,
}

#[derive(Debug, Clone)]
struct DepthFusion {
    area3d: [Conv; 2],
    area3d_norm: Norm,
    area2d: [Conv; 2],
    area2d_norm: Norm,
    out: Conv,
}

#[derive(Debug, Clone)]
struct SemanticFusion {
    inv_depth2: [Conv; 2],
    area3d: [Conv; 2],
    cue: Conv,
    out: Conv,
}

#[derive(Debug, Clone)]
struct Layers {
    backbone: Backbone,
    semantic_path: Option<TaskPath>,
    common_path: Option<TaskPath>,
    depth_path: Option<TaskPath>,
    depth_head: Option<Conv>,
    semantic_head: Option<Conv>,
    depth_fusion: Option<DepthFusion>,
    semantic_fusion: Option<SemanticFusion>,
}

/// An assembled network: configuration, parameters and layer wiring.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: NetConfig,
    pub store: ParamStore,
    layers: Layers,
}

/// Builds the network for `cfg.variant` with weights drawn from
/// `N(0, init_std²)`; biases start at zero (the depth output bias at
/// `depth_bias_init`), batch-norm scales at one and shifts at zero (the
/// two depth-side latent norms at `latent_bn_beta_init`).
pub fn build_model(cfg: &NetConfig, rng: &mut Rng) -> Result<Model> {
    cfg.validate()?;
    let b = cfg.base_channels;
    let k = cfg.fusion_kernel;
    let mut bld = Builder { store: ParamStore::default(), rng, std: cfg.init_std };

    let stage = |bld: &mut Builder, name: &str, i: usize, o: usize| {
        let c = bld.conv(&format!("backbone/{name}/conv"), Group::Com, i, o, 3, 2, 1);
        let n = cfg.encoder_batch_norm.then(|| bld.norm(&format!("backbone/{name}/bn"), Group::Com, o));
        (c, n)
    };
    let stem = stage(&mut bld, "stem", 3, b);
    let down = stage(&mut bld, "down", b, b);
    let deep = stage(&mut bld, "deep", b, 2 * b);
    let aspp = cfg
        .aspp_dilations
        .iter()
        .enumerate()
        .map(|(i, &d)| bld.conv(&format!("backbone/aspp/{i}"), Group::Com, 2 * b, b, 3, 1, d))
        .collect::<Vec<_>>();
    let cross = bld.conv("backbone/cross", Group::Com, 2 * b, b, 1, 1, 1);
    let global = bld.conv("backbone/global", Group::Com, 2 * b, b, 1, 1, 1);
    let fuse = bld.conv("backbone/fuse", Group::Com, (aspp.len() + 2) * b, 2 * b, 1, 1, 1);
    let backbone = Backbone { stem, down, deep, aspp, cross, global, fuse };

    let path = |bld: &mut Builder, name: &str, group: Group, depth: usize| TaskPath {
        reduce: bld.conv(&format!("decoder/{name}/reduce"), group, b, b, 1, 1, 1),
        convs: (0..depth)
            .map(|i| {
                let in_c = if i == 0 { 3 * b } else { b };
                bld.conv(&format!("decoder/{name}/conv{i}"), group, in_c, b, 3, 1, 1)
            })
            .collect(),
    };

    let v = cfg.variant;
    let semantic_path = v.has_semantic().then(|| path(&mut bld, "semantic", Group::Sem, 1));
    let common_path = (v == Variant::Sosd).then(|| path(&mut bld, "common", Group::Com, 1));
    let depth_path = v.has_depth().then(|| path(&mut bld, "depth", Group::Dep, 2));

    let fused = v == Variant::Sosd;
    let depth_head = (v.has_depth() && !fused).then(|| bld.conv("head/depth", Group::Dep, b, 1, k, 1, 1));
    let semantic_head =
        (v.has_semantic() && !fused).then(|| bld.conv("head/semantic", Group::Sem, b, cfg.num_classes, k, 1, 1));

    let depth_fusion = fused.then(|| DepthFusion {
        area3d: [
            bld.conv("s2d/area3d/conv0", Group::Dep3d, b, 2, k, 1, 1),
            bld.conv("s2d/area3d/conv1", Group::Dep3d, 2, 1, k, 1, 1),
        ],
        area3d_norm: bld.norm("s2d/area3d/bn", Group::Dep3d, 1),
        area2d: [
            bld.conv("s2d/area2d/conv0", Group::TwoD, b, 2, k, 1, 1),
            bld.conv("s2d/area2d/conv1", Group::TwoD, 2, 1, k, 1, 1),
        ],
        area2d_norm: bld.norm("s2d/area2d/bn", Group::TwoD, 1),
        out: bld.conv("s2d/out", Group::Dep, b + 1, 1, k, 1, 1),
    });
    let (s1, s2) = cfg.semantic_latents();
    let semantic_fusion = fused.then(|| SemanticFusion {
        inv_depth2: [
            bld.conv("d2s/inv_depth2/conv0", Group::InvDepth2, b, s1, k, 1, 1),
            bld.conv("d2s/inv_depth2/conv1", Group::InvDepth2, s1, s2, k, 1, 1),
        ],
        area3d: [
            bld.conv("d2s/area3d/conv0", Group::Sem3d, b, s1, k, 1, 1),
            bld.conv("d2s/area3d/conv1", Group::Sem3d, s1, s2, k, 1, 1),
        ],
        cue: bld.conv("d2s/cue", Group::Sem, s2, s2, 1, 1, 1),
        out: bld.conv("d2s/out", Group::Sem, b + s2, cfg.num_classes, k, 1, 1),
    });

    let depth_out = depth_head.or(depth_fusion.as_ref().map(|f| f.out));
    let mut store = bld.store;
    if let Some(c) = depth_out {
        store.params[c.bias].tensor = Tensor::full(&[1], cfg.depth_bias_init);
    }
    if let Some(f) = &depth_fusion {
        for n in [f.area3d_norm, f.area2d_norm] {
            store.params[n.beta].tensor = Tensor::full(&[1], cfg.latent_bn_beta_init);
        }
    }

    Ok(Model {
        config: cfg.clone(),
        store,
        layers: Layers {
            backbone,
            semantic_path,
            common_path,
            depth_path,
            depth_head,
            semantic_head,
            depth_fusion,
            semantic_fusion,
        },
    })
}

impl Model {
    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Multipliers applied to the gradient leaving each decoder path toward
/// the shared parameters. The depth and semantic paths are scaled where
/// they read the backbone features; the common path, itself shared, is
/// scaled at its output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchScale {
    pub semantic_path: f64,
    pub common_path: f64,
    pub depth_path: f64,
}

impl Default for BranchScale {
    fn default() -> Self {
        Self { semantic_path: 1.0, common_path: 1.0, depth_path: 1.0 }
    }
}

/// One forward pass: the tape, the parameter leaves it created, and a
/// working copy of batch-norm running statistics.
pub struct Forward<'m> {
    model: &'m Model,
    pub graph: Graph,
    param_vars: Vec<Option<Var>>,
    /// Running statistics after this pass; copy back with [`Forward::commit_running_stats`].
    pub running: Vec<RunningStats>,
    pub mode: Mode,
    trainable: [bool; 7],
    pub branch_scale: BranchScale,
}

impl<'m> Forward<'m> {
    pub fn new(model: &'m Model, mode: Mode) -> Self {
        Self {
            model,
            graph: Graph::new(),
            param_vars: vec![None; model.store.params.len()],
            running: model.store.buffers.iter().map(|b| b.stats.clone()).collect(),
            mode,
            trainable: [true; 7],
            branch_scale: BranchScale::default(),
        }
    }

    /// Continues `graph`, using `params` (one leaf per model parameter, in
    /// store order) instead of creating parameter leaves.
    pub fn attach(model: &'m Model, graph: Graph, params: &[Var], mode: Mode) -> Result<Self> {
        if params.len() != model.store.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter leaves, got {}",
                model.store.params.len(),
                params.len()
            )));
        }
        let mut fw = Self::new(model, mode);
        fw.graph = graph;
        fw.param_vars = params.iter().copied().map(Some).collect();
        Ok(fw)
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }

    /// Restricts gradient computation for parameters to `groups`. Gradients
    /// still flow through frozen parameters to everything upstream.
    pub fn with_trainable(mut self, groups: &[Group]) -> Self {
        self.trainable = [false; 7];
        for g in groups {
            self.trainable[g.index()] = true;
        }
        self
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    fn param(&mut self, idx: usize) -> Var {
        if let Some(v) = self.param_vars[idx] {
            return v;
        }
        let p = &self.model.store.params[idx];
        let v = self.graph.leaf(p.tensor.clone(), self.trainable[p.group.index()]);
        self.param_vars[idx] = Some(v);
        v
    }

    pub fn param_var(&self, idx: usize) -> Option<Var> {
        self.param_vars[idx]
    }

    /// Gradients for every parameter after `graph.backward`, `None` for
    /// parameters the loss did not reach or that were frozen.
    pub fn param_grads(&self) -> Vec<Option<Vec<f64>>> {
        self.param_vars.iter().map(|v| v.and_then(|v| self.graph.grad(v)).map(<[f64]>::to_vec)).collect()
    }

    pub fn commit_running_stats(&self, store: &mut ParamStore) {
        for (b, r) in store.buffers.iter_mut().zip(&self.running) {
            b.stats = r.clone();
        }
    }

    pub fn input(&mut self, image: Tensor) -> Result<Var> {
        let cfg = &self.model.config;
        let (_, c, h, w) = image.nchw()?;
        if (c, h, w) != (3, cfg.height, cfg.width) {
            return Err(Error::shape("model input", image.shape(), &[image.shape()[0], 3, cfg.height, cfg.width]));
        }
        Ok(self.graph.leaf(image, false))
    }

    fn conv(&mut self, c: Conv, x: Var) -> Result<Var> {
        let w = self.param(c.weight);
        let b = self.param(c.bias);
        self.graph.conv2d(x, w, Some(b), c.stride, c.dilation, Padding::Same)
    }

    fn conv_relu(&mut self, c: Conv, x: Var) -> Result<Var> {
        let y = self.conv(c, x)?;
        Ok(self.graph.relu(y))
    }

    fn norm(&mut self, n: Norm, x: Var) -> Result<Var> {
        let gamma = self.param(n.gamma);
        let beta = self.param(n.beta);
        let cfg = &self.model.config;
        let (momentum, eps) = (cfg.bn_momentum, cfg.bn_eps);
        let mode = match self.mode {
            Mode::Train => BnMode::Train { momentum, running: Some(&mut self.running[n.stats]) },
            Mode::Eval => BnMode::Eval(&self.running[n.stats]),
        };
        self.graph.batch_norm(x, gamma, beta, mode, eps)
    }

    fn stage(&mut self, (c, n): (Conv, Option<Norm>), x: Var) -> Result<Var> {
        let mut y = self.conv(c, x)?;
        if let Some(n) = n {
            y = self.norm(n, y)?;
        }
        Ok(self.graph.relu(y))
    }

    fn scaled(&mut self, x: Var, factor: f64) -> Var {
        if factor == 1.0 {
            x
        } else {
            self.graph.grad_scale(x, factor)
        }
    }

    /// Depth output positivity map: `scale · sqrt(x² + floor)`.
    fn positive_depth(&mut self, x: Var) -> Result<Var> {
        let cfg = &self.model.config;
        let (floor, scale) = (cfg.sqrt_floor, cfg.depth_scale);
        let sq = self.graph.mul(x, x)?;
        let lifted = self.graph.add_scalar(sq, floor);
        let root = self.graph.safe_sqrt(lifted, floor);
        Ok(self.graph.scale(root, scale))
    }
}

/// Output of the backbone.
#[derive(Debug, Clone, Copy)]
pub struct BackboneOut {
    /// Stride-4 encoder feature, `N×B×H/4×W/4`.
    pub refined: Var,
    /// Fused context feature, `N×2B×H/8×W/8`.
    pub global: Var,
}

/// ASPP branch outputs on a stride-8 feature, in configuration order, then
/// the cross-channel branch and the broadcast global-pool branch.
pub fn aspp_branches(fw: &mut Forward, feature: Var) -> Result<Vec<Var>> {
    let bb = fw.model.layers.backbone.clone();
    let (_, _, h, w) = fw.graph.value(feature).nchw()?;
    let mut out = Vec::with_capacity(bb.aspp.len() + 2);
    for c in &bb.aspp {
        out.push(fw.conv_relu(*c, feature)?);
    }
    out.push(fw.conv_relu(bb.cross, feature)?);
    let pooled = fw.graph.global_avg_pool(feature)?;
    let g = fw.conv_relu(bb.global, pooled)?;
    out.push(fw.graph.broadcast_spatial(g, h, w)?);
    Ok(out)
}

pub fn backbone_forward(fw: &mut Forward, image: Var) -> Result<BackboneOut> {
    backbone_forward_with(fw, image, true)
}

/// As [`backbone_forward`]; with `use_global` false the global-pool
/// branch is replaced by zeros.
pub fn backbone_forward_with(fw: &mut Forward, image: Var, use_global: bool) -> Result<BackboneOut> {
    let bb = fw.model.layers.backbone.clone();
    let x = fw.stage(bb.stem, image)?;
    let refined = fw.stage(bb.down, x)?;
    let deep = fw.stage(bb.deep, refined)?;
    let mut branches = aspp_branches(fw, deep)?;
    if !use_global {
        let last = branches.len() - 1;
        let zeros = Tensor::zeros(fw.graph.shape(branches[last]));
        branches[last] = fw.graph.leaf(zeros, false);
    }
    let cat = fw.graph.concat_channels(&branches)?;
    let global = fw.conv_relu(bb.fuse, cat)?;
    Ok(BackboneOut { refined, global })
}

/// The three decoder feature maps, each `N×B×H/4×W/4`. A map is absent
/// when the variant has no such path or it was not requested.
#[derive(Debug, Clone, Copy, Default)]
pub struct FeatureBundle {
    pub semantic: Option<Var>,
    pub common: Option<Var>,
    pub depth: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct PathRequest {
    pub semantic: bool,
    pub common: bool,
    pub depth: bool,
}

impl PathRequest {
    pub const ALL: PathRequest = PathRequest { semantic: true, common: true, depth: true };
}

fn run_path(
    fw: &mut Forward,
    path: &TaskPath,
    refined: Var,
    global_up: Var,
    scale: f64,
    scale_inputs: bool,
) -> Result<Var> {
    let (r, g) =
        if scale_inputs { (fw.scaled(refined, scale), fw.scaled(global_up, scale)) } else { (refined, global_up) };
    let reduced = fw.conv_relu(path.reduce, r)?;
    let mut x = fw.graph.concat_channels(&[reduced, g])?;
    for c in &path.convs {
        x = fw.conv_relu(*c, x)?;
    }
    Ok(if scale_inputs { x } else { fw.scaled(x, scale) })
}

pub fn decoder_forward(fw: &mut Forward, backbone: BackboneOut, want: PathRequest) -> Result<FeatureBundle> {
    let layers = fw.model.layers.clone();
    let global_up = fw.graph.bilinear_upsample(backbone.global, 2)?;
    let s = fw.branch_scale;
    let mut bundle = FeatureBundle::default();
    if let (true, Some(p)) = (want.semantic, &layers.semantic_path) {
        bundle.semantic = Some(run_path(fw, p, backbone.refined, global_up, s.semantic_path, true)?);
    }
    if let (true, Some(p)) = (want.common, &layers.common_path) {
        bundle.common = Some(run_path(fw, p, backbone.refined, global_up, s.common_path, false)?);
    }
    if let (true, Some(p)) = (want.depth, &layers.depth_path) {
        bundle.depth = Some(run_path(fw, p, backbone.refined, global_up, s.depth_path, true)?);
    }
    Ok(bundle)
}

/// Latent maps of the semantic-to-depth unit, `N×1×H/4×W/4` each.
#[derive(Debug, Clone, Copy)]
pub struct DepthLatents {
    /// Stands in for `fx·fy·ΔXΔY`.
    pub area3d: Var,
    /// Stands in for `1/(ΔuΔv)`.
    pub inv_area2d: Var,
    /// `sqrt(area3d · inv_area2d)`, floored.
    pub depth_cue: Var,
}

/// Latent maps of the depth-to-semantic unit.
#[derive(Debug, Clone, Copy)]
pub struct SemanticLatents {
    /// Stands in for `d⁻²`.
    pub inv_depth2: Var,
    pub area3d: Var,
    pub semantic_cue: Var,
}

/// Replacement latent maps for probing the semantic-to-depth unit.
#[derive(Debug, Clone)]
pub struct LatentOverride {
    pub area3d: Tensor,
    pub inv_area2d: Tensor,
}

fn require<T: Copy>(v: Option<T>, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::Contract(format!("{what} is not available for this variant")))
}

pub fn semantic_to_depth(fw: &mut Forward, bundle: &FeatureBundle) -> Result<(Var, DepthLatents)> {
    semantic_to_depth_with(fw, bundle, None)
}

/// Semantic-to-depth unit. With `overrides`, the two latent heads are
/// still evaluated but their outputs are replaced before fusion.
pub fn semantic_to_depth_with(
    fw: &mut Forward,
    bundle: &FeatureBundle,
    overrides: Option<&LatentOverride>,
) -> Result<(Var, DepthLatents)> {
    let f = fw
        .model
        .layers
        .depth_fusion
        .clone()
        .ok_or_else(|| Error::Contract("semantic_to_depth requires the sosd variant".into()))?;
    let common = require(bundle.common, "common representation")?;
    let semantic = require(bundle.semantic, "semantic feature")?;
    let depth = require(bundle.depth, "depth feature")?;

    let a = fw.conv_relu(f.area3d[0], common)?;
    let a = fw.conv(f.area3d[1], a)?;
    let mut area3d = fw.norm(f.area3d_norm, a)?;
    let s = fw.conv_relu(f.area2d[0], semantic)?;
    let s = fw.conv(f.area2d[1], s)?;
    let mut inv_area2d = fw.norm(f.area2d_norm, s)?;
    if let Some(o) = overrides {
        for (t, name) in [(&o.area3d, "area3d"), (&o.inv_area2d, "inv_area2d")] {
            if t.shape() != fw.graph.shape(area3d) {
                return Err(Error::Validation(format!(
                    "override {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    fw.graph.shape(area3d)
                )));
            }
        }
        area3d = fw.graph.leaf(o.area3d.clone(), false);
        inv_area2d = fw.graph.leaf(o.inv_area2d.clone(), false);
    }
    let product = fw.graph.mul(area3d, inv_area2d)?;
    let depth_cue = fw.graph.safe_sqrt(product, fw.model.config.sqrt_floor);
    let cat = fw.graph.concat_channels(&[depth, depth_cue])?;
    let x = fw.conv(f.out, cat)?;
    let positive = fw.positive_depth(x)?;
    let out = fw.graph.bilinear_upsample(positive, NetConfig::INTERNAL_STRIDE)?;
    Ok((out, DepthLatents { area3d, inv_area2d, depth_cue }))
}

/// Depth-to-semantic unit. Fuses by multiplication only; no square root.
pub fn depth_to_semantic(fw: &mut Forward, bundle: &FeatureBundle) -> Result<(Var, SemanticLatents)> {
    let f = fw
        .model
        .layers
        .semantic_fusion
        .clone()
        .ok_or_else(|| Error::Contract("depth_to_semantic requires the sosd variant".into()))?;
    let common = require(bundle.common, "common representation")?;
    let semantic = require(bundle.semantic, "semantic feature")?;
    let depth = require(bundle.depth, "depth feature")?;

    let d = fw.conv_relu(f.inv_depth2[0], depth)?;
    let inv_depth2 = fw.conv(f.inv_depth2[1], d)?;
    let a = fw.conv_relu(f.area3d[0], common)?;
    let area3d = fw.conv(f.area3d[1], a)?;
    let product = fw.graph.mul(inv_depth2, area3d)?;
    let semantic_cue = fw.conv_relu(f.cue, product)?;
    let cat = fw.graph.concat_channels(&[semantic, semantic_cue])?;
    let x = fw.conv(f.out, cat)?;
    let logits = fw.graph.bilinear_upsample(x, NetConfig::INTERNAL_STRIDE)?;
    Ok((logits, SemanticLatents { inv_depth2, area3d, semantic_cue }))
}

/// Which task outputs a forward pass should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Heads {
    pub depth: bool,
    pub semantic: bool,
}

impl Heads {
    pub const BOTH: Heads = Heads { depth: true, semantic: true };
    pub const DEPTH: Heads = Heads { depth: true, semantic: false };
    pub const SEMANTIC: Heads = Heads { depth: false, semantic: true };
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ModelOutput {
    /// `N×1×H×W` meters, strictly positive.
    pub depth: Option<Var>,
    /// `N×C×H×W`.
    pub logits: Option<Var>,
    pub depth_latents: Option<DepthLatents>,
    pub semantic_latents: Option<SemanticLatents>,
    pub features: FeatureBundle,
}

/// Runs the variant's network, producing the requested heads it has.
pub fn forward(fw: &mut Forward, image: Var, heads: Heads) -> Result<ModelOutput> {
    let variant = fw.model.config.variant;
    let heads = Heads { depth: heads.depth && variant.has_depth(), semantic: heads.semantic && variant.has_semantic() };
    let bb = backbone_forward(fw, image)?;
    let fused = variant == Variant::Sosd;
    let want = if fused {
        PathRequest::ALL
    } else {
        PathRequest { semantic: heads.semantic, common: false, depth: heads.depth }
    };
    let bundle = decoder_forward(fw, bb, want)?;
    let mut out = ModelOutput { features: bundle, ..Default::default() };
    let layers = fw.model.layers.clone();
    if heads.depth {
        if fused {
            let (d, lat) = semantic_to_depth(fw, &bundle)?;
            out.depth = Some(d);
            out.depth_latents = Some(lat);
        } else {
            let head = require(layers.depth_head, "depth head")?;
            let x = fw.conv(head, require(bundle.depth, "depth feature")?)?;
            let positive = fw.positive_depth(x)?;
            out.depth = Some(fw.graph.bilinear_upsample(positive, NetConfig::INTERNAL_STRIDE)?);
        }
    }
    if heads.semantic {
        if fused {
            let (l, lat) = depth_to_semantic(fw, &bundle)?;
            out.logits = Some(l);
            out.semantic_latents = Some(lat);
        } else {
            let head = require(layers.semantic_head, "semantic head")?;
            let x = fw.conv(head, require(bundle.semantic, "semantic feature")?)?;
            out.logits = Some(fw.graph.bilinear_upsample(x, NetConfig::INTERNAL_STRIDE)?);
        }
    }
    Ok(out)
}
