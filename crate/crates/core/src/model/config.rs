use serde::{Deserialize, Serialize};

use crate::error::{validate, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    SemanticOnly,
    DepthOnly,
    Mtl,
    Sosd,
}

impl Variant {
    pub fn has_depth(self) -> bool {
        !matches!(self, Variant::SemanticOnly)
    }

    pub fn has_semantic(self) -> bool {
        !matches!(self, Variant::DepthOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::SemanticOnly => "semantic-only",
            Variant::DepthOnly => "depth-only",
            Variant::Mtl => "mtl",
            Variant::Sosd => "sosd",
        }
    }
}

/// Parameter groups of the alternating schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    /// Shared backbone and the common-representation decoder path.
    #[serde(rename = "com")]
    Com,
    /// Depth decoder path and depth output.
    #[serde(rename = "dep")]
    Dep,
    /// Semantic decoder path, semantic cue and logits.
    #[serde(rename = "sem")]
    Sem,
    /// Physical-area head feeding the depth side.
    #[serde(rename = "3d-dep")]
    Dep3d,
    /// Physical-area head feeding the semantic side.
    #[serde(rename = "3d-sem")]
    Sem3d,
    /// Inverse image-area head.
    #[serde(rename = "2d")]
    TwoD,
    /// Inverse squared-depth head.
    #[serde(rename = "d-2")]
    InvDepth2,
}

impl Group {
    pub const ALL: [Group; 7] =
        [Group::Com, Group::Dep, Group::Sem, Group::Dep3d, Group::Sem3d, Group::TwoD, Group::InvDepth2];

    pub fn name(self) -> &'static str {
        match self {
            Group::Com => "com",
            Group::Dep => "dep",
            Group::Sem => "sem",
            Group::Dep3d => "3d-dep",
            Group::Sem3d => "3d-sem",
            Group::TwoD => "2d",
            Group::InvDepth2 => "d-2",
        }
    }

    pub fn index(self) -> usize {
        Group::ALL.iter().position(|&g| g == self).unwrap()
    }
}

fn default_base() -> usize {
    16
}
fn default_dilations() -> Vec<usize> {
    vec![1, 2, 4, 8]
}
fn default_kernel() -> usize {
    3
}
fn default_init_std() -> f64 {
    0.01
}
fn default_depth_scale() -> f64 {
    10.0
}
fn default_depth_bias() -> f64 {
    1.0
}

fn default_latent_beta() -> f64 {
    1.0
}

fn default_momentum() -> f64 {
    0.9
}
fn default_eps() -> f64 {
    1e-5
}
fn default_floor() -> f64 {
    1e-6
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub variant: Variant,
    #[serde(default = "default_base")]
    pub base_channels: usize,
    #[serde(default = "default_dilations")]
    pub aspp_dilations: Vec<usize>,
    /// Kernel size of the fusion-unit and head convolutions.
    #[serde(default = "default_kernel")]
    pub fusion_kernel: usize,
    /// Channels of the two-layer latent heads on the semantic side;
    /// defaults to `(base, base / 2)`.
    #[serde(default)]
    pub semantic_latent_channels: Option<(usize, usize)>,
    /// Standard deviation of the zero-mean Gaussian weight init.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    /// Depth output is `depth_scale · sqrt(x² + floor)` for head activation `x`.
    #[serde(default = "default_depth_scale")]
    pub depth_scale: f64,
    /// Initial bias of the depth output convolution.
    #[serde(default = "default_depth_bias")]
    pub depth_bias_init: f64,
    /// Initial shift of the batch norms closing the two depth-side latent
    /// heads. A positive shift makes their product, and hence the square
    /// root's gradient, mostly live at initialization.
    #[serde(default = "default_latent_beta")]
    pub latent_bn_beta_init: f64,
    #[serde(default = "default_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_eps")]
    pub bn_eps: f64,
    #[serde(default = "default_floor")]
    pub sqrt_floor: f64,
    #[serde(default = "default_true")]
    pub encoder_batch_norm: bool,
}

impl NetConfig {
    /// Feature maps inside the decoder and fusion units live at this stride.
    pub const INTERNAL_STRIDE: usize = 4;

    pub fn new(height: usize, width: usize, num_classes: usize, variant: Variant) -> Self {
        let cfg: NetConfig = serde_json::from_value(serde_json::json!({
            "height": height, "width": width, "num_classes": num_classes, "variant": variant,
        }))
        .expect("defaults fill every other field");
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        validate(self.height > 0 && self.width > 0 && self.height % 8 == 0 && self.width % 8 == 0, || {
            format!("input {}x{} must be positive multiples of 8", self.height, self.width)
        })?;
        validate(self.num_classes >= 2, || "num_classes must be at least 2".into())?;
        validate(self.base_channels >= 2, || "base_channels must be at least 2".into())?;
        validate(!self.aspp_dilations.is_empty(), || "need at least one ASPP dilation".into())?;
        let mut d = self.aspp_dilations.clone();
        d.sort_unstable();
        d.dedup();
        validate(d.len() == self.aspp_dilations.len() && d[0] > 0, || {
            format!("ASPP dilations must be positive and distinct, got {:?}", self.aspp_dilations)
        })?;
        validate(self.fusion_kernel % 2 == 1, || "fusion_kernel must be odd".into())?;
        let (a, b) = self.semantic_latents();
        validate(a > 0 && b > 0, || "semantic latent channels must be positive".into())?;
        validate(self.init_std >= 0.0 && self.init_std.is_finite(), || "init_std must be finite and ≥ 0".into())?;
        validate(self.depth_scale > 0.0, || "depth_scale must be positive".into())?;
        validate((0.0..1.0).contains(&self.bn_momentum), || "bn_momentum must be in [0, 1)".into())?;
        validate(self.bn_eps > 0.0 && self.sqrt_floor > 0.0, || "bn_eps and sqrt_floor must be positive".into())
    }

    pub fn semantic_latents(&self) -> (usize, usize) {
        self.semantic_latent_channels.unwrap_or((self.base_channels, (self.base_channels / 2).max(1)))
    }

    pub fn feature_size(&self) -> (usize, usize) {
        (self.height / Self::INTERNAL_STRIDE, self.width / Self::INTERNAL_STRIDE)
    }
}
