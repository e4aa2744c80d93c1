//! Synthetic scenes of fronto-parallel planar objects seen by a pinhole
//! camera, and the on-disk dataset built from them.
//!
//! Each class has a nominal physical size, so an object's image area
//! determines its depth up to a small size jitter. Rasterization is hard
//! pixel-center sampling with a painter's algorithm: the nearest object
//! covering a pixel center wins.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{validate, Error, Result};
use crate::geometry::{project_point, CameraIntrinsics, ObjectExtent, SpacePoint};
use crate::pnm;
use crate::rng::{domain, Rng};
use crate::tensor::Tensor;
use crate::tensor_io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarObject {
    pub center: SpacePoint,
    pub extent: ObjectExtent,
    pub class_id: usize,
    pub albedo: [f64; 3],
}

/// A rendered, labeled view. Grids are row-major `H×W`; the image is
/// stored planar as `3×H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub height: usize,
    pub width: usize,
    pub image: Tensor,
    /// Meters; 0 on holes.
    pub depth: Tensor,
    pub semantic: Vec<usize>,
    pub valid_mask: Vec<bool>,
    pub intrinsics: CameraIntrinsics,
}

impl SyntheticScene {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Checks the structural invariants of a scene for `num_classes` classes.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let (h, w) = (self.height, self.width);
        validate(h > 0 && w > 0, || "scene has empty dimensions".into())?;
        if self.image.shape() != [3, h, w] {
            return Err(Error::shape("scene image", self.image.shape(), &[3, h, w]));
        }
        if self.depth.shape() != [h, w] {
            return Err(Error::shape("scene depth", self.depth.shape(), &[h, w]));
        }
        if self.semantic.len() != h * w || self.valid_mask.len() != h * w {
            return Err(Error::shape("scene labels", &[self.semantic.len(), self.valid_mask.len()], &[h * w]));
        }
        if let Some(bad) = self.image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("image value {bad} outside [0, 1]")));
        }
        for (i, (&d, &m)) in self.depth.data().iter().zip(&self.valid_mask).enumerate() {
            if m && !(d > 0.0 && d.is_finite()) {
                return Err(Error::Validation(format!("valid pixel {i} has depth {d}")));
            }
        }
        if let Some(&c) = self.semantic.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Validation(format!("class id {c} ≥ class count {num_classes}")));
        }
        self.intrinsics.validate(w, h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub height: usize,
    pub width: usize,
    pub far_plane: f64,
    pub hole_rate: f64,
    pub background: [f64; 3],
    pub noise_std: f64,
}

impl RenderOptions {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, far_plane: 20.0, hole_rate: 0.05, background: [0.35, 0.35, 0.35], noise_std: 0.0 }
    }
}

/// Half-open pixel range whose centers `i + 0.5` fall in `[lo, hi)`.
fn covered(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
    let a = (lo - 0.5).ceil().max(0.0);
    let b = (hi - 0.5).ceil().clamp(0.0, n as f64);
    let a = (a as usize).min(n);
    let b = b as usize;
    a..b.max(a)
}

pub fn render_scene(
    objects: &[PlanarObject],
    k: &CameraIntrinsics,
    opts: &RenderOptions,
    rng: &mut Rng,
) -> Result<SyntheticScene> {
    let (h, w) = (opts.height, opts.width);
    validate(h > 0 && w > 0, || format!("image dimensions must be positive, got {h}x{w}"))?;
    validate((0.0..1.0).contains(&opts.hole_rate), || format!("hole_rate {} not in [0, 1)", opts.hole_rate))?;
    validate(opts.far_plane > 0.0, || "far plane must be positive".into())?;
    k.validate(w, h)?;
    let hw = h * w;
    let mut depth = vec![opts.far_plane; hw];
    let mut semantic = vec![0usize; hw];
    let mut color = vec![opts.background; hw];

    let mut order: Vec<&PlanarObject> = objects.iter().collect();
    // Far to near; equal depths keep list order, so later objects win ties.
    order.sort_by(|a, b| b.center.d.total_cmp(&a.center.d));
    for obj in order {
        let c = obj.center;
        let lo = project_point(SpacePoint { x: c.x - obj.extent.dx / 2.0, y: c.y - obj.extent.dy / 2.0, d: c.d }, k)?;
        let hi = project_point(SpacePoint { x: c.x + obj.extent.dx / 2.0, y: c.y + obj.extent.dy / 2.0, d: c.d }, k)?;
        for y in covered(lo.v, hi.v, h) {
            for x in covered(lo.u, hi.u, w) {
                let i = y * w + x;
                depth[i] = c.d;
                semantic[i] = obj.class_id;
                color[i] = obj.albedo;
            }
        }
    }

    let mut image = vec![0.0; 3 * hw];
    for (i, rgb) in color.iter().enumerate() {
        for ch in 0..3 {
            let noise = if opts.noise_std > 0.0 { rng.normal(0.0, opts.noise_std) } else { 0.0 };
            image[ch * hw + i] = (rgb[ch] + noise).clamp(0.0, 1.0);
        }
    }

    let mut valid_mask = vec![true; hw];
    let holes = (opts.hole_rate * hw as f64).floor() as usize;
    if holes > 0 {
        let perm = rng.permutation(hw);
        for &i in &perm[..holes] {
            valid_mask[i] = false;
            depth[i] = 0.0;
        }
    }

    Ok(SyntheticScene {
        height: h,
        width: w,
        image: Tensor::new(vec![3, h, w], image)?,
        depth: Tensor::new(vec![h, w], depth)?,
        semantic,
        valid_mask,
        intrinsics: *k,
    })
}

// ---- datasets -------------------------------------------------------------

fn default_train() -> usize {
    512
}
fn default_val() -> usize {
    128
}
fn default_height() -> usize {
    64
}
fn default_width() -> usize {
    128
}
fn default_classes() -> usize {
    6
}
fn default_objects_min() -> usize {
    1
}
fn default_objects_max() -> usize {
    4
}
fn default_depth_min() -> f64 {
    2.0
}
fn default_depth_max() -> f64 {
    12.0
}
fn default_far() -> f64 {
    20.0
}
fn default_hole_rate() -> f64 {
    0.05
}
fn default_jitter() -> f64 {
    0.05
}
fn default_noise() -> f64 {
    0.02
}
fn default_baseline() -> f64 {
    0.22
}

/// Parameters of a generated dataset. Every field has a default, so `{}`
/// is the standard benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_train")]
    pub train_scenes: usize,
    #[serde(default = "default_val")]
    pub val_scenes: usize,
    #[serde(default = "default_height")]
    pub height: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    /// Including background class 0.
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_objects_min")]
    pub objects_min: usize,
    #[serde(default = "default_objects_max")]
    pub objects_max: usize,
    #[serde(default = "default_depth_min")]
    pub depth_min: f64,
    #[serde(default = "default_depth_max")]
    pub depth_max: f64,
    #[serde(default = "default_far")]
    pub far_plane: f64,
    #[serde(default = "default_hole_rate")]
    pub hole_rate: f64,
    /// Relative uniform jitter of each object's physical size around its
    /// class's nominal size.
    #[serde(default = "default_jitter")]
    pub size_jitter: f64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    /// Stereo baseline in meters used to express depth as disparity.
    #[serde(default = "default_baseline")]
    pub disparity_baseline: f64,
    /// Defaults to `fx = fy = width·25/32`, principal point at the center.
    #[serde(default)]
    pub intrinsics: Option<CameraIntrinsics>,
    /// Nominal `[ΔX, ΔY]` per foreground class; defaults grow with class id.
    #[serde(default)]
    pub class_extents: Option<Vec<[f64; 2]>>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        validate(self.height > 0 && self.width > 0, || "image dimensions must be positive".into())?;
        validate(self.num_classes >= 2, || "need at least 2 classes".into())?;
        validate(self.objects_min <= self.objects_max, || "objects_min exceeds objects_max".into())?;
        validate(self.depth_min > 0.0 && self.depth_min <= self.depth_max, || {
            format!("bad depth range [{}, {}]", self.depth_min, self.depth_max)
        })?;
        validate(self.far_plane > self.depth_max, || "far plane must lie beyond depth_max".into())?;
        validate((0.0..1.0).contains(&self.hole_rate), || "hole_rate must be in [0, 1)".into())?;
        validate((0.0..1.0).contains(&self.size_jitter), || "size_jitter must be in [0, 1)".into())?;
        validate(self.noise_std >= 0.0, || "noise_std must be non-negative".into())?;
        validate(self.disparity_baseline > 0.0, || "disparity_baseline must be positive".into())?;
        self.intrinsics().validate(self.width, self.height)?;
        let ext = self.class_extents();
        validate(ext.len() == self.num_classes - 1, || {
            format!("class_extents needs {} entries, got {}", self.num_classes - 1, ext.len())
        })?;
        validate(ext.iter().flatten().all(|&v| v > 0.0), || "class extents must be positive".into())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        self.intrinsics.unwrap_or_else(|| {
            let f = self.width as f64 * 25.0 / 32.0;
            CameraIntrinsics { fx: f, fy: f, ux: self.width as f64 / 2.0, uy: self.height as f64 / 2.0 }
        })
    }

    pub fn class_extents(&self) -> Vec<[f64; 2]> {
        self.class_extents.clone().unwrap_or_else(|| {
            (1..self.num_classes)
                .map(|c| {
                    let t = (c - 1) as f64;
                    [0.6 + 0.35 * t, 0.5 + 0.25 * t]
                })
                .collect()
        })
    }

    /// Fixed RGB appearance of each class; index 0 is the background.
    pub fn class_albedo(&self, class_id: usize) -> [f64; 3] {
        if class_id == 0 {
            return [0.35, 0.35, 0.35];
        }
        let c = pnm::class_color(class_id);
        [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0]
    }

    pub fn total_scenes(&self) -> usize {
        self.train_scenes + self.val_scenes
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            height: self.height,
            width: self.width,
            far_plane: self.far_plane,
            hole_rate: self.hole_rate,
            background: self.class_albedo(0),
            noise_std: self.noise_std,
        }
    }

    /// Random objects for one scene, each projecting its center into the image.
    pub fn sample_objects(&self, rng: &mut Rng) -> Vec<PlanarObject> {
        let k = self.intrinsics();
        let extents = self.class_extents();
        let count = self.objects_min + rng.below(self.objects_max - self.objects_min + 1);
        (0..count)
            .map(|_| {
                let class_id = 1 + rng.below(self.num_classes - 1);
                let [nx, ny] = extents[class_id - 1];
                let jitter = |rng: &mut Rng| 1.0 + rng.uniform_range(-self.size_jitter, self.size_jitter);
                let extent = ObjectExtent { dx: nx * jitter(rng), dy: ny * jitter(rng) };
                let d = rng.uniform_range(self.depth_min, self.depth_max);
                let u = rng.uniform_range(0.1, 0.9) * self.width as f64;
                let v = rng.uniform_range(0.1, 0.9) * self.height as f64;
                PlanarObject {
                    center: SpacePoint { x: (u - k.ux) * d / k.fx, y: (v - k.uy) * d / k.fy, d },
                    extent,
                    class_id,
                    albedo: self.class_albedo(class_id),
                }
            })
            .collect()
    }

    /// Scene `index` of the dataset seeded with `seed`.
    pub fn generate_scene(&self, seed: u64, index: usize) -> Result<SyntheticScene> {
        let mut rng = Rng::substream(seed, domain::SCENE, index as u64);
        let objects = self.sample_objects(&mut rng);
        render_scene(&objects, &self.intrinsics(), &self.render_options(), &mut rng)
    }

    pub fn disparity(&self, depth: f64) -> f64 {
        self.intrinsics().fx * self.disparity_baseline / depth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(Error::Validation(format!("unknown split {s:?}, expected train or val"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneEntry {
    pub id: String,
    pub split: Split,
}

pub const MANIFEST_FORMAT: &str = "sosd-dataset";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub intrinsics: CameraIntrinsics,
    pub config: DatasetConfig,
    pub scenes: Vec<SceneEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        if self.format != MANIFEST_FORMAT || self.version != 1 {
            return Err(Error::Format(format!("unsupported manifest {} v{}", self.format, self.version)));
        }
        self.config.validate()?;
        if self.num_classes != self.config.num_classes
            || self.height != self.config.height
            || self.width != self.config.width
            || self.intrinsics != self.config.intrinsics()
        {
            return Err(Error::Format("manifest header disagrees with its config".into()));
        }
        for s in &self.scenes {
            if s.id.is_empty() || !s.id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-') {
                return Err(Error::Format(format!("bad scene id {:?}", s.id)));
            }
        }
        Ok(())
    }
}

fn scene_dir(root: &Path, id: &str) -> PathBuf {
    root.join("scenes").join(id)
}

pub fn write_scene(dir: &Path, scene: &SyntheticScene) -> Result<()> {
    let (h, w) = (scene.height, scene.width);
    tensor_io::write(&dir.join("image.sosd"), &scene.image)?;
    tensor_io::write(&dir.join("depth.sosd"), &scene.depth)?;
    let sem = Tensor::new(vec![h, w], scene.semantic.iter().map(|&c| c as f64).collect())?;
    tensor_io::write(&dir.join("semantic.sosd"), &sem)?;
    let mask = Tensor::new(vec![h, w], scene.valid_mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())?;
    tensor_io::write(&dir.join("mask.sosd"), &mask)
}

pub fn read_scene(dir: &Path, intrinsics: CameraIntrinsics) -> Result<SyntheticScene> {
    let image = tensor_io::read(&dir.join("image.sosd"))?;
    let depth = tensor_io::read(&dir.join("depth.sosd"))?;
    let sem = tensor_io::read(&dir.join("semantic.sosd"))?;
    let mask = tensor_io::read(&dir.join("mask.sosd"))?;
    let &[h, w] = depth.shape() else {
        return Err(Error::Format(format!("depth grid has shape {:?}", depth.shape())));
    };
    if sem.shape() != [h, w] || mask.shape() != [h, w] {
        return Err(Error::Format("label grids disagree with depth grid".into()));
    }
    let semantic = sem
        .data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::Format(format!("semantic value {v} is not a class id")))
            }
        })
        .collect::<Result<_>>()?;
    let valid_mask = mask
        .data()
        .iter()
        .map(|&v| match v {
            0.0 => Ok(false),
            1.0 => Ok(true),
            _ => Err(Error::Format(format!("mask value {v} is not 0 or 1"))),
        })
        .collect::<Result<_>>()?;
    Ok(SyntheticScene { height: h, width: w, image, depth, semantic, valid_mask, intrinsics })
}

/// Writes a visual dump of a scene: `image.ppm`, `depth.pgm`, `semantic.ppm`.
pub fn dump_scene(dir: &Path, scene: &SyntheticScene) -> Result<()> {
    let (h, w) = (scene.height, scene.width);
    pnm::rgb_from_planes(scene.image.data(), h, w).write(&dir.join("image.ppm"))?;
    pnm::gray_normalized(scene.depth.data(), h, w, Some(&scene.valid_mask)).write(&dir.join("depth.pgm"))?;
    pnm::labels_indexed_color(&scene.semantic, h, w).write(&dir.join("semantic.ppm"))
}

/// Renders every scene of `cfg` and writes the dataset under `root`.
///
/// The output is a pure function of `(cfg, seed)`.
pub fn generate_dataset(cfg: &DatasetConfig, seed: u64, root: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut scenes = Vec::with_capacity(cfg.total_scenes());
    for index in 0..cfg.total_scenes() {
        let scene = cfg.generate_scene(seed, index)?;
        scene.validate(cfg.num_classes)?;
        let id = format!("{index:06}");
        write_scene(&scene_dir(root, &id), &scene)?;
        let split = if index < cfg.train_scenes { Split::Train } else { Split::Val };
        scenes.push(SceneEntry { id, split });
    }
    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.into(),
        version: 1,
        seed,
        num_classes: cfg.num_classes,
        height: cfg.height,
        width: cfg.width,
        intrinsics: cfg.intrinsics(),
        config: cfg.clone(),
        scenes,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    let path = root.join("manifest.json");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A dataset held in memory, split into train and validation scenes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<SyntheticScene>,
    pub val: Vec<SyntheticScene>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = DatasetManifest::parse(&text)?;
        let mut train = Vec::new();
        let mut val = Vec::new();
        for entry in &manifest.scenes {
            let scene = read_scene(&scene_dir(root, &entry.id), manifest.intrinsics)?;
            if (scene.height, scene.width) != (manifest.height, manifest.width) {
                return Err(Error::Format(format!("scene {} has the wrong size", entry.id)));
            }
            scene.validate(manifest.num_classes)?;
            match entry.split {
                Split::Train => train.push(scene),
                Split::Val => val.push(scene),
            }
        }
        Ok(Self { manifest, train, val })
    }

    /// Generates the dataset in memory without touching the filesystem.
    pub fn generate(cfg: &DatasetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut train = Vec::new();
        let mut val = Vec::new();
        let mut scenes = Vec::new();
        for index in 0..cfg.total_scenes() {
            let scene = cfg.generate_scene(seed, index)?;
            let split = if index < cfg.train_scenes { Split::Train } else { Split::Val };
            scenes.push(SceneEntry { id: format!("{index:06}"), split });
            match split {
                Split::Train => train.push(scene),
                Split::Val => val.push(scene),
            }
        }
        let manifest = DatasetManifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            seed,
            num_classes: cfg.num_classes,
            height: cfg.height,
            width: cfg.width,
            intrinsics: cfg.intrinsics(),
            config: cfg.clone(),
            scenes,
        };
        Ok(Self { manifest, train, val })
    }

    pub fn split(&self, split: Split) -> &[SyntheticScene] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }
}
