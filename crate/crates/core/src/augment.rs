//! On-the-fly training augmentation: horizontal flip and center scaling.

use serde::{Deserialize, Serialize};

use crate::error::{validate, Result};
use crate::rng::Rng;
use crate::synth::SyntheticScene;
use crate::tensor::Tensor;

/// How depth targets change when the image is magnified by `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthScaling {
    /// Divide depth by `s`: apparent size is inversely proportional to
    /// depth, so magnifying the view mimics moving closer.
    Divide,
    /// Keep depth values as they are.
    Unchanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip: bool,
    pub flip_probability: f64,
    pub scale: bool,
    pub scale_ratios: Vec<f64>,
    pub depth_scaling: DepthScaling,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip: true,
            flip_probability: 0.5,
            scale: true,
            scale_ratios: vec![0.5, 0.75, 1.0, 1.25, 1.5, 1.75],
            depth_scaling: DepthScaling::Divide,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self { flip: false, scale: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        validate((0.0..=1.0).contains(&self.flip_probability), || {
            format!("flip_probability {} outside [0, 1]", self.flip_probability)
        })?;
        validate(!self.scale || !self.scale_ratios.is_empty(), || "scale_ratios is empty".into())?;
        validate(self.scale_ratios.iter().all(|&r| r > 0.0 && r.is_finite()), || {
            format!("scale ratios must be positive, got {:?}", self.scale_ratios)
        })
    }
}

/// Applies a random flip and scale to `scene`. Two draws are taken from
/// `rng` regardless of which transforms are enabled, so enabling one does
/// not shift the other's stream.
pub fn augment(scene: &SyntheticScene, cfg: &AugmentConfig, rng: &mut Rng) -> SyntheticScene {
    let flip_draw = rng.uniform();
    let scale_draw = rng.uniform();
    let mut out = scene.clone();
    if cfg.flip && flip_draw < cfg.flip_probability {
        out = flip(&out);
    }
    if cfg.scale && !cfg.scale_ratios.is_empty() {
        let i = ((scale_draw * cfg.scale_ratios.len() as f64) as usize).min(cfg.scale_ratios.len() - 1);
        let s = cfg.scale_ratios[i];
        if s != 1.0 {
            out = rescale(&out, s, cfg.depth_scaling);
        }
    }
    out
}

/// Mirrors every grid of the scene left to right.
pub fn flip(scene: &SyntheticScene) -> SyntheticScene {
    let (h, w) = (scene.height, scene.width);
    let mirror = |i: usize| {
        let (y, x) = (i / w, i % w);
        y * w + (w - 1 - x)
    };
    let grid = |data: &[f64]| -> Vec<f64> {
        (0..data.len()).map(|i| data[(i / (h * w)) * h * w + mirror(i % (h * w))]).collect()
    };
    SyntheticScene {
        image: Tensor::new(scene.image.shape().to_vec(), grid(scene.image.data())).expect("same shape"),
        depth: Tensor::new(scene.depth.shape().to_vec(), grid(scene.depth.data())).expect("same shape"),
        semantic: (0..h * w).map(|i| scene.semantic[mirror(i)]).collect(),
        valid_mask: (0..h * w).map(|i| scene.valid_mask[mirror(i)]).collect(),
        ..scene.clone()
    }
}

/// Magnifies the scene by `s` about the image center, keeping its size.
///
/// The image is resampled bilinearly; depth, labels and the mask use the
/// nearest source pixel. Pixels that map outside the source become
/// background-free padding: black image, class 0, and invalid depth.
pub fn rescale(scene: &SyntheticScene, s: f64, depth: DepthScaling) -> SyntheticScene {
    let (h, w) = (scene.height, scene.width);
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    // Continuous source coordinate of the center of output pixel `i`.
    let src = |i: usize, c: f64| (i as f64 + 0.5 - c) / s + c;
    let inside = |y: f64, x: f64| y >= 0.0 && y < h as f64 && x >= 0.0 && x < w as f64;

    let mut image = vec![0.0; 3 * h * w];
    let mut depth_out = vec![0.0; h * w];
    let mut semantic = vec![0; h * w];
    let mut valid_mask = vec![false; h * w];
    let factor = match depth {
        DepthScaling::Divide => 1.0 / s,
        DepthScaling::Unchanged => 1.0,
    };
    for y in 0..h {
        let sy = src(y, cy);
        for x in 0..w {
            let sx = src(x, cx);
            if !inside(sy, sx) {
                continue;
            }
            let o = y * w + x;
            let n = (sy as usize) * w + sx as usize;
            semantic[o] = scene.semantic[n];
            valid_mask[o] = scene.valid_mask[n];
            depth_out[o] = if scene.valid_mask[n] { scene.depth.data()[n] * factor } else { 0.0 };

            // Bilinear on pixel centers, clamped at the border.
            let fy = (sy - 0.5).clamp(0.0, (h - 1) as f64);
            let fx = (sx - 0.5).clamp(0.0, (w - 1) as f64);
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
            for c in 0..3 {
                let p = &scene.image.data()[c * h * w..(c + 1) * h * w];
                let top = p[y0 * w + x0] * (1.0 - tx) + p[y0 * w + x1] * tx;
                let bottom = p[y1 * w + x0] * (1.0 - tx) + p[y1 * w + x1] * tx;
                image[c * h * w + o] = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    SyntheticScene {
        image: Tensor::new(vec![3, h, w], image).expect("sized above"),
        depth: Tensor::new(vec![h, w], depth_out).expect("sized above"),
        semantic,
        valid_mask,
        ..scene.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{depth_from_area_values, image_extent, CameraIntrinsics, ObjectExtent, SpacePoint};
    use crate::synth::{render_scene, PlanarObject, RenderOptions};

    fn centered_square(d: f64) -> (SyntheticScene, ObjectExtent, CameraIntrinsics) {
        let k = CameraIntrinsics { fx: 100.0, fy: 100.0, ux: 64.0, uy: 32.0 };
        let extent = ObjectExtent { dx: 0.4, dy: 0.4 };
        let obj =
            PlanarObject { center: SpacePoint { x: 0.0, y: 0.0, d }, extent, class_id: 2, albedo: [0.9, 0.2, 0.1] };
        let mut opts = RenderOptions::new(64, 128);
        opts.hole_rate = 0.0;
        let scene = render_scene(&[obj], &k, &opts, &mut Rng::new(1)).unwrap();
        (scene, extent, k)
    }

    fn random_scene() -> SyntheticScene {
        let cfg = crate::synth::DatasetConfig::default();
        cfg.generate_scene(3, 0).unwrap()
    }

    #[test]
    fn flip_is_an_involution() {
        let s = random_scene();
        let twice = flip(&flip(&s));
        assert!(twice.image.bit_eq(&s.image) && twice.depth.bit_eq(&s.depth));
        assert_eq!(twice.semantic, s.semantic);
        assert_eq!(twice.valid_mask, s.valid_mask);
        assert_ne!(flip(&s).semantic, s.semantic);
    }

    #[test]
    fn unit_ratio_is_identity() {
        let s = random_scene();
        let cfg = AugmentConfig { flip: false, scale_ratios: vec![1.0], ..AugmentConfig::default() };
        let out = augment(&s, &cfg, &mut Rng::new(2));
        assert_eq!(out, s);
        let r = rescale(&s, 1.0, DepthScaling::Divide);
        assert!(r.image.bit_eq(&s.image) && r.depth.bit_eq(&s.depth));
        assert_eq!(r.semantic, s.semantic);
    }

    #[test]
    fn doubling_quadruples_area_halves_depth_and_keeps_the_area_relation() {
        let d = 4.0;
        let (scene, extent, k) = centered_square(d);
        let before = scene.semantic.iter().filter(|&&c| c == 2).count() as f64;
        let out = rescale(&scene, 2.0, DepthScaling::Divide);
        let after = out.semantic.iter().filter(|&&c| c == 2).count() as f64;
        // Square of 10×10 pixels; one pixel of boundary slack per side.
        let ie = image_extent(extent, d, &k).unwrap();
        let scaled_area = 4.0 * ie.area();
        assert!((after - scaled_area).abs() <= 2.0 * 2.0 * (ie.du + ie.dv) + 4.0, "{after} vs {scaled_area}");
        assert!((after / before - 4.0).abs() < 0.5, "{before} -> {after}");
        for (i, &c) in out.semantic.iter().enumerate() {
            if c == 2 {
                assert_eq!(out.depth.data()[i], d / 2.0);
            }
        }
        let recovered = depth_from_area_values(extent.area(), scaled_area, &k).unwrap();
        assert!((recovered - d / 2.0).abs() < 1e-6);
    }

    #[test]
    fn unchanged_depth_mode_keeps_values() {
        let (scene, _, _) = centered_square(4.0);
        let out = rescale(&scene, 1.5, DepthScaling::Unchanged);
        let center = 32 * 128 + 64;
        assert_eq!(out.depth.data()[center], 4.0);
    }

    #[test]
    fn shrinking_pads_with_invalid_background() {
        let s = random_scene();
        let out = rescale(&s, 0.5, DepthScaling::Divide);
        assert!(!out.valid_mask[0]);
        assert_eq!(out.semantic[0], 0);
        assert_eq!(out.depth.data()[0], 0.0);
        out.validate(6).unwrap();
    }

    #[test]
    fn augmentation_is_seed_deterministic() {
        let s = random_scene();
        let cfg = AugmentConfig::default();
        let a = augment(&s, &cfg, &mut Rng::new(9));
        let b = augment(&s, &cfg, &mut Rng::new(9));
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(AugmentConfig { flip_probability: 1.5, ..Default::default() }.validate().is_err());
        assert!(AugmentConfig { scale_ratios: vec![0.0], ..Default::default() }.validate().is_err());
    }
}
