//! Pinhole projection and the area/depth relation of planar objects.
//!
//! For a fronto-parallel object at depth `d` with physical extent `ΔX×ΔY`,
//! the image extent is `Δu = fx·ΔX/d`, `Δv = fy·ΔY/d`, hence
//! `d² = fx·fy·ΔX·ΔY / (Δu·Δv)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub ux: f64,
    pub uy: f64,
}

impl CameraIntrinsics {
    /// Validates focal lengths and that the principal point lies inside a
    /// `width × height` image.
    pub fn new(fx: f64, fy: f64, ux: f64, uy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fx, fy, ux, uy };
        k.validate(width, height)?;
        Ok(k)
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::Validation(format!(
                "focal lengths must be positive, got fx={}, fy={}",
                self.fx, self.fy
            )));
        }
        if !(0.0..=width as f64).contains(&self.ux) || !(0.0..=height as f64).contains(&self.uy) {
            return Err(Error::Validation(format!(
                "principal point ({}, {}) outside {width}x{height} image",
                self.ux, self.uy
            )));
        }
        Ok(())
    }

    /// The 3×3 calibration matrix, row-major.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [[self.fx, 0.0, self.ux], [0.0, self.fy, self.uy], [0.0, 0.0, 1.0]]
    }
}

/// A point in the camera frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpacePoint {
    pub x: f64,
    pub y: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
}

/// Physical size of a planar object, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectExtent {
    pub dx: f64,
    pub dy: f64,
}

impl ObjectExtent {
    pub fn area(&self) -> f64 {
        self.dx * self.dy
    }
}

/// Size of an object's image, pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageExtent {
    pub du: f64,
    pub dv: f64,
}

impl ImageExtent {
    pub fn area(&self) -> f64 {
        self.du * self.dv
    }
}

fn check_depth(d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("depth must be positive and finite, got {d}")))
    }
}

pub fn project_point(p: SpacePoint, k: &CameraIntrinsics) -> Result<ImagePoint> {
    check_depth(p.d)?;
    Ok(ImagePoint { u: k.fx * p.x / p.d + k.ux, v: k.fy * p.y / p.d + k.uy })
}

pub fn image_extent(e: ObjectExtent, d: f64, k: &CameraIntrinsics) -> Result<ImageExtent> {
    check_depth(d)?;
    Ok(ImageExtent { du: k.fx * e.dx / d, dv: k.fy * e.dy / d })
}

/// Depth recovered from physical and image area, the positive root of
/// `d² = fx·fy·ΔXΔY / (ΔuΔv)`.
pub fn depth_from_areas(e: ObjectExtent, i: ImageExtent, k: &CameraIntrinsics) -> Result<f64> {
    depth_from_area_values(e.area(), i.area(), k)
}

/// As [`depth_from_areas`] with the two areas given directly.
pub fn depth_from_area_values(object_area: f64, image_area: f64, k: &CameraIntrinsics) -> Result<f64> {
    if !(object_area > 0.0 && image_area > 0.0) {
        return Err(Error::Domain(format!(
            "areas must be positive, got object {object_area} m², image {image_area} px²"
        )));
    }
    Ok((k.fx * k.fy * object_area / image_area).sqrt())
}
