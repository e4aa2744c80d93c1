use crate::error::{validate, Error, Result};
use crate::synth::SyntheticScene;
use crate::tensor::Tensor;

/// A stack of scenes in network layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `N×3×H×W`.
    pub image: Tensor,
    /// `N×1×H×W` flattened, meters; 0 on holes.
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
    /// `N×H×W` class ids.
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_scenes(scenes: &[SyntheticScene]) -> Result<Self> {
        validate(!scenes.is_empty(), || "a batch needs at least one scene".into())?;
        let (h, w) = (scenes[0].height, scenes[0].width);
        let n = scenes.len();
        let mut image = Vec::with_capacity(n * 3 * h * w);
        let mut depth = Vec::with_capacity(n * h * w);
        let mut mask = Vec::with_capacity(n * h * w);
        let mut labels = Vec::with_capacity(n * h * w);
        for s in scenes {
            if (s.height, s.width) != (h, w) {
                return Err(Error::shape("batch", &[s.height, s.width], &[h, w]));
            }
            image.extend_from_slice(s.image.data());
            depth.extend_from_slice(s.depth.data());
            mask.extend_from_slice(&s.valid_mask);
            labels.extend_from_slice(&s.semantic);
        }
        Ok(Self { image: Tensor::new(vec![n, 3, h, w], image)?, depth, mask, labels })
    }

    pub fn len(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
