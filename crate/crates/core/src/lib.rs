//! Joint monocular depth estimation and semantic segmentation with
//! semantic-objectness fusion.
//!
//! The crate is organized bottom-up:
//!
//! * [`autodiff`]: a small reverse-mode tensor engine with the operator set
//!   the network needs.
//! * [`geometry`] and [`synth`]: pinhole projection, the area/depth relation
//!   `d² = fx·fy·ΔXΔY / (ΔuΔv)`, and a renderer of fronto-parallel planar
//!   scenes in which that relation holds exactly.
//! * [`model`]: the single-task, multi-task and fusion network variants.
//! * [`train`]: losses, Adam, and the alternating (EM-style) and joint
//!   training schedules.
//! * [`metrics`]: depth and segmentation evaluation.
//! * [`harness`]: dataset generation, training runs, evaluation and the
//!   ablation protocol behind the `sosd` command line.

pub mod augment;
pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod pnm;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod tensor_io;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
