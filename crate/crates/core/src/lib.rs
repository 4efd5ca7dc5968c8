//! Real-time multi-domain CNN tracking.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`layers`], [`optim`], [`checkpoint`]: a small dense tensor
//!   engine with the layer set, SGD and a checkpoint format.
//! * [`roi`]: RoIPooling / RoIAlign / adaptive RoIAlign over a shared map.
//! * [`backbone`]: conv1-3 in the original and dense-feature-map variants.
//! * [`head`]: fc4-6 with per-domain branches and the two training losses.
//! * [`pretrain`], [`sampling`]: offline multi-domain training.
//! * [`tracker`], [`regressor`]: online tracking with hard negative mining.
//! * [`eval`]: synthetic sequences, metrics, benchmark and ablation driver.

pub mod backbone;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
mod gemm;
pub mod geometry;
pub mod gradcheck;
pub mod head;
pub mod layers;
pub mod network;
pub mod optim;
pub mod pretrain;
pub mod regressor;
pub mod roi;
pub mod sampling;
pub mod tensor;
pub mod tracker;

pub use error::{Error, Result};
pub use geometry::{iou, BBox};
pub use tensor::{Scalar, Tensor};
