//! Iterative radiance-field deblurring at desk scale.
//!
//! The crate covers the full loop: synthesizing realistically degraded
//! multi-view blur datasets from procedural scenes ([`blursynth`]), fitting a
//! differentiable voxel-grid radiance field ([`voxelrf`]), model-based blind
//! and guided deconvolution ([`deblur`]), and the alternating
//! deblur/reconstruct orchestration ([`pipeline`]) with full-reference
//! metrics ([`eval`]).
//!
//! All randomness flows through explicit seeds (see [`rng`]); every
//! operation is deterministic given its inputs, including under internal
//! parallelism.

pub mod blursynth;
pub mod deblur;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod io;
pub mod pipeline;
pub mod rng;
pub mod scene;
pub mod voxelrf;

pub use crate::image::{LinearImage, SrgbImage};
pub use blursynth::{DatasetManifest, DegradationParams, SynthConfig};
pub use deblur::{DeblurConfig, DeblurOperator, Kernel, ModelBasedDeblur};
pub use error::{Error, Result};
pub use eval::MetricReport;
pub use geometry::{Camera, Pose, Ray, Trajectory};
pub use pipeline::{PipelineConfig, PipelineState, PoseMode};
pub use scene::{LensConfig, Primitive, Scene};
pub use voxelrf::{TrainConfig, VoxelGrid};
