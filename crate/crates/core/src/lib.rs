//! Markerless quadruped 3D pose estimation from single depth images.
//!
//! The crate covers the geometric and statistical parts of the pipeline:
//! tri-planar joint heatmaps, a hierarchical GPLVM pose prior with staged
//! fitting, a PCA shape model, mesh to point-cloud alignment and the usual
//! pose metrics. The joint detector is abstracted behind
//! [`pipeline::JointPredictor`].

// `!(x > 0.0)` is used on purpose so NaN fails validation; index loops over
// small fixed dimensions read better than iterator chains here.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod align;
pub mod archive;
pub mod camera;
pub mod error;
pub mod heatmap;
mod linalg;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod prior;
pub mod shape;
pub mod skeleton;
pub mod synthgen;

pub use camera::{CameraModel, DepthImage, Mask, PointCloud, Raster};
pub use error::{Error, Result};
pub use heatmap::{CropTransform, DecodedJoints, HeatmapStack, NormalizedJoints};
pub use pipeline::{Frame, JointPredictor, OraclePredictor, PipelineConfig, Prediction};
pub use skeleton::{Pose, Skeleton, SkinnedMesh};
