//! Synthetic data: procedural meshes and gaits, depth rasterization, sensor
//! noise, occlusion and annotated dataset export.

mod dataset;
mod gait;
mod mesh;
mod render;

pub use dataset::{
    build_dataset, camera_ring, kinect_camera, read_annotations, Annotation, Dataset, Manifest, ManifestEntry,
    NoiseConfig, RenderJob, Sample, Skipped,
};
pub use gait::{gait_sequence, GaitConfig, GaitKind};
pub use mesh::{template_mesh, tube_mesh, TubeStyle, TUBE_SIDES};
pub use render::{apply_noise, occlude, occlude_raster, rasterize_depth, Occlusion};
