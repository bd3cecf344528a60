//! Shared fixtures for the criterion benches.

use nalgebra::Vector3;
use quadpose::prior::{train_tree, LatentTree, PoseLayout, TrainConfig, TrainingSet, TreeDims};
use quadpose::skeleton::joint_positions;
use quadpose::synthgen::{
    build_dataset, camera_ring, gait_sequence, template_mesh, GaitConfig, NoiseConfig, RenderJob, Sample,
};
use quadpose::{Pose, Skeleton};

pub fn walk(frames: usize) -> (Skeleton, Vec<Pose>) {
    let skeleton = Skeleton::dog();
    let poses = gait_sequence(
        &skeleton,
        &GaitConfig {
            frames,
            ..Default::default()
        },
    );
    (skeleton, poses)
}

/// One rendered, annotated frame seen from a Kinect-like camera.
pub fn sample() -> (Skeleton, Sample) {
    let (skeleton, poses) = walk(1);
    let job = RenderJob {
        mesh: template_mesh(&skeleton),
        poses,
        skeleton: skeleton.clone(),
        cameras: camera_ring(1, 2800.0, 600.0, Vector3::new(0.0, 350.0, 0.0)),
        noise: NoiseConfig::default(),
        mirror: false,
        fixed_root: true,
    };
    let mut data = build_dataset(&job).expect("frame renders");
    (skeleton, data.samples.remove(0))
}

/// Prior trained on `frames` gait frames plus mirrors.
pub fn prior(frames: usize) -> (Vec<Pose>, LatentTree) {
    let (skeleton, poses) = walk(frames);
    let layout = PoseLayout::new(&skeleton).expect("dog layout");
    let mut vectors: Vec<Vec<f64>> = poses.iter().map(|p| layout.encode(p)).collect();
    let mirrored: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| layout.mirror(&skeleton, v).expect("pairs"))
        .collect();
    vectors.extend(mirrored);
    let set = TrainingSet {
        vectors,
        kept: (0..frames).collect(),
    };
    let tree = train_tree(&skeleton, &set, TreeDims::default(), &TrainConfig::default()).expect("prior trains");
    (poses, tree)
}

pub fn joints(skeleton: &Skeleton, pose: &Pose) -> Vec<Vector3<f64>> {
    joint_positions(skeleton, pose).expect("pose matches skeleton")
}
