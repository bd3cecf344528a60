use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{UnitQuaternion, Vector3};
use quadpose::heatmap::{decode_heatmaps, encode_heatmaps};
use quadpose::metrics::pa_align;
use quadpose::pipeline::{Frame, JointPredictor, OraclePredictor};
use quadpose::prior::{FitConfig, FitTarget, Fitter};
use quadpose::skeleton::{forward_kinematics, skin_mesh};
use quadpose::synthgen::{kinect_camera, rasterize_depth, template_mesh};
use quadpose_bench::{joints, prior, sample, walk};
use std::hint::black_box;

fn kinematics(c: &mut Criterion) {
    let (skel, poses) = walk(1);
    let mesh = template_mesh(&skel);
    c.bench_function("forward_kinematics", |b| {
        b.iter(|| forward_kinematics(&skel, black_box(&poses[0])).unwrap())
    });
    c.bench_function("skin_mesh", |b| {
        b.iter(|| skin_mesh(&mesh, &skel, black_box(&poses[0])).unwrap())
    });
}

fn heatmaps(c: &mut Criterion) {
    let (skel, s) = sample();
    c.bench_function("encode_heatmaps", |b| {
        b.iter(|| encode_heatmaps(black_box(&s.joints), &skel).unwrap())
    });
    let cam = kinect_camera();
    c.bench_function("decode_heatmaps", |b| {
        b.iter(|| decode_heatmaps(black_box(&s.heatmaps), &skel, &s.crop, &cam).unwrap())
    });
}

fn geometry(c: &mut Criterion) {
    let (skel, poses) = walk(1);
    let mesh = template_mesh(&skel);
    let mut pose = poses[0].clone();
    pose.root_translation = Vector3::new(0.0, 0.0, 2500.0);
    pose.root_rotation = UnitQuaternion::from_euler_angles(std::f64::consts::PI, 0.4, 0.0);
    let verts = skin_mesh(&mesh, &skel, &pose).unwrap();
    let cam = kinect_camera();
    c.bench_function("rasterize_depth", |b| {
        b.iter(|| rasterize_depth(black_box(&verts), &mesh.triangles, &cam).unwrap())
    });
    let gt = joints(&skel, &poses[0]);
    let pred: Vec<_> = gt
        .iter()
        .enumerate()
        .map(|(i, p)| UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3) * p * 1.1 + Vector3::new(i as f64, 5.0, -3.0))
        .collect();
    c.bench_function("pa_align", |b| b.iter(|| pa_align(black_box(&pred), &gt).unwrap()));
}

fn fitting(c: &mut Criterion) {
    let (_, tree) = prior(60);
    let (skel, s) = sample();
    let frame = Frame::from_sample(0, &s).unwrap();
    let p = OraclePredictor {
        sigma_px: 2.0,
        sigma_code: 2.0,
        seed: 0,
    }
    .predict(&frame, &skel)
    .unwrap();
    let weights = vec![1.0; skel.len()];
    let fitter = Fitter::new(&tree, FitConfig::default()).unwrap();
    let target = FitTarget {
        joints3d: &p.joints3d,
        joints2d: &p.joints2d,
        weights: &weights,
    };
    let mut g = c.benchmark_group("prior");
    g.sample_size(10);
    g.bench_function("fit_frame", |b| {
        b.iter(|| fitter.fit(black_box(&target), frame.camera()).unwrap())
    });
    g.bench_function("train_prior_30", |b| b.iter(|| prior(black_box(30))));
    g.finish();
}

criterion_group!(benches, kinematics, heatmaps, geometry, fitting);
criterion_main!(benches);
