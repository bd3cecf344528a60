use nalgebra::{Isometry3, Translation3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Frame, JointPredictor, Prediction};
use crate::align::{cloud_with_normals, is_flagged, make_matches, refine_root, vertex_normals, Oriented, RefineConfig};
use crate::error::{Error, Result};
use crate::metrics::{group_report, EvalReport, FrameInput};
use crate::prior::{compute_weights, FitConfig, FitTarget, Fitter, LatentTree};
use crate::shape::{estimate_scale, ShapeModel};
use crate::skeleton::{bone_lengths, skin_mesh, Pose, Skeleton, SkinnedMesh};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub fit: FitConfig,
    pub refine: RefineConfig,
    /// Use the given skeleton and mesh as they are; skips shape prediction.
    pub known_shape: bool,
    pub shape_components: usize,
    /// Joints at or below this confidence are ignored by the fit and by
    /// bone-length aggregation.
    pub confidence_threshold: f64,
    /// Refine the predicted shape's overall scale against the point clouds.
    pub refine_scale: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            fit: FitConfig::default(),
            refine: RefineConfig::default(),
            known_shape: true,
            shape_components: 4,
            confidence_threshold: 0.5,
            refine_scale: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fit.lambda >= 0.0) || !self.fit.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 0, got {}",
                self.fit.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::InvalidArgument(format!(
                "confidence threshold must lie in [0, 1], got {}",
                self.confidence_threshold
            )));
        }
        if !(0.0..=180.0).contains(&self.refine.angle_threshold_deg) {
            return Err(Error::InvalidArgument(
                "angle threshold must lie in [0, 180] degrees".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameOutcome {
    pub frame: usize,
    pub prediction: Prediction,
    /// Final pose in camera space.
    pub pose: Option<Pose>,
    pub joints: Option<Vec<Vector3<f64>>>,
    pub stage_losses: Option<[f64; 3]>,
    /// Accepted alignment rounds.
    pub alignment_rounds: usize,
    pub diagnostics: Vec<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    /// Skeleton used for the final fits.
    pub skeleton: Skeleton,
    pub mesh: SkinnedMesh,
    /// Point-cloud scale estimate against the shape model's mean mesh.
    pub initial_scale: Option<f64>,
    /// Scale applied to the predicted shape after alignment.
    pub scale_refinement: Option<f64>,
    pub shape_coefficients: Option<Vec<f64>>,
    /// Per-bone medians used for the shape prediction.
    pub measured_bone_lengths: Option<Vec<Option<f64>>>,
    pub frames: Vec<FrameOutcome>,
    /// Final joints against ground truth, when every frame has it.
    pub report: Option<EvalReport>,
    /// Raw predictions against ground truth.
    pub raw_report: Option<EvalReport>,
}

impl PipelineOutput {
    pub fn failed(&self) -> usize {
        self.frames.iter().filter(|f| f.error.is_some()).count()
    }
}

struct Fitted {
    pose: Pose,
    joints: Vec<Vector3<f64>>,
    stage_losses: [f64; 3],
    rounds: usize,
    diagnostics: Vec<String>,
}

fn predicted_mask(p: &Prediction, threshold: f64) -> Vec<bool> {
    p.confidence.iter().map(|&c| c > threshold).collect()
}

fn root_isometry(pose: &Pose) -> Isometry3<f64> {
    Isometry3::from_parts(Translation3::from(pose.root_translation), pose.root_rotation)
}

/// Posed mesh in camera space with normals.
fn posed(mesh: &SkinnedMesh, skeleton: &Skeleton, pose: &Pose) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
    let verts = skin_mesh(mesh, skeleton, pose)?;
    let normals = vertex_normals(&verts, &mesh.triangles);
    Ok((verts, normals))
}

/// Prior fit of one frame followed by rigid alignment of the posed mesh to
/// the frame's point cloud.
fn fit_frame(
    fitter: &Fitter,
    skeleton: &Skeleton,
    mesh: &SkinnedMesh,
    frame: &Frame,
    prediction: &Prediction,
    config: &PipelineConfig,
) -> Result<Fitted> {
    let predicted = predicted_mask(prediction, config.confidence_threshold);
    let weights = compute_weights(
        skeleton,
        &prediction.joints3d,
        Some(&predicted),
        &skeleton.rest_lengths(),
    )?;
    let target = FitTarget {
        joints3d: &prediction.joints3d,
        joints2d: &prediction.joints2d,
        weights: &weights.effective,
    };
    let fit = fitter.fit(&target, frame.camera())?;
    let mut diagnostics = fit.diagnostics.clone();
    let mut pose = fit.pose.clone();
    let mut joints = fit.joints.clone();
    let mut rounds = 0;
    let (cloud, cloud_normals) = cloud_with_normals(&frame.depth, &frame.mask)?;
    if cloud.is_empty() {
        diagnostics.push("empty point cloud; alignment skipped".into());
    } else {
        let (verts, normals) = posed(mesh, skeleton, &pose)?;
        let r = refine_root(
            Oriented {
                points: &verts,
                normals: &normals,
            },
            Oriented {
                points: &cloud.points,
                normals: &cloud_normals,
            },
            &root_isometry(&pose),
            &config.refine,
        )?;
        if let Some(d) = r.diagnostic {
            diagnostics.push(d);
        }
        rounds = r.rounds.len();
        pose.root_rotation = r.correction.rotation * pose.root_rotation;
        pose.root_translation = r.correction.transform_point(&pose.root_translation.into()).coords;
        pose.canonicalize();
        joints = joints
            .iter()
            .map(|p| r.correction.transform_point(&(*p).into()).coords)
            .collect();
    }
    Ok(Fitted {
        pose,
        joints,
        stage_losses: fit.stage_losses,
        rounds,
        diagnostics,
    })
}

/// Least-squares scale about the root that maps matched mesh points onto
/// the cloud.
fn matched_scale(
    mesh: &SkinnedMesh,
    skeleton: &Skeleton,
    pose: &Pose,
    frame: &Frame,
    angle_deg: f64,
) -> Result<Option<f64>> {
    let (cloud, cloud_normals) = cloud_with_normals(&frame.depth, &frame.mask)?;
    if cloud.is_empty() {
        return Ok(None);
    }
    let (verts, normals) = posed(mesh, skeleton, pose)?;
    let m = make_matches(
        Oriented {
            points: &cloud.points,
            normals: &cloud_normals,
        },
        Oriented {
            points: &verts,
            normals: &normals,
        },
        angle_deg,
    );
    let r = pose.root_translation;
    let (mut num, mut den) = (0.0, 0.0);
    for &(c, v) in &m.pairs {
        if is_flagged(&cloud_normals[c]) {
            continue;
        }
        let a = verts[v] - r;
        num += a.dot(&(cloud.points[c] - r));
        den += a.norm_squared();
    }
    Ok((den > 0.0).then(|| num / den))
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Per-bone median over frames where both ends are confident.
fn median_bone_lengths(skeleton: &Skeleton, predictions: &[&Prediction], threshold: f64) -> Result<Vec<Option<f64>>> {
    let bones = skeleton.len() - 1;
    let mut samples = vec![Vec::new(); bones];
    for p in predictions {
        let lengths = bone_lengths(skeleton, &p.joints3d)?;
        for j in 1..skeleton.len() {
            let parent = skeleton.parent(j).expect("non-root joint");
            if p.confidence[j] > threshold && p.confidence[parent] > threshold {
                samples[j - 1].push(lengths[j - 1]);
            }
        }
    }
    Ok(samples.iter_mut().map(|s| median(s)).collect())
}

fn fit_all(
    tree: &LatentTree,
    mesh: &SkinnedMesh,
    frames: &[Frame],
    predictions: &[Result<Prediction>],
    config: &PipelineConfig,
) -> Result<Vec<Result<Fitted>>> {
    let fitter = Fitter::new(tree, config.fit)?;
    Ok(frames
        .par_iter()
        .zip(predictions)
        .map(|(frame, p)| {
            let p = p.as_ref().map_err(|e| Error::InvalidArgument(e.to_string()))?;
            fit_frame(&fitter, tree.skeleton(), mesh, frame, p, config)
        })
        .collect())
}

fn camera_up(frame: &Frame) -> Vector3<f64> {
    frame.camera().extrinsic.rotation * Vector3::y()
}

/// Runs the whole sequence.
///
/// With `known_shape` the prior's skeleton and `mesh` are used directly.
/// Otherwise the shape model predicts the animal from per-bone median
/// lengths of the predicted joints; each frame is fitted roughly and
/// aligned, the overall scale is refined against the point clouds, and the
/// final per-frame fits use the refined shape. Frame failures are recorded
/// and the remaining frames continue.
pub fn run_pipeline(
    config: &PipelineConfig,
    tree: &LatentTree,
    mesh: &SkinnedMesh,
    shape: Option<&ShapeModel>,
    frames: &[Frame],
    predictor: &dyn JointPredictor,
) -> Result<PipelineOutput> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::Empty("frame sequence"));
    }
    mesh.validate(tree.skeleton().len())?;
    let skeleton = tree.skeleton();
    let predictions: Vec<Result<Prediction>> = frames.par_iter().map(|f| predictor.predict(f, skeleton)).collect();
    log::info!(
        "event=predicted frames={} failed={}",
        frames.len(),
        predictions.iter().filter(|p| p.is_err()).count()
    );

    let mut output = PipelineOutput {
        skeleton: skeleton.clone(),
        mesh: mesh.clone(),
        initial_scale: None,
        scale_refinement: None,
        shape_coefficients: None,
        measured_bone_lengths: None,
        frames: Vec::new(),
        report: None,
        raw_report: None,
    };

    let (tree, mesh) = if config.known_shape {
        (tree.clone(), mesh.clone())
    } else {
        let model = shape.ok_or_else(|| Error::InvalidArgument("unknown-shape run needs a shape model".into()))?;
        let ok: Vec<&Prediction> = predictions.iter().filter_map(|p| p.as_ref().ok()).collect();
        if ok.is_empty() {
            return Err(Error::Empty("successful predictions"));
        }
        let mean = model.mean_shape()?;
        let mut scales: Vec<f64> = frames
            .iter()
            .filter_map(|f| {
                let cloud = crate::camera::depth_to_pointcloud(&f.depth, &f.mask).ok()?;
                estimate_scale(&cloud.points, &camera_up(f), &mean.mesh).ok()
            })
            .collect();
        output.initial_scale = median(&mut scales);
        let mut lengths = median_bone_lengths(skeleton, &ok, config.confidence_threshold)?;
        if lengths.iter().all(Option::is_none) {
            // Nothing measurable: fall back to the scaled mean shape.
            let s = output
                .initial_scale
                .ok_or_else(|| Error::Degenerate("no bone lengths and no point cloud".into()))?;
            lengths = model.mean_bone_lengths().iter().map(|l| Some(l * s)).collect();
        }
        let k = config.shape_components.min(model.rank());
        let predicted = model.predict_partial(&lengths, k)?;
        log::info!(
            "event=shape_predicted components={k} coefficients={:?}",
            predicted.coefficients
        );
        output.measured_bone_lengths = Some(lengths);
        output.shape_coefficients = Some(predicted.coefficients.clone());
        let mut skel = predicted.skeleton;
        let mut mesh = predicted.mesh;
        let rough_tree = tree.with_skeleton(&skel)?;
        if config.refine_scale {
            let rough = fit_all(&rough_tree, &mesh, frames, &predictions, config)?;
            let mut factors: Vec<f64> = rough
                .iter()
                .zip(frames)
                .filter_map(|(r, f)| {
                    let r = r.as_ref().ok()?;
                    matched_scale(&mesh, &skel, &r.pose, f, config.refine.angle_threshold_deg)
                        .ok()
                        .flatten()
                })
                .collect();
            if let Some(s) = median(&mut factors) {
                let s = s.clamp(0.8, 1.25);
                log::info!("event=scale_refined factor={s:.4}");
                output.scale_refinement = Some(s);
                skel = skel.scaled(s);
                mesh.vertices.iter_mut().for_each(|v| *v *= s);
            }
        }
        output.skeleton = skel.clone();
        output.mesh = mesh.clone();
        (tree.with_skeleton(&skel)?, mesh)
    };

    let fitted = fit_all(&tree, &mesh, frames, &predictions, config)?;
    for ((frame, prediction), fit) in frames.iter().zip(predictions).zip(fitted) {
        let outcome = match (prediction, fit) {
            (Ok(prediction), Ok(f)) => FrameOutcome {
                frame: frame.index,
                prediction,
                pose: Some(f.pose),
                joints: Some(f.joints),
                stage_losses: Some(f.stage_losses),
                alignment_rounds: f.rounds,
                diagnostics: f.diagnostics,
                error: None,
            },
            (Ok(prediction), Err(e)) => FrameOutcome {
                frame: frame.index,
                prediction,
                pose: None,
                joints: None,
                stage_losses: None,
                alignment_rounds: 0,
                diagnostics: Vec::new(),
                error: Some(e.to_string()),
            },
            (Err(e), _) => FrameOutcome {
                frame: frame.index,
                prediction: Prediction {
                    j3d256: Vec::new(),
                    joints2d: Vec::new(),
                    joints3d: Vec::new(),
                    confidence: Vec::new(),
                },
                pose: None,
                joints: None,
                stage_losses: None,
                alignment_rounds: 0,
                diagnostics: Vec::new(),
                error: Some(e.to_string()),
            },
        };
        if let Some(e) = &outcome.error {
            log::warn!("event=frame_failed frame={} reason=\"{e}\"", frame.index);
        }
        output.frames.push(outcome);
    }

    if frames.iter().all(|f| f.truth.is_some()) {
        let mut refined = Vec::new();
        let mut raw = Vec::new();
        for (frame, out) in frames.iter().zip(&output.frames) {
            let (Some(joints), Some(truth)) = (&out.joints, &frame.truth) else {
                continue;
            };
            let cam = frame.camera();
            let project = |ps: &[Vector3<f64>]| -> Vec<Vector2<f64>> {
                ps.iter()
                    .map(|p| {
                        cam.project_point(p)
                            .unwrap_or_else(|_| Vector2::new(f64::NAN, f64::NAN))
                    })
                    .collect()
            };
            let area = frame.mask.count() as f64;
            refined.push(FrameInput {
                pred3d: joints.clone(),
                gt3d: truth.joints_cam.clone(),
                pred2d: project(joints),
                gt2d: truth.joints_2d.clone(),
                mask_area: area,
            });
            raw.push(FrameInput {
                pred3d: out.prediction.joints3d.clone(),
                gt3d: truth.joints_cam.clone(),
                pred2d: out.prediction.joints2d.clone(),
                gt2d: truth.joints_2d.clone(),
                mask_area: area,
            });
        }
        if !refined.is_empty() {
            output.report = Some(group_report(&refined, &output.skeleton)?);
            output.raw_report = Some(group_report(&raw, &output.skeleton)?);
        }
    }
    log::info!(
        "event=pipeline_done frames={} failed={}",
        output.frames.len(),
        output.failed()
    );
    Ok(output)
}
