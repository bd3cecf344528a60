use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nalgebra::{Vector2, Vector3};
use quadpose::heatmap::{encode_heatmaps, NETWORK_SIDE};
use quadpose::metrics::{group_report, EvalReport, FrameInput};
use quadpose::pipeline::{
    load_frames, read_predictions, render_overlay, run_pipeline, write_ppm, write_predictions, Frame, JointPredictor,
    OraclePredictor, PipelineConfig, PipelineOutput, Prediction, StoredPredictor,
};
use quadpose::prior::{dedup_poses, train_tree, LatentTree, PoseLayout, TrainConfig, TrainingSet, TreeDims};
use quadpose::shape::{build_shape_model, surrogate_corpus, ShapeModel};
use quadpose::skeleton::{read_pose_sequence, write_pose_sequence, Pose};
use quadpose::synthgen::{
    build_dataset, camera_ring, gait_sequence, template_mesh, GaitConfig, GaitKind, NoiseConfig, RenderJob,
};
use quadpose::{Error, NormalizedJoints, Skeleton, SkinnedMesh};
use serde::{Deserialize, Serialize};

use crate::config::FileConfig;
use crate::{invalid, Cli, Command, FitArgs, GaitArg, OracleArgs};

/// Seed of the surrogate shape corpus shared by `synth --surrogate` and
/// `fit-shape`, so held-out indices refer to the same dogs.
const CORPUS_SEED: u64 = 21;
const CORPUS_SIZE: usize = 10;

/// Maps library errors caused by bad input to exit code 2.
fn classify(e: Error) -> anyhow::Error {
    match e {
        // A missing input is the caller's mistake; other I/O failures are not.
        Error::Io(ref io) if io.kind() != std::io::ErrorKind::NotFound => anyhow::Error::new(e),
        Error::Numerical(_) | Error::Degenerate(_) => anyhow::Error::new(e),
        other => invalid(other.to_string()),
    }
}

trait Classify<T> {
    fn classify(self) -> Result<T>;
    fn classify_ctx(self, ctx: impl std::fmt::Display) -> Result<T>;
}

impl<T> Classify<T> for quadpose::Result<T> {
    fn classify(self) -> Result<T> {
        self.map_err(classify)
    }

    fn classify_ctx(self, ctx: impl std::fmt::Display) -> Result<T> {
        self.map_err(|e| match classify(e) {
            e if e.downcast_ref::<crate::Invalid>().is_some() => invalid(format!("{ctx}: {e}")),
            e => e.context(ctx.to_string()),
        })
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => synth(&cfg, a),
        Command::TrainPrior(a) => train_prior(&cfg, a),
        Command::FitShape(a) => fit_shape(&cfg, a),
        Command::Predict(a) => predict(&cfg, a),
        Command::Refine(a) => refine(&cfg, a),
        Command::Eval(a) => eval(&cfg, a),
        Command::Pipeline(a) => pipeline(&cfg, a),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(invalid(format!("{name} must be a non-negative number, got {v}")));
    }
    Ok(())
}

// Dataset side files written by `synth`.
fn skeleton_path(data: &Path) -> PathBuf {
    data.join("skeleton.json")
}

fn mesh_paths(data: &Path) -> (PathBuf, PathBuf) {
    (data.join("mesh.obj"), data.join("mesh.skin.json"))
}

fn load_skeleton(path: Option<&Path>) -> Result<Skeleton> {
    match path {
        Some(p) => Skeleton::load(p).classify_ctx(format!("skeleton {}", p.display())),
        None => Ok(Skeleton::dog()),
    }
}

/// Skeleton and mesh stored with a dataset, falling back to `fallback` and
/// the template mesh.
fn dataset_shape(data: &Path, fallback: &Skeleton) -> Result<(Skeleton, SkinnedMesh)> {
    let sp = skeleton_path(data);
    let skeleton = if sp.exists() {
        load_skeleton(Some(&sp))?
    } else {
        fallback.clone()
    };
    let (obj, skin) = mesh_paths(data);
    let mesh = if obj.exists() && skin.exists() {
        SkinnedMesh::load(&obj, &skin, &skeleton).classify_ctx(format!("mesh {}", obj.display()))?
    } else {
        template_mesh(&skeleton)
    };
    Ok((skeleton, mesh))
}

fn frames_of(data: &Path, camera: Option<usize>) -> Result<Vec<Frame>> {
    let frames = load_frames(data, camera).classify_ctx(format!("dataset {}", data.display()))?;
    log::info!("event=frames_loaded dir={} frames={}", data.display(), frames.len());
    Ok(frames)
}

fn synth(cfg: &FileConfig, a: crate::SynthArgs) -> Result<()> {
    let s = &cfg.synth;
    let frames = a.frames.or(s.frames).unwrap_or(20);
    let cameras = a.cameras.or(s.cameras).unwrap_or(4);
    let radius = a.radius.or(s.radius).unwrap_or(2800.0);
    let height = a.height.or(s.height).unwrap_or(600.0);
    let sigma = a.noise_sigma.or(s.noise_sigma).unwrap_or(0.0);
    let step = a.noise_step.or(s.noise_step).unwrap_or(0.0);
    let seed = a.seed.or(s.seed).unwrap_or(7);
    let mirror = a.mirror || s.mirror.unwrap_or(false);
    let free_root = a.free_root || s.free_root.unwrap_or(false);
    let kind = match (a.gait, s.gait.as_deref()) {
        (Some(GaitArg::Trot), _) | (None, Some("trot")) => GaitKind::Trot,
        (Some(GaitArg::Walk), _) | (None, Some("walk") | None) => GaitKind::Walk,
        (None, Some(other)) => return Err(invalid(format!("unknown gait {other:?} (walk or trot)"))),
    };
    if frames == 0 || cameras == 0 {
        return Err(invalid("--frames and --cameras must be positive"));
    }
    check_positive("--noise-sigma", sigma)?;
    check_positive("--noise-step", step)?;
    if !(radius.is_finite() && radius > 0.0) {
        return Err(invalid("--radius must be positive"));
    }
    let base = load_skeleton(cfg.skeleton.as_deref())?;
    let (skeleton, mesh) = match a.surrogate.or(s.surrogate) {
        Some(i) => {
            let corpus = surrogate_corpus(&base, CORPUS_SIZE.max(i + 1), CORPUS_SEED);
            let dog = corpus[i].clone();
            (dog.skeleton, dog.mesh)
        }
        None => (base.clone(), template_mesh(&base)),
    };
    let poses = gait_sequence(
        &skeleton,
        &GaitConfig {
            kind,
            frames,
            seed,
            speed_mm_s: if free_root { 800.0 } else { 0.0 },
            ..Default::default()
        },
    );
    let rest = skeleton.rest_positions();
    let centre_y = rest.iter().map(|p| p.y).sum::<f64>() / rest.len() as f64;
    let job = RenderJob {
        skeleton: skeleton.clone(),
        mesh: mesh.clone(),
        poses: poses.clone(),
        cameras: camera_ring(cameras, radius, height, Vector3::new(0.0, centre_y, 0.0)),
        noise: NoiseConfig {
            sigma_mm: sigma,
            step_mm: step,
            seed,
        },
        mirror,
        fixed_root: !free_root,
    };
    let data = build_dataset(&job).classify()?;
    ensure_dir(&a.out)?;
    data.write(&a.out, &skeleton, frames)?;
    skeleton.save(skeleton_path(&a.out))?;
    let (obj, skin) = mesh_paths(&a.out);
    mesh.save(obj, skin, &skeleton)?;
    write_pose_sequence(a.out.join("poses.jsonl"), &poses)?;
    log::info!(
        "event=synth_done out={} samples={} skipped={}",
        a.out.display(),
        data.samples.len(),
        data.skipped.len()
    );
    Ok(())
}

fn train_prior(cfg: &FileConfig, a: crate::TrainPriorArgs) -> Result<()> {
    let p = &cfg.prior_training;
    let skeleton = load_skeleton(a.skeleton.as_deref().or(cfg.skeleton.as_deref()))?;
    let poses = read_pose_sequence(&a.poses).classify_ctx(format!("poses {}", a.poses.display()))?;
    let layout = PoseLayout::new(&skeleton).classify()?;
    let vectors: Vec<Vec<f64>> = poses.iter().map(|p| layout.encode(p)).collect();
    let set = match a.dedup.or(p.dedup) {
        Some(t) if t > 0.0 => dedup_poses(&skeleton, &layout, &vectors, t).classify()?,
        Some(t) if t < 0.0 => return Err(invalid(format!("--dedup must be >= 0, got {t}"))),
        _ => {
            let mut all = vectors.clone();
            for v in &vectors {
                all.push(layout.mirror(&skeleton, v).classify()?);
            }
            TrainingSet {
                vectors: all,
                kept: (0..vectors.len()).collect(),
            }
        }
    };
    let dims = match a.dims.as_deref().map(|d| [d[0], d[1], d[2]]).or(p.dims) {
        Some([root, legs, leaf]) => TreeDims { root, legs, leaf },
        None => TreeDims::default(),
    };
    let mut train = TrainConfig::default();
    if let Some(n) = a.iterations.or(p.iterations) {
        train.optimizer.max_iterations = n;
    }
    log::info!(
        "event=train_start frames={} kept={} training_rows={}",
        poses.len(),
        set.kept.len(),
        set.vectors.len()
    );
    let tree = train_tree(&skeleton, &set, dims, &train).classify()?;
    tree.save(&a.out)?;
    log::info!("event=prior_saved path={}", a.out.display());
    Ok(())
}

fn fit_shape(cfg: &FileConfig, a: crate::FitShapeArgs) -> Result<()> {
    let n = a.corpus.or(cfg.shape.corpus).unwrap_or(CORPUS_SIZE);
    let seed = a.seed.or(cfg.shape.seed).unwrap_or(CORPUS_SEED);
    if n < 2 {
        return Err(invalid("--corpus needs at least 2 dogs"));
    }
    if a.hold_out.is_some_and(|h| h >= n) {
        return Err(invalid(format!("--hold-out must be below the corpus size {n}")));
    }
    let base = load_skeleton(cfg.skeleton.as_deref())?;
    let corpus: Vec<_> = surrogate_corpus(&base, n, seed)
        .into_iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != a.hold_out)
        .map(|(_, e)| e)
        .collect();
    let model = build_shape_model(&corpus).classify()?;
    model.save(&a.out)?;
    let k = a.components.or(cfg.shape.components).unwrap_or(4).min(model.rank());
    log::info!(
        "event=shape_model_saved path={} exemplars={} rank={} explained_k{k}={:.4}",
        a.out.display(),
        model.exemplars(),
        model.rank(),
        model.explained(k)
    );
    if let Some(lp) = &a.lengths {
        let text = fs::read_to_string(lp).map_err(|e| invalid(format!("cannot read {}: {e}", lp.display())))?;
        let lengths: Vec<f64> = serde_json::from_str(&text)
            .map_err(|e| invalid(format!("{}: expected a JSON array of numbers: {e}", lp.display())))?;
        let pred = model.predict(&lengths, k).classify()?;
        let out = a
            .predict_out
            .clone()
            .unwrap_or_else(|| a.out.with_extension("prediction"));
        ensure_dir(&out)?;
        pred.skeleton.save(skeleton_path(&out))?;
        let (obj, skin) = mesh_paths(&out);
        pred.mesh.save(obj, skin, &pred.skeleton)?;
        fs::write(
            out.join("coefficients.json"),
            serde_json::to_string_pretty(&pred.coefficients)?,
        )?;
        log::info!(
            "event=shape_predicted out={} coefficients={:?}",
            out.display(),
            pred.coefficients
        );
    }
    Ok(())
}

fn oracle_of(cfg: &FileConfig, a: &OracleArgs) -> Result<(OraclePredictor, Option<usize>)> {
    let o = OraclePredictor {
        sigma_px: a.sigma_px.or(cfg.oracle.sigma_px).unwrap_or(0.0),
        sigma_code: a.sigma_code.or(cfg.oracle.sigma_code).unwrap_or(0.0),
        seed: a.seed.or(cfg.oracle.seed).unwrap_or(0),
    };
    check_positive("--sigma-px", o.sigma_px)?;
    check_positive("--sigma-code", o.sigma_code)?;
    let occlude = a.occlude.or(cfg.oracle.occlude);
    if occlude.is_some_and(|s| s == 0 || s > NETWORK_SIDE) {
        return Err(invalid(format!("--occlude must lie in 1..={NETWORK_SIDE}")));
    }
    Ok((o, occlude))
}

fn occlude_frames(frames: Vec<Frame>, side: Option<usize>, seed: u64) -> Result<Vec<Frame>> {
    let Some(side) = side else { return Ok(frames) };
    frames
        .iter()
        .map(|f| f.occluded(side, seed ^ (0xA5A5 + f.index as u64)).classify())
        .collect()
}

fn write_heatmaps(dir: &Path, predictions: &[(usize, &Prediction)], skeleton: &Skeleton) -> Result<()> {
    ensure_dir(dir)?;
    let edge = (NETWORK_SIDE - 1) as f64;
    for (i, p) in predictions {
        let joints = NormalizedJoints {
            j3d256: p.j3d256.iter().map(|c| c.map(|v| v.clamp(0.0, edge))).collect(),
            root_index: 0,
        };
        encode_heatmaps(&joints, skeleton)
            .classify()?
            .save(dir.join(format!("{i:05}.qhm")))?;
    }
    log::info!(
        "event=heatmaps_written dir={} count={}",
        dir.display(),
        predictions.len()
    );
    Ok(())
}

fn predict(cfg: &FileConfig, a: crate::PredictArgs) -> Result<()> {
    let (oracle, occlude) = oracle_of(cfg, &a.oracle)?;
    let (skeleton, _) = dataset_shape(&a.data, &load_skeleton(cfg.skeleton.as_deref())?)?;
    let frames = occlude_frames(frames_of(&a.data, a.camera.or(cfg.camera))?, occlude, oracle.seed)?;
    let preds = frames
        .iter()
        .map(|f| Ok((f.index, oracle.predict(f, &skeleton).classify()?)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_predictions(&a.out, &preds)?;
    if let Some(dir) = &a.heatmap_out {
        let refs: Vec<_> = preds.iter().map(|(i, p)| (*i, p)).collect();
        write_heatmaps(dir, &refs, &skeleton)?;
    }
    log::info!(
        "event=predictions_written path={} frames={}",
        a.out.display(),
        preds.len()
    );
    Ok(())
}

fn pipeline_config(cfg: &FileConfig, fit: &FitArgs, known_shape: bool) -> Result<PipelineConfig> {
    let mut pc = cfg.pipeline.unwrap_or_default();
    if let Some(l) = fit.lambda2d.or(cfg.lambda2d) {
        pc.fit.lambda = l;
    }
    if let Some(p) = fit.match_policy.map(Into::into).or(cfg.match_policy) {
        pc.refine.policy = p;
    }
    pc.known_shape = known_shape;
    pc.validate().classify()?;
    Ok(pc)
}

fn load_prior(cfg: &FileConfig, fit: &FitArgs) -> Result<LatentTree> {
    let path = fit
        .prior
        .as_ref()
        .or(cfg.prior.as_ref())
        .ok_or_else(|| invalid("a prior archive is required (--prior or \"prior\" in the config)"))?;
    LatentTree::load(path).classify_ctx(format!("prior {}", path.display()))
}

#[derive(Serialize, Deserialize)]
struct FitRecord {
    frame: usize,
    joints: Option<Vec<[f64; 3]>>,
    pose: Option<Pose>,
    stage_losses: Option<[f64; 3]>,
    alignment_rounds: usize,
    diagnostics: Vec<String>,
    error: Option<String>,
}

#[derive(Serialize)]
struct RunReport<'a> {
    frames: usize,
    failed: usize,
    skeleton: &'a str,
    initial_scale: Option<f64>,
    scale_refinement: Option<f64>,
    shape_coefficients: Option<&'a [f64]>,
    refined: Option<&'a EvalReport>,
    raw: Option<&'a EvalReport>,
}

fn write_outputs(out: &Path, output: &PipelineOutput, frames: &[Frame], overlays: bool) -> Result<()> {
    ensure_dir(out)?;
    let mut lines = String::new();
    for f in &output.frames {
        let rec = FitRecord {
            frame: f.frame,
            joints: f.joints.as_ref().map(|j| j.iter().map(|p| [p.x, p.y, p.z]).collect()),
            pose: f.pose.clone(),
            stage_losses: f.stage_losses,
            alignment_rounds: f.alignment_rounds,
            diagnostics: f.diagnostics.clone(),
            error: f.error.clone(),
        };
        lines.push_str(&serde_json::to_string(&rec)?);
        lines.push('\n');
    }
    fs::write(out.join("fits.jsonl"), lines)?;
    let poses: Vec<Pose> = output.frames.iter().filter_map(|f| f.pose.clone()).collect();
    write_pose_sequence(out.join("poses.jsonl"), &poses)?;
    output.skeleton.save(out.join("skeleton.json"))?;
    let report = RunReport {
        frames: output.frames.len(),
        failed: output.failed(),
        skeleton: &output.skeleton.name,
        initial_scale: output.initial_scale,
        scale_refinement: output.scale_refinement,
        shape_coefficients: output.shape_coefficients.as_deref(),
        refined: output.report.as_ref(),
        raw: output.raw_report.as_ref(),
    };
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    if let (Some(r), Some(raw)) = (&output.report, &output.raw_report) {
        let text = format!("refined\n{}\nraw predictions\n{}", r.to_table(), raw.to_table());
        fs::write(out.join("report.txt"), &text)?;
        print!("{text}");
    }
    if overlays {
        let dir = out.join("overlays");
        ensure_dir(&dir)?;
        for (f, o) in frames.iter().zip(&output.frames) {
            let Some(joints) = &o.joints else { continue };
            let j2d: Vec<Option<Vector2<f64>>> = joints.iter().map(|p| f.camera().project_point(p).ok()).collect();
            let img = render_overlay(&f.depth, &j2d, &output.skeleton);
            write_ppm(dir.join(format!("{:05}.ppm", f.index)), &img)?;
        }
    }
    Ok(())
}

fn finish(output: &PipelineOutput) -> Result<()> {
    if let Some(r) = &output.report {
        if let (Some(all), Some(raw)) = (
            r.summary.first(),
            output.raw_report.as_ref().and_then(|x| x.summary.first()),
        ) {
            log::info!(
                "event=report pa_mpjpe={:.4} raw_pa_mpjpe={:.4} pa_pck3d={:.4} failed={}",
                all.metrics.pa_mpjpe,
                raw.metrics.pa_mpjpe,
                all.metrics.pa_pck3d,
                output.failed()
            );
        }
    }
    if output.failed() == output.frames.len() {
        anyhow::bail!("every frame failed");
    }
    Ok(())
}

fn refine(cfg: &FileConfig, a: crate::RefineArgs) -> Result<()> {
    let tree = load_prior(cfg, &a.fit)?;
    let pc = pipeline_config(cfg, &a.fit, true)?;
    let (skeleton, mesh) = dataset_shape(&a.data, tree.skeleton())?;
    let tree = tree.with_skeleton(&skeleton).classify()?;
    let frames = frames_of(&a.data, a.camera.or(cfg.camera))?;
    let stored = read_predictions(&a.predictions).classify_ctx(format!("predictions {}", a.predictions.display()))?;
    let output = run_pipeline(&pc, &tree, &mesh, None, &frames, &StoredPredictor::new(stored)).classify()?;
    write_outputs(&a.out, &output, &frames, false)?;
    finish(&output)
}

fn pipeline(cfg: &FileConfig, a: crate::PipelineArgs) -> Result<()> {
    let known = a.known_shape || cfg.known_shape.unwrap_or(false);
    let tree = load_prior(cfg, &a.fit)?;
    let pc = pipeline_config(cfg, &a.fit, known)?;
    let (oracle, occlude) = oracle_of(cfg, &a.oracle)?;
    let (skeleton, mesh) = dataset_shape(&a.data, tree.skeleton())?;
    // Known-shape runs never open the shape model.
    let shape: Option<ShapeModel> = if known {
        None
    } else {
        let path = a
            .shape_model
            .as_ref()
            .or(cfg.shape_model.as_ref())
            .ok_or_else(|| invalid("unknown-shape runs need --shape-model (or pass --known-shape)"))?;
        Some(ShapeModel::load(path).classify_ctx(format!("shape model {}", path.display()))?)
    };
    let (tree, mesh) = if known {
        (tree.with_skeleton(&skeleton).classify()?, mesh)
    } else {
        let mesh = template_mesh(tree.skeleton());
        (tree, mesh)
    };
    let frames = occlude_frames(frames_of(&a.data, a.camera.or(cfg.camera))?, occlude, oracle.seed)?;
    let output = run_pipeline(&pc, &tree, &mesh, shape.as_ref(), &frames, &oracle).classify()?;
    if let Some(dir) = &a.heatmap_out {
        let refs: Vec<_> = output
            .frames
            .iter()
            .filter(|f| !f.prediction.is_empty())
            .map(|f| (f.frame, &f.prediction))
            .collect();
        write_heatmaps(dir, &refs, tree.skeleton())?;
    }
    write_outputs(&a.out, &output, &frames, !a.no_overlays)?;
    finish(&output)
}

/// Joints of one frame from a fits or predictions file.
fn joints_of(v: &serde_json::Value) -> Option<Vec<Vector3<f64>>> {
    let arr = v.get("joints").or_else(|| v.get("joints3d"))?;
    let pts: Vec<[f64; 3]> = serde_json::from_value(arr.clone()).ok()?;
    Some(pts.into_iter().map(Vector3::from).collect())
}

fn eval(cfg: &FileConfig, a: crate::EvalArgs) -> Result<()> {
    let (skeleton, _) = dataset_shape(&a.data, &load_skeleton(cfg.skeleton.as_deref())?)?;
    let frames = frames_of(&a.data, a.camera.or(cfg.camera))?;
    let text = fs::read_to_string(&a.input).map_err(|e| invalid(format!("cannot read {}: {e}", a.input.display())))?;
    let mut inputs = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| invalid(format!("{} line {}: {e}", a.input.display(), n + 1)))?;
        let idx = v["frame"]
            .as_u64()
            .ok_or_else(|| invalid(format!("{} line {}: missing frame", a.input.display(), n + 1)))?
            as usize;
        let frame = frames
            .get(idx)
            .ok_or_else(|| invalid(format!("frame {idx} is not in the dataset")))?;
        let Some(pred3d) = joints_of(&v) else {
            log::warn!("event=frame_without_joints frame={idx}");
            continue;
        };
        let truth = frame
            .truth
            .as_ref()
            .ok_or_else(|| invalid(format!("frame {idx} has no annotation")))?;
        let pred2d = match v.get("joints2d") {
            Some(j) => serde_json::from_value::<Vec<[f64; 2]>>(j.clone())
                .map_err(|e| invalid(format!("frame {idx}: joints2d: {e}")))?
                .into_iter()
                .map(Vector2::from)
                .collect(),
            None => pred3d
                .iter()
                .map(|p| {
                    frame
                        .camera()
                        .project_point(p)
                        .unwrap_or(Vector2::new(f64::NAN, f64::NAN))
                })
                .collect(),
        };
        inputs.push(FrameInput {
            pred3d,
            gt3d: truth.joints_cam.clone(),
            pred2d,
            gt2d: truth.joints_2d.clone(),
            mask_area: frame.mask.count() as f64,
        });
    }
    let report = group_report(&inputs, &skeleton).classify()?;
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_string_pretty(&report)?)?;
    }
    if let Some(all) = report.summary.first() {
        log::info!(
            "event=eval frames={} mpjpe={:.4} pa_mpjpe={:.4} pck2d={:.4} pck3d={:.4} pa_pck3d={:.4}",
            report.frames.len(),
            all.metrics.mpjpe,
            all.metrics.pa_mpjpe,
            all.metrics.pck2d,
            all.metrics.pck3d,
            all.metrics.pa_pck3d
        );
    }
    Ok(())
}
