use std::fs;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::{apply_noise, rasterize_depth};
use crate::camera::{write_depth_pgm, write_mask_pgm, CameraModel, DepthImage, Mask, Raster};
use crate::error::{Error, Result};
use crate::heatmap::{
    crop_for_network, encode_heatmaps, mirror_normalized, normalize_joints, CropTransform, HeatmapStack,
    NormalizedJoints, NETWORK_SIDE,
};
use crate::skeleton::{joint_positions, skin_mesh, Pose, Skeleton, SkinnedMesh};

/// Kinect-like 512x424 depth camera.
pub fn kinect_camera() -> CameraModel {
    CameraModel::new(365.0, 365.0, 256.0, 212.0, 512, 424).expect("valid intrinsics")
}

/// `count` cameras evenly spaced on a horizontal circle, all aimed at
/// `target`.
pub fn camera_ring(count: usize, radius_mm: f64, height_mm: f64, target: Vector3<f64>) -> Vec<CameraModel> {
    (0..count)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / count as f64;
            let eye = target + Vector3::new(radius_mm * a.sin(), height_mm, radius_mm * a.cos());
            kinect_camera().look_at(eye, target, Vector3::y())
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma_mm: f64,
    pub step_mm: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma_mm: 0.0,
            step_mm: 0.0,
            seed: 0,
        }
    }
}

/// Everything needed to render an annotated sequence.
#[derive(Clone, Debug)]
pub struct RenderJob {
    pub skeleton: Skeleton,
    pub mesh: SkinnedMesh,
    pub poses: Vec<Pose>,
    pub cameras: Vec<CameraModel>,
    pub noise: NoiseConfig,
    pub mirror: bool,
    /// Render every frame with the root at the origin and unrotated.
    pub fixed_root: bool,
}

/// One rendered view of one frame.
#[derive(Clone, Debug)]
pub struct Sample {
    pub camera: usize,
    pub frame: usize,
    pub mirrored: bool,
    /// Full-resolution depth (not flipped for mirrored samples).
    pub depth: DepthImage,
    pub mask: Mask,
    /// 256x256 network input, flipped for mirrored samples.
    pub network: Raster<f32>,
    pub crop: CropTransform,
    pub joints: NormalizedJoints,
    pub heatmaps: HeatmapStack,
    /// Ground truth in camera space, mm (original identities).
    pub joints_cam: Vec<Vector3<f64>>,
    /// Ground truth in full-image pixels.
    pub joints_2d: Vec<Vector2<f64>>,
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub camera: usize,
    pub frame: usize,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub cameras: Vec<CameraModel>,
    pub samples: Vec<Sample>,
    pub skipped: Vec<Skipped>,
}

/// Seed of one frame/camera job, independent of scheduling.
fn job_seed(seed: u64, frame: usize, camera: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (frame as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (camera as u64).wrapping_mul(0x94D0_49BB_1331_11EB)
}

fn flip(r: &Raster<f32>) -> Raster<f32> {
    let mut out = r.clone();
    for y in 0..r.height {
        for x in 0..r.width {
            out.set(r.width - 1 - x, y, r.get(x, y));
        }
    }
    out
}

fn render_one(job: &RenderJob, frame: usize, cam_index: usize) -> std::result::Result<Vec<Sample>, String> {
    let camera = &job.cameras[cam_index];
    let mut pose = job.poses[frame].clone();
    if job.fixed_root {
        pose.root_rotation = UnitQuaternion::identity();
        pose.root_translation = Vector3::zeros();
    }
    let world = joint_positions(&job.skeleton, &pose).map_err(|e| e.to_string())?;
    let joints_cam: Vec<Vector3<f64>> = world.iter().map(|p| camera.world_to_camera(p)).collect();
    let mut joints_2d = Vec::with_capacity(joints_cam.len());
    for (j, p) in joints_cam.iter().enumerate() {
        let px = camera
            .project_point(p)
            .ok()
            .filter(|px| camera.contains(px))
            .ok_or_else(|| format!("joint {} outside the image", job.skeleton.joint(j).name))?;
        joints_2d.push(px);
    }
    let verts = skin_mesh(&job.mesh, &job.skeleton, &pose).map_err(|e| e.to_string())?;
    let (clean, _) = rasterize_depth(&verts, &job.mesh.triangles, camera).map_err(|e| e.to_string())?;
    let depth = apply_noise(
        &clean,
        job.noise.sigma_mm,
        job.noise.step_mm,
        job_seed(job.noise.seed, frame, cam_index),
    )
    .map_err(|e| e.to_string())?;
    let mask = depth.valid_mask();
    if mask.count() == 0 {
        return Err("empty mask".into());
    }
    let (network, crop) = crop_for_network(&depth, &mask).map_err(|e| e.to_string())?;
    let joints = normalize_joints(&joints_cam, camera, &crop, 0).map_err(|e| e.to_string())?;
    if !joints.in_range() {
        return Err("joint outside the network input range".into());
    }
    let heatmaps = encode_heatmaps(&joints, &job.skeleton).map_err(|e| e.to_string())?;
    let mut out = vec![Sample {
        camera: cam_index,
        frame,
        mirrored: false,
        depth,
        mask,
        network,
        crop,
        joints,
        heatmaps,
        joints_cam,
        joints_2d,
        pose,
    }];
    if job.mirror {
        let base = &out[0];
        let joints = mirror_normalized(&base.joints, &job.skeleton);
        let heatmaps = encode_heatmaps(&joints, &job.skeleton).map_err(|e| e.to_string())?;
        let m = Sample {
            mirrored: true,
            network: flip(&base.network),
            joints,
            heatmaps,
            ..base.clone()
        };
        out.push(m);
    }
    Ok(out)
}

/// Renders every frame from every camera. Views where a joint projects
/// outside the image are skipped and reported. Mirrored copies, when
/// enabled, follow all original samples.
pub fn build_dataset(job: &RenderJob) -> Result<Dataset> {
    if job.cameras.is_empty() {
        return Err(Error::Empty("camera rig"));
    }
    if job.poses.is_empty() {
        return Err(Error::Empty("pose sequence"));
    }
    job.mesh.validate(job.skeleton.len())?;
    for c in &job.cameras {
        c.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..job.poses.len())
        .flat_map(|f| (0..job.cameras.len()).map(move |c| (f, c)))
        .collect();
    let results: Vec<_> = jobs.par_iter().map(|&(f, c)| (f, c, render_one(job, f, c))).collect();
    let mut originals = Vec::new();
    let mut mirrors = Vec::new();
    let mut skipped = Vec::new();
    for (frame, camera, r) in results {
        match r {
            Ok(samples) => {
                for s in samples {
                    if s.mirrored {
                        mirrors.push(s);
                    } else {
                        originals.push(s);
                    }
                }
            }
            Err(reason) => {
                log::warn!("event=skip_sample frame={frame} camera={camera} reason=\"{reason}\"");
                skipped.push(Skipped { camera, frame, reason });
            }
        }
    }
    for c in 0..job.cameras.len() {
        if !originals.iter().any(|s| s.camera == c) {
            log::warn!("event=camera_unused camera={c} reason=\"no frame fully in view\"");
        }
    }
    originals.extend(mirrors);
    Ok(Dataset {
        cameras: job.cameras.clone(),
        samples: originals,
        skipped,
    })
}

/// Per-sample annotation file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Annotation {
    pub camera: usize,
    pub frame: usize,
    pub mirrored: bool,
    pub crop: CropTransform,
    pub joints: NormalizedJoints,
    pub joints_cam: Vec<[f64; 3]>,
    pub joints_2d: Vec<[f64; 2]>,
    pub pose: Pose,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub camera: usize,
    pub frame: usize,
    pub mirrored: bool,
    pub stem: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub skeleton: String,
    pub cameras: Vec<CameraModel>,
    pub frames: usize,
    pub network_side: usize,
    pub samples: Vec<ManifestEntry>,
    pub skipped: Vec<Skipped>,
}

fn stem(s: &Sample) -> String {
    if s.mirrored {
        format!("{:05}_m", s.frame)
    } else {
        format!("{:05}", s.frame)
    }
}

impl Dataset {
    /// Writes `frames/`, `masks/`, `annot/`, `heatmaps/` (one directory per
    /// camera) and `manifest.json` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, skeleton: &Skeleton, frames: usize) -> Result<()> {
        let dir = dir.as_ref();
        for sub in ["frames", "masks", "annot", "heatmaps"] {
            for c in 0..self.cameras.len() {
                fs::create_dir_all(dir.join(sub).join(c.to_string()))?;
            }
        }
        let mut entries = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            let cam = s.camera.to_string();
            let name = stem(s);
            if !s.mirrored {
                write_depth_pgm(
                    dir.join("frames").join(&cam).join(format!("{name}.pgm")),
                    &s.depth.depth,
                )?;
                write_mask_pgm(dir.join("masks").join(&cam).join(format!("{name}.pgm")), &s.mask)?;
            } else {
                write_depth_pgm(dir.join("frames").join(&cam).join(format!("{name}.pgm")), &s.network)?;
            }
            let annot = Annotation {
                camera: s.camera,
                frame: s.frame,
                mirrored: s.mirrored,
                crop: s.crop,
                joints: s.joints.clone(),
                joints_cam: s.joints_cam.iter().map(|p| [p.x, p.y, p.z]).collect(),
                joints_2d: s.joints_2d.iter().map(|p| [p.x, p.y]).collect(),
                pose: s.pose.clone(),
            };
            fs::write(
                dir.join("annot").join(&cam).join(format!("{name}.json")),
                serde_json::to_string_pretty(&annot)?,
            )?;
            s.heatmaps
                .save(dir.join("heatmaps").join(&cam).join(format!("{name}.qhm")))?;
            entries.push(ManifestEntry {
                camera: s.camera,
                frame: s.frame,
                mirrored: s.mirrored,
                stem: name,
            });
        }
        let manifest = Manifest {
            skeleton: skeleton.name.clone(),
            cameras: self.cameras.clone(),
            frames,
            network_side: NETWORK_SIDE,
            samples: entries,
            skipped: self.skipped.clone(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

/// Reads a manifest and all annotations of a written dataset.
pub fn read_annotations(dir: impl AsRef<Path>) -> Result<(Manifest, Vec<Annotation>)> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
    let annots = manifest
        .samples
        .iter()
        .map(|e| {
            let p = dir
                .join("annot")
                .join(e.camera.to_string())
                .join(format!("{}.json", e.stem));
            Ok(serde_json::from_str(&fs::read_to_string(p)?)?)
        })
        .collect::<Result<Vec<Annotation>>>()?;
    Ok((manifest, annots))
}
