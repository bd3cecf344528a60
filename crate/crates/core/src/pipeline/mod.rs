//! End-to-end driver: joint prediction, prior fitting, alignment refinement
//! and evaluation over a frame sequence.

mod io;
mod overlay;
mod run;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, DepthImage, Mask, Raster};
use crate::error::{Error, Result};
use crate::heatmap::{denormalize_depth, CropTransform, DecodedJoints, NormalizedJoints, NETWORK_SIDE};
use crate::skeleton::Skeleton;
use crate::synthgen::{occlude_raster, Occlusion, Sample};

pub use io::{load_frames, read_predictions, write_predictions, StoredPredictor};
pub use overlay::{render_overlay, write_ppm, RgbImage, Side};
pub use run::{run_pipeline, FrameOutcome, PipelineConfig, PipelineOutput};

/// Ground truth carried by synthetic frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub joints: NormalizedJoints,
    pub joints_cam: Vec<Vector3<f64>>,
    pub joints_2d: Vec<Vector2<f64>>,
}

/// One depth frame as seen by the pipeline.
#[derive(Clone, Debug)]
pub struct Frame {
    pub index: usize,
    /// Full-resolution depth; its camera defines camera space.
    pub depth: DepthImage,
    pub mask: Mask,
    /// 256x256 network input.
    pub network: Raster<f32>,
    pub crop: CropTransform,
    pub truth: Option<Truth>,
    /// Square blanked in network space, if any.
    pub occlusion: Option<Occlusion>,
}

impl Frame {
    /// Frame of an unmirrored synthetic sample. Mirrored samples have no
    /// matching full-resolution depth and are rejected.
    pub fn from_sample(index: usize, sample: &Sample) -> Result<Frame> {
        if sample.mirrored {
            return Err(Error::InvalidArgument("mirrored samples cannot be fitted".into()));
        }
        Ok(Frame {
            index,
            depth: sample.depth.clone(),
            mask: sample.mask.clone(),
            network: sample.network.clone(),
            crop: sample.crop,
            truth: Some(Truth {
                joints: sample.joints.clone(),
                joints_cam: sample.joints_cam.clone(),
                joints_2d: sample.joints_2d.clone(),
            }),
            occlusion: None,
        })
    }

    pub fn camera(&self) -> &CameraModel {
        &self.depth.camera
    }

    /// Blanks a random `side`-pixel square of the network input and the
    /// matching region of the full-resolution depth and mask.
    pub fn occluded(&self, side: usize, seed: u64) -> Result<Frame> {
        let (network, occ) = occlude_raster(&self.network, side, seed)?;
        let mut out = self.clone();
        out.network = network;
        let (w, h) = (self.depth.depth.width, self.depth.depth.height);
        for y in 0..h {
            for x in 0..w {
                let q = self.crop.apply(&Vector2::new(x as f64, y as f64));
                if occ.contains(&q) {
                    out.depth.depth.set(x, y, 0.0);
                    out.mask.set(x, y, false);
                }
            }
        }
        out.occlusion = Some(occ);
        Ok(out)
    }
}

/// Per-frame detector output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Network-space joints (`x`, `y` pixels, `z` depth code).
    pub j3d256: Vec<[f64; 3]>,
    /// Full-image pixels.
    pub joints2d: Vec<Vector2<f64>>,
    /// Camera space, mm.
    pub joints3d: Vec<Vector3<f64>>,
    /// In `[0, 1]`.
    pub confidence: Vec<f64>,
}

impl Prediction {
    /// Maps network-space joints through the inverse crop and depth
    /// normalization into the image and camera space.
    pub fn from_network(
        j3d256: Vec<[f64; 3]>,
        confidence: Vec<f64>,
        crop: &CropTransform,
        camera: &CameraModel,
        root_index: usize,
    ) -> Result<Prediction> {
        if confidence.len() != j3d256.len() {
            return Err(Error::Dimension {
                expected: j3d256.len(),
                got: confidence.len(),
                context: "confidences",
            });
        }
        let codes: Vec<f64> = j3d256.iter().map(|c| c[2]).collect();
        let depths = denormalize_depth(&codes, root_index)?;
        let joints2d: Vec<Vector2<f64>> = j3d256.iter().map(|c| crop.invert(&Vector2::new(c[0], c[1]))).collect();
        let joints3d = joints2d
            .iter()
            .zip(&depths)
            .map(|(px, &d)| camera.backproject(px, d.max(1.0)))
            .collect::<Result<_>>()?;
        Ok(Prediction {
            j3d256,
            joints2d,
            joints3d,
            confidence: confidence.into_iter().map(|c| c.clamp(0.0, 1.0)).collect(),
        })
    }

    /// From decoded heatmaps; joints without signal get confidence 0.
    pub fn from_decoded(d: DecodedJoints) -> Prediction {
        let confidence = d
            .confidence
            .iter()
            .zip(&d.predicted)
            .map(|(&c, &p)| if p { c.clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        Prediction {
            j3d256: d.j3d256,
            joints2d: d.j2d_full,
            joints3d: d.j3d_cam,
            confidence,
        }
    }

    pub fn len(&self) -> usize {
        self.joints3d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints3d.is_empty()
    }
}

/// Source of per-frame joint estimates; stands in for the trained network.
pub trait JointPredictor: Sync {
    fn predict(&self, frame: &Frame, skeleton: &Skeleton) -> Result<Prediction>;
}

/// Ground truth plus seeded Gaussian noise. Joints inside a frame's
/// occluder get confidence 0 and an arbitrary location.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OraclePredictor {
    /// Noise on `x`, `y` in network pixels.
    pub sigma_px: f64,
    /// Noise on the depth code.
    pub sigma_code: f64,
    pub seed: u64,
}

impl JointPredictor for OraclePredictor {
    fn predict(&self, frame: &Frame, skeleton: &Skeleton) -> Result<Prediction> {
        let truth = frame
            .truth
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("frame {} has no annotation for the oracle", frame.index)))?;
        if truth.joints.len() != skeleton.len() {
            return Err(Error::Dimension {
                expected: skeleton.len(),
                got: truth.joints.len(),
                context: "annotated joints",
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(self.seed, frame.index));
        oracle_predict(
            &truth.joints,
            &frame.crop,
            frame.camera(),
            self.sigma_px,
            self.sigma_code,
            frame.occlusion.as_ref(),
            &mut rng,
        )
    }
}

pub(crate) fn frame_seed(seed: u64, frame: usize) -> u64 {
    seed ^ (frame as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Perturbs annotated network-space joints and maps them to image and
/// camera space.
pub fn oracle_predict(
    truth: &NormalizedJoints,
    crop: &CropTransform,
    camera: &CameraModel,
    sigma_px: f64,
    sigma_code: f64,
    occlusion: Option<&Occlusion>,
    rng: &mut impl Rng,
) -> Result<Prediction> {
    let px = Normal::new(0.0, sigma_px).map_err(|_| Error::InvalidArgument(format!("pixel sigma {sigma_px}")))?;
    let code = Normal::new(0.0, sigma_code).map_err(|_| Error::InvalidArgument(format!("depth sigma {sigma_code}")))?;
    let edge = (NETWORK_SIDE - 1) as f64;
    let mut confidence = vec![1.0; truth.len()];
    let mut j3d256 = Vec::with_capacity(truth.len());
    for (j, c) in truth.j3d256.iter().enumerate() {
        let noisy = [c[0] + px.sample(rng), c[1] + px.sample(rng), c[2] + code.sample(rng)];
        let hidden = j != truth.root_index && occlusion.is_some_and(|o| o.contains(&Vector2::new(c[0], c[1])));
        if hidden {
            confidence[j] = 0.0;
            j3d256.push([rng.random_range(0.0..=edge), rng.random_range(0.0..=edge), 127.5]);
        } else {
            j3d256.push(noisy);
        }
    }
    Prediction::from_network(j3d256, confidence, crop, camera, truth.root_index)
}
