use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};

use super::{Frame, JointPredictor, Prediction, Truth};
use crate::camera::{read_depth_pgm, read_mask_pgm, DepthImage};
use crate::error::{Error, Result};
use crate::heatmap::crop_for_network;
use crate::skeleton::Skeleton;
use crate::synthgen::read_annotations;

/// Loads the unmirrored frames of a dataset written by
/// [`crate::synthgen::Dataset::write`], optionally from one camera only.
/// Frames are numbered in manifest order.
pub fn load_frames(dir: impl AsRef<Path>, camera: Option<usize>) -> Result<Vec<Frame>> {
    let dir = dir.as_ref();
    let (manifest, annots) = read_annotations(dir)?;
    if let Some(c) = camera {
        if c >= manifest.cameras.len() {
            return Err(Error::InvalidArgument(format!(
                "camera {c} requested, dataset has {}",
                manifest.cameras.len()
            )));
        }
    }
    let mut frames = Vec::new();
    for (entry, annot) in manifest.samples.iter().zip(annots) {
        if entry.mirrored || camera.is_some_and(|c| c != entry.camera) {
            continue;
        }
        let cam_dir = entry.camera.to_string();
        let depth = read_depth_pgm(dir.join("frames").join(&cam_dir).join(format!("{}.pgm", entry.stem)))?;
        let mask = read_mask_pgm(dir.join("masks").join(&cam_dir).join(format!("{}.pgm", entry.stem)))?;
        let depth = DepthImage::new(depth, manifest.cameras[entry.camera].clone())?;
        let (network, crop) = crop_for_network(&depth, &mask)?;
        frames.push(Frame {
            index: frames.len(),
            depth,
            mask,
            network,
            crop,
            truth: Some(Truth {
                joints: annot.joints,
                joints_cam: annot.joints_cam.iter().map(|p| Vector3::from(*p)).collect(),
                joints_2d: annot.joints_2d.iter().map(|p| Vector2::from(*p)).collect(),
            }),
            occlusion: None,
        });
    }
    if frames.is_empty() {
        return Err(Error::Empty("dataset frames"));
    }
    Ok(frames)
}

/// One JSON object per line, `{"frame": i, ...prediction}`.
pub fn write_predictions(path: impl AsRef<Path>, predictions: &[(usize, Prediction)]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (frame, p) in predictions {
        let mut v = serde_json::to_value(p)?;
        v["frame"] = (*frame).into();
        writeln!(w, "{}", serde_json::to_string(&v)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<(usize, Prediction)>> {
    let path = path.as_ref();
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)?;
        let frame = v["frame"]
            .as_u64()
            .ok_or_else(|| Error::format(path, format!("line {}: missing frame index", i + 1)))?
            as usize;
        out.push((frame, serde_json::from_value(v)?));
    }
    Ok(out)
}

/// Replays stored predictions by frame index.
#[derive(Clone, Debug, Default)]
pub struct StoredPredictor {
    predictions: BTreeMap<usize, Prediction>,
}

impl StoredPredictor {
    pub fn new(predictions: impl IntoIterator<Item = (usize, Prediction)>) -> Self {
        StoredPredictor {
            predictions: predictions.into_iter().collect(),
        }
    }
}

impl JointPredictor for StoredPredictor {
    fn predict(&self, frame: &Frame, skeleton: &Skeleton) -> Result<Prediction> {
        let p = self
            .predictions
            .get(&frame.index)
            .ok_or_else(|| Error::InvalidArgument(format!("no stored prediction for frame {}", frame.index)))?;
        if p.len() != skeleton.len() || p.confidence.len() != skeleton.len() {
            return Err(Error::Dimension {
                expected: skeleton.len(),
                got: p.len(),
                context: "stored prediction",
            });
        }
        Ok(p.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::OraclePredictor;
    use crate::synthgen::{
        build_dataset, camera_ring, gait_sequence, template_mesh, GaitConfig, NoiseConfig, RenderJob,
    };

    #[test]
    fn written_datasets_load_back_as_frames() {
        let skeleton = Skeleton::dog();
        let job = RenderJob {
            mesh: template_mesh(&skeleton),
            poses: gait_sequence(
                &skeleton,
                &GaitConfig {
                    frames: 2,
                    ..Default::default()
                },
            ),
            skeleton: skeleton.clone(),
            cameras: camera_ring(2, 2800.0, 600.0, Vector3::new(0.0, 350.0, 0.0)),
            noise: NoiseConfig::default(),
            mirror: true,
            fixed_root: true,
        };
        let data = build_dataset(&job).unwrap();
        let dir = tempfile::tempdir().unwrap();
        data.write(dir.path(), &skeleton, 2).unwrap();
        let frames = load_frames(dir.path(), None).unwrap();
        let originals: Vec<_> = data.samples.iter().filter(|s| !s.mirrored).collect();
        assert_eq!(frames.len(), originals.len());
        for (f, s) in frames.iter().zip(&originals) {
            assert_eq!(f.crop, s.crop);
            // Depth PGMs hold whole millimetres.
            assert!(f
                .network
                .data
                .iter()
                .zip(&s.network.data)
                .all(|(a, b)| (a - b).abs() <= 1.0));
            assert_eq!(f.truth.as_ref().unwrap().joints, s.joints);
        }
        assert_eq!(
            load_frames(dir.path(), Some(1)).unwrap().len(),
            originals.iter().filter(|s| s.camera == 1).count()
        );
        assert!(load_frames(dir.path(), Some(5)).is_err());

        let oracle = OraclePredictor {
            sigma_px: 1.0,
            sigma_code: 1.0,
            seed: 2,
        };
        let preds: Vec<_> = frames
            .iter()
            .map(|f| (f.index, oracle.predict(f, &skeleton).unwrap()))
            .collect();
        let path = dir.path().join("p.jsonl");
        write_predictions(&path, &preds).unwrap();
        let back = read_predictions(&path).unwrap();
        assert_eq!(back, preds);
        let stored = StoredPredictor::new(back);
        assert_eq!(stored.predict(&frames[0], &skeleton).unwrap(), preds[0].1);
    }
}
