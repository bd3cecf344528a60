use crate::error::{Error, Result};
use crate::skeleton::Skeleton;

use super::PoseLayout;

/// Deduplicated training set.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    /// Kept frames followed by their mirror images.
    pub vectors: Vec<Vec<f64>>,
    /// Input indices of the kept frames.
    pub kept: Vec<usize>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Frames kept by the greedy pass, without mirroring.
pub fn dedup_indices(layout: &PoseLayout, frames: &[Vec<f64>], threshold: f64) -> Result<Vec<usize>> {
    if frames.is_empty() {
        return Err(Error::Empty("pose sequence"));
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dedup threshold {threshold} must be positive"
        )));
    }
    let mut kept = vec![0];
    for (i, candidate) in frames.iter().enumerate().skip(1) {
        let nearest = kept
            .iter()
            .map(|&k| layout.dissimilarity(candidate, &frames[k]))
            .fold(f64::INFINITY, f64::min);
        if nearest > threshold {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Greedy dedup in frame order: a frame is kept when its summed quaternion
/// dissimilarity to every kept frame exceeds `threshold`. Mirror images of
/// the kept frames are appended.
pub fn dedup_poses(
    skeleton: &Skeleton,
    layout: &PoseLayout,
    frames: &[Vec<f64>],
    threshold: f64,
) -> Result<TrainingSet> {
    let kept = dedup_indices(layout, frames, threshold)?;
    let mut vectors: Vec<Vec<f64>> = kept.iter().map(|&k| frames[k].clone()).collect();
    for &k in &kept {
        vectors.push(layout.mirror(skeleton, &frames[k])?);
    }
    Ok(TrainingSet { vectors, kept })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::Pose;
    use crate::synthgen::{gait_sequence, GaitConfig};
    use nalgebra::{UnitQuaternion, Vector3};

    #[test]
    fn identical_frames_collapse() {
        let skel = Skeleton::dog();
        let layout = PoseLayout::new(&skel).unwrap();
        let y = layout.encode(&Pose::identity(&skel));
        let set = dedup_poses(&skel, &layout, &vec![y; 20], 0.1).unwrap();
        assert_eq!(set.kept, vec![0]);
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn half_turn_bone_is_kept() {
        let skel = Skeleton::dog();
        let layout = PoseLayout::new(&skel).unwrap();
        let a = layout.encode(&Pose::identity(&skel));
        let mut p = Pose::identity(&skel);
        p.joint_rotations[skel.index_of("neck2").unwrap()] =
            UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::PI);
        let b = layout.encode(&p);
        assert_eq!(dedup_indices(&layout, &[a, b], 0.1).unwrap(), vec![0, 1]);
    }

    #[test]
    fn errors() {
        let skel = Skeleton::dog();
        let layout = PoseLayout::new(&skel).unwrap();
        assert!(dedup_indices(&layout, &[], 0.1).is_err());
        let y = layout.encode(&Pose::identity(&skel));
        assert!(dedup_indices(&layout, &[y], 0.0).is_err());
    }

    #[test]
    fn retention_shrinks_with_threshold() {
        let skel = Skeleton::dog();
        let layout = PoseLayout::new(&skel).unwrap();
        let frames: Vec<_> = gait_sequence(
            &skel,
            &GaitConfig {
                frames: 300,
                fps: 60.0,
                ..Default::default()
            },
        )
        .iter()
        .map(|p| layout.encode(p))
        .collect();
        let mut last = usize::MAX;
        for t in [0.01, 0.02, 0.05, 0.1, 0.2, 0.5] {
            let n = dedup_indices(&layout, &frames, t).unwrap().len();
            assert!(n <= last);
            last = n;
        }
    }
}
