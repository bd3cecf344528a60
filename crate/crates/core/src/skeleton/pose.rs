use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::Skeleton;
use crate::error::{Error, Result};

/// Full skeleton pose.
///
/// `joint_rotations` has one entry per joint (the root's entry is applied
/// after `root_rotation`); `joint_translations` has one entry per
/// [`Skeleton::translating_joints`], relative to the joint's rest position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRecord", into = "PoseRecord")]
pub struct Pose {
    pub root_rotation: UnitQuaternion<f64>,
    pub root_translation: Vector3<f64>,
    pub joint_rotations: Vec<UnitQuaternion<f64>>,
    pub joint_translations: Vec<Vector3<f64>>,
}

/// Flips a quaternion onto the `w >= 0` hemisphere.
pub fn canonicalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Conjugates a rotation by the reflection `x -> -x`.
pub fn mirror_quaternion(q: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    canonicalize(UnitQuaternion::new_unchecked(Quaternion::new(q.w, q.i, -q.j, -q.k)))
}

impl Pose {
    pub fn new(
        root_rotation: UnitQuaternion<f64>,
        root_translation: Vector3<f64>,
        joint_rotations: Vec<UnitQuaternion<f64>>,
        joint_translations: Vec<Vector3<f64>>,
    ) -> Self {
        Pose {
            root_rotation: canonicalize(root_rotation),
            root_translation,
            joint_rotations: joint_rotations.into_iter().map(canonicalize).collect(),
            joint_translations,
        }
    }

    pub fn identity(skeleton: &Skeleton) -> Self {
        Pose {
            root_rotation: UnitQuaternion::identity(),
            root_translation: Vector3::zeros(),
            joint_rotations: vec![UnitQuaternion::identity(); skeleton.len()],
            joint_translations: vec![Vector3::zeros(); skeleton.translating_joints().len()],
        }
    }

    /// Re-canonicalizes every quaternion in place.
    pub fn canonicalize(&mut self) {
        self.root_rotation = canonicalize(self.root_rotation);
        for q in &mut self.joint_rotations {
            *q = canonicalize(*q);
        }
    }

    pub(crate) fn check(&self, skeleton: &Skeleton) -> Result<()> {
        let n = skeleton.len();
        if self.joint_rotations.len() != n {
            let at = self.joint_rotations.len().min(n.saturating_sub(1));
            return Err(Error::JointDimension {
                joint: skeleton.joint(at).name.clone(),
                detail: format!("{} rotations for {n} joints", self.joint_rotations.len()),
            });
        }
        let slots = skeleton.translating_joints();
        if self.joint_translations.len() != slots.len() {
            let at = slots[self.joint_translations.len().min(slots.len() - 1)];
            return Err(Error::JointDimension {
                joint: skeleton.joint(at).name.clone(),
                detail: format!(
                    "{} translations for {} translating joints",
                    self.joint_translations.len(),
                    slots.len()
                ),
            });
        }
        Ok(())
    }

    /// Rotation-sign-insensitive comparison.
    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        let q_close = |a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>| {
            (1.0 - a.coords.dot(&b.coords).abs()) <= tol
                || (a.coords - b.coords).norm() <= tol
                || (a.coords + b.coords).norm() <= tol
        };
        self.joint_rotations.len() == other.joint_rotations.len()
            && self.joint_translations.len() == other.joint_translations.len()
            && q_close(&self.root_rotation, &other.root_rotation)
            && (self.root_translation - other.root_translation).norm() <= tol
            && self
                .joint_rotations
                .iter()
                .zip(&other.joint_rotations)
                .all(|(a, b)| q_close(a, b))
            && self
                .joint_translations
                .iter()
                .zip(&other.joint_translations)
                .all(|(a, b)| (a - b).norm() <= tol)
    }
}

/// JSON form: quaternions as `[x, y, z, w]`, vectors as `[x, y, z]` in mm.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct PoseRecord {
    root_rotation: [f64; 4],
    root_translation: [f64; 3],
    joint_rotations: Vec<[f64; 4]>,
    joint_translations: Vec<[f64; 3]>,
}

fn quat_from(c: [f64; 4]) -> UnitQuaternion<f64> {
    let q = Quaternion::new(c[3], c[0], c[1], c[2]);
    // Already-unit input is kept verbatim so files round-trip bit for bit.
    let q = if (q.norm() - 1.0).abs() <= 1e-12 {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::from_quaternion(q)
    };
    canonicalize(q)
}

fn quat_into(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.i, q.j, q.k, q.w]
}

impl From<PoseRecord> for Pose {
    fn from(r: PoseRecord) -> Self {
        Pose {
            root_rotation: quat_from(r.root_rotation),
            root_translation: r.root_translation.into(),
            joint_rotations: r.joint_rotations.into_iter().map(quat_from).collect(),
            joint_translations: r.joint_translations.into_iter().map(Vector3::from).collect(),
        }
    }
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        PoseRecord {
            root_rotation: quat_into(&p.root_rotation),
            root_translation: p.root_translation.into(),
            joint_rotations: p.joint_rotations.iter().map(quat_into).collect(),
            joint_translations: p.joint_translations.iter().map(|&v| v.into()).collect(),
        }
    }
}

/// Writes poses as JSON lines, one pose per line.
pub fn write_pose_sequence(path: impl AsRef<Path>, poses: &[Pose]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for pose in poses {
        serde_json::to_writer(&mut out, pose)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_pose_sequence(path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut poses = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pose = serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        poses.push(pose);
    }
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_quat() -> impl Strategy<Value = UnitQuaternion<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-zero", |(a, b, c, d)| a * a + b * b + c * c + d * d > 1e-3)
            .prop_map(|(x, y, z, w)| UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)))
    }

    #[test]
    fn canonical_form_has_non_negative_scalar() {
        let q = UnitQuaternion::new_unchecked(Quaternion::new(-0.5, 0.5, 0.5, 0.5));
        let c = canonicalize(q);
        assert!(c.w > 0.0);
        assert!(c.angle_to(&q) < 1e-12);
    }

    #[test]
    fn json_layout_is_scalar_last() {
        let skel = Skeleton::dog();
        let mut pose = Pose::identity(&skel);
        pose.root_rotation = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 1.0);
        let v: serde_json::Value = serde_json::to_value(&pose).unwrap();
        let r = v["root_rotation"].as_array().unwrap();
        assert!((r[2].as_f64().unwrap() - 0.5f64.sin()).abs() < 1e-15);
        assert!((r[3].as_f64().unwrap() - 0.5f64.cos()).abs() < 1e-15);
        assert_eq!(v["joint_rotations"].as_array().unwrap().len(), 43);
        assert_eq!(v["joint_translations"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn sequence_file_round_trip() {
        let skel = Skeleton::dog();
        let mut a = Pose::identity(&skel);
        a.root_translation = Vector3::new(1.0, 2.0, 3.0);
        let b = Pose::identity(&skel);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.jsonl");
        write_pose_sequence(&path, &[a.clone(), b.clone()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(read_pose_sequence(&path).unwrap(), vec![a, b]);
    }

    proptest! {
        #[test]
        fn canonical_poses_round_trip_bit_identically(
            qs in proptest::collection::vec(arb_quat(), 43),
            root in arb_quat(),
            t in proptest::array::uniform3(-1e4..1e4f64),
        ) {
            let skel = Skeleton::dog();
            let pose = Pose::new(root, Vector3::from(t), qs, vec![Vector3::from(t); 4]);
            let text = serde_json::to_string(&pose).unwrap();
            let back: Pose = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(&back, &pose);
            prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
            prop_assert!(back.joint_rotations.iter().all(|q| q.w >= 0.0));
            prop_assert!(back.check(&skel).is_ok());
        }
    }
}
