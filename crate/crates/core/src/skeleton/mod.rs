//! Kinematic skeleton: joint hierarchy, forward kinematics, mirroring and
//! bone lengths.
//!
//! Conventions used throughout the crate:
//!
//! * millimetres for every length;
//! * model frame: `x` towards the animal's left, `y` up, `z` forward, so the
//!   sagittal plane is `x = 0`;
//! * quaternions are active rotations, stored scalar-last `[x, y, z, w]` and
//!   canonicalized to `w >= 0`;
//! * joints are ordered depth-first from the root, which is joint 0.

mod mesh;
mod pose;

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Isometry3, Translation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mesh::{skin_mesh, SkinWeights, SkinnedMesh};
pub use pose::{canonicalize, mirror_quaternion, read_pose_sequence, write_pose_sequence, Pose};

const DOG_TEMPLATE: &str = include_str!("../../data/dog_skeleton.json");

/// Rotational freedom of a joint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationDof {
    Fixed,
    /// One rotational DOF about `axis`, expressed in the parent frame.
    Hinge {
        axis: [f64; 3],
    },
    Ball,
}

impl RotationDof {
    pub fn count(self) -> usize {
        match self {
            RotationDof::Fixed => 0,
            RotationDof::Hinge { .. } => 1,
            RotationDof::Ball => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointGroup {
    Head,
    Body,
    Tail,
    Ear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointDef {
    pub name: String,
    pub parent: Option<usize>,
    /// Offset from the parent joint in the parent's frame at rest.
    pub rest_offset: Vector3<f64>,
    pub rotation: RotationDof,
    pub translation: bool,
    pub symmetric_pair: Option<usize>,
    pub group: JointGroup,
}

impl JointDef {
    pub fn dof(&self) -> usize {
        self.rotation.count() + if self.translation { 3 } else { 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub name: String,
    joints: Vec<JointDef>,
    /// Child joint of the bone used for head-length normalization.
    head_bone: usize,
    translating: Vec<usize>,
    index: HashMap<String, usize>,
}

/// On-disk form of a skeleton; parents and pairs are referenced by name.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SkeletonFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dof_note: Option<String>,
    pub head_bone: String,
    pub joints: Vec<JointRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointRecord {
    pub name: String,
    pub parent: Option<String>,
    pub rest_offset: [f64; 3],
    pub rotation: RotationDof,
    pub translation: bool,
    pub pair: Option<String>,
    pub group: JointGroup,
}

impl Skeleton {
    /// Builds and validates a skeleton. `head_bone` names the child joint of
    /// the head bone.
    pub fn new(name: impl Into<String>, joints: Vec<JointDef>, head_bone: usize) -> Result<Self> {
        let index: HashMap<String, usize> = joints.iter().enumerate().map(|(i, j)| (j.name.clone(), i)).collect();
        if index.len() != joints.len() {
            return Err(Error::Skeleton("duplicate joint names".into()));
        }
        if joints.is_empty() {
            return Err(Error::Skeleton("no joints".into()));
        }
        for (i, joint) in joints.iter().enumerate() {
            match joint.parent {
                None if i != 0 => {
                    return Err(Error::Skeleton(format!(
                        "joint `{}` has no parent but is not the root",
                        joint.name
                    )))
                }
                Some(_) if i == 0 => return Err(Error::Skeleton("joint 0 must be the root".into())),
                Some(p) if p >= i => {
                    return Err(Error::Skeleton(format!(
                        "joint `{}` parent index {p} is not before it",
                        joint.name
                    )))
                }
                _ => {}
            }
            if let Some(p) = joint.symmetric_pair {
                if p >= joints.len() || joints[p].symmetric_pair != Some(i) || p == i {
                    return Err(Error::Skeleton(format!(
                        "symmetric pair of `{}` is not an involution",
                        joint.name
                    )));
                }
            }
            if let RotationDof::Hinge { axis } = joint.rotation {
                if Vector3::from(axis).norm() < 1e-12 {
                    return Err(Error::Skeleton(format!("zero hinge axis on `{}`", joint.name)));
                }
            }
        }
        if head_bone == 0 || head_bone >= joints.len() {
            return Err(Error::Skeleton("head bone must name a non-root joint".into()));
        }
        let translating = joints
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, j)| j.translation)
            .map(|(i, _)| i)
            .collect();
        Ok(Skeleton {
            name: name.into(),
            joints,
            head_bone,
            translating,
            index,
        })
    }

    /// The canonical 43-joint dog template shipped with the crate.
    pub fn dog() -> Self {
        let file: SkeletonFile = serde_json::from_str(DOG_TEMPLATE).expect("bundled skeleton template parses");
        Self::from_file_record(file).expect("bundled skeleton template is valid")
    }

    pub fn from_file_record(file: SkeletonFile) -> Result<Self> {
        let names: HashMap<&str, usize> = file
            .joints
            .iter()
            .enumerate()
            .map(|(i, j)| (j.name.as_str(), i))
            .collect();
        let lookup = |name: &str| {
            names
                .get(name)
                .copied()
                .ok_or_else(|| Error::Skeleton(format!("unknown joint `{name}`")))
        };
        let mut joints = Vec::with_capacity(file.joints.len());
        for rec in &file.joints {
            joints.push(JointDef {
                name: rec.name.clone(),
                parent: rec.parent.as_deref().map(lookup).transpose()?,
                rest_offset: Vector3::from(rec.rest_offset),
                rotation: rec.rotation,
                translation: rec.translation,
                symmetric_pair: rec.pair.as_deref().map(lookup).transpose()?,
                group: rec.group,
            });
        }
        let head = lookup(&file.head_bone)?;
        Skeleton::new(file.name, joints, head)
    }

    pub fn to_file_record(&self) -> SkeletonFile {
        SkeletonFile {
            name: self.name.clone(),
            units: Some("mm".into()),
            axes: None,
            dof_note: None,
            head_bone: self.joints[self.head_bone].name.clone(),
            joints: self
                .joints
                .iter()
                .map(|j| JointRecord {
                    name: j.name.clone(),
                    parent: j.parent.map(|p| self.joints[p].name.clone()),
                    rest_offset: j.rest_offset.into(),
                    rotation: j.rotation,
                    translation: j.translation,
                    pair: j.symmetric_pair.map(|p| self.joints[p].name.clone()),
                    group: j.group,
                })
                .collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let file: SkeletonFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Self::from_file_record(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file_record())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joints(&self) -> &[JointDef] {
        &self.joints
    }

    pub fn joint(&self, i: usize) -> &JointDef {
        &self.joints[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.joints[i].parent
    }

    /// Non-root joints carrying translation DOF, in joint order. This is the
    /// layout of [`Pose::joint_translations`].
    pub fn translating_joints(&self) -> &[usize] {
        &self.translating
    }

    pub fn head_bone(&self) -> (usize, usize) {
        let child = self.head_bone;
        (self.joints[child].parent.expect("head bone is not the root"), child)
    }

    /// Total degrees of freedom, root translation included.
    pub fn dof(&self) -> usize {
        self.joints.iter().map(JointDef::dof).sum()
    }

    pub fn children(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.joints
            .iter()
            .enumerate()
            .filter(move |(_, j)| j.parent == Some(i))
            .map(|(c, _)| c)
    }

    /// Index of the mirror image of joint `i`: its pair, or itself for joints
    /// on the sagittal plane.
    pub fn mirror_index(&self, i: usize) -> usize {
        self.joints[i].symmetric_pair.unwrap_or(i)
    }

    /// Returns a copy with new rest offsets (same topology).
    pub fn with_rest_offsets(&self, offsets: &[Vector3<f64>]) -> Result<Self> {
        if offsets.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: offsets.len(),
                context: "rest offsets",
            });
        }
        let mut out = self.clone();
        for (j, o) in out.joints.iter_mut().zip(offsets) {
            j.rest_offset = *o;
        }
        Ok(out)
    }

    /// Returns a copy with every rest offset multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for j in &mut out.joints {
            j.rest_offset *= factor;
        }
        out
    }

    pub fn rest_lengths(&self) -> Vec<f64> {
        self.joints[1..].iter().map(|j| j.rest_offset.norm()).collect()
    }

    /// Rest-pose joint positions with the root at the origin.
    pub fn rest_positions(&self) -> Vec<Vector3<f64>> {
        let mut out: Vec<Vector3<f64>> = Vec::with_capacity(self.len());
        for (i, j) in self.joints.iter().enumerate() {
            let p = match j.parent {
                Some(p) => out[p] + j.rest_offset,
                None => {
                    debug_assert_eq!(i, 0);
                    Vector3::zeros()
                }
            };
            out.push(p);
        }
        out
    }
}

/// World transforms and positions of every joint for one pose.
#[derive(Clone, Debug)]
pub struct Kinematics {
    pub world: Vec<Isometry3<f64>>,
    pub positions: Vec<Vector3<f64>>,
}

/// Computes world transforms of all joints.
///
/// The root's world transform is `T(root_translation) * R(root_rotation) *
/// R(q_0)`; every other joint is `parent * T(rest_offset + t) * R(q)`, where
/// `t` is the joint's translation (zero when it has no translation DOF).
pub fn forward_kinematics(skeleton: &Skeleton, pose: &Pose) -> Result<Kinematics> {
    pose.check(skeleton)?;
    let n = skeleton.len();
    let mut world: Vec<Isometry3<f64>> = Vec::with_capacity(n);
    let mut slot = 0;
    for (i, joint) in skeleton.joints.iter().enumerate() {
        let local_rot = pose.joint_rotations[i];
        let w = match joint.parent {
            None => Isometry3::from_parts(
                Translation3::from(pose.root_translation),
                pose.root_rotation * local_rot,
            ),
            Some(p) => {
                let mut offset = joint.rest_offset;
                if joint.translation {
                    offset += pose.joint_translations[slot];
                    slot += 1;
                }
                world[p] * Isometry3::from_parts(Translation3::from(offset), local_rot)
            }
        };
        world.push(w);
    }
    let positions = world.iter().map(|w| w.translation.vector).collect();
    Ok(Kinematics { world, positions })
}

/// Convenience wrapper returning only joint positions.
pub fn joint_positions(skeleton: &Skeleton, pose: &Pose) -> Result<Vec<Vector3<f64>>> {
    forward_kinematics(skeleton, pose).map(|k| k.positions)
}

/// Reflects a pose across the sagittal plane and swaps left/right joints.
///
/// World positions of the result are the `x`-reflection of the input's, with
/// joint identities exchanged through the symmetric pair table.
pub fn mirror_pose(skeleton: &Skeleton, pose: &Pose) -> Result<Pose> {
    pose.check(skeleton)?;
    for joint in &skeleton.joints {
        if joint.symmetric_pair.is_none() && joint.rest_offset.x.abs() > 1e-9 {
            return Err(Error::MissingPair(joint.name.clone()));
        }
    }
    let reflect = |v: &Vector3<f64>| Vector3::new(-v.x, v.y, v.z);
    let joint_rotations = (0..skeleton.len())
        .map(|i| mirror_quaternion(&pose.joint_rotations[skeleton.mirror_index(i)]))
        .collect();
    let slots: HashMap<usize, usize> = skeleton.translating.iter().enumerate().map(|(s, &j)| (j, s)).collect();
    let mut joint_translations = Vec::with_capacity(pose.joint_translations.len());
    for &j in &skeleton.translating {
        let m = skeleton.mirror_index(j);
        let src = slots
            .get(&m)
            .ok_or_else(|| Error::MissingPair(skeleton.joints[j].name.clone()))?;
        joint_translations.push(reflect(&pose.joint_translations[*src]));
    }
    Ok(Pose::new(
        mirror_quaternion(&pose.root_rotation),
        reflect(&pose.root_translation),
        joint_rotations,
        joint_translations,
    ))
}

/// Length of every bone, indexed by child joint minus one (the root has no
/// bone).
pub fn bone_lengths(skeleton: &Skeleton, joints: &[Vector3<f64>]) -> Result<Vec<f64>> {
    if joints.len() != skeleton.len() {
        return Err(Error::Dimension {
            expected: skeleton.len(),
            got: joints.len(),
            context: "joint positions",
        });
    }
    Ok(skeleton.joints[1..]
        .iter()
        .enumerate()
        .map(|(k, j)| (joints[k + 1] - joints[j.parent.expect("non-root")]).norm())
        .collect())
}
