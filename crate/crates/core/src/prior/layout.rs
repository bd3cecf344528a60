//! Flattened pose vectors for the prior.
//!
//! Only non-root, non-ear joints with a rotation DOF are modelled. Each gets
//! four quaternion columns `[x, y, z, w]`; translating joints (the shoulders)
//! add three more. Columns are grouped into the seven leaf blocks of the tree.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{mirror_pose, JointGroup, Pose, RotationDof, Skeleton};

/// Leaf nodes in tree order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Leaf {
    Tail,
    BackLeft,
    FrontLeft,
    BackRight,
    FrontRight,
    Spine,
    Head,
}

impl Leaf {
    pub const ALL: [Leaf; 7] = [
        Leaf::Tail,
        Leaf::BackLeft,
        Leaf::FrontLeft,
        Leaf::BackRight,
        Leaf::FrontRight,
        Leaf::Spine,
        Leaf::Head,
    ];

    /// Joint whose subtree forms the leaf; the spine collects what is left.
    fn anchor(self) -> Option<&'static str> {
        match self {
            Leaf::Tail => Some("tail1"),
            Leaf::BackLeft => Some("l_hip"),
            Leaf::FrontLeft => Some("l_shoulder"),
            Leaf::BackRight => Some("r_hip"),
            Leaf::FrontRight => Some("r_shoulder"),
            Leaf::Spine => None,
            Leaf::Head => Some("neck1"),
        }
    }

    pub fn index(self) -> usize {
        Leaf::ALL.iter().position(|&l| l == self).expect("listed")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayoutEntry {
    pub joint: usize,
    pub leaf: Leaf,
    /// First of four quaternion columns.
    pub rotation_col: usize,
    /// First of three translation columns and the joint's translation slot.
    pub translation: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseLayout {
    entries: Vec<LayoutEntry>,
    /// Column range `[start, end)` per leaf, in [`Leaf::ALL`] order.
    blocks: [(usize, usize); 7],
    dim: usize,
}

impl PoseLayout {
    pub fn new(skeleton: &Skeleton) -> Result<Self> {
        let anchors: Vec<(Leaf, usize)> = Leaf::ALL
            .iter()
            .filter_map(|&leaf| {
                let name = leaf.anchor()?;
                Some(
                    skeleton
                        .index_of(name)
                        .map(|j| (leaf, j))
                        .ok_or_else(|| Error::Skeleton(format!("prior layout needs joint {name:?}"))),
                )
            })
            .collect::<Result<_>>()?;
        let leaf_of = |j: usize| {
            let mut cur = Some(j);
            while let Some(c) = cur {
                if let Some(&(leaf, _)) = anchors.iter().find(|&&(_, a)| a == c) {
                    return leaf;
                }
                cur = skeleton.parent(c);
            }
            Leaf::Spine
        };
        let slot_of = |j: usize| skeleton.translating_joints().iter().position(|&t| t == j);
        let modelled: Vec<usize> = (1..skeleton.len())
            .filter(|&j| {
                let def = skeleton.joint(j);
                def.group != JointGroup::Ear && def.rotation != RotationDof::Fixed
            })
            .collect();

        let mut entries = Vec::new();
        let mut blocks = [(0, 0); 7];
        let mut col = 0;
        for leaf in Leaf::ALL {
            let start = col;
            for &j in modelled.iter().filter(|&&j| leaf_of(j) == leaf) {
                let rotation_col = col;
                col += 4;
                let translation = if skeleton.joint(j).translation {
                    let slot = slot_of(j).expect("translating joint has a slot");
                    col += 3;
                    Some((rotation_col + 4, slot))
                } else {
                    None
                };
                entries.push(LayoutEntry {
                    joint: j,
                    leaf,
                    rotation_col,
                    translation,
                });
            }
            if col == start {
                return Err(Error::Skeleton(format!("prior leaf {leaf:?} has no modelled joints")));
            }
            blocks[leaf.index()] = (start, col);
        }
        Ok(PoseLayout {
            entries,
            blocks,
            dim: col,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn block(&self, leaf: Leaf) -> (usize, usize) {
        self.blocks[leaf.index()]
    }

    /// Degrees of freedom represented: rotation DOF of modelled joints plus
    /// their translations, plus the root's six.
    pub fn dof(&self, skeleton: &Skeleton) -> usize {
        6 + self
            .entries
            .iter()
            .map(|e| skeleton.joint(e.joint).rotation.count() + if e.translation.is_some() { 3 } else { 0 })
            .sum::<usize>()
    }

    pub fn encode(&self, pose: &Pose) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        for e in &self.entries {
            let q = pose.joint_rotations[e.joint];
            let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
            y[e.rotation_col..e.rotation_col + 4].copy_from_slice(&[q.i, q.j, q.k, q.w]);
            if let Some((c, slot)) = e.translation {
                let t = pose.joint_translations[slot];
                y[c..c + 3].copy_from_slice(&[t.x, t.y, t.z]);
            }
        }
        y
    }

    /// Writes the vector's rotations (renormalized) and translations into
    /// `pose`; other joints are left untouched.
    pub fn decode_into(&self, y: &[f64], pose: &mut Pose) {
        for e in &self.entries {
            let c = &y[e.rotation_col..e.rotation_col + 4];
            let q = Quaternion::new(c[3], c[0], c[1], c[2]);
            pose.joint_rotations[e.joint] = if q.norm() > 1e-12 {
                UnitQuaternion::from_quaternion(q)
            } else {
                UnitQuaternion::identity()
            };
            if let Some((c, slot)) = e.translation {
                pose.joint_translations[slot] = Vector3::new(y[c], y[c + 1], y[c + 2]);
            }
        }
    }

    /// Pose vector of the sagittal mirror image.
    pub fn mirror(&self, skeleton: &Skeleton, y: &[f64]) -> Result<Vec<f64>> {
        let mut pose = Pose::identity(skeleton);
        self.decode_into(y, &mut pose);
        Ok(self.encode(&mirror_pose(skeleton, &pose)?))
    }

    /// Summed per-bone quaternion dissimilarity `sum(1 - |q_a . q_b|)`.
    pub fn dissimilarity(&self, a: &[f64], b: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                let r = e.rotation_col..e.rotation_col + 4;
                let dot: f64 = a[r.clone()].iter().zip(&b[r]).map(|(x, y)| x * y).sum();
                1.0 - dot.abs().min(1.0)
            })
            .sum()
    }

    /// Translation slots written by the layout, in column order.
    pub fn translation_slots(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter_map(|e| e.translation.map(|(_, s)| s))
            .collect()
    }
}
