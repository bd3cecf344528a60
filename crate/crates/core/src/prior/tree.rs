use std::path::Path;

use nalgebra::{DMatrix, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dedup::TrainingSet;
use super::gplvm::{train_node, GplvmNode, Normalization, RbfKernel, TrainConfig};
use super::layout::{Leaf, PoseLayout};
use crate::archive::{read_archive, write_archive, BlobReader, BlobRef, BlobWriter};
use crate::error::{Error, Result};
use crate::skeleton::{joint_positions, Pose, Skeleton, SkeletonFile};

/// Latent dimensionality per tree level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeDims {
    pub root: usize,
    pub legs: usize,
    pub leaf: usize,
}

impl Default for TreeDims {
    fn default() -> Self {
        TreeDims {
            root: 3,
            legs: 3,
            leaf: 2,
        }
    }
}

impl TreeDims {
    fn max(&self) -> usize {
        self.root.max(self.legs).max(self.leaf)
    }
}

/// Leaves generated by the leg aggregate, in its data order.
const LEG_LEAVES: [Leaf; 4] = [Leaf::BackLeft, Leaf::FrontLeft, Leaf::BackRight, Leaf::FrontRight];

/// One latent point per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCoords {
    pub root: Vec<f64>,
    pub legs: Vec<f64>,
    /// In [`Leaf::ALL`] order.
    pub leaves: Vec<Vec<f64>>,
}

/// Hierarchical GPLVM over the pose vector.
///
/// The root generates the latents of tail, legs aggregate, spine and head
/// (in that order); the legs aggregate generates the four leg leaves; each
/// leaf generates its column block of the pose vector.
#[derive(Clone, Debug)]
pub struct LatentTree {
    skeleton: Skeleton,
    layout: PoseLayout,
    dims: TreeDims,
    root: GplvmNode,
    legs: GplvmNode,
    leaves: Vec<GplvmNode>,
}

fn concat_latents(nodes: &[&GplvmNode]) -> DMatrix<f64> {
    let f = nodes[0].frames();
    let cols: usize = nodes.iter().map(|n| n.latent_dim()).sum();
    let mut out = DMatrix::zeros(f, cols);
    let mut c = 0;
    for n in nodes {
        out.view_mut((0, c), (f, n.latent_dim())).copy_from(&n.latent);
        c += n.latent_dim();
    }
    out
}

/// Trains every node bottom-up. Leaves train in parallel.
pub fn train_tree(skeleton: &Skeleton, set: &TrainingSet, dims: TreeDims, config: &TrainConfig) -> Result<LatentTree> {
    let layout = PoseLayout::new(skeleton)?;
    let f = set.len();
    if f == 0 {
        return Err(Error::Empty("training set"));
    }
    if f < 2 * dims.max() {
        return Err(Error::InvalidArgument(format!(
            "{f} training frames, need at least {} for latent dimension {}",
            2 * dims.max(),
            dims.max()
        )));
    }
    for v in &set.vectors {
        if v.len() != layout.dim() {
            return Err(Error::Dimension {
                expected: layout.dim(),
                got: v.len(),
                context: "pose vector",
            });
        }
    }
    let y = DMatrix::from_fn(f, layout.dim(), |i, j| set.vectors[i][j]);
    let leaves = Leaf::ALL
        .par_iter()
        .map(|&leaf| {
            let (s, e) = layout.block(leaf);
            train_node(&y.columns(s, e - s).into_owned(), dims.leaf, config)
        })
        .collect::<Result<Vec<_>>>()?;
    let leg_nodes: Vec<&GplvmNode> = LEG_LEAVES.iter().map(|l| &leaves[l.index()]).collect();
    let legs = train_node(&concat_latents(&leg_nodes), dims.legs, config)?;
    let root_data = concat_latents(&[
        &leaves[Leaf::Tail.index()],
        &legs,
        &leaves[Leaf::Spine.index()],
        &leaves[Leaf::Head.index()],
    ]);
    let root = train_node(&root_data, dims.root, config)?;
    log::info!(
        "event=train_tree frames={f} root_ll={:.3} legs_ll={:.3}",
        root.log_likelihood,
        legs.log_likelihood
    );
    Ok(LatentTree {
        skeleton: skeleton.clone(),
        layout,
        dims,
        root,
        legs,
        leaves,
    })
}

impl LatentTree {
    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    /// Same prior driving a skeleton of identical topology but other bone
    /// lengths. The model holds rotations only, so nothing is retrained.
    pub fn with_skeleton(&self, skeleton: &Skeleton) -> Result<LatentTree> {
        let same = skeleton.len() == self.skeleton.len()
            && skeleton
                .joints()
                .iter()
                .zip(self.skeleton.joints())
                .all(|(a, b)| a.name == b.name && a.parent == b.parent && a.dof() == b.dof());
        if !same {
            return Err(Error::Skeleton(format!(
                "skeleton `{}` does not match the prior's topology",
                skeleton.name
            )));
        }
        let mut out = self.clone();
        out.skeleton = skeleton.clone();
        Ok(out)
    }

    pub fn layout(&self) -> &PoseLayout {
        &self.layout
    }

    pub fn dims(&self) -> TreeDims {
        self.dims
    }

    pub fn frames(&self) -> usize {
        self.root.frames()
    }

    pub fn root_node(&self) -> &GplvmNode {
        &self.root
    }

    pub fn legs_node(&self) -> &GplvmNode {
        &self.legs
    }

    pub fn leaf_node(&self, leaf: Leaf) -> &GplvmNode {
        &self.leaves[leaf.index()]
    }

    /// Root latents of all training frames, `f x q_root`.
    pub fn root_latents(&self) -> &DMatrix<f64> {
        &self.root.latent
    }

    /// Stored latents of training frame `i` at every node.
    pub fn training_coords(&self, i: usize) -> LatentCoords {
        LatentCoords {
            root: self.root.latent_row(i),
            legs: self.legs.latent_row(i),
            leaves: self.leaves.iter().map(|n| n.latent_row(i)).collect(),
        }
    }

    /// Descendant coordinates generated from a root coordinate.
    pub fn children_from_root(&self, root: &[f64]) -> LatentCoords {
        let out = self.root.mean(root);
        let q = self.dims.leaf;
        let ql = self.dims.legs;
        let mut leaves = vec![Vec::new(); 7];
        leaves[Leaf::Tail.index()] = out[..q].to_vec();
        let legs = out[q..q + ql].to_vec();
        leaves[Leaf::Spine.index()] = out[q + ql..2 * q + ql].to_vec();
        leaves[Leaf::Head.index()] = out[2 * q + ql..3 * q + ql].to_vec();
        let leg_out = self.legs.mean(&legs);
        for (k, leaf) in LEG_LEAVES.iter().enumerate() {
            leaves[leaf.index()] = leg_out[k * q..(k + 1) * q].to_vec();
        }
        LatentCoords {
            root: root.to_vec(),
            legs,
            leaves,
        }
    }

    /// Pose vector generated by the leaf coordinates.
    pub fn pose_vector(&self, coords: &LatentCoords) -> Vec<f64> {
        let mut y = vec![0.0; self.layout.dim()];
        for leaf in Leaf::ALL {
            let (s, e) = self.layout.block(leaf);
            self.leaves[leaf.index()].mean_into(&coords.leaves[leaf.index()], &mut y[s..e]);
        }
        y
    }

    /// Builds the full pose from leaf coordinates and the root transform, and
    /// runs forward kinematics. `shoulders` overrides the generated shoulder
    /// translations when given (one per translation slot).
    pub fn decode_pose(
        &self,
        coords: &LatentCoords,
        root_rotation: UnitQuaternion<f64>,
        root_translation: Vector3<f64>,
        shoulders: Option<&[Vector3<f64>]>,
    ) -> (Pose, Vec<Vector3<f64>>) {
        let mut pose = Pose::identity(&self.skeleton);
        self.layout.decode_into(&self.pose_vector(coords), &mut pose);
        pose.root_rotation = root_rotation;
        pose.root_translation = root_translation;
        if let Some(t) = shoulders {
            for (dst, src) in pose.joint_translations.iter_mut().zip(t) {
                *dst = *src;
            }
        }
        pose.canonicalize();
        let joints = joint_positions(&self.skeleton, &pose).expect("pose built from the tree's skeleton");
        (pose, joints)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut blobs = BlobWriter::default();
        let mut node = |n: &GplvmNode| NodeRecord {
            kernel: n.kernel,
            bc_lengthscale: n.bc_lengthscale,
            log_likelihood: n.log_likelihood,
            iterations: n.iterations,
            latent: blobs.push(&n.latent),
            data: blobs.push(&n.data),
            bc_weights: blobs.push(&n.bc_weights),
            mean: blobs.push_vec(&n.normalization.mean),
            std: blobs.push_vec(&n.normalization.std),
        };
        let header = TreeHeader {
            kind: TREE_KIND.into(),
            skeleton: self.skeleton.to_file_record(),
            dims: self.dims,
            root: node(&self.root),
            legs: node(&self.legs),
            leaves: self.leaves.iter().map(&mut node).collect(),
        };
        write_archive(path, &header, &blobs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (header, blobs): (TreeHeader, BlobReader) = read_archive(path)?;
        if header.kind != TREE_KIND {
            return Err(Error::format(
                path,
                format!("expected a {TREE_KIND} archive, found {}", header.kind),
            ));
        }
        if header.leaves.len() != Leaf::ALL.len() {
            return Err(Error::format(path, format!("{} leaf nodes", header.leaves.len())));
        }
        let skeleton = Skeleton::from_file_record(header.skeleton)?;
        let layout = PoseLayout::new(&skeleton)?;
        let node = |r: &NodeRecord| -> Result<GplvmNode> {
            let mut n = GplvmNode {
                latent: blobs.matrix(&r.latent)?,
                kernel: r.kernel,
                normalization: Normalization {
                    mean: blobs.vec(&r.mean)?,
                    std: blobs.vec(&r.std)?,
                },
                bc_lengthscale: r.bc_lengthscale,
                bc_weights: blobs.matrix(&r.bc_weights)?,
                data: blobs.matrix(&r.data)?,
                alpha: DMatrix::zeros(0, 0),
                log_likelihood: r.log_likelihood,
                iterations: r.iterations,
            };
            n.refresh_alpha()?;
            Ok(n)
        };
        let tree = LatentTree {
            root: node(&header.root)?,
            legs: node(&header.legs)?,
            leaves: header.leaves.iter().map(node).collect::<Result<_>>()?,
            skeleton,
            layout,
            dims: header.dims,
        };
        tree.check_shapes().map_err(|d| Error::format(path, d))?;
        Ok(tree)
    }

    fn check_shapes(&self) -> std::result::Result<(), String> {
        let f = self.frames();
        let all = std::iter::once(&self.root)
            .chain(std::iter::once(&self.legs))
            .chain(&self.leaves);
        for n in all {
            if n.frames() != f || n.data.nrows() != f || n.bc_weights.shape() != (f, n.latent_dim()) {
                return Err("node frame counts disagree".into());
            }
            if n.normalization.mean.len() != n.data_dim() || n.normalization.std.len() != n.data_dim() {
                return Err("normalization width disagrees with data".into());
            }
        }
        let d = self.dims;
        if self.root.latent_dim() != d.root || self.legs.latent_dim() != d.legs {
            return Err("latent dimensions disagree with header".into());
        }
        if self.root.data_dim() != 3 * d.leaf + d.legs || self.legs.data_dim() != 4 * d.leaf {
            return Err("aggregate node widths disagree with header".into());
        }
        for leaf in Leaf::ALL {
            let (s, e) = self.layout.block(leaf);
            let n = &self.leaves[leaf.index()];
            if n.latent_dim() != d.leaf || n.data_dim() != e - s {
                return Err(format!("leaf {leaf:?} does not match the pose layout"));
            }
        }
        Ok(())
    }
}

const TREE_KIND: &str = "quadpose-prior";

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    kernel: RbfKernel,
    bc_lengthscale: f64,
    log_likelihood: f64,
    iterations: usize,
    latent: BlobRef,
    data: BlobRef,
    bc_weights: BlobRef,
    mean: BlobRef,
    std: BlobRef,
}

#[derive(Serialize, Deserialize)]
struct TreeHeader {
    kind: String,
    skeleton: SkeletonFile,
    dims: TreeDims,
    root: NodeRecord,
    legs: NodeRecord,
    leaves: Vec<NodeRecord>,
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::prior::dedup::TrainingSet;
    use crate::synthgen::{gait_sequence, GaitConfig};
    use std::sync::OnceLock;

    pub(crate) fn walk(frames: usize) -> (Skeleton, Vec<Pose>, TrainingSet) {
        let skel = Skeleton::dog();
        let layout = PoseLayout::new(&skel).unwrap();
        let poses = gait_sequence(
            &skel,
            &GaitConfig {
                frames,
                ..Default::default()
            },
        );
        let vectors: Vec<Vec<f64>> = poses.iter().map(|p| layout.encode(p)).collect();
        let kept = (0..frames).collect();
        (skel, poses, TrainingSet { vectors, kept })
    }

    /// Tree trained once on 100 gait frames, shared across tests.
    pub(crate) fn shared() -> &'static (Vec<Pose>, LatentTree) {
        static TREE: OnceLock<(Vec<Pose>, LatentTree)> = OnceLock::new();
        TREE.get_or_init(|| {
            let (skel, poses, set) = walk(100);
            let tree = train_tree(&skel, &set, TreeDims::default(), &TrainConfig::default()).unwrap();
            (poses, tree)
        })
    }

    fn height(skel: &Skeleton) -> f64 {
        let ys: Vec<f64> = skel.rest_positions().iter().map(|p| p.y).collect();
        let (lo, hi) = ys.iter().fold((f64::MAX, f64::MIN), |(a, b), &y| (a.min(y), b.max(y)));
        hi - lo
    }

    #[test]
    fn root_mean_reproduces_child_latents() {
        let (_, tree) = shared();
        let mut worst: f64 = 0.0;
        for i in 0..tree.frames() {
            let c = tree.children_from_root(&tree.root_node().latent_row(i));
            let t = tree.training_coords(i);
            let spread = tree.legs_node().latent.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            worst = worst.max(
                c.legs
                    .iter()
                    .zip(&t.legs)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
                    / spread,
            );
        }
        assert!(worst < 0.25, "worst relative child latent error {worst}");
    }

    #[test]
    fn decoding_root_latents_reproduces_training_poses() {
        let (poses, tree) = shared();
        let layout = tree.layout();
        let mut min_dot: f64 = 1.0;
        let mut joint_err = 0.0;
        for (i, pose) in poses.iter().enumerate() {
            let coords = tree.children_from_root(&tree.root_node().latent_row(i));
            let y = tree.pose_vector(&coords);
            let truth = layout.encode(pose);
            for e in layout.entries() {
                let r = e.rotation_col..e.rotation_col + 4;
                let n: f64 = y[r.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
                let dot: f64 = y[r.clone()].iter().zip(&truth[r]).map(|(a, b)| a * b).sum::<f64>() / n;
                min_dot = min_dot.min(dot.abs());
            }
            let (_, joints) = tree.decode_pose(&coords, pose.root_rotation, pose.root_translation, None);
            let gt = joint_positions(tree.skeleton(), pose).unwrap();
            joint_err += joints.iter().zip(&gt).map(|(a, b)| (a - b).norm()).sum::<f64>() / gt.len() as f64;
        }
        joint_err /= poses.len() as f64;
        assert!(min_dot >= 0.99, "min quaternion dot {min_dot}");
        let h = height(tree.skeleton());
        assert!(joint_err < 0.02 * h, "mean joint error {joint_err} vs height {h}");
    }

    #[test]
    fn identity_root_puts_root_joint_at_origin() {
        let (_, tree) = shared();
        let coords = tree.children_from_root(&[0.3, -1.0, 2.0]);
        let (_, joints) = tree.decode_pose(&coords, UnitQuaternion::identity(), Vector3::zeros(), None);
        assert_eq!(joints[0], Vector3::zeros());
    }

    #[test]
    fn tail_coords_move_only_tail_joints() {
        let (_, tree) = shared();
        let skel = tree.skeleton();
        let base = tree.training_coords(10);
        let mut moved = base.clone();
        moved.leaves[Leaf::Tail.index()][0] += 0.7;
        let (_, a) = tree.decode_pose(&base, UnitQuaternion::identity(), Vector3::zeros(), None);
        let (_, b) = tree.decode_pose(&moved, UnitQuaternion::identity(), Vector3::zeros(), None);
        let tail1 = skel.index_of("tail1").unwrap();
        let in_tail = |mut j: usize| loop {
            if j == tail1 {
                return true;
            }
            match skel.parent(j) {
                Some(p) => j = p,
                None => return false,
            }
        };
        let mut tail_moved = false;
        for j in 0..skel.len() {
            if in_tail(j) {
                tail_moved |= (a[j] - b[j]).norm() > 1e-6;
            } else {
                assert_eq!(a[j], b[j], "joint {j} moved");
            }
        }
        assert!(tail_moved);
    }

    #[test]
    fn archive_round_trip_is_exact() {
        let (_, tree) = shared();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prior.qpar");
        tree.save(&path).unwrap();
        let back = LatentTree::load(&path).unwrap();
        assert_eq!(back.dims(), tree.dims());
        let x = [0.1, 0.2, -0.3];
        assert_eq!(back.children_from_root(&x), tree.children_from_root(&x));
        let c = tree.training_coords(3);
        assert_eq!(back.pose_vector(&c), tree.pose_vector(&c));
    }

    #[test]
    fn minimal_two_frame_set_trains() {
        let (skel, _, set) = walk(40);
        let set = TrainingSet {
            vectors: vec![set.vectors[0].clone(), set.vectors[17].clone()],
            kept: vec![0, 17],
        };
        let dims = TreeDims {
            root: 1,
            legs: 1,
            leaf: 1,
        };
        let tree = train_tree(&skel, &set, dims, &TrainConfig::default()).unwrap();
        assert_eq!(tree.frames(), 2);
        assert!(train_tree(&skel, &set, TreeDims::default(), &TrainConfig::default()).is_err());
    }
}
