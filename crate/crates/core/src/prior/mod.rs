//! Hierarchical GPLVM pose prior.

mod dedup;
mod fit;
mod gplvm;
mod kmeans;
mod layout;
mod tree;

#[cfg(test)]
pub(crate) use tree::tests as tree_tests;
mod weights;

pub use dedup::{dedup_indices, dedup_poses, TrainingSet};
pub use fit::{fit_loss, FitConfig, FitResult, FitTarget, Fitter, DEFAULT_LAMBDA_2D};
pub use gplvm::{train_node, GplvmNode, Normalization, RbfKernel, TrainConfig, JITTER};
pub use kmeans::kmeans;
pub use layout::{LayoutEntry, Leaf, PoseLayout};
pub use tree::{train_tree, LatentCoords, LatentTree, TreeDims};
pub use weights::{compute_weights, static_weights, JointWeights};
