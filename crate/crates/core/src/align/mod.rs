//! Mesh to point-cloud correspondence with a normal-angle gate, and rigid
//! refinement of the root transform against a depth point cloud.

mod kdtree;

pub use kdtree::KdTree;

use std::collections::HashSet;
use std::str::FromStr;

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{DepthImage, Mask, PointCloud};
use crate::error::{Error, Result};

/// Default normal-angle gate in degrees.
pub const DEFAULT_ANGLE_DEG: f64 = 70.0;

/// Area-weighted vertex normals. Vertices with no incident area get a zero
/// vector; see [`is_flagged`].
pub fn vertex_normals(vertices: &[Vector3<f64>], triangles: &[[usize; 3]]) -> Vec<Vector3<f64>> {
    let mut acc = vec![Vector3::zeros(); vertices.len()];
    for t in triangles {
        let [a, b, c] = t.map(|i| vertices[i]);
        // |cross| is twice the triangle area.
        let n = (b - a).cross(&(c - a));
        for &i in t {
            acc[i] += n;
        }
    }
    acc.into_iter()
        .map(|n| n.try_normalize(1e-300).unwrap_or_else(Vector3::zeros))
        .collect()
}

/// True for the zero normal used to flag vertices without incident area.
pub fn is_flagged(normal: &Vector3<f64>) -> bool {
    normal.norm_squared() == 0.0
}

/// Points with unit normals.
#[derive(Clone, Copy, Debug)]
pub struct Oriented<'a> {
    pub points: &'a [Vector3<f64>],
    pub normals: &'a [Vector3<f64>],
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSet {
    /// `(source index, target index)`; each source index at most once.
    pub pairs: Vec<(usize, usize)>,
    pub mutual: bool,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn reversed(&self) -> MatchSet {
        MatchSet {
            pairs: self.pairs.iter().map(|&(i, j)| (j, i)).collect(),
            mutual: self.mutual,
        }
    }
}

/// Angle between two unit normals in degrees.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Nearest target for every source point, kept when the normals differ by
/// less than `angle_threshold_deg`. A threshold of 180 or more disables the
/// gate.
pub fn make_matches(source: Oriented, target: Oriented, angle_threshold_deg: f64) -> MatchSet {
    let tree = KdTree::new(target.points);
    let gate = angle_threshold_deg < 180.0;
    let pairs = source
        .points
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let (j, _) = tree.nearest(p)?;
            if gate {
                let (a, b) = (&source.normals[i], &target.normals[j]);
                if is_flagged(a) || is_flagged(b) || angle_between(a, b) >= angle_threshold_deg {
                    return None;
                }
            }
            Some((i, j))
        })
        .collect();
    MatchSet { pairs, mutual: false }
}

/// Pairs of `m1` (source to target) whose reverse appears in `m2` (target to
/// source).
pub fn mutual_matches(m1: &MatchSet, m2: &MatchSet) -> MatchSet {
    let back: HashSet<(usize, usize)> = m2.pairs.iter().copied().collect();
    MatchSet {
        pairs: m1
            .pairs
            .iter()
            .copied()
            .filter(|&(i, j)| back.contains(&(j, i)))
            .collect(),
        mutual: true,
    }
}

/// Weighted least-squares rigid transform taking `src` onto `dst`.
pub fn rigid_fit(src: &[Vector3<f64>], dst: &[Vector3<f64>], weights: &[f64]) -> Result<Isometry3<f64>> {
    if src.len() != dst.len() || src.len() != weights.len() {
        return Err(Error::Dimension {
            expected: src.len(),
            got: dst.len().min(weights.len()),
            context: "rigid fit correspondences",
        });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Empty("weighted correspondences"));
    }
    let mu_s = src.iter().zip(weights).map(|(p, w)| p * *w).sum::<Vector3<f64>>() / total;
    let mu_d = dst.iter().zip(weights).map(|(p, w)| p * *w).sum::<Vector3<f64>>() / total;
    let mut cov = Matrix3::zeros();
    for ((s, d), w) in src.iter().zip(dst).zip(weights) {
        cov += (d - mu_d) * (s - mu_s).transpose() * *w;
    }
    let rotation = rotation_from_covariance(&cov);
    let translation = mu_d - rotation * mu_s;
    Ok(Isometry3::from_parts(Translation3::from(translation), rotation))
}

/// Proper rotation maximizing `trace(R^T cov)`.
pub(crate) fn rotation_from_covariance(cov: &Matrix3<f64>) -> UnitQuaternion<f64> {
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        let k = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .expect("three singular values");
        s[(k, k)] = -1.0;
    }
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(u * s * v_t))
}

/// How correspondences are built during [`refine_root`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchPolicy {
    /// Both match directions, one round.
    Once,
    /// Both match directions, rounds repeated while the error keeps dropping.
    Repeat,
    /// Mutual matches only, one round.
    #[default]
    MutualOnce,
    /// Mutual matches only, repeated rounds.
    MutualRepeat,
}

impl MatchPolicy {
    pub fn is_mutual(self) -> bool {
        matches!(self, MatchPolicy::MutualOnce | MatchPolicy::MutualRepeat)
    }

    pub fn repeats(self) -> bool {
        matches!(self, MatchPolicy::Repeat | MatchPolicy::MutualRepeat)
    }
}

impl FromStr for MatchPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "once" => Ok(MatchPolicy::Once),
            "repeat" => Ok(MatchPolicy::Repeat),
            "mutual-once" => Ok(MatchPolicy::MutualOnce),
            "mutual-repeat" => Ok(MatchPolicy::MutualRepeat),
            other => Err(Error::InvalidArgument(format!(
                "unknown match policy {other:?} (expected once, repeat, mutual-once or mutual-repeat)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub policy: MatchPolicy,
    pub max_rounds: usize,
    /// Minimum relative drop of the mean matched distance to start another
    /// round.
    pub improvement: f64,
    pub angle_threshold_deg: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            policy: MatchPolicy::default(),
            max_rounds: 3,
            improvement: 0.05,
            angle_threshold_deg: DEFAULT_ANGLE_DEG,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundStat {
    pub matches: usize,
    pub residual_before: f64,
    pub residual_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    /// Refined root transform, `correction * current`.
    pub transform: Isometry3<f64>,
    /// Rigid correction applied to the mesh in the cloud's frame.
    pub correction: Isometry3<f64>,
    /// Accepted rounds only.
    pub rounds: Vec<RoundStat>,
    pub diagnostic: Option<String>,
}

/// `(mesh index, cloud index)` pairs for the policy.
fn correspondences(mesh: Oriented, cloud: Oriented, config: &RefineConfig) -> Vec<(usize, usize)> {
    let m1 = make_matches(mesh, cloud, config.angle_threshold_deg);
    let m2 = make_matches(cloud, mesh, config.angle_threshold_deg);
    if config.policy.is_mutual() {
        return mutual_matches(&m1, &m2).pairs;
    }
    let mut pairs = m1.pairs;
    pairs.extend(m2.pairs.iter().map(|&(c, m)| (m, c)));
    pairs
}

fn mean_residual(mesh: &[Vector3<f64>], cloud: &[Vector3<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| (mesh[i] - cloud[j]).norm()).sum::<f64>() / pairs.len() as f64
}

fn moved(
    t: &Isometry3<f64>,
    points: &[Vector3<f64>],
    normals: &[Vector3<f64>],
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    (
        points.iter().map(|p| t.transform_point(&(*p).into()).coords).collect(),
        normals.iter().map(|n| t.rotation * n).collect(),
    )
}

/// Rigidly aligns the posed mesh (vertices and normals, in the cloud's frame)
/// to the cloud. Each round matches, solves the rigid transform in closed
/// form and re-matches; a round is kept only if the mean matched distance
/// drops. One-shot policies run a single round.
pub fn refine_root(
    mesh: Oriented,
    cloud: Oriented,
    current: &Isometry3<f64>,
    config: &RefineConfig,
) -> Result<Refinement> {
    if mesh.points.len() != mesh.normals.len() || cloud.points.len() != cloud.normals.len() {
        return Err(Error::Dimension {
            expected: mesh.points.len(),
            got: mesh.normals.len(),
            context: "points vs normals",
        });
    }
    let rounds_allowed = if config.policy.repeats() { config.max_rounds } else { 1 };
    let mut correction = Isometry3::identity();
    let mut rounds = Vec::new();
    let mut diagnostic = None;
    let (mut pts, mut nrm) = (mesh.points.to_vec(), mesh.normals.to_vec());
    let mut pairs = correspondences(
        Oriented {
            points: &pts,
            normals: &nrm,
        },
        cloud,
        config,
    );
    if pairs.is_empty() {
        diagnostic = Some("no correspondences; transform unchanged".to_string());
    }
    while !pairs.is_empty() && rounds.len() < rounds_allowed {
        let before = mean_residual(&pts, cloud.points, &pairs);
        if before == 0.0 {
            // Already aligned.
            rounds.push(RoundStat {
                matches: pairs.len(),
                residual_before: 0.0,
                residual_after: 0.0,
            });
            break;
        }
        let src: Vec<_> = pairs.iter().map(|&(i, _)| pts[i]).collect();
        let dst: Vec<_> = pairs.iter().map(|&(_, j)| cloud.points[j]).collect();
        let step = rigid_fit(&src, &dst, &vec![1.0; src.len()])?;
        let (next_pts, next_nrm) = moved(&step, &pts, &nrm);
        let next_pairs = correspondences(
            Oriented {
                points: &next_pts,
                normals: &next_nrm,
            },
            cloud,
            config,
        );
        if next_pairs.is_empty() {
            diagnostic = Some("correspondences lost after update; round rejected".to_string());
            break;
        }
        let after = mean_residual(&next_pts, cloud.points, &next_pairs);
        if !(after < before) {
            break;
        }
        correction = step * correction;
        rounds.push(RoundStat {
            matches: pairs.len(),
            residual_before: before,
            residual_after: after,
        });
        pts = next_pts;
        nrm = next_nrm;
        pairs = next_pairs;
        if (before - after) / before < config.improvement {
            break;
        }
    }
    Ok(Refinement {
        transform: correction * current,
        correction,
        rounds,
        diagnostic,
    })
}

/// Camera-space points of the masked depth pixels with normals estimated
/// from neighbouring pixels and oriented towards the camera. Pixels without
/// a valid neighbour pair get a zero (flagged) normal.
pub fn cloud_with_normals(image: &DepthImage, mask: &Mask) -> Result<(PointCloud, Vec<Vector3<f64>>)> {
    let cloud = crate::camera::depth_to_pointcloud(image, mask)?;
    let (w, h) = (image.depth.width, image.depth.height);
    let point_at = |x: usize, y: usize| -> Option<Vector3<f64>> {
        let d = image.depth.get(x, y) as f64;
        if d > 0.0 && mask.get(x, y) {
            image.camera.backproject(&Vector2::new(x as f64, y as f64), d).ok()
        } else {
            None
        }
    };
    let normals = cloud
        .pixels
        .iter()
        .zip(&cloud.points)
        .map(|(&(x, y), p)| {
            let du = (x + 1 < w)
                .then(|| point_at(x + 1, y))
                .flatten()
                .map(|q| q - p)
                .or_else(|| (x > 0).then(|| point_at(x - 1, y)).flatten().map(|q| p - q));
            let dv = (y + 1 < h)
                .then(|| point_at(x, y + 1))
                .flatten()
                .map(|q| q - p)
                .or_else(|| (y > 0).then(|| point_at(x, y - 1)).flatten().map(|q| p - q));
            match (du, dv) {
                (Some(a), Some(b)) => {
                    let n = a.cross(&b).try_normalize(1e-12).unwrap_or_else(Vector3::zeros);
                    if n.dot(p) > 0.0 {
                        -n
                    } else {
                        n
                    }
                }
                _ => Vector3::zeros(),
            }
        })
        .collect();
    Ok((cloud, normals))
}
