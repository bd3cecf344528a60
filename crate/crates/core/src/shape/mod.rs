//! Linear shape model over meshes, bone lengths and neutral rotations.

mod corpus;

use std::path::Path;

use nalgebra::{DMatrix, DVector, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub use corpus::{surrogate_corpus, surrogate_dog, ShapeExemplar};

use crate::archive::{read_archive, write_archive, BlobRef, BlobWriter};
use crate::error::{Error, Result};
use crate::linalg::thin_svd;
use crate::skeleton::{Skeleton, SkeletonFile, SkinWeights, SkinnedMesh};

/// Minimum cloud size accepted by [`estimate_scale`].
pub const MIN_SCALE_POINTS: usize = 100;

/// Which part of the shape vector a column belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Vertices,
    BoneLengths,
    Rotations,
}

impl Block {
    const ALL: [Block; 3] = [Block::Vertices, Block::BoneLengths, Block::Rotations];
}

/// Mean plus orthonormal principal directions over standardized shape
/// vectors.
#[derive(Clone, Debug)]
pub struct ShapeModel {
    template: Skeleton,
    triangles: Vec<[usize; 3]>,
    skin_weights: SkinWeights,
    /// Column counts per [`Block`].
    widths: [usize; 3],
    mean: DVector<f64>,
    /// Per-block divisor applied after centring.
    block_scale: [f64; 3],
    /// `D x k`, orthonormal columns sorted by variance.
    components: DMatrix<f64>,
    variances: Vec<f64>,
    exemplars: usize,
}

/// Output of [`ShapeModel::predict`].
#[derive(Clone, Debug)]
pub struct ShapePrediction {
    pub skeleton: Skeleton,
    pub mesh: SkinnedMesh,
    pub neutral: Vec<UnitQuaternion<f64>>,
    pub coefficients: Vec<f64>,
}

fn flatten(e: &ShapeExemplar) -> Vec<f64> {
    let mut v = Vec::with_capacity(e.mesh.vertices.len() * 3 + e.skeleton.len() * 5);
    v.extend(e.mesh.vertices.iter().flat_map(|p| [p.x, p.y, p.z]));
    v.extend(e.skeleton.rest_lengths());
    v.extend(e.neutral.iter().flat_map(|q| {
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        [q.i, q.j, q.k, q.w]
    }));
    v
}

/// Standardizes each block, then runs an SVD.
pub fn build_shape_model(corpus: &[ShapeExemplar]) -> Result<ShapeModel> {
    let first = corpus.first().ok_or(Error::Empty("shape corpus"))?;
    let joints = first.skeleton.len();
    for (i, e) in corpus.iter().enumerate() {
        if e.skeleton.len() != joints || e.neutral.len() != joints {
            return Err(Error::Mesh(format!("exemplar {i} has a different joint count")));
        }
        if e.mesh.triangles != first.mesh.triangles || e.mesh.vertices.len() != first.mesh.vertices.len() {
            return Err(Error::Mesh(format!("exemplar {i} does not share the mesh topology")));
        }
    }
    let widths = [first.mesh.vertices.len() * 3, joints - 1, joints * 4];
    let dim: usize = widths.iter().sum();
    let n = corpus.len();
    let rows: Vec<Vec<f64>> = corpus.iter().map(flatten).collect();
    let data = DMatrix::from_fn(n, dim, |i, j| rows[i][j]);
    let mean = DVector::from_fn(dim, |j, _| data.column(j).mean());
    let mut centred = data;
    for i in 0..n {
        for j in 0..dim {
            centred[(i, j)] -= mean[j];
        }
    }
    let mut block_scale = [1.0; 3];
    let mut start = 0;
    for (b, &w) in widths.iter().enumerate() {
        let block = centred.columns(start, w);
        let rms = (block.norm_squared() / (n * w) as f64).sqrt();
        if rms > 1e-12 {
            block_scale[b] = rms;
        }
        centred.columns_mut(start, w).unscale_mut(block_scale[b]);
        start += w;
    }

    let svd = thin_svd(&centred, 1e-7);
    let components = svd.v;
    let variances = svd.sigma.iter().map(|s| s * s / (n.max(2) - 1) as f64).collect();
    Ok(ShapeModel {
        template: first.skeleton.clone(),
        triangles: first.mesh.triangles.clone(),
        skin_weights: first.mesh.skin_weights.clone(),
        widths,
        mean,
        block_scale,
        components,
        variances,
        exemplars: n,
    })
}

impl ShapeModel {
    pub fn rank(&self) -> usize {
        self.components.ncols()
    }

    pub fn exemplars(&self) -> usize {
        self.exemplars
    }

    /// Variance along each component, descending.
    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Fraction of total variance captured by the first `k` components.
    pub fn explained(&self, k: usize) -> f64 {
        let total: f64 = self.variances.iter().sum();
        if total == 0.0 {
            return 1.0;
        }
        self.variances.iter().take(k).sum::<f64>() / total
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    fn range(&self, block: Block) -> (usize, usize) {
        let b = Block::ALL.iter().position(|&x| x == block).expect("known block");
        (self.widths[..b].iter().sum(), self.widths[b])
    }

    pub fn mean_bone_lengths(&self) -> Vec<f64> {
        let (s, w) = self.range(Block::BoneLengths);
        self.mean.rows(s, w).iter().copied().collect()
    }

    /// Shape vector in original units for the given coefficients.
    pub fn reconstruct(&self, coefficients: &[f64]) -> DVector<f64> {
        let k = coefficients.len().min(self.rank());
        let z = self.components.columns(0, k) * DVector::from_column_slice(&coefficients[..k]);
        let mut out = self.mean.clone();
        let mut start = 0;
        for (b, &w) in self.widths.iter().enumerate() {
            for j in start..start + w {
                out[j] += z[j] * self.block_scale[b];
            }
            start += w;
        }
        out
    }

    /// Coefficients of an exemplar under the first `k` components.
    pub fn project(&self, exemplar: &ShapeExemplar, k: usize) -> Vec<f64> {
        let v = flatten(exemplar);
        let mut z = DVector::zeros(v.len());
        let mut start = 0;
        for (b, &w) in self.widths.iter().enumerate() {
            for j in start..start + w {
                z[j] = (v[j] - self.mean[j]) / self.block_scale[b];
            }
            start += w;
        }
        (0..k.min(self.rank()))
            .map(|c| self.components.column(c).dot(&z))
            .collect()
    }

    /// Builds skeleton, mesh and neutral rotations from a shape vector.
    pub fn decode(&self, v: &DVector<f64>, coefficients: Vec<f64>) -> Result<ShapePrediction> {
        let (vs, vw) = self.range(Block::Vertices);
        let vertices = (0..vw / 3)
            .map(|i| Vector3::new(v[vs + 3 * i], v[vs + 3 * i + 1], v[vs + 3 * i + 2]))
            .collect();
        let (ls, _) = self.range(Block::BoneLengths);
        let offsets: Vec<Vector3<f64>> = (0..self.template.len())
            .map(|j| {
                let dir = self.template.joint(j).rest_offset;
                if j == 0 || dir.norm() == 0.0 {
                    return dir;
                }
                dir.normalize() * v[ls + j - 1].max(1e-3)
            })
            .collect();
        let skeleton = self.template.with_rest_offsets(&offsets)?;
        let (rs, _) = self.range(Block::Rotations);
        let neutral = (0..self.template.len())
            .map(|j| {
                let c = &v.as_slice()[rs + 4 * j..rs + 4 * j + 4];
                let q = Quaternion::new(c[3], c[0], c[1], c[2]);
                if q.norm() > 1e-12 {
                    UnitQuaternion::from_quaternion(q)
                } else {
                    UnitQuaternion::identity()
                }
            })
            .collect();
        let mesh = SkinnedMesh::new(
            vertices,
            self.triangles.clone(),
            self.skin_weights.clone(),
            skeleton.len(),
        )?;
        Ok(ShapePrediction {
            skeleton,
            mesh,
            neutral,
            coefficients,
        })
    }

    /// The mean animal.
    pub fn mean_shape(&self) -> Result<ShapePrediction> {
        self.decode(&self.reconstruct(&[]), Vec::new())
    }

    /// Least-squares fit of the first `n_components` coefficients to target
    /// bone lengths (mm, one per non-root joint).
    pub fn predict(&self, target_lengths: &[f64], n_components: usize) -> Result<ShapePrediction> {
        let known: Vec<Option<f64>> = target_lengths.iter().map(|&l| Some(l)).collect();
        if target_lengths.iter().all(|&l| l == 0.0) {
            return Err(Error::Degenerate("all target bone lengths are zero".into()));
        }
        self.predict_partial(&known, n_components)
    }

    /// As [`ShapeModel::predict`], fitting only the bones with a target.
    pub fn predict_partial(&self, target_lengths: &[Option<f64>], n_components: usize) -> Result<ShapePrediction> {
        let (ls, lw) = self.range(Block::BoneLengths);
        if target_lengths.len() != lw {
            return Err(Error::Dimension {
                expected: lw,
                got: target_lengths.len(),
                context: "target bone lengths",
            });
        }
        let rows: Vec<(usize, f64)> = target_lengths
            .iter()
            .enumerate()
            .filter_map(|(j, l)| l.map(|l| (j, l)))
            .collect();
        if rows.is_empty() {
            return Err(Error::Degenerate("no target bone lengths".into()));
        }
        if let Some((_, l)) = rows.iter().find(|(_, l)| !l.is_finite()) {
            return Err(Error::InvalidArgument(format!("bone length {l} is not finite")));
        }
        if n_components > self.rank() {
            return Err(Error::InvalidArgument(format!(
                "{n_components} components requested, model rank is {}",
                self.rank()
            )));
        }
        let scale = self.block_scale[1];
        let b = DVector::from_iterator(rows.len(), rows.iter().map(|&(j, l)| (l - self.mean[ls + j]) / scale));
        let coefficients: Vec<f64> = if n_components == 0 {
            Vec::new()
        } else {
            let a = DMatrix::from_fn(rows.len(), n_components, |r, c| self.components[(ls + rows[r].0, c)]);
            let svd = a.svd(true, true);
            let tol = 1e-12 * svd.singular_values.max().max(1e-300);
            svd.solve(&b, tol)
                .map_err(|e| Error::Numerical(e.into()))?
                .iter()
                .copied()
                .collect()
        };
        let v = self.reconstruct(&coefficients);
        self.decode(&v, coefficients)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut blobs = BlobWriter::default();
        let header = ShapeHeader {
            kind: SHAPE_KIND.into(),
            skeleton: self.template.to_file_record(),
            triangles: self.triangles.clone(),
            skin_weights: self.skin_weights.clone(),
            widths: self.widths,
            block_scale: self.block_scale,
            variances: self.variances.clone(),
            exemplars: self.exemplars,
            mean: blobs.push_vec(self.mean.as_slice()),
            components: blobs.push(&self.components),
        };
        write_archive(path, &header, &blobs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (h, blobs) = read_archive::<ShapeHeader>(path)?;
        if h.kind != SHAPE_KIND {
            return Err(Error::format(
                path,
                format!("expected a {SHAPE_KIND} archive, found {}", h.kind),
            ));
        }
        let template = Skeleton::from_file_record(h.skeleton)?;
        let mean = DVector::from_vec(blobs.vec(&h.mean)?);
        let components = blobs.matrix(&h.components)?;
        let dim: usize = h.widths.iter().sum();
        if mean.len() != dim
            || components.nrows() != dim
            || components.ncols() != h.variances.len()
            || h.widths[1] + 1 != template.len()
            || h.widths[0] != 3 * h.skin_weights.len()
        {
            return Err(Error::format(path, "block sizes disagree with stored matrices"));
        }
        Ok(ShapeModel {
            template,
            triangles: h.triangles,
            skin_weights: h.skin_weights,
            widths: h.widths,
            mean,
            block_scale: h.block_scale,
            components,
            variances: h.variances,
            exemplars: h.exemplars,
        })
    }
}

const SHAPE_KIND: &str = "quadpose-shape";

#[derive(Serialize, Deserialize)]
struct ShapeHeader {
    kind: String,
    skeleton: SkeletonFile,
    triangles: Vec<[usize; 3]>,
    skin_weights: SkinWeights,
    widths: [usize; 3],
    block_scale: [f64; 3],
    variances: Vec<f64>,
    exemplars: usize,
    mean: BlobRef,
    components: BlobRef,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn robust_extent(points: &[Vector3<f64>], up: &Vector3<f64>) -> f64 {
    let mut h: Vec<f64> = points.iter().map(|p| p.dot(up)).collect();
    h.sort_by(f64::total_cmp);
    percentile(&h, 0.9) - percentile(&h, 0.1)
}

/// Ratio of the cloud's 10th-90th percentile extent along `up` to the
/// mesh's extent along its own `y` axis.
pub fn estimate_scale(points: &[Vector3<f64>], up: &Vector3<f64>, mesh: &SkinnedMesh) -> Result<f64> {
    if points.len() < MIN_SCALE_POINTS {
        return Err(Error::InvalidArgument(format!(
            "{} points, need at least {MIN_SCALE_POINTS} to estimate scale",
            points.len()
        )));
    }
    let up = up
        .try_normalize(1e-12)
        .ok_or_else(|| Error::InvalidArgument("up axis must be non-zero".into()))?;
    let model = robust_extent(&mesh.vertices, &Vector3::y());
    if !(model > 0.0) {
        return Err(Error::Degenerate("model mesh has no height".into()));
    }
    Ok(robust_extent(points, &up) / model)
}
