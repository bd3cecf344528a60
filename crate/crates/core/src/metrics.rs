//! Pose error metrics: MPJPE, Procrustes-aligned MPJPE, 2D and 3D PCK, and
//! per-body-part reports.

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{JointGroup, Skeleton};

/// Default PCK-2D fraction of the square root of the mask area.
pub const PCK2D_ALPHA: f64 = 0.05;
/// Length the head bone is scaled to before 3D PCK and reported MPJPE.
pub const HEAD_BONE_UNITS: f64 = 2.0;

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension {
            expected: b,
            got: a,
            context: "predicted vs ground-truth joints",
        });
    }
    if a == 0 {
        return Err(Error::Empty("joint set"));
    }
    Ok(())
}

fn mean_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64
}

/// Mean per-joint position error. With `align_root`, the prediction is first
/// translated so its root (joint 0) sits on the ground truth's.
pub fn mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>], align_root: bool) -> Result<f64> {
    check_len(pred.len(), gt.len())?;
    if align_root {
        let shift = gt[0] - pred[0];
        let moved: Vec<_> = pred.iter().map(|p| p + shift).collect();
        return Ok(mean_distance(&moved, gt));
    }
    Ok(mean_distance(pred, gt))
}

/// `x -> scale * R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

/// Least-squares similarity transform taking `pred` onto `gt` (Umeyama's
/// closed form). Reflections are excluded.
pub fn pa_align(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<(Vec<Vector3<f64>>, Similarity)> {
    check_len(pred.len(), gt.len())?;
    if pred.len() < 3 {
        return Err(Error::Degenerate(format!("{} joints, need 3", pred.len())));
    }
    let n = pred.len() as f64;
    let mu_p = pred.iter().sum::<Vector3<f64>>() / n;
    let mu_g = gt.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let (x, y) = (p - mu_p, g - mu_g);
        cov += y * x.transpose();
        spread += x * x.transpose();
        var_p += x.norm_squared();
    }
    let sv = spread.symmetric_eigenvalues();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if var_p <= 0.0 || sorted[1] <= 1e-12 * sorted[0] {
        return Err(Error::Degenerate("collinear or coincident joints".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        // nalgebra does not sort singular values; flip the smallest.
        let k = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .expect("three singular values");
        s[(k, k)] = -1.0;
    }
    let r = u * s * v_t;
    let trace: f64 = (0..3).map(|k| svd.singular_values[k] * s[(k, k)]).sum();
    let scale = trace / var_p;
    let rotation = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(r));
    let translation = mu_g - rotation * mu_p * scale;
    let sim = Similarity {
        scale,
        rotation,
        translation,
    };
    Ok((pred.iter().map(|p| sim.apply(p)).collect(), sim))
}

/// MPJPE after Procrustes alignment.
pub fn pa_mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    let (aligned, _) = pa_align(pred, gt)?;
    Ok(mean_distance(&aligned, gt))
}

/// Fraction of joints closer than `alpha * sqrt(area)` pixels.
pub fn pck2d(pred: &[Vector2<f64>], gt: &[Vector2<f64>], area: f64, alpha: f64) -> Result<f64> {
    check_len(pred.len(), gt.len())?;
    if !(area > 0.0) {
        return Err(Error::InvalidArgument(format!("mask area {area} must be positive")));
    }
    let threshold = alpha * area.sqrt();
    let hits = pred
        .iter()
        .zip(gt)
        .filter(|(p, g)| (*p - *g).norm() < threshold)
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Factor scaling the ground-truth head bone to [`HEAD_BONE_UNITS`].
pub fn head_scale(gt: &[Vector3<f64>], skeleton: &Skeleton) -> Result<f64> {
    if gt.len() != skeleton.len() {
        return Err(Error::Dimension {
            expected: skeleton.len(),
            got: gt.len(),
            context: "ground-truth joints",
        });
    }
    let (a, b) = skeleton.head_bone();
    let length = (gt[a] - gt[b]).norm();
    if !(length > 1e-12) {
        return Err(Error::Degenerate("zero-length head bone".into()));
    }
    Ok(HEAD_BONE_UNITS / length)
}

fn pck3d_scaled(pred: &[Vector3<f64>], gt: &[Vector3<f64>], scale: f64) -> f64 {
    let hits = pred
        .iter()
        .zip(gt)
        .filter(|(p, g)| (*p - *g).norm() * scale <= 1.0)
        .count();
    hits as f64 / pred.len() as f64
}

/// Fraction of joints within one unit after scaling both skeletons so the
/// ground-truth head bone is two units long.
pub fn pck3d(pred: &[Vector3<f64>], gt: &[Vector3<f64>], skeleton: &Skeleton) -> Result<f64> {
    check_len(pred.len(), gt.len())?;
    Ok(pck3d_scaled(pred, gt, head_scale(gt, skeleton)?))
}

/// 3D PCK after Procrustes alignment (scale included).
pub fn pa_pck3d(pred: &[Vector3<f64>], gt: &[Vector3<f64>], skeleton: &Skeleton) -> Result<f64> {
    let (aligned, _) = pa_align(pred, gt)?;
    pck3d(&aligned, gt, skeleton)
}

/// Reporting groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    All,
    /// Neck, head and ears.
    Head,
    /// Spine and the four legs.
    Body,
    Tail,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::All, Group::Head, Group::Body, Group::Tail];

    pub fn contains(self, g: JointGroup) -> bool {
        match self {
            Group::All => true,
            Group::Head => matches!(g, JointGroup::Head | JointGroup::Ear),
            Group::Body => g == JointGroup::Body,
            Group::Tail => g == JointGroup::Tail,
        }
    }

    pub fn joints(self, skeleton: &Skeleton) -> Vec<usize> {
        (0..skeleton.len())
            .filter(|&j| self.contains(skeleton.joint(j).group))
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::All => "All",
            Group::Head => "Head",
            Group::Body => "Body",
            Group::Tail => "Tail",
        }
    }
}

/// Per-group metric values. MPJPE values are in head-bone units (head = 2).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub pck2d: f64,
    pub pck3d: f64,
    pub pa_pck3d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: Group,
    pub joint_count: usize,
    pub metrics: MetricSet,
}

/// One evaluated frame.
#[derive(Clone, Debug)]
pub struct FrameInput {
    pub pred3d: Vec<Vector3<f64>>,
    pub gt3d: Vec<Vector3<f64>>,
    pub pred2d: Vec<Vector2<f64>>,
    pub gt2d: Vec<Vector2<f64>>,
    /// Number of non-zero mask pixels.
    pub mask_area: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: usize,
    /// Ground-truth head-bone length in mm.
    pub head_bone_mm: f64,
    pub groups: Vec<GroupMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Means over frames.
    pub summary: Vec<GroupMetrics>,
    pub frames: Vec<FrameReport>,
}

fn subset<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

/// All five metrics per group for one frame. PA variants align the whole
/// skeleton once and then score each group's joints.
pub fn frame_report(frame: usize, input: &FrameInput, skeleton: &Skeleton) -> Result<FrameReport> {
    let n = skeleton.len();
    for len in [
        input.pred3d.len(),
        input.gt3d.len(),
        input.pred2d.len(),
        input.gt2d.len(),
    ] {
        check_len(len, n)?;
    }
    let scale = head_scale(&input.gt3d, skeleton)?;
    let shift = input.gt3d[0] - input.pred3d[0];
    let rooted: Vec<_> = input.pred3d.iter().map(|p| p + shift).collect();
    let (aligned, _) = pa_align(&input.pred3d, &input.gt3d)?;
    let mut groups = Vec::new();
    for group in Group::ALL {
        let idx = group.joints(skeleton);
        if idx.is_empty() {
            continue;
        }
        let gt = subset(&input.gt3d, &idx);
        let metrics = MetricSet {
            mpjpe: mean_distance(&subset(&rooted, &idx), &gt) * scale,
            pa_mpjpe: mean_distance(&subset(&aligned, &idx), &gt) * scale,
            pck2d: pck2d(
                &subset(&input.pred2d, &idx),
                &subset(&input.gt2d, &idx),
                input.mask_area,
                PCK2D_ALPHA,
            )?,
            pck3d: pck3d_scaled(&subset(&input.pred3d, &idx), &gt, scale),
            pa_pck3d: pck3d_scaled(&subset(&aligned, &idx), &gt, scale),
        };
        groups.push(GroupMetrics {
            group,
            joint_count: idx.len(),
            metrics,
        });
    }
    Ok(FrameReport {
        frame,
        head_bone_mm: HEAD_BONE_UNITS / scale,
        groups,
    })
}

/// Evaluates a sequence and averages every metric over frames.
pub fn group_report(inputs: &[FrameInput], skeleton: &Skeleton) -> Result<EvalReport> {
    if inputs.is_empty() {
        return Err(Error::Empty("evaluation frames"));
    }
    let frames = inputs
        .iter()
        .enumerate()
        .map(|(i, f)| frame_report(i, f, skeleton))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        summary: summarize(&frames),
        frames,
    })
}

pub fn summarize(frames: &[FrameReport]) -> Vec<GroupMetrics> {
    let Some(first) = frames.first() else {
        return Vec::new();
    };
    let k = frames.len() as f64;
    first
        .groups
        .iter()
        .enumerate()
        .map(|(g, proto)| {
            let mut m = MetricSet::default();
            for f in frames {
                let v = &f.groups[g].metrics;
                m.mpjpe += v.mpjpe / k;
                m.pa_mpjpe += v.pa_mpjpe / k;
                m.pck2d += v.pck2d / k;
                m.pck3d += v.pck3d / k;
                m.pa_pck3d += v.pa_pck3d / k;
            }
            GroupMetrics {
                group: proto.group,
                joint_count: proto.joint_count,
                metrics: m,
            }
        })
        .collect()
}

impl EvalReport {
    /// Aligned-column text table of the summary.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<6} {:>6} {:>8} {:>9} {:>7} {:>7} {:>9}\n",
            "group", "joints", "MPJPE", "PA-MPJPE", "PCK2D", "PCK3D", "PA-PCK3D"
        );
        for g in &self.summary {
            let m = &g.metrics;
            out.push_str(&format!(
                "{:<6} {:>6} {:>8.3} {:>9.3} {:>7.3} {:>7.3} {:>9.3}\n",
                g.group.name(),
                g.joint_count,
                m.mpjpe,
                m.pa_mpjpe,
                m.pck2d,
                m.pck3d,
                m.pa_pck3d
            ));
        }
        out
    }

    pub fn group(&self, group: Group) -> Option<&MetricSet> {
        self.summary.iter().find(|g| g.group == group).map(|g| &g.metrics)
    }
}
