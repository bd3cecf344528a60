use nalgebra::{DMatrix, Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::kmeans::kmeans;
use super::tree::{LatentCoords, LatentTree};
use crate::align::rotation_from_covariance;
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::optim::{minimize, numeric_gradient, LbfgsConfig};
use crate::skeleton::Pose;

/// Default weight of the reprojection term, in mm per pixel.
pub const DEFAULT_LAMBDA_2D: f64 = 1e-3;

/// Root translation is optimized in units of this many mm.
const TRANSLATION_UNIT_MM: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub lambda: f64,
    pub candidates: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Stage-one candidates refined in stage two.
    pub refine_starts: usize,
    /// Bound on each shoulder translation component, mm from rest.
    pub shoulder_bound_mm: f64,
    pub optimizer: LbfgsConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda: DEFAULT_LAMBDA_2D,
            candidates: 50,
            restarts: 20,
            seed: 0,
            refine_starts: 4,
            shoulder_bound_mm: 50.0,
            optimizer: LbfgsConfig {
                max_iterations: 300,
                rel_tolerance: 1e-7,
                ..LbfgsConfig::default()
            },
        }
    }
}

/// Detector output for one frame, in camera space.
#[derive(Clone, Debug)]
pub struct FitTarget<'a> {
    pub joints3d: &'a [Vector3<f64>],
    /// Full-image pixel coordinates.
    pub joints2d: &'a [Vector2<f64>],
    /// Per-joint weight; zero excludes the joint.
    pub weights: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub pose: Pose,
    pub joints: Vec<Vector3<f64>>,
    pub coords: LatentCoords,
    /// Loss after each stage.
    pub stage_losses: [f64; 3],
    pub loss: f64,
    pub diagnostics: Vec<String>,
}

fn project(camera: &CameraModel, p: &Vector3<f64>) -> Vector2<f64> {
    let z = p.z.max(1.0);
    Vector2::new(camera.fx * p.x / z + camera.cx, camera.fy * p.y / z + camera.cy)
}

/// Weighted sum of 3D distances plus `lambda` times reprojection distances.
pub fn fit_loss(model: &[Vector3<f64>], target: &FitTarget, camera: &CameraModel, lambda: f64) -> f64 {
    let mut total = 0.0;
    for (j, m) in model.iter().enumerate() {
        let w = target.weights[j];
        if w == 0.0 {
            continue;
        }
        let mut term = (target.joints3d[j] - m).norm();
        if lambda != 0.0 {
            term += lambda * (target.joints2d[j] - project(camera, m)).norm();
        }
        total += w * term;
    }
    total
}

fn rotvec(v: &[f64]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(Vector3::new(v[0], v[1], v[2]))
}

/// Root transform placing `model` (root at the origin) onto the target.
fn place(model: &[Vector3<f64>], target: &FitTarget) -> (UnitQuaternion<f64>, Vector3<f64>) {
    let w = target.weights;
    let p = target.joints3d;
    let (mu_m, mu_p) = if w[0] > 0.0 {
        (Vector3::zeros(), p[0])
    } else {
        let total: f64 = w.iter().sum();
        let wm = model.iter().zip(w).map(|(m, w)| m * *w).sum::<Vector3<f64>>() / total;
        let wp = p.iter().zip(w).map(|(q, w)| q * *w).sum::<Vector3<f64>>() / total;
        (wm, wp)
    };
    let mut cov = Matrix3::zeros();
    for j in 0..model.len() {
        if w[j] > 0.0 {
            cov += (p[j] - mu_p) * (model[j] - mu_m).transpose() * w[j];
        }
    }
    let r = rotation_from_covariance(&cov);
    (r, mu_p - r * mu_m)
}

/// Fits a trained prior to per-frame joint predictions in three stages:
/// candidate search over clustered root latents, root refinement, then all
/// leaves with the root transform and shoulder translations.
#[derive(Clone, Debug)]
pub struct Fitter<'t> {
    tree: &'t LatentTree,
    config: FitConfig,
    candidates: DMatrix<f64>,
}

impl<'t> Fitter<'t> {
    pub fn new(tree: &'t LatentTree, config: FitConfig) -> Result<Self> {
        if !(config.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda {} must be non-negative",
                config.lambda
            )));
        }
        if !(config.shoulder_bound_mm > 0.0) {
            return Err(Error::InvalidArgument("shoulder bound must be positive".into()));
        }
        let k = config.candidates.min(tree.frames());
        let candidates = kmeans(tree.root_latents(), k, config.restarts, config.seed);
        Ok(Fitter {
            tree,
            config,
            candidates,
        })
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    pub fn candidates(&self) -> &DMatrix<f64> {
        &self.candidates
    }

    fn check(&self, target: &FitTarget) -> Result<()> {
        let n = self.tree.skeleton().len();
        for (len, what) in [
            (target.joints3d.len(), "3D joints"),
            (target.joints2d.len(), "2D joints"),
            (target.weights.len(), "joint weights"),
        ] {
            if len != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: len,
                    context: what,
                });
            }
        }
        if let Some(w) = target.weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "joint weight {w} must be finite and non-negative"
            )));
        }
        if !target.weights.iter().any(|&w| w > 0.0) {
            return Err(Error::Empty("predicted joints with positive weight"));
        }
        Ok(())
    }

    pub fn fit(&self, target: &FitTarget, camera: &CameraModel) -> Result<FitResult> {
        self.check(target)?;
        let tree = self.tree;
        let lambda = self.config.lambda;
        let loss_of = |joints: &[Vector3<f64>]| fit_loss(joints, target, camera, lambda);
        let mut diagnostics = Vec::new();

        // Stage 1: clustered root latents, each rigidly placed.
        let mut ranked: Vec<(f64, Vec<f64>, UnitQuaternion<f64>, Vector3<f64>)> = (0..self.candidates.nrows())
            .map(|c| {
                let x: Vec<f64> = self.candidates.row(c).iter().copied().collect();
                let coords = tree.children_from_root(&x);
                let (_, model) = tree.decode_pose(&coords, UnitQuaternion::identity(), Vector3::zeros(), None);
                let (r, t) = place(&model, target);
                let (_, placed) = tree.decode_pose(&coords, r, t, None);
                (loss_of(&placed), x, r, t)
            })
            .filter(|c| c.0.is_finite())
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
        let Some((loss1, x1, r1, t1)) = ranked.first().cloned() else {
            return Err(Error::Numerical("no finite stage 1 candidate".into()));
        };
        let stage1 = {
            let coords = tree.children_from_root(&x1);
            let (pose, joints) = tree.decode_pose(&coords, r1, t1, None);
            FitResult {
                pose,
                joints,
                coords,
                stage_losses: [loss1; 3],
                loss: loss1,
                diagnostics: Vec::new(),
            }
        };

        // Stage 2: root latent and root rotation from the best few
        // candidates, translation held.
        let q = x1.len();
        let mut x2 = x1.clone();
        let mut r2 = r1;
        let mut t2 = t1;
        let mut loss2 = loss1;
        for (_, x, r, t) in ranked.iter().take(self.config.refine_starts.max(1)) {
            let mut stage2 = |p: &[f64]| {
                let coords = tree.children_from_root(&p[..q]);
                let (_, joints) = tree.decode_pose(&coords, rotvec(&p[q..]) * r, *t, None);
                loss_of(&joints)
            };
            let p0: Vec<f64> = x.iter().copied().chain([0.0; 3]).collect();
            let m2 = minimize(
                |p, g| numeric_gradient(&mut stage2, p, 1e-6, g),
                &p0,
                &self.config.optimizer,
            );
            if !m2.value.is_finite() {
                diagnostics.push("stage 2 diverged; keeping stage 1".into());
                return Ok(FitResult { diagnostics, ..stage1 });
            }
            if m2.value < loss2 {
                x2 = m2.x[..q].to_vec();
                r2 = rotvec(&m2.x[q..]) * r;
                t2 = *t;
                loss2 = m2.value;
            }
        }

        // Stage 3: all leaves, root transform and shoulders.
        let init = tree.children_from_root(&x2);
        let bound = self.config.shoulder_bound_mm;
        let mut generated = Pose::identity(tree.skeleton());
        tree.layout().decode_into(&tree.pose_vector(&init), &mut generated);
        let slots = generated.joint_translations.len();
        let widths: Vec<usize> = init.leaves.iter().map(Vec::len).collect();
        let n_leaf: usize = widths.iter().sum();
        let unpack = |p: &[f64]| {
            let mut coords = init.clone();
            let mut k = 0;
            for (leaf, w) in coords.leaves.iter_mut().zip(&widths) {
                leaf.copy_from_slice(&p[k..k + w]);
                k += w;
            }
            let r = rotvec(&p[k..k + 3]) * r2;
            let t = t2 + Vector3::new(p[k + 3], p[k + 4], p[k + 5]) * TRANSLATION_UNIT_MM;
            let shoulders: Vec<Vector3<f64>> = (0..slots)
                .map(|s| {
                    let u = &p[k + 6 + 3 * s..k + 9 + 3 * s];
                    Vector3::new(u[0].tanh(), u[1].tanh(), u[2].tanh()) * bound
                })
                .collect();
            (coords, r, t, shoulders)
        };
        let mut stage3 = |p: &[f64]| {
            let (coords, r, t, s) = unpack(p);
            let (_, joints) = tree.decode_pose(&coords, r, t, Some(&s));
            loss_of(&joints)
        };
        let mut p0: Vec<f64> = init.leaves.concat();
        p0.extend([0.0; 6]);
        for t in &generated.joint_translations {
            p0.extend(t.iter().map(|v| (v / bound).clamp(-0.999, 0.999).atanh()));
        }
        debug_assert_eq!(p0.len(), n_leaf + 6 + 3 * slots);
        let m3 = minimize(
            |p, g| numeric_gradient(&mut stage3, p, 1e-6, g),
            &p0,
            &self.config.optimizer,
        );
        if !m3.value.is_finite() {
            diagnostics.push("stage 3 diverged; keeping stage 1".into());
            return Ok(FitResult { diagnostics, ..stage1 });
        }
        let result = if m3.value <= loss2 {
            let (coords, r, t, s) = unpack(&m3.x);
            let (pose, joints) = tree.decode_pose(&coords, r, t, Some(&s));
            FitResult {
                pose,
                joints,
                coords,
                stage_losses: [loss1, loss2, m3.value],
                loss: m3.value,
                diagnostics,
            }
        } else {
            let coords = tree.children_from_root(&x2);
            let (pose, joints) = tree.decode_pose(&coords, r2, t2, None);
            FitResult {
                pose,
                joints,
                coords,
                stage_losses: [loss1, loss2, loss2],
                loss: loss2,
                diagnostics,
            }
        };
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::pa_mpjpe;
    use crate::prior::static_weights;
    use crate::prior::tree::tests::shared;
    use nalgebra::Isometry3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn camera() -> CameraModel {
        CameraModel::new(365.0, 365.0, 256.0, 212.0, 512, 424).unwrap()
    }

    /// Training frame `i` placed 2.5 m in front of the camera.
    fn frame(i: usize) -> Vec<Vector3<f64>> {
        let (_, tree) = shared();
        let coords = tree.children_from_root(&tree.root_node().latent_row(i));
        let r = UnitQuaternion::from_euler_angles(std::f64::consts::PI, 0.4, 0.0);
        tree.decode_pose(&coords, r, Vector3::new(50.0, -100.0, 2500.0), None).1
    }

    fn target<'a>(j3: &'a [Vector3<f64>], j2: &'a [Vector2<f64>], w: &'a [f64]) -> FitTarget<'a> {
        FitTarget {
            joints3d: j3,
            joints2d: j2,
            weights: w,
        }
    }

    fn projected(j: &[Vector3<f64>]) -> Vec<Vector2<f64>> {
        j.iter().map(|p| project(&camera(), p)).collect()
    }

    fn head_scale_pa(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
        let (_, tree) = shared();
        let (h0, h1) = tree.skeleton().head_bone();
        pa_mpjpe(a, b).unwrap() * 2.0 / (b[h1] - b[h0]).norm()
    }

    #[test]
    fn self_consistent_input_is_recovered() {
        let (_, tree) = shared();
        let fitter = Fitter::new(tree, FitConfig::default()).unwrap();
        let w = static_weights(tree.skeleton()).unwrap();
        for i in [5, 40, 77] {
            let gt = frame(i);
            let j2 = projected(&gt);
            let fit = fitter.fit(&target(&gt, &j2, &w), &camera()).unwrap();
            let err = head_scale_pa(&fit.joints, &gt);
            assert!(err < 0.05, "frame {i}: PA-MPJPE {err}");
            assert!(fit.stage_losses[1] <= fit.stage_losses[0] && fit.stage_losses[2] <= fit.stage_losses[1]);
        }
    }

    #[test]
    fn rigid_motion_of_input_is_absorbed_by_root() {
        let (_, tree) = shared();
        let config = FitConfig {
            lambda: 0.0,
            ..FitConfig::default()
        };
        let fitter = Fitter::new(tree, config).unwrap();
        let w = static_weights(tree.skeleton()).unwrap();
        let gt = frame(23);
        let motion = Isometry3::new(Vector3::new(120.0, -40.0, 300.0), Vector3::new(0.2, -0.5, 0.1));
        let moved: Vec<_> = gt.iter().map(|p| motion.transform_point(&(*p).into()).coords).collect();
        let j2 = projected(&gt);
        let a = fitter.fit(&target(&gt, &j2, &w), &camera()).unwrap();
        let b = fitter.fit(&target(&moved, &j2, &w), &camera()).unwrap();
        for (la, lb) in a.coords.leaves.iter().zip(&b.coords.leaves) {
            for (x, y) in la.iter().zip(lb) {
                assert!((x - y).abs() < 0.05, "leaf coords {la:?} vs {lb:?}");
            }
        }
        for (pa, pb) in a.joints.iter().zip(&b.joints) {
            let expect = motion.transform_point(&(*pa).into()).coords;
            assert!((expect - pb).norm() < 2.0, "{expect} vs {pb}");
        }
    }

    #[test]
    fn noisy_input_never_ends_above_stage_one() {
        let (_, tree) = shared();
        let fitter = Fitter::new(tree, FitConfig::default()).unwrap();
        let w = static_weights(tree.skeleton()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = Normal::new(0.0, 10.0).unwrap();
        for i in [12, 64] {
            let noisy: Vec<_> = frame(i)
                .iter()
                .map(|p| p + Vector3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng)))
                .collect();
            let j2 = projected(&noisy);
            let fit = fitter.fit(&target(&noisy, &j2, &w), &camera()).unwrap();
            assert!(fit.loss <= fit.stage_losses[0]);
            assert!(fit.stage_losses.windows(2).all(|s| s[1] <= s[0]));
        }
    }

    #[test]
    fn zero_weight_joints_are_ignored() {
        let (_, tree) = shared();
        let fitter = Fitter::new(tree, FitConfig::default()).unwrap();
        let mut w = static_weights(tree.skeleton()).unwrap();
        let gt = frame(50);
        let j2 = projected(&gt);
        let nose = tree.skeleton().index_of("nose").unwrap();
        w[nose] = 0.0;
        let a = fitter.fit(&target(&gt, &j2, &w), &camera()).unwrap();
        let mut moved = gt.clone();
        moved[nose] += Vector3::new(400.0, -300.0, 900.0);
        let mut j2m = j2.clone();
        j2m[nose] = Vector2::new(-5000.0, 9000.0);
        let b = fitter.fit(&target(&moved, &j2m, &w), &camera()).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.joints, b.joints);
    }

    #[test]
    fn rejects_inputs_without_weight() {
        let (_, tree) = shared();
        let fitter = Fitter::new(tree, FitConfig::default()).unwrap();
        let gt = frame(0);
        let j2 = projected(&gt);
        let w = vec![0.0; gt.len()];
        assert!(matches!(
            fitter.fit(&target(&gt, &j2, &w), &camera()),
            Err(Error::Empty(_))
        ));
        assert!(fitter.fit(&target(&gt[1..], &j2, &w), &camera()).is_err());
    }
}
