//! Single GPLVM node with an RBF kernel and kernel-regression back
//! constraints.
//!
//! Latents are tied to the data by `X = K_bc(Y, Y) A`, where `K_bc` is a
//! fixed RBF Gram matrix over the (normalized) data. Training optimizes `A`
//! and the log kernel hyperparameters by L-BFGS on the negative log
//! marginal likelihood plus a unit Gaussian prior on `X`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::thin_svd;
use crate::optim::{minimize, LbfgsConfig};

/// Diagonal jitter as a fraction of the signal variance.
pub const JITTER: f64 = 1e-6;

/// RBF hyperparameters, stored as logs of the variances and lengthscale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfKernel {
    pub log_signal: f64,
    pub log_lengthscale: f64,
    pub log_noise: f64,
}

impl RbfKernel {
    pub fn signal_variance(&self) -> f64 {
        self.log_signal.exp()
    }

    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise.exp()
    }

    fn eval(&self, sq_dist: f64) -> f64 {
        let l = self.lengthscale();
        self.signal_variance() * (-0.5 * sq_dist / (l * l)).exp()
    }
}

/// Per-column standardization. Constant columns keep a unit scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn fit(data: &DMatrix<f64>) -> Self {
        let f = data.nrows() as f64;
        let mut mean = Vec::with_capacity(data.ncols());
        let mut std = Vec::with_capacity(data.ncols());
        for c in data.column_iter() {
            let m = c.sum() / f;
            let v = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / f;
            mean.push(m);
            std.push(if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 });
        }
        Normalization { mean, std }
    }

    pub fn apply(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| {
            (data[(i, j)] - self.mean[j]) / self.std[j]
        })
    }

    pub fn invert_row(&self, row: &mut [f64]) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v * self.std[j] + self.mean[j];
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GplvmNode {
    /// `f x q` latent coordinates.
    pub latent: DMatrix<f64>,
    pub kernel: RbfKernel,
    pub normalization: Normalization,
    pub bc_lengthscale: f64,
    /// `f x q` back-constraint weights `A`.
    pub bc_weights: DMatrix<f64>,
    /// Normalized training data, `f x b`.
    pub data: DMatrix<f64>,
    /// `K^-1 Y` for the posterior mean.
    pub alpha: DMatrix<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub optimizer: LbfgsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: LbfgsConfig {
                max_iterations: 500,
                rel_tolerance: 1e-6,
                ..Default::default()
            },
        }
    }
}

fn sq_dists(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    DMatrix::from_fn(n, n, |i, j| (a.row(i) - a.row(j)).norm_squared())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Value and gradient of the training objective.
struct Objective {
    /// Back-constraint Gram matrix, `f x f`.
    kbc: DMatrix<f64>,
    /// `Y Y^T` of the normalized data.
    yyt: DMatrix<f64>,
    b: usize,
    q: usize,
}

impl Objective {
    fn unpack(&self, theta: &[f64]) -> (DMatrix<f64>, RbfKernel) {
        let f = self.kbc.nrows();
        let a = DMatrix::from_column_slice(f, self.q, &theta[..f * self.q]);
        let k = RbfKernel {
            log_signal: theta[f * self.q],
            log_lengthscale: theta[f * self.q + 1],
            log_noise: theta[f * self.q + 2],
        };
        (a, k)
    }

    /// Negative log-likelihood (plus latent prior); writes the gradient.
    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let f = self.kbc.nrows();
        let (a, kern) = self.unpack(theta);
        let x = &self.kbc * &a;
        let d2 = sq_dists(&x);
        let (s, l, n) = (kern.signal_variance(), kern.lengthscale(), kern.noise_variance());
        let krbf = d2.map(|d| s * (-0.5 * d / (l * l)).exp());
        let mut k = krbf.clone();
        for i in 0..f {
            k[(i, i)] += n + JITTER * s;
        }
        let Some(chol) = k.cholesky() else {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::INFINITY;
        };
        let kinv = chol.inverse();
        let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let kinv_yyt = &kinv * &self.yyt;
        let fit_term = kinv_yyt.trace();
        let b = self.b as f64;
        let nll = 0.5 * b * logdet
            + 0.5 * fit_term
            + 0.5 * f as f64 * b * (std::f64::consts::TAU).ln()
            + 0.5 * x.norm_squared();

        // G = dNLL/dK = (b K^-1 - K^-1 Y Y^T K^-1) / 2
        let g = (&kinv * b - &kinv_yyt * &kinv) * 0.5;
        let w = g.component_mul(&krbf);
        let row_sums = DVector::from_fn(f, |i, _| w.row(i).sum());
        let mut dx = (DMatrix::from_diagonal(&row_sums) * &x - &w * &x) * (-2.0 / (l * l));
        dx += &x;
        let da = &self.kbc * dx;
        grad[..f * self.q].copy_from_slice(da.as_slice());
        let trace_g = g.trace();
        grad[f * self.q] = w.sum() + JITTER * s * trace_g;
        grad[f * self.q + 1] = w.component_mul(&d2).sum() / (l * l);
        grad[f * self.q + 2] = n * trace_g;
        nll
    }
}

/// Top-`q` principal-component scores of centered data, scaled to unit
/// variance along the first component.
fn pca_init(y: &DMatrix<f64>, q: usize) -> DMatrix<f64> {
    let svd = thin_svd(y, 1e-12);
    let f = y.nrows();
    let mut x = DMatrix::zeros(f, q);
    for c in 0..q.min(svd.sigma.len()) {
        x.set_column(c, &(svd.u.column(c) * svd.sigma[c]));
    }
    let first = x.column(0).norm() / (f as f64).sqrt();
    if first > 0.0 {
        x /= first;
    }
    x
}

/// Trains one node on `data` (`f x b`, raw; normalized internally).
pub fn train_node(data: &DMatrix<f64>, q: usize, config: &TrainConfig) -> Result<GplvmNode> {
    let (f, b) = data.shape();
    if q == 0 || b == 0 {
        return Err(Error::InvalidArgument(format!("latent dim {q} over {b} data columns")));
    }
    if f < 2 * q {
        return Err(Error::InvalidArgument(format!(
            "{f} frames cannot support a {q}-dim latent space (need {})",
            2 * q
        )));
    }
    let normalization = Normalization::fit(data);
    let y = normalization.apply(data);
    if y.norm() <= 1e-9 {
        return Err(Error::Degenerate("all training frames are identical".into()));
    }

    let d2 = sq_dists(&y);
    let pair_dists: Vec<f64> = (0..f)
        .flat_map(|i| (i + 1..f).map(move |j| (i, j)))
        .map(|(i, j)| d2[(i, j)].sqrt())
        .collect();
    let bc_lengthscale = median(pair_dists).max(1e-6);
    let kbc = d2.map(|d| (-0.5 * d / (bc_lengthscale * bc_lengthscale)).exp());

    let x0 = pca_init(&y, q);
    let mut ridge = kbc.clone();
    for i in 0..f {
        ridge[(i, i)] += 1e-6;
    }
    let a0 = ridge
        .cholesky()
        .ok_or_else(|| Error::Numerical("back-constraint Gram matrix not positive definite".into()))?
        .solve(&x0);

    let objective = Objective {
        yyt: &y * y.transpose(),
        kbc,
        b,
        q,
    };
    let mut theta: Vec<f64> = a0.as_slice().to_vec();
    theta.extend([0.0, 0.0, (0.001f64).ln()]);
    let result = minimize(|t, g| objective.eval(t, g), &theta, &config.optimizer);
    if !result.value.is_finite() {
        return Err(Error::Numerical("GPLVM objective is not finite".into()));
    }
    let (bc_weights, kernel) = objective.unpack(&result.x);
    let latent = &objective.kbc * &bc_weights;
    let alpha = gram(&latent, &kernel)
        .cholesky()
        .ok_or_else(|| Error::Numerical("kernel matrix not positive definite".into()))?
        .solve(&y);
    log::debug!(
        "gplvm f={f} b={b} q={q} iterations={} nll={:.4} noise={:.3e}",
        result.iterations,
        result.value,
        kernel.noise_variance()
    );
    Ok(GplvmNode {
        latent,
        kernel,
        normalization,
        bc_lengthscale,
        bc_weights,
        data: y,
        alpha,
        log_likelihood: -result.value,
        iterations: result.iterations,
    })
}

/// Training Gram matrix with noise and jitter on the diagonal.
fn gram(x: &DMatrix<f64>, kernel: &RbfKernel) -> DMatrix<f64> {
    let mut k = sq_dists(x).map(|d| kernel.eval(d));
    let diag = kernel.noise_variance() + JITTER * kernel.signal_variance();
    for i in 0..k.nrows() {
        k[(i, i)] += diag;
    }
    k
}

impl GplvmNode {
    pub fn frames(&self) -> usize {
        self.latent.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent.ncols()
    }

    pub fn data_dim(&self) -> usize {
        self.data.ncols()
    }

    /// Rebuilds the cached `K^-1 Y` after loading.
    pub(crate) fn refresh_alpha(&mut self) -> Result<()> {
        self.alpha = gram(&self.latent, &self.kernel)
            .cholesky()
            .ok_or_else(|| Error::Numerical("kernel matrix not positive definite".into()))?
            .solve(&self.data);
        Ok(())
    }

    /// Posterior mean in data units at latent point `x`.
    pub fn mean(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.data_dim()];
        self.mean_into(x, &mut out);
        out
    }

    pub fn mean_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.latent_dim());
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.frames() {
            let d2: f64 = (0..x.len()).map(|c| (x[c] - self.latent[(i, c)]).powi(2)).sum();
            let k = self.kernel.eval(d2);
            if k < 1e-300 {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o += k * self.alpha[(i, j)];
            }
        }
        self.normalization.invert_row(out);
    }

    /// Maps a data row (raw units) to latent space through the back
    /// constraint.
    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        let yn: Vec<f64> = y
            .iter()
            .enumerate()
            .map(|(j, v)| (v - self.normalization.mean[j]) / self.normalization.std[j])
            .collect();
        let l2 = self.bc_lengthscale * self.bc_lengthscale;
        let mut x = vec![0.0; self.latent_dim()];
        for i in 0..self.frames() {
            let d2: f64 = yn
                .iter()
                .enumerate()
                .map(|(j, v)| (v - self.data[(i, j)]).powi(2))
                .sum();
            let k = (-0.5 * d2 / l2).exp();
            for (c, xc) in x.iter_mut().enumerate() {
                *xc += k * self.bc_weights[(i, c)];
            }
        }
        x
    }

    pub fn latent_row(&self, i: usize) -> Vec<f64> {
        self.latent.row(i).iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn curve(f: usize, noise: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, noise.max(1e-300)).unwrap();
        DMatrix::from_fn(f, 10, |i, j| {
            let t = i as f64 / f as f64 * 3.0;
            let v = (t * (j as f64 + 1.0) * 0.7 + j as f64).sin() * (1.0 + 0.1 * j as f64);
            v + if noise > 0.0 { n.sample(&mut rng) } else { 0.0 }
        })
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = curve(12, 0.05, 1);
        let norm = Normalization::fit(&data);
        let y = norm.apply(&data);
        let d2 = sq_dists(&y);
        let l = median(d2.iter().map(|v| v.sqrt()).filter(|v| *v > 0.0).collect());
        let obj = Objective {
            kbc: d2.map(|d| (-0.5 * d / (l * l)).exp()),
            yyt: &y * y.transpose(),
            b: 10,
            q: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = Normal::new(0.0, 0.3).unwrap();
        let mut theta: Vec<f64> = (0..24).map(|_| n.sample(&mut rng)).collect();
        theta.extend([0.2, -0.1, -2.0]);
        let mut grad = vec![0.0; theta.len()];
        obj.eval(&theta, &mut grad);
        let mut scratch = vec![0.0; theta.len()];
        for i in 0..theta.len() {
            let h = 1e-6;
            let mut up = theta.clone();
            up[i] += h;
            let mut down = theta.clone();
            down[i] -= h;
            let fd = (obj.eval(&up, &mut scratch) - obj.eval(&down, &mut scratch)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-4 * (1.0 + fd.abs()),
                "param {i}: fd {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn one_dimensional_curve_is_reconstructed() {
        let data = curve(60, 0.0, 0);
        let node = train_node(&data, 1, &TrainConfig::default()).unwrap();
        let mut sq = 0.0;
        for i in 0..60 {
            let m = node.mean(&node.latent_row(i));
            for j in 0..10 {
                sq += (m[j] - data[(i, j)]).powi(2) / node.normalization.std[j].powi(2);
            }
        }
        let rms = (sq / 600.0).sqrt();
        assert!(rms < 0.05, "rms {rms}");
    }

    #[test]
    fn overparameterized_latent_is_near_exact() {
        let data = curve(6, 0.02, 5);
        let node = train_node(&data, 3, &TrainConfig::default()).unwrap();
        for i in 0..6 {
            let m = node.mean(&node.latent_row(i));
            for j in 0..10 {
                assert!(
                    (m[j] - data[(i, j)]).abs() < 0.05 * node.normalization.std[j],
                    "{i} {j}"
                );
            }
        }
    }

    #[test]
    fn lone_noise_column_trains_cleanly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = Normal::new(0.0, 1.0).unwrap();
        let data = DMatrix::from_fn(40, 1, |_, _| n.sample(&mut rng));
        let node = train_node(&data, 1, &TrainConfig::default()).unwrap();
        assert!(node.log_likelihood.is_finite());
        assert!(node.latent.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn noise_column_beside_structure_is_left_to_the_noise_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = Normal::new(0.0, 1.0).unwrap();
        let structured = curve(60, 0.0, 0);
        let data = DMatrix::from_fn(
            60,
            11,
            |i, j| if j < 10 { structured[(i, j)] } else { n.sample(&mut rng) },
        );
        let node = train_node(&data, 1, &TrainConfig::default()).unwrap();
        let mut resid = [0.0f64; 11];
        for i in 0..60 {
            let m = node.mean(&node.latent_row(i));
            for j in 0..11 {
                resid[j] += ((m[j] - data[(i, j)]) / node.normalization.std[j]).powi(2) / 60.0;
            }
        }
        // Posterior means at training latents shrink towards the data, so the
        // noise column keeps only part of its variance as residual.
        let worst_structured = resid[..10].iter().cloned().fold(0.0, f64::max);
        assert!(worst_structured < 0.1, "{resid:?}");
        assert!(resid[10] > 0.25 && resid[10] > 5.0 * worst_structured, "{resid:?}");
    }

    #[test]
    fn identical_frames_are_rejected() {
        let data = DMatrix::from_element(10, 4, 0.3);
        assert!(matches!(
            train_node(&data, 2, &TrainConfig::default()),
            Err(Error::Degenerate(_))
        ));
        assert!(train_node(&curve(3, 0.0, 0), 2, &TrainConfig::default()).is_err());
    }

    #[test]
    fn back_constraint_reproduces_latents() {
        let data = curve(30, 0.01, 3);
        let node = train_node(&data, 2, &TrainConfig::default()).unwrap();
        for i in 0..30 {
            let row: Vec<f64> = data.row(i).iter().copied().collect();
            let x = node.project(&row);
            for c in 0..2 {
                assert!((x[c] - node.latent[(i, c)]).abs() < 1e-8);
            }
        }
    }
}
