//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! Every accepted step strictly decreases the objective, so the returned
//! value is never worse than the starting point.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    pub max_iterations: usize,
    pub memory: usize,
    /// Stop when `|f_k - f_{k+1}| <= rel_tolerance * max(|f_k|, 1)`.
    pub rel_tolerance: f64,
    pub grad_tolerance: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            max_iterations: 500,
            memory: 8,
            rel_tolerance: 1e-6,
            grad_tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which returns the objective and writes the gradient into
/// its second argument.
pub fn minimize<F>(mut f: F, x0: &[f64], config: &LbfgsConfig) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut value = f(&x, &mut g);
    let mut evaluations = 1;
    if !value.is_finite() || n == 0 {
        return Minimum {
            x,
            value,
            iterations: 0,
            evaluations,
            converged: n == 0,
        };
    }
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    while iterations < config.max_iterations {
        iterations += 1;
        let gnorm = dot(&g, &g).sqrt();
        if gnorm <= config.grad_tolerance {
            converged = true;
            break;
        }

        // Two-loop recursion.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        } else {
            d.iter_mut().for_each(|v| *v /= gnorm.max(1.0));
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) || !slope.is_finite() {
            history.clear();
            d = g.iter().map(|v| -v / gnorm.max(1.0)).collect();
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = false;
        let mut new_value = value;
        for _ in 0..40 {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            new_value = f(&x_new, &mut g_new);
            evaluations += 1;
            if new_value.is_finite() && new_value <= value + 1e-4 * step * slope && new_value < value {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if history.is_empty() {
                converged = true;
                break;
            }
            // Retry once from steepest descent.
            history.clear();
            continue;
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            history.push_back((s, y, 1.0 / sy));
            if history.len() > config.memory {
                history.pop_front();
            }
        }
        let change = value - new_value;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        let previous = value;
        value = new_value;
        if change <= config.rel_tolerance * previous.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Minimum {
        x,
        value,
        iterations,
        evaluations,
        converged,
    }
}

/// Central finite-difference gradient.
pub fn numeric_gradient<F>(f: &mut F, x: &[f64], step: f64, grad: &mut [f64]) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = step * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    f(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let rosen = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let cfg = LbfgsConfig {
            max_iterations: 1000,
            rel_tolerance: 1e-14,
            ..Default::default()
        };
        let m = minimize(rosen, &[-1.2, 1.0], &cfg);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m);
    }

    #[test]
    fn never_increases() {
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = (x[0] * 3.0).cos() * 3.0 + 0.2 * x[0];
            (x[0] * 3.0).sin() + 0.1 * x[0] * x[0]
        };
        let mut g = [0.0];
        let start = f(&[2.0], &mut g);
        let m = minimize(f, &[2.0], &LbfgsConfig::default());
        assert!(m.value <= start);
    }

    #[test]
    fn finite_differences_match_analytic() {
        let mut f = |x: &[f64]| x[0].powi(3) + x[0] * x[1].sin();
        let mut g = [0.0; 2];
        numeric_gradient(&mut f, &[1.3, 0.4], 1e-6, &mut g);
        assert!((g[0] - (3.0 * 1.69 + 0.4f64.sin())).abs() < 1e-6);
        assert!((g[1] - 1.3 * 0.4f64.cos()).abs() < 1e-6);
    }
}
