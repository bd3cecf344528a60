use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sq(a: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, k: usize) -> f64 {
    (0..a.ncols()).map(|d| (a[(i, d)] - c[(k, d)]).powi(2)).sum()
}

/// Squared-Euclidean k-means over the rows of `points`, k-means++ seeding,
/// best of `restarts` runs. Returns `k x d` centres.
pub fn kmeans(points: &DMatrix<f64>, k: usize, restarts: usize, seed: u64) -> DMatrix<f64> {
    let (n, d) = points.shape();
    let k = k.min(n).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for _ in 0..restarts.max(1) {
        let mut centres = DMatrix::zeros(k, d);
        centres.set_row(0, &points.row(rng.random_range(0..n)));
        let mut nearest: Vec<f64> = (0..n).map(|i| sq(points, i, &centres, 0)).collect();
        for c in 1..k {
            let total: f64 = nearest.iter().sum();
            let pick = if total > 0.0 {
                let mut r = rng.random_range(0.0..total);
                nearest
                    .iter()
                    .position(|&w| {
                        r -= w;
                        r < 0.0
                    })
                    .unwrap_or(n - 1)
            } else {
                rng.random_range(0..n)
            };
            centres.set_row(c, &points.row(pick));
            for (i, v) in nearest.iter_mut().enumerate() {
                *v = v.min(sq(points, i, &centres, c));
            }
        }

        let mut assign = vec![usize::MAX; n];
        let mut inertia = f64::INFINITY;
        for _ in 0..100 {
            let mut changed = false;
            inertia = 0.0;
            for (i, a) in assign.iter_mut().enumerate() {
                let (c, dist) = (0..k)
                    .map(|c| (c, sq(points, i, &centres, c)))
                    .min_by(|x, y| x.1.total_cmp(&y.1))
                    .expect("k >= 1");
                inertia += dist;
                if *a != c {
                    *a = c;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut sums = DMatrix::zeros(k, d);
            let mut counts = vec![0usize; k];
            for (i, &a) in assign.iter().enumerate() {
                let mut row = sums.row_mut(a);
                row += points.row(i);
                counts[a] += 1;
            }
            for c in 0..k {
                // Empty clusters keep their previous centre.
                if counts[c] > 0 {
                    centres.set_row(c, &(sums.row(c) / counts[c] as f64));
                }
            }
        }
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, centres));
        }
    }
    best.expect("at least one restart").1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_obvious_clusters() {
        let pts = DMatrix::from_row_slice(
            6,
            2,
            &[0.0, 0.0, 0.1, 0.0, 0.0, 0.1, 10.0, 10.0, 10.1, 10.0, 10.0, 10.1],
        );
        let c = kmeans(&pts, 2, 5, 1);
        let mut xs: Vec<f64> = c.column(0).iter().copied().collect();
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] - 0.1 / 3.0).abs() < 1e-12);
        assert!((xs[1] - 30.1 / 3.0).abs() < 1e-12);
        assert_eq!(kmeans(&pts, 10, 2, 1).nrows(), 6);
        assert_eq!(kmeans(&pts, 2, 5, 1), c);
    }
}
