//! Thin SVD through the eigendecomposition of the smaller Gram matrix.
//!
//! nalgebra's bidiagonal SVD returns inflated singular values on tall,
//! exactly rank-deficient matrices (two opposite columns of a few thousand
//! rows are enough), which is the normal case for centred data with few
//! samples.

use nalgebra::{DMatrix, DVector};

/// Singular triplets with `sigma > rel_cut * sigma_max`, sorted descending.
pub(crate) struct ThinSvd {
    pub sigma: Vec<f64>,
    /// `rows x k`, orthonormal columns.
    pub u: DMatrix<f64>,
    /// `cols x k`, orthonormal columns.
    pub v: DMatrix<f64>,
}

pub(crate) fn thin_svd(a: &DMatrix<f64>, rel_cut: f64) -> ThinSvd {
    let (r, c) = a.shape();
    let wide = r <= c;
    let gram = if wide { a * a.transpose() } else { a.transpose() * a };
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let top = order
        .first()
        .map(|&k| eig.eigenvalues[k].max(0.0).sqrt())
        .unwrap_or(0.0);
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&k| {
            let s = eig.eigenvalues[k].max(0.0).sqrt();
            s > 0.0 && s > rel_cut * top
        })
        .collect();
    let k = keep.len();
    let mut sigma = Vec::with_capacity(k);
    let mut small = DMatrix::zeros(if wide { r } else { c }, k);
    for (col, &e) in keep.iter().enumerate() {
        sigma.push(eig.eigenvalues[e].sqrt());
        small.set_column(col, &eig.eigenvectors.column(e));
    }
    // The other side follows from A v = sigma u.
    let inv = DVector::from_iterator(k, sigma.iter().map(|s| 1.0 / s));
    let mut big = if wide { a.transpose() * &small } else { a * &small };
    for (col, s) in inv.iter().enumerate() {
        big.column_mut(col).scale_mut(*s);
    }
    let (u, v) = if wide { (small, big) } else { (big, small) };
    ThinSvd { sigma, u, v }
}
