use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{gemm, Mat};

/// Principal axes of a set of spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `M × B`, orthonormal rows.
    pub components: Vec<f64>,
    /// Descending, nonnegative.
    pub eigenvalues: Vec<f64>,
    /// Sum of all covariance eigenvalues.
    pub total_variance: f64,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    pub fn component(&self, k: usize) -> &[f64] {
        let b = self.bands();
        &self.components[k * b..(k + 1) * b]
    }

    /// Cumulative fraction of variance carried by the retained components.
    pub fn explained_variance_ratio(&self) -> f64 {
        if self.total_variance <= 0.0 {
            return 1.0;
        }
        (self.eigenvalues.iter().sum::<f64>() / self.total_variance).min(1.0)
    }
}

/// Fits `m` components to the `n × bands` row-major spectra `x`. The
/// covariance is normalized by `n`.
pub fn pca_fit(x: &[f64], bands: usize, m: usize) -> Result<PcaModel> {
    if bands == 0 || !x.len().is_multiple_of(bands) {
        return Err(Error::shape(format!("{} values do not split into rows of {bands}", x.len())));
    }
    let n = x.len() / bands;
    if m == 0 || m > n.min(bands) {
        return Err(Error::invalid(format!("cannot keep {m} components of {n} spectra with {bands} bands")));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("spectrum value at flat index {i}")));
    }
    let mut mean = vec![0.0; bands];
    for row in x.chunks_exact(bands) {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= n as f64);
    let centered: Vec<f64> = x.chunks_exact(bands).flat_map(|row| row.iter().zip(&mean).map(|(v, a)| v - a)).collect();
    let xc = Mat::new(&centered, n, bands);
    let mut cov = vec![0.0; bands * bands];
    gemm(xc.t(), xc, 0.0, &mut cov);
    for v in &mut cov {
        *v /= n as f64;
    }
    // symmetrize away rounding before the eigensolver
    for i in 0..bands {
        for j in 0..i {
            let s = 0.5 * (cov[i * bands + j] + cov[j * bands + i]);
            cov[i * bands + j] = s;
            cov[j * bands + i] = s;
        }
    }
    let total_variance: f64 = (0..bands).map(|i| cov[i * bands + i]).sum();
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(bands, bands, &cov));
    let mut order: Vec<usize> = (0..bands).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(m * bands);
    let mut eigenvalues = Vec::with_capacity(m);
    for &k in order.iter().take(m) {
        let col = eig.eigenvectors.column(k);
        let norm = col.norm();
        // largest-magnitude entry made positive for a reproducible sign
        let mut pivot = 0;
        for i in 1..bands {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        components.extend(col.iter().map(|v| sign * v / norm));
        eigenvalues.push(eig.eigenvalues[k].max(0.0));
    }
    Ok(PcaModel { mean, components, eigenvalues, total_variance })
}

/// `components · (x − mean)`.
pub fn pca_project(model: &PcaModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.bands() {
        return Err(Error::shape(format!("spectrum has {} bands, PCA expects {}", x.len(), model.bands())));
    }
    Ok((0..model.n_components())
        .map(|k| model.component(k).iter().zip(x.iter().zip(&model.mean)).map(|(c, (v, m))| c * (v - m)).sum())
        .collect())
}

/// `mean + componentsᵀ · c`.
pub fn pca_reconstruct(model: &PcaModel, c: &[f64]) -> Result<Vec<f64>> {
    if c.len() != model.n_components() {
        return Err(Error::shape(format!("{} coefficients for {} components", c.len(), model.n_components())));
    }
    let mut out = model.mean.clone();
    for (k, &ck) in c.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(model.component(k)) {
            *o += ck * v;
        }
    }
    Ok(out)
}
