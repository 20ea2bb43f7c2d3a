use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Largest training set accepted by [`gpr_fit`].
pub const GPR_MAX_ROWS: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Krr,
    Gpr,
}

/// RBF kernel regressor over standardized inputs. One independent output per
/// target column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelModel {
    pub kind: KernelKind,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    /// Standardized training inputs, `n × P`.
    pub inputs: Vec<f64>,
    /// `(K + λI)⁻¹ C`, `n × M`.
    pub dual: Vec<f64>,
    pub lengthscale: f64,
    /// `λ` for KRR, `σ²` for GPR.
    pub regularizer: f64,
    pub n_inputs: usize,
    pub n_outputs: usize,
    #[serde(skip)]
    factor: OnceLock<Cholesky<f64, Dyn>>,
}

impl PartialEq for KernelModel {
    fn eq(&self, o: &Self) -> bool {
        self.kind == o.kind
            && self.input_mean == o.input_mean
            && self.input_std == o.input_std
            && self.inputs == o.inputs
            && self.dual == o.dual
            && self.lengthscale == o.lengthscale
            && self.regularizer == o.regularizer
            && self.n_inputs == o.n_inputs
            && self.n_outputs == o.n_outputs
    }
}

impl KernelModel {
    /// Reassembles a fitted model; the Cholesky factor is recomputed on
    /// first use.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        kind: KernelKind,
        input_mean: Vec<f64>,
        input_std: Vec<f64>,
        inputs: Vec<f64>,
        n_inputs: usize,
        dual: Vec<f64>,
        n_outputs: usize,
        lengthscale: f64,
        regularizer: f64,
    ) -> Result<Self> {
        let n = inputs.len() / n_inputs.max(1);
        if n_inputs == 0
            || n_outputs == 0
            || n == 0
            || inputs.len() != n * n_inputs
            || dual.len() != n * n_outputs
            || input_mean.len() != n_inputs
            || input_std.len() != n_inputs
        {
            return Err(Error::shape("kernel model parts have inconsistent sizes"));
        }
        if !(lengthscale > 0.0) || !(regularizer >= 0.0) || input_std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("kernel hyperparameters out of range"));
        }
        Ok(Self {
            kind,
            input_mean,
            input_std,
            inputs,
            dual,
            lengthscale,
            regularizer,
            n_inputs,
            n_outputs,
            factor: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.n_inputs.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn standardize(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(self.input_mean.iter().zip(&self.input_std)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    fn kernel_row(&self, ys: &[f64]) -> Vec<f64> {
        let g = 0.5 / (self.lengthscale * self.lengthscale);
        self.inputs.chunks_exact(self.n_inputs).map(|x| (-g * sq_dist(x, ys)).exp()).collect()
    }

    fn check_query(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.n_inputs {
            return Err(Error::shape(format!("query has {} inputs, model expects {}", y.len(), self.n_inputs)));
        }
        Ok(())
    }

    /// Posterior mean (identical for KRR and GPR).
    pub fn predict(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_query(y)?;
        let k = self.kernel_row(&self.standardize(y));
        let m = self.n_outputs;
        let mut out = vec![0.0; m];
        for (ki, a) in k.iter().zip(self.dual.chunks_exact(m)) {
            for (o, av) in out.iter_mut().zip(a) {
                *o += ki * av;
            }
        }
        Ok(out)
    }

    fn factor(&self) -> Result<&Cholesky<f64, Dyn>> {
        if let Some(f) = self.factor.get() {
            return Ok(f);
        }
        let k = kernel_matrix(&self.inputs, self.n_inputs, self.lengthscale);
        let f = factorize(k, self.regularizer)?;
        Ok(self.factor.get_or_init(|| f))
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn standardize_inputs(inputs: &[f64], p: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = (inputs.len() / p).max(1) as f64;
    let mut mean = vec![0.0; p];
    for row in inputs.chunks_exact(p) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; p];
    for row in inputs.chunks_exact(p) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    let z = inputs
        .chunks_exact(p)
        .flat_map(|row| row.iter().zip(mean.iter().zip(&std)).map(|(v, (m, s))| (v - m) / s))
        .collect();
    (z, mean, std)
}

/// Median pairwise Euclidean distance; 1 when undefined or zero.
pub fn median_heuristic(standardized: &[f64], p: usize) -> f64 {
    let rows: Vec<&[f64]> = standardized.chunks_exact(p).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in 0..i {
            d.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        *m
    } else {
        1.0
    }
}

fn kernel_matrix(x: &[f64], p: usize, lengthscale: f64) -> DMatrix<f64> {
    let rows: Vec<&[f64]> = x.chunks_exact(p).collect();
    let n = rows.len();
    let g = 0.5 / (lengthscale * lengthscale);
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let v = (-g * sq_dist(rows[i], rows[j])).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn factorize(mut k: DMatrix<f64>, reg: f64) -> Result<Cholesky<f64, Dyn>> {
    for i in 0..k.nrows() {
        k[(i, i)] += reg;
    }
    Cholesky::new(k).ok_or_else(|| {
        Error::Singular(format!(
            "kernel system is not positive definite with regularizer {reg:e}; duplicated inputs need a larger value"
        ))
    })
}

fn validate(inputs: &[f64], p: usize, targets: &[f64], m: usize) -> Result<usize> {
    if p == 0 || m == 0 || !inputs.len().is_multiple_of(p) || !targets.len().is_multiple_of(m) {
        return Err(Error::shape("inputs and targets must be whole rows"));
    }
    let n = inputs.len() / p;
    if n == 0 || targets.len() / m != n {
        return Err(Error::shape(format!("{n} input rows but {} target rows", targets.len() / m)));
    }
    if inputs.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel training data".into()));
    }
    Ok(n)
}

/// Shared fitting path; `kernel` caches the Gram matrix across regularizers.
pub(crate) struct Prepared {
    z: Vec<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
    p: usize,
    lengthscale: f64,
    gram: DMatrix<f64>,
}

pub(crate) fn prepare(inputs: &[f64], p: usize, lengthscale: Option<f64>) -> Result<Prepared> {
    let (z, mean, std) = standardize_inputs(inputs, p);
    let lengthscale = match lengthscale {
        Some(l) if l > 0.0 && l.is_finite() => l,
        Some(l) => return Err(Error::invalid(format!("lengthscale must be positive, got {l}"))),
        None => median_heuristic(&z, p),
    };
    let gram = kernel_matrix(&z, p, lengthscale);
    Ok(Prepared { z, mean, std, p, lengthscale, gram })
}

pub(crate) fn solve(prep: &Prepared, targets: &[f64], m: usize, kind: KernelKind, reg: f64) -> Result<KernelModel> {
    let n = prep.gram.nrows();
    let chol = factorize(prep.gram.clone(), reg)?;
    let c = DMatrix::from_row_slice(n, m, targets);
    let a = chol.solve(&c);
    let mut dual = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            dual.push(a[(i, j)]);
        }
    }
    if dual.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("dual coefficients are not finite".into()));
    }
    let factor = OnceLock::new();
    let _ = factor.set(chol);
    Ok(KernelModel {
        kind,
        input_mean: prep.mean.clone(),
        input_std: prep.std.clone(),
        inputs: prep.z.clone(),
        dual,
        lengthscale: prep.lengthscale,
        regularizer: reg,
        n_inputs: prep.p,
        n_outputs: m,
        factor,
    })
}

/// Kernel ridge regression of `n × m` targets on `n × p` inputs.
/// `lengthscale = None` uses the median heuristic.
pub fn krr_fit(
    inputs: &[f64],
    p: usize,
    targets: &[f64],
    m: usize,
    lambda: f64,
    lengthscale: Option<f64>,
) -> Result<KernelModel> {
    validate(inputs, p, targets, m)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    solve(&prepare(inputs, p, lengthscale)?, targets, m, KernelKind::Krr, lambda)
}

pub fn krr_predict(model: &KernelModel, y: &[f64]) -> Result<Vec<f64>> {
    model.predict(y)
}

/// Gaussian-process regression with noise variance `sigma2`, at most
/// [`GPR_MAX_ROWS`] training rows.
pub fn gpr_fit(
    inputs: &[f64],
    p: usize,
    targets: &[f64],
    m: usize,
    sigma2: f64,
    lengthscale: Option<f64>,
) -> Result<KernelModel> {
    let n = validate(inputs, p, targets, m)?;
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::invalid(format!("noise variance must be nonnegative, got {sigma2}")));
    }
    if n > GPR_MAX_ROWS {
        return Err(Error::invalid(format!("GPR takes at most {GPR_MAX_ROWS} training rows, got {n}")));
    }
    solve(&prepare(inputs, p, lengthscale)?, targets, m, KernelKind::Gpr, sigma2)
}

/// Posterior mean and variance per output; the variance is shared by all
/// outputs and repeated.
pub fn gpr_predict(model: &KernelModel, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mean = model.predict(y)?;
    let k = DVector::from_vec(model.kernel_row(&model.standardize(y)));
    let l = model.factor()?.l();
    let v = l.solve_lower_triangular(&k).ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let var = (1.0 + model.regularizer - v.dot(&v)).max(0.0);
    Ok((mean, vec![var; model.n_outputs]))
}

/// `1e-8, 1e-7, …, 1e-1`.
pub fn regularizer_grid() -> Vec<f64> {
    (1..=8).rev().map(|e| 10f64.powi(-e)).collect()
}

/// First `n` indices of a seeded shuffle of `0..total`.
pub fn subset_rows(total: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..total).collect();
    SplitMix64::new(seed).shuffle(&mut idx);
    idx.truncate(n);
    idx
}
