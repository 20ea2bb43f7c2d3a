//! Spectral-level baselines: PCA followed by kernel ridge or Gaussian-process
//! regression of the component scores, and a direct MLP regressor.

mod kernel;
mod mlp;
mod pca;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kernel::{
    gpr_fit, gpr_predict, krr_fit, krr_predict, median_heuristic, regularizer_grid, subset_rows, KernelKind,
    KernelModel, GPR_MAX_ROWS,
};
pub use mlp::{mlp_init, mlp_predict, mlp_predict_batch, mlp_train, MlpModel, MLP_HIDDEN};
pub use pca::{pca_fit, pca_project, pca_reconstruct, PcaModel};

use crate::error::{Error, Result};
use crate::hsdata::{HyperspectralCube, ParameterMap};
use crate::training::SpectralData;

pub const DEFAULT_COMPONENTS: usize = 2;

/// PCA basis plus a kernel regressor of its scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaKernelEmulator {
    pub param_names: Vec<String>,
    pub wavelengths_nm: Vec<f64>,
    pub pca: PcaModel,
    pub kernel: KernelModel,
}

impl PcaKernelEmulator {
    pub fn predict(&self, y: &[f64]) -> Result<Vec<f64>> {
        pca_reconstruct(&self.pca, &self.kernel.predict(y)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaKernelConfig {
    pub kind: KernelKind,
    pub components: usize,
    /// Candidate `λ` / `σ²` values; more than one needs a validation set.
    pub regularizers: Vec<f64>,
    pub lengthscale: Option<f64>,
    pub max_rows: usize,
}

impl PcaKernelConfig {
    pub fn new(kind: KernelKind) -> Self {
        Self {
            kind,
            components: DEFAULT_COMPONENTS,
            regularizers: vec![1e-3],
            lengthscale: None,
            max_rows: GPR_MAX_ROWS,
        }
    }
}

/// One validation score of the regularizer search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub regularizer: f64,
    pub val_rmse: f64,
}

fn rmse_on(model: &PcaKernelEmulator, data: &SpectralData) -> Result<f64> {
    let mut se = 0.0;
    for i in 0..data.len() {
        let s = model.predict(data.input(i))?;
        se += s.iter().zip(data.target(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok((se / (data.len() * data.bands()).max(1) as f64).sqrt())
}

/// Fits PCA on all of `train`, then the kernel regressor on the first
/// `max_rows` rows of a seeded shuffle. With several regularizers, keeps the
/// one with the lowest spectral RMSE on `val`.
pub fn fit_pca_kernel(
    train: &SpectralData,
    val: Option<&SpectralData>,
    cfg: &PcaKernelConfig,
    seed: u64,
) -> Result<(PcaKernelEmulator, Vec<Candidate>)> {
    if cfg.regularizers.is_empty() {
        return Err(Error::invalid("no regularizer candidates"));
    }
    if cfg.regularizers.len() > 1 && val.is_none() {
        return Err(Error::invalid("choosing among regularizers needs a validation set"));
    }
    if cfg.max_rows == 0 {
        return Err(Error::invalid("max_rows must be positive"));
    }
    let pca = pca_fit(&train.targets, train.bands(), cfg.components)?;
    let rows = subset_rows(train.len(), cfg.max_rows.min(train.len()), seed);
    let sub = train.subset(&rows);
    let mut scores = Vec::with_capacity(sub.len() * cfg.components);
    for i in 0..sub.len() {
        scores.extend(pca_project(&pca, sub.target(i))?);
    }
    let (p, m) = (sub.n_params(), cfg.components);
    let prep = kernel::prepare(&sub.inputs, p, cfg.lengthscale)?;
    let mut best: Option<(f64, PcaKernelEmulator)> = None;
    let mut table = Vec::new();
    for &reg in &cfg.regularizers {
        let valid = match cfg.kind {
            KernelKind::Krr => reg > 0.0,
            KernelKind::Gpr => reg >= 0.0,
        };
        if !valid || !reg.is_finite() {
            return Err(Error::invalid(format!("invalid regularizer {reg}")));
        }
        if cfg.kind == KernelKind::Gpr && sub.len() > GPR_MAX_ROWS {
            return Err(Error::invalid(format!("GPR takes at most {GPR_MAX_ROWS} rows")));
        }
        let kernel = match kernel::solve(&prep, &scores, m, cfg.kind, reg) {
            Ok(k) => k,
            Err(Error::Singular(_)) if cfg.regularizers.len() > 1 => continue,
            Err(e) => return Err(e),
        };
        let model = PcaKernelEmulator {
            param_names: train.names.clone(),
            wavelengths_nm: train.wavelengths_nm.to_vec(),
            pca: pca.clone(),
            kernel,
        };
        let score = match val {
            Some(v) if cfg.regularizers.len() > 1 => rmse_on(&model, v)?,
            _ => 0.0,
        };
        table.push(Candidate { regularizer: reg, val_rmse: score });
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, model));
        }
    }
    let (_, model) = best.ok_or_else(|| Error::Singular("every regularizer candidate failed".into()))?;
    Ok((model, table))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassicalModel {
    PcaKernel(PcaKernelEmulator),
    Mlp(MlpModel),
}

impl ClassicalModel {
    pub fn param_names(&self) -> &[String] {
        match self {
            ClassicalModel::PcaKernel(m) => &m.param_names,
            ClassicalModel::Mlp(m) => &m.scaling.param_names,
        }
    }

    pub fn wavelengths_nm(&self) -> &[f64] {
        match self {
            ClassicalModel::PcaKernel(m) => &m.wavelengths_nm,
            ClassicalModel::Mlp(m) => &m.scaling.wavelengths_nm,
        }
    }
}

/// Per-pixel prediction, PCA reconstruction where applicable, clamped to
/// `[0, 1]`. Masked map pixels come out masked and zero.
pub fn emulate_classical(model: &ClassicalModel, map: &ParameterMap) -> Result<HyperspectralCube> {
    if map.names() != model.param_names() {
        return Err(Error::shape(format!("model expects parameters {:?}, got {:?}", model.param_names(), map.names())));
    }
    let (h, w, p) = (map.height(), map.width(), map.n_params());
    let b = model.wavelengths_nm().len();
    let rows: Vec<Result<Vec<f64>>> = (0..h)
        .into_par_iter()
        .map(|r| {
            let ys: Vec<f64> = map.values()[r * w * p..(r + 1) * w * p].iter().map(|&v| v as f64).collect();
            let mut out = match model {
                ClassicalModel::Mlp(m) => mlp_predict_batch(m, &ys)?,
                ClassicalModel::PcaKernel(m) => {
                    let mut o = Vec::with_capacity(w * b);
                    for y in ys.chunks_exact(p) {
                        o.extend(m.predict(y)?);
                    }
                    o
                }
            };
            for c in 0..w {
                if !map.is_valid(r, c) {
                    out[c * b..(c + 1) * b].fill(0.0);
                }
            }
            Ok(out)
        })
        .collect();
    let mut values = Vec::with_capacity(h * w * b);
    for r in rows {
        values.extend(r?);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("emulated spectrum".into()));
    }
    let cube = HyperspectralCube::from_f64(h, w, model.wavelengths_nm().to_vec(), &values)?;
    match map.mask() {
        Some(m) => cube.with_mask(m.to_vec()),
        None => Ok(cube),
    }
}
