//! Training sets shared by the neural emulators: pixel-level spectra,
//! whole-cube pairs, and the input/output scaling fitted on them.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsdata::{HyperspectralCube, ParameterMap};
use crate::rng::SplitMix64;

/// Row-major parameter vectors and spectra, one row per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    pub names: Vec<String>,
    pub ranges: Vec<(f64, f64)>,
    pub wavelengths_nm: Arc<[f64]>,
    /// `len × n_params`
    pub inputs: Vec<f64>,
    /// `len × bands`
    pub targets: Vec<f64>,
}

impl SpectralData {
    pub fn len(&self) -> usize {
        self.inputs.len() / self.n_params().max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn bands(&self) -> usize {
        self.wavelengths_nm.len()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let p = self.n_params();
        &self.inputs[i * p..(i + 1) * p]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        let b = self.bands();
        &self.targets[i * b..(i + 1) * b]
    }

    /// Every valid pixel of every pair, in cube then row-major order.
    pub fn from_pairs(pairs: &[(ParameterMap, HyperspectralCube)]) -> Result<Self> {
        let all: Vec<(usize, usize)> = pairs
            .iter()
            .enumerate()
            .flat_map(|(k, (m, c))| {
                (0..m.height() * m.width())
                    .filter(move |&i| {
                        let (r, col) = (i / m.width(), i % m.width());
                        m.is_valid(r, col) && c.is_valid(r, col)
                    })
                    .map(move |i| (k, i))
            })
            .collect();
        Self::gather(pairs, &all)
    }

    /// `count` pixels drawn without replacement (seeded) from all valid
    /// pixels of `pairs`; all of them when `count` exceeds the total.
    pub fn sample_pairs(pairs: &[(ParameterMap, HyperspectralCube)], count: usize, seed: u64) -> Result<Self> {
        let mut all: Vec<(usize, usize)> = Vec::new();
        for (k, (m, c)) in pairs.iter().enumerate() {
            for i in 0..m.height() * m.width() {
                let (r, col) = (i / m.width(), i % m.width());
                if m.is_valid(r, col) && c.is_valid(r, col) {
                    all.push((k, i));
                }
            }
        }
        SplitMix64::new(seed).shuffle(&mut all);
        all.truncate(count);
        Self::gather(pairs, &all)
    }

    fn gather(pairs: &[(ParameterMap, HyperspectralCube)], picks: &[(usize, usize)]) -> Result<Self> {
        let (map0, cube0) = pairs.first().ok_or_else(|| Error::invalid("no (map, cube) pairs given"))?;
        for (m, c) in pairs {
            if m.names() != map0.names() || c.wavelengths_nm() != cube0.wavelengths_nm() {
                return Err(Error::shape("pairs disagree on parameter names or band grid"));
            }
            if m.height() != c.height() || m.width() != c.width() {
                return Err(Error::shape("map and cube sizes differ"));
            }
        }
        let (p, b) = (map0.n_params(), cube0.bands());
        let mut inputs = Vec::with_capacity(picks.len() * p);
        let mut targets = Vec::with_capacity(picks.len() * b);
        for &(k, i) in picks {
            let (m, c) = &pairs[k];
            inputs.extend(m.values()[i * p..(i + 1) * p].iter().map(|&v| v as f64));
            targets.extend(c.values()[i * b..(i + 1) * b].iter().map(|&v| v as f64));
        }
        Ok(Self {
            names: map0.names().to_vec(),
            ranges: map0.ranges().to_vec(),
            wavelengths_nm: cube0.wavelengths_arc(),
            inputs,
            targets,
        })
    }

    /// Rows `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut inputs = Vec::with_capacity(indices.len() * self.n_params());
        let mut targets = Vec::with_capacity(indices.len() * self.bands());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            targets.extend_from_slice(self.target(i));
        }
        Self {
            names: self.names.clone(),
            ranges: self.ranges.clone(),
            wavelengths_nm: Arc::clone(&self.wavelengths_nm),
            inputs,
            targets,
        }
    }
}

/// Min-max scaling of parameters onto `[0, 1]` and per-band standardization
/// of spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub param_names: Vec<String>,
    pub param_ranges: Vec<(f64, f64)>,
    pub band_mean: Vec<f64>,
    pub band_std: Vec<f64>,
    pub wavelengths_nm: Vec<f64>,
}

impl Scaling {
    /// Pass-through scaling for `n_params` inputs and the 400 + 10·b nm grid.
    pub fn identity(n_params: usize, bands: usize) -> Self {
        Self {
            param_names: (0..n_params).map(|i| format!("p{i}")).collect(),
            param_ranges: vec![(0.0, 1.0); n_params],
            band_mean: vec![0.0; bands],
            band_std: vec![1.0; bands],
            wavelengths_nm: (0..bands).map(|b| 400.0 + 10.0 * b as f64).collect(),
        }
    }

    pub fn fit(data: &SpectralData) -> Self {
        let b = data.bands();
        let n = data.len().max(1) as f64;
        let mut mean = vec![0.0; b];
        for row in data.targets.chunks_exact(b) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; b];
        for row in data.targets.chunks_exact(b) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-6 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self {
            param_names: data.names.clone(),
            param_ranges: data.ranges.clone(),
            band_mean: mean,
            band_std: std,
            wavelengths_nm: data.wavelengths_nm.to_vec(),
        }
    }

    pub fn fit_pairs(pairs: &[(ParameterMap, HyperspectralCube)]) -> Result<Self> {
        Ok(Self::fit(&SpectralData::from_pairs(pairs)?))
    }

    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn bands(&self) -> usize {
        self.band_mean.len()
    }

    pub fn scale_param(&self, k: usize, v: f64) -> f64 {
        let (lo, hi) = self.param_ranges[k];
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    pub fn scale_band(&self, b: usize, v: f64) -> f64 {
        (v - self.band_mean[b]) / self.band_std[b]
    }

    pub fn unscale_band(&self, b: usize, v: f64) -> f64 {
        self.band_mean[b] + self.band_std[b] * v
    }

    /// Errors unless `names` matches the fitted parameter order.
    pub fn check_params(&self, names: &[String]) -> Result<()> {
        if names != self.param_names.as_slice() {
            return Err(Error::shape(format!("model expects parameters {:?}, got {:?}", self.param_names, names)));
        }
        Ok(())
    }

    pub fn check_bands(&self, wavelengths: &[f64]) -> Result<()> {
        if wavelengths != self.wavelengths_nm.as_slice() {
            return Err(Error::shape("band grid differs from the model's"));
        }
        Ok(())
    }
}

/// One epoch of training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: String,
    pub epoch: usize,
    pub lr: f64,
    pub beta: f64,
    pub patch_size: usize,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "phase,epoch,lr,beta,patch_size,recon,kl,total";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{:e},{},{:e},{:e},{:e}",
            self.phase, self.epoch, self.lr, self.beta, self.patch_size, self.recon, self.kl, self.total
        )
    }
}
