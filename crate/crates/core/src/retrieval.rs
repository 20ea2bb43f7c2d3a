//! LUT-based parameter retrieval from (emulated) cubes and relative-error
//! comparison of the retrieved maps.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hsdata::{HyperspectralCube, ParameterMap, Spectrum};
use crate::metrics::spectrum_angle;
use crate::synthrtm::{LookUpTable, RtmParams, PARAM_NAMES};

/// Distance used to pick the nearest LUT row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InversionCost {
    #[default]
    Rmse,
    SpectralAngle,
}

/// Sequential sum of squared differences; the reference definition of the
/// RMSE cost.
fn sse_exact(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += (x - y) * (x - y);
    }
    s
}

/// Eight-lane partial sums, abandoned once they exceed `bound`.
fn sse_bounded(a: &[f64], b: &[f64], bound: f64) -> Option<f64> {
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    let mut blocks = 0;
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
        blocks += 1;
        if blocks % 4 == 0 && acc.iter().sum::<f64>() > bound {
            return None;
        }
    }
    let mut s: f64 = acc.iter().sum();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        s += (x - y) * (x - y);
    }
    (s <= bound).then_some(s)
}

// lane and sequential sums of ≤ a few thousand nonnegative terms agree far
// inside this relative band
const REL_SLACK: f64 = 1e-9;

/// Index of the LUT row nearest to `s` under `cost`; ties go to the lowest
/// row.
pub fn nearest_row(s: &[f64], lut: &LookUpTable, cost: InversionCost) -> Result<usize> {
    let b = lut.band_grid().bands();
    if s.len() != b {
        return Err(Error::shape(format!("spectrum has {} bands, LUT has {b}", s.len())));
    }
    if lut.is_empty() {
        return Err(Error::invalid("empty LUT"));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spectrum to invert".into()));
    }
    match cost {
        InversionCost::Rmse => {
            let mut best = f64::INFINITY;
            let mut near: Vec<(usize, f64)> = Vec::new();
            for row in 0..lut.len() {
                let bound = best * (1.0 + REL_SLACK) + f64::MIN_POSITIVE;
                if let Some(v) = sse_bounded(s, lut.spectrum(row), bound) {
                    if v < best {
                        best = v;
                        let cut = best * (1.0 + REL_SLACK) + f64::MIN_POSITIVE;
                        near.retain(|&(_, u)| u <= cut);
                    }
                    near.push((row, v));
                }
            }
            let mut pick = (usize::MAX, f64::INFINITY);
            for (row, _) in near {
                let r = (sse_exact(s, lut.spectrum(row)) / b as f64).sqrt();
                if r < pick.1 {
                    pick = (row, r);
                }
            }
            Ok(pick.0)
        }
        InversionCost::SpectralAngle => {
            let mut pick = (usize::MAX, f64::INFINITY);
            for row in 0..lut.len() {
                let a = spectrum_angle(s, lut.spectrum(row)).unwrap_or(f64::INFINITY);
                if a < pick.1 {
                    pick = (row, a);
                }
            }
            if pick.0 == usize::MAX {
                return Err(Error::invalid("spectral angle undefined for a zero spectrum"));
            }
            Ok(pick.0)
        }
    }
}

/// Parameters of the LUT row with the smallest RMSE to `s`.
pub fn lut_invert(s: &Spectrum, lut: &LookUpTable) -> Result<RtmParams> {
    lut_invert_with(s, lut, InversionCost::Rmse)
}

pub fn lut_invert_with(s: &Spectrum, lut: &LookUpTable, cost: InversionCost) -> Result<RtmParams> {
    if *s.wavelengths_nm != *lut.band_grid().wavelengths_nm() {
        return Err(Error::shape("spectrum is not on the LUT band grid"));
    }
    Ok(*lut.params(nearest_row(&s.values, lut, cost)?))
}

/// Single-valued raster; `NaN` marks no-data.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ScalarMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Single-parameter map; no-data pixels become masked zeros (or the
    /// range minimum when 0 lies outside it).
    pub fn to_parameter_map(&self, name: &str, range: (f64, f64)) -> Result<ParameterMap> {
        let fill = 0f64.clamp(range.0, range.1);
        let vals: Vec<f64> = self.values.iter().map(|v| if v.is_nan() { fill } else { *v }).collect();
        let map = ParameterMap::new(self.height, self.width, vec![name.to_string()], vec![range], &vals)?;
        if self.values.iter().any(|v| v.is_nan()) {
            map.with_mask(self.values.iter().map(|v| !v.is_nan()).collect())
        } else {
            Ok(map)
        }
    }
}

fn param_index(name: &str) -> Result<usize> {
    PARAM_NAMES
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| Error::invalid(format!("unknown parameter {name:?}; expected one of {PARAM_NAMES:?}")))
}

/// Per-pixel inversion of `cube`, keeping parameter `param`.
pub fn retrieve_map(cube: &HyperspectralCube, lut: &LookUpTable, param: &str) -> Result<ScalarMap> {
    retrieve_map_with(cube, lut, param, InversionCost::Rmse)
}

pub fn retrieve_map_with(
    cube: &HyperspectralCube,
    lut: &LookUpTable,
    param: &str,
    cost: InversionCost,
) -> Result<ScalarMap> {
    let k = param_index(param)?;
    if cube.wavelengths_nm() != lut.band_grid().wavelengths_nm() {
        return Err(Error::shape("cube is not on the LUT band grid"));
    }
    let (w, b) = (cube.width(), cube.bands());
    let values: Vec<Result<f64>> = (0..cube.pixels())
        .into_par_iter()
        .map(|i| {
            if !cube.is_valid(i / w, i % w) {
                return Ok(f64::NAN);
            }
            let s: Vec<f64> = cube.values()[i * b..(i + 1) * b].iter().map(|&v| v as f64).collect();
            Ok(lut.params(nearest_row(&s, lut, cost)?).to_array()[k])
        })
        .collect();
    Ok(ScalarMap { height: cube.height(), width: w, values: values.into_iter().collect::<Result<_>>()? })
}

/// Retrieved map, its pixel-wise relative error and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub retrieved: ScalarMap,
    /// Percent; `NaN` where either map has no data.
    pub error: ScalarMap,
    pub mean_relative_error: f64,
    pub normalization_range: f64,
}

/// `100·|est − ref| / range` per pixel and its mean over pixels valid in both.
pub fn relative_error_map(reference: &ScalarMap, estimate: &ScalarMap, range: f64) -> Result<RetrievalResult> {
    if reference.height != estimate.height || reference.width != estimate.width {
        return Err(Error::shape("retrieved maps differ in size"));
    }
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::invalid(format!("normalization range must be positive, got {range}")));
    }
    let error: Vec<f64> =
        reference.values.iter().zip(&estimate.values).map(|(r, e)| 100.0 * (e - r).abs() / range).collect();
    let valid: Vec<f64> = error.iter().copied().filter(|v| !v.is_nan()).collect();
    if valid.is_empty() {
        return Err(Error::invalid("no pixel has data in both maps"));
    }
    Ok(RetrievalResult {
        retrieved: estimate.clone(),
        error: ScalarMap { height: reference.height, width: reference.width, values: error },
        mean_relative_error: valid.iter().sum::<f64>() / valid.len() as f64,
        normalization_range: range,
    })
}

/// Mean relative error of each emulator's retrieval against the reference
/// cube's own retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamTable {
    pub param: String,
    pub normalization_range: f64,
    pub rows: Vec<(String, f64)>,
}

impl DownstreamTable {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|(n, _)| n == name).map(|r| r.1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# param={} normalization=lut_range range={}\nemulator,mean_relative_error_percent\n",
            self.param, self.normalization_range
        );
        for (n, v) in &self.rows {
            let _ = writeln!(s, "{n},{v}");
        }
        s
    }
}

pub fn compare_emulators_downstream(
    reference: &HyperspectralCube,
    emulated: &[(String, HyperspectralCube)],
    lut: &LookUpTable,
    param: &str,
) -> Result<DownstreamTable> {
    let (lo, hi) = lut.grid().range_of(param).ok_or_else(|| Error::invalid(format!("unknown parameter {param:?}")))?;
    let range = hi - lo;
    let ref_map = retrieve_map(reference, lut, param)?;
    let mut rows = Vec::with_capacity(emulated.len());
    for (name, cube) in emulated {
        let est = retrieve_map(cube, lut, param)?;
        rows.push((name.clone(), relative_error_map(&ref_map, &est, range)?.mean_relative_error));
    }
    Ok(DownstreamTable { param: param.to_string(), normalization_range: range, rows })
}
