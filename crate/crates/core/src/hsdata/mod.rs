//! Cubes, parameter maps, spectra and dataset splits.
//!
//! Layout is row-major and pixel-major: `values[(row * width + col) * bands + band]`,
//! so every pixel's spectrum is a contiguous slice.

mod io;

use std::sync::Arc;

pub use io::{read_cube, read_map, write_cube, write_map, CUBE_MAGIC, MAP_MAGIC};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// H×W×B reflectance volume stored as 32-bit floats in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperspectralCube {
    height: usize,
    width: usize,
    wavelengths_nm: Arc<[f64]>,
    values: Vec<f32>,
    mask: Option<Vec<bool>>,
}

impl HyperspectralCube {
    /// Builds a cube, clamping every value into `[0, 1]`.
    ///
    /// Non-finite values are rejected rather than clamped.
    pub fn new(
        height: usize,
        width: usize,
        wavelengths_nm: impl Into<Arc<[f64]>>,
        mut values: Vec<f32>,
    ) -> Result<Self> {
        let wavelengths_nm = wavelengths_nm.into();
        let bands = wavelengths_nm.len();
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::invalid(format!("cube dimensions must be positive, got {height}x{width}x{bands}")));
        }
        check_wavelengths(&wavelengths_nm)?;
        let expected = checked_volume(&[height, width, bands])?;
        if values.len() != expected {
            return Err(Error::shape(format!("cube payload has {} values, expected {expected}", values.len())));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("cube value at flat index {pos}")));
        }
        for v in &mut values {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self { height, width, wavelengths_nm, values, mask: None })
    }

    pub fn from_f64(
        height: usize,
        width: usize,
        wavelengths_nm: impl Into<Arc<[f64]>>,
        values: &[f64],
    ) -> Result<Self> {
        Self::new(height, width, wavelengths_nm, values.iter().map(|&v| v as f32).collect())
    }

    pub fn zeros(height: usize, width: usize, wavelengths_nm: impl Into<Arc<[f64]>>) -> Result<Self> {
        let wavelengths_nm = wavelengths_nm.into();
        let n = checked_volume(&[height, width, wavelengths_nm.len()])?;
        Self::new(height, width, wavelengths_nm, vec![0.0; n])
    }

    /// Attaches a validity mask (`true` = valid pixel).
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.height * self.width {
            return Err(Error::shape(format!(
                "mask has {} entries, cube has {} pixels",
                mask.len(),
                self.height * self.width
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn without_mask(mut self) -> Self {
        self.mask = None;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.wavelengths_nm.len()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn wavelengths_nm(&self) -> &[f64] {
        &self.wavelengths_nm
    }

    pub fn wavelengths_arc(&self) -> Arc<[f64]> {
        Arc::clone(&self.wavelengths_nm)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[row * self.width + col])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.as_ref().map_or(self.pixels(), |m| m.iter().filter(|&&v| v).count())
    }

    /// Spectrum of pixel `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let b = self.bands();
        let start = (row * self.width + col) * b;
        &self.values[start..start + b]
    }

    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.values[(row * self.width + col) * self.bands() + band]
    }

    /// Band `band` as a row-major H×W image in f64.
    pub fn band_image(&self, band: usize) -> Vec<f64> {
        let b = self.bands();
        self.values.iter().skip(band).step_by(b).map(|&v| v as f64).collect()
    }

    pub fn spectrum(&self, row: usize, col: usize) -> Spectrum {
        Spectrum {
            wavelengths_nm: self.wavelengths_arc(),
            values: self.pixel(row, col).iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn same_shape(&self, other: &HyperspectralCube) -> bool {
        self.height == other.height && self.width == other.width && self.bands() == other.bands()
    }
}

/// H×W×P biophysical parameter fields.
///
/// Values are held at 32-bit precision so that the on-disk format round-trips
/// exactly; conversion rounds toward the interior of each declared range.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMap {
    height: usize,
    width: usize,
    names: Vec<String>,
    ranges: Vec<(f64, f64)>,
    values: Vec<f32>,
    mask: Option<Vec<bool>>,
}

impl ParameterMap {
    pub fn new(
        height: usize,
        width: usize,
        names: Vec<String>,
        ranges: Vec<(f64, f64)>,
        values: &[f64],
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("parameter map dimensions must be positive"));
        }
        if names.is_empty() {
            return Err(Error::invalid("parameter map needs at least one parameter"));
        }
        if names.len() != ranges.len() {
            return Err(Error::shape(format!("{} names but {} ranges", names.len(), ranges.len())));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::invalid(format!("duplicate parameter name {n:?}")));
            }
        }
        for (n, &(lo, hi)) in names.iter().zip(&ranges) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::invalid(format!("invalid range [{lo}, {hi}] for {n}")));
            }
        }
        let p = names.len();
        let expected = checked_volume(&[height, width, p])?;
        if values.len() != expected {
            return Err(Error::shape(format!("map payload has {} values, expected {expected}", values.len())));
        }
        let mut stored = Vec::with_capacity(expected);
        for (i, &v) in values.iter().enumerate() {
            let k = i % p;
            let (lo, hi) = ranges[k];
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("parameter {} at flat index {i}", names[k])));
            }
            if v < lo || v > hi {
                return Err(Error::OutOfRange { name: names[k].clone(), value: v, min: lo, max: hi });
            }
            stored.push(to_f32_within(v, lo, hi));
        }
        Ok(Self { height, width, names, ranges, values: stored, mask: None })
    }

    /// Builds a map from already-stored 32-bit values (used by the reader).
    pub(crate) fn from_f32(
        height: usize,
        width: usize,
        names: Vec<String>,
        ranges: Vec<(f64, f64)>,
        values: Vec<f32>,
    ) -> Result<Self> {
        let as64: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let map = Self::new(height, width, names, ranges, &as64)?;
        debug_assert_eq!(map.values, values);
        Ok(map)
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.height * self.width {
            return Err(Error::shape("mask size does not match map"));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[row * self.width + col])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Parameter vector of pixel `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> Vec<f64> {
        let p = self.n_params();
        let start = (row * self.width + col) * p;
        self.values[start..start + p].iter().map(|&v| v as f64).collect()
    }

    /// Row-major H×W field of one parameter.
    pub fn field(&self, index: usize) -> Vec<f64> {
        self.values.iter().skip(index).step_by(self.n_params()).map(|&v| v as f64).collect()
    }

    /// Sub-window `[row0, row0+h) × [col0, col0+w)`.
    pub fn crop(&self, row0: usize, col0: usize, h: usize, w: usize) -> Result<Self> {
        if row0 + h > self.height || col0 + w > self.width || h == 0 || w == 0 {
            return Err(Error::invalid("crop window outside map"));
        }
        let p = self.n_params();
        let mut values = Vec::with_capacity(h * w * p);
        for r in row0..row0 + h {
            let start = (r * self.width + col0) * p;
            values.extend_from_slice(&self.values[start..start + w * p]);
        }
        let mask = self.mask.as_ref().map(|m| {
            (row0..row0 + h).flat_map(|r| m[r * self.width + col0..r * self.width + col0 + w].to_vec()).collect()
        });
        Ok(Self { height: h, width: w, names: self.names.clone(), ranges: self.ranges.clone(), values, mask })
    }
}

/// One pixel's spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub wavelengths_nm: Arc<[f64]>,
    pub values: Vec<f64>,
}

impl Spectrum {
    pub fn new(wavelengths_nm: impl Into<Arc<[f64]>>, values: Vec<f64>) -> Result<Self> {
        let wavelengths_nm = wavelengths_nm.into();
        if wavelengths_nm.len() != values.len() {
            return Err(Error::shape(format!(
                "spectrum has {} wavelengths and {} values",
                wavelengths_nm.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectrum value".into()));
        }
        Ok(Self { wavelengths_nm, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Disjoint train/validation/test index sets over `[0, n)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Seeded split: Fisher-Yates permutation, then `round(n·f)` items for the
/// validation and test sets, the remainder for training.
pub fn split_dataset(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (ft, fv, fs) = fractions;
    if n < 3 {
        return Err(Error::invalid(format!("split needs n >= 3, got {n}")));
    }
    if [ft, fv, fs].iter().any(|f| !f.is_finite() || *f < 0.0) || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions ({ft}, {fv}, {fs}) must be nonnegative and sum to 1")));
    }
    let n_val = (n as f64 * fv).round() as usize;
    let n_test = (n as f64 * fs).round() as usize;
    if n_val + n_test > n {
        return Err(Error::invalid("validation and test sets exceed dataset size"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut perm);
    let n_train = n - n_val - n_test;
    let test = perm.split_off(n_train + n_val);
    let val = perm.split_off(n_train);
    Ok(DatasetSplit { train: perm, val, test, seed })
}

/// `(parameter vector, spectrum)` for every pixel valid in both inputs, row-major.
pub fn extract_spectra(cube: &HyperspectralCube, map: &ParameterMap) -> Result<Vec<(Vec<f64>, Spectrum)>> {
    if cube.height() != map.height() || cube.width() != map.width() {
        return Err(Error::shape(format!(
            "cube is {}x{} but map is {}x{}",
            cube.height(),
            cube.width(),
            map.height(),
            map.width()
        )));
    }
    let mut out = Vec::new();
    for r in 0..cube.height() {
        for c in 0..cube.width() {
            if cube.is_valid(r, c) && map.is_valid(r, c) {
                out.push((map.pixel(r, c), cube.spectrum(r, c)));
            }
        }
    }
    Ok(out)
}

pub(crate) fn check_wavelengths(w: &[f64]) -> Result<()> {
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("wavelength".into()));
    }
    if w.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::invalid("wavelengths must be strictly increasing"));
    }
    Ok(())
}

pub(crate) fn checked_volume(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::DimensionOverflow(format!("{dims:?}")))
}

/// Nearest f32 to `v` that still lies inside `[lo, hi]` when widened back to f64.
fn to_f32_within(v: f64, lo: f64, hi: f64) -> f32 {
    let mut f = v as f32;
    if (f as f64) > hi {
        f = f.next_down();
    }
    if (f as f64) < lo {
        f = f.next_up();
    }
    f
}
