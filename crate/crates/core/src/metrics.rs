//! Image-quality scores for emulated cubes, throughput timing and scatter
//! export. Every score skips pixels masked in either cube.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hsdata::{HyperspectralCube, ParameterMap};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(a: &HyperspectralCube, b: &HyperspectralCube) -> Result<Vec<bool>> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!(
            "cubes differ: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.bands(),
            b.height(),
            b.width(),
            b.bands()
        )));
    }
    if a.wavelengths_nm() != b.wavelengths_nm() {
        return Err(Error::shape("cubes have different band grids"));
    }
    let valid: Vec<bool> = (0..a.pixels())
        .map(|i| {
            let (r, c) = (i / a.width(), i % a.width());
            a.is_valid(r, c) && b.is_valid(r, c)
        })
        .collect();
    if !valid.contains(&true) {
        return Err(Error::invalid("no pixel is valid in both cubes"));
    }
    Ok(valid)
}

/// Mean squared difference over valid `(pixel, band)` entries.
pub fn mse(reference: &HyperspectralCube, emulated: &HyperspectralCube) -> Result<f64> {
    let valid = check_pair(reference, emulated)?;
    let b = reference.bands();
    let (mut s, mut n) = (0.0, 0usize);
    for (i, (x, y)) in reference.values().chunks_exact(b).zip(emulated.values().chunks_exact(b)).enumerate() {
        if valid[i] {
            s += x.iter().zip(y).map(|(&p, &q)| (p as f64 - q as f64).powi(2)).sum::<f64>();
            n += b;
        }
    }
    Ok(s / n as f64)
}

pub fn rmse(reference: &HyperspectralCube, emulated: &HyperspectralCube) -> Result<f64> {
    Ok(mse(reference, emulated)?.sqrt())
}

/// `10·log10(max² / mse)`; `+∞` when `mse = 0`.
pub fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_value * max_value / mse).log10()
    }
}

pub fn psnr(reference: &HyperspectralCube, emulated: &HyperspectralCube, max_value: f64) -> Result<f64> {
    if !(max_value > 0.0) {
        return Err(Error::invalid("PSNR peak value must be positive"));
    }
    Ok(psnr_from_mse(mse(reference, emulated)?, max_value))
}

/// Angle in radians between two spectra; errors if either has zero norm.
pub fn spectrum_angle(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    // half-angle form: exact zero for identical directions, no acos rounding near 0
    let (mut dm, mut dp) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        dm += (u - v) * (u - v);
        dp += (u + v) * (u + v);
    }
    Some(2.0 * dm.sqrt().atan2(dp.sqrt()))
}

/// Mean per-pixel spectral angle in radians.
pub fn spectral_angle(reference: &HyperspectralCube, emulated: &HyperspectralCube) -> Result<f64> {
    let valid = check_pair(reference, emulated)?;
    let (w, b) = (reference.width(), reference.bands());
    let mut s = 0.0;
    let mut n = 0usize;
    let mut x = vec![0.0; b];
    let mut y = vec![0.0; b];
    for i in 0..reference.pixels() {
        if !valid[i] {
            continue;
        }
        for k in 0..b {
            x[k] = reference.values()[i * b + k] as f64;
            y[k] = emulated.values()[i * b + k] as f64;
        }
        s += spectrum_angle(&x, &y).ok_or(Error::ZeroNorm { row: i / w, col: i % w })?;
        n += 1;
    }
    Ok(s / n as f64)
}

/// SSIM constants and window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub dynamic_range: f64,
    pub window: usize,
    pub sigma: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { dynamic_range: 1.0, window: SSIM_WINDOW, sigma: SSIM_SIGMA }
    }
}

fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output is `(h − k + 1) × (w − k + 1)`.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            tmp[r * ow + c] = taps.iter().enumerate().map(|(t, g)| g * img[r * w + c + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps.iter().enumerate().map(|(t, g)| g * tmp[(r + t) * ow + c]).sum();
        }
    }
    out
}

fn ssim_term(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// SSIM of two single-band images with an optional validity mask.
pub fn ssim_image(x: &[f64], y: &[f64], h: usize, w: usize, valid: Option<&[bool]>, p: &SsimParams) -> Result<f64> {
    if x.len() != h * w || y.len() != h * w {
        return Err(Error::shape("image sizes differ"));
    }
    let c1 = (SSIM_K1 * p.dynamic_range).powi(2);
    let c2 = (SSIM_K2 * p.dynamic_range).powi(2);
    let m: Vec<f64> = (0..h * w).map(|i| if valid.is_none_or(|v| v[i]) { 1.0 } else { 0.0 }).collect();
    if h < p.window || w < p.window {
        // global statistics over valid pixels
        let n: f64 = m.iter().sum();
        if n == 0.0 {
            return Err(Error::invalid("no valid pixels"));
        }
        let mean = |v: &[f64]| v.iter().zip(&m).map(|(a, k)| a * k).sum::<f64>() / n;
        let (mx, my) = (mean(x), mean(y));
        let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
        for i in 0..h * w {
            vx += m[i] * (x[i] - mx) * (x[i] - mx);
            vy += m[i] * (y[i] - my) * (y[i] - my);
            cxy += m[i] * (x[i] - mx) * (y[i] - my);
        }
        return Ok(ssim_term(mx, my, vx / n, vy / n, cxy / n, c1, c2));
    }
    let taps = gaussian_taps(p.window, p.sigma);
    let prod = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..h * w).map(|i| m[i] * f(i)).collect() };
    let sm = filter_valid(&m, h, w, &taps);
    let sx = filter_valid(&prod(&|i| x[i]), h, w, &taps);
    let sy = filter_valid(&prod(&|i| y[i]), h, w, &taps);
    let sxx = filter_valid(&prod(&|i| x[i] * x[i]), h, w, &taps);
    let syy = filter_valid(&prod(&|i| y[i] * y[i]), h, w, &taps);
    let sxy = filter_valid(&prod(&|i| x[i] * y[i]), h, w, &taps);
    let ow = w - p.window + 1;
    let half = p.window / 2;
    let (mut total, mut count) = (0.0, 0usize);
    for j in 0..sm.len() {
        let (r, c) = (j / ow + half, j % ow + half);
        if m[r * w + c] == 0.0 {
            continue;
        }
        let wsum = sm[j];
        let (mx, my) = (sx[j] / wsum, sy[j] / wsum);
        let vx = sxx[j] / wsum - mx * mx;
        let vy = syy[j] / wsum - my * my;
        let cxy = sxy[j] / wsum - mx * my;
        total += ssim_term(mx, my, vx, vy, cxy, c1, c2);
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("no window is centred on a valid pixel"));
    }
    Ok(total / count as f64)
}

/// Per-band SSIM averaged over bands.
pub fn ssim_with(reference: &HyperspectralCube, emulated: &HyperspectralCube, p: &SsimParams) -> Result<f64> {
    let valid = check_pair(reference, emulated)?;
    let (h, w) = (reference.height(), reference.width());
    let all_valid = valid.iter().all(|&v| v);
    let per_band: Vec<Result<f64>> = (0..reference.bands())
        .into_par_iter()
        .map(|b| {
            ssim_image(
                &reference.band_image(b),
                &emulated.band_image(b),
                h,
                w,
                (!all_valid).then_some(valid.as_slice()),
                p,
            )
        })
        .collect();
    let n = per_band.len();
    let mut s = 0.0;
    for v in per_band {
        s += v?;
    }
    Ok(s / n as f64)
}

pub fn ssim(reference: &HyperspectralCube, emulated: &HyperspectralCube) -> Result<f64> {
    ssim_with(reference, emulated, &SsimParams::default())
}

/// Pearson correlation; `NaN` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return f64::NAN;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Valid-pixel values of one band from both cubes.
fn band_pairs(
    reference: &HyperspectralCube,
    emulated: &HyperspectralCube,
    band: usize,
    valid: &[bool],
) -> (Vec<f64>, Vec<f64>) {
    let b = reference.bands();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..reference.pixels() {
        if valid[i] {
            x.push(reference.values()[i * b + band] as f64);
            y.push(emulated.values()[i * b + band] as f64);
        }
    }
    (x, y)
}

/// All four scores plus per-band correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rmse: f64,
    pub ssim: f64,
    pub sa_radians: f64,
    pub psnr_db: f64,
    pub band_correlation: Vec<f64>,
    pub wavelengths_nm: Vec<f64>,
    pub valid_pixels: usize,
    pub masked_pixels: usize,
}

pub fn evaluate(reference: &HyperspectralCube, emulated: &HyperspectralCube) -> Result<MetricsReport> {
    let valid = check_pair(reference, emulated)?;
    let m = mse(reference, emulated)?;
    let band_correlation = (0..reference.bands())
        .map(|b| {
            let (x, y) = band_pairs(reference, emulated, b, &valid);
            pearson(&x, &y)
        })
        .collect();
    let valid_pixels = valid.iter().filter(|&&v| v).count();
    Ok(MetricsReport {
        rmse: m.sqrt(),
        ssim: ssim(reference, emulated)?,
        sa_radians: spectral_angle(reference, emulated)?,
        psnr_db: psnr_from_mse(m, 1.0),
        band_correlation,
        wavelengths_nm: reference.wavelengths_nm().to_vec(),
        valid_pixels,
        masked_pixels: valid.len() - valid_pixels,
    })
}

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:e}")
    }
}

impl MetricsReport {
    /// Summary row block followed by the per-band correlation table.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# valid_pixels={} masked_pixels={}", self.valid_pixels, self.masked_pixels);
        s.push_str("metric,value\n");
        for (k, v) in
            [("rmse", self.rmse), ("ssim", self.ssim), ("sa_radians", self.sa_radians), ("psnr_db", self.psnr_db)]
        {
            let _ = writeln!(s, "{k},{}", fmt_f(v));
        }
        s.push_str("band,wavelength_nm,pearson_r\n");
        for (i, (w, r)) in self.wavelengths_nm.iter().zip(&self.band_correlation).enumerate() {
            let _ = writeln!(s, "{i},{w},{}", fmt_f(*r));
        }
        s
    }
}

/// Writes `(ref, emu)` pairs of one band with the Pearson r in a `#` header
/// and returns r.
pub fn scatter_export(
    reference: &HyperspectralCube,
    emulated: &HyperspectralCube,
    band: usize,
    path: impl AsRef<Path>,
) -> Result<f64> {
    let valid = check_pair(reference, emulated)?;
    if band >= reference.bands() {
        return Err(Error::invalid(format!("band {band} out of {}", reference.bands())));
    }
    let (x, y) = band_pairs(reference, emulated, band, &valid);
    let r = pearson(&x, &y);
    let mut s = String::new();
    let _ = writeln!(s, "# band={band} wavelength_nm={}", reference.wavelengths_nm()[band]);
    let _ = writeln!(s, "# pearson_r={} count={}", fmt_f(r), x.len());
    s.push_str("reference,emulated\n");
    for (a, b) in x.iter().zip(&y) {
        let _ = writeln!(s, "{a},{b}");
    }
    let path = path.as_ref();
    std::fs::write(path, s).map_err(|source| Error::IoAt { path: path.to_path_buf(), source })?;
    Ok(r)
}

/// Wall-clock timings of repeated emulation passes.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub images: usize,
    pub workers: usize,
    /// Seconds per full pass over all maps, warm-up excluded.
    pub timings_s: Vec<f64>,
    pub median_s: f64,
    pub images_per_second: f64,
    pub per_worker_images_per_second: f64,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("# images={} workers={}\nrun,seconds\n", self.images, self.workers);
        for (i, t) in self.timings_s.iter().enumerate() {
            let _ = writeln!(s, "{i},{t:e}");
        }
        let _ = writeln!(s, "median,{:e}", self.median_s);
        let _ = writeln!(s, "images_per_second,{:e}", self.images_per_second);
        let _ = writeln!(s, "per_worker_images_per_second,{:e}", self.per_worker_images_per_second);
        s
    }
}

/// Times `repeats` passes of `emulate` over `maps` on a pool of `workers`
/// threads after one untimed warm-up pass; reports the median.
pub fn throughput_bench<F>(emulate: F, maps: &[ParameterMap], repeats: usize, workers: usize) -> Result<BenchReport>
where
    F: Fn(&ParameterMap) -> Result<HyperspectralCube> + Sync,
{
    if repeats == 0 || workers == 0 || maps.is_empty() {
        return Err(Error::invalid("bench needs maps, repeats >= 1 and workers >= 1"));
    }
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| Error::invalid(e.to_string()))?;
    let pass = || -> Result<()> { pool.install(|| maps.par_iter().try_for_each(|m| emulate(m).map(|_| ()))) };
    pass()?;
    let mut timings = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        pass()?;
        timings.push(t.elapsed().as_secs_f64());
    }
    let mut sorted = timings.clone();
    sorted.sort_by(f64::total_cmp);
    let median =
        if repeats % 2 == 1 { sorted[repeats / 2] } else { 0.5 * (sorted[repeats / 2 - 1] + sorted[repeats / 2]) };
    let rate = maps.len() as f64 / median.max(1e-12);
    Ok(BenchReport {
        images: maps.len(),
        workers,
        timings_s: timings,
        median_s: median,
        images_per_second: rate,
        per_worker_images_per_second: rate / workers as f64,
    })
}
