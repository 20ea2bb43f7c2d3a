use rayon::prelude::*;

use super::latent::{reparameterize, LatentCode};
use super::model::{Family, VaeEmulator};
use super::train::{cube_planes, map_planes};
use crate::error::{Error, Result};
use crate::hsdata::{HyperspectralCube, ParameterMap};
use crate::nn::{Sequential, Tensor};
use crate::rng::{derive_seed, SplitMix64};

/// Latent choice at emulation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmulationMode {
    /// Decode `z = μ`.
    Mean,
    /// Decode `z = μ + σ·ε` with seeded noise.
    Sample,
}

const PIXEL_CHUNK: usize = 1024;

/// Emulates the cube for `map`. Masked pixels of the map stay masked (and
/// zero) in the output; values are clamped to `[0, 1]`.
pub fn emulate(model: &VaeEmulator, map: &ParameterMap, mode: EmulationMode, seed: u64) -> Result<HyperspectralCube> {
    model.scaling.check_params(map.names())?;
    let p = model.n_params;
    let values = match model.family() {
        Family::P2p => {
            let x: Vec<f64> = map
                .values()
                .chunks_exact(p)
                .flat_map(|px| px.iter().enumerate().map(|(k, &v)| model.scaling.scale_param(k, v as f64)))
                .collect();
            run_pixels(model, &model.interpolator, &x, p, mode, seed)?
        }
        Family::FcVae => {
            let planes = map_planes(&model.scaling, map);
            run_planes(model, &model.interpolator, &planes, p, map.height(), map.width(), mode, seed)?
        }
    };
    finish(model, values, map.height(), map.width(), map.mask())
}

/// Autoencodes `cube` through the encoder and decoder. Needs a two-step
/// model that still has its encoder.
pub fn reconstruct(
    model: &VaeEmulator,
    cube: &HyperspectralCube,
    mode: EmulationMode,
    seed: u64,
) -> Result<HyperspectralCube> {
    let encoder = model.encoder.as_ref().ok_or_else(|| Error::Model("model has no encoder".into()))?;
    model.scaling.check_bands(cube.wavelengths_nm())?;
    let b = model.bands;
    let values = match model.family() {
        Family::P2p => {
            let x: Vec<f64> = cube
                .values()
                .chunks_exact(b)
                .flat_map(|px| px.iter().enumerate().map(|(k, &v)| model.scaling.scale_band(k, v as f64)))
                .collect();
            run_pixels(model, encoder, &x, b, mode, seed)?
        }
        Family::FcVae => {
            let planes = cube_planes(&model.scaling, cube);
            run_planes(model, encoder, &planes, b, cube.height(), cube.width(), mode, seed)?
        }
    };
    finish(model, values, cube.height(), cube.width(), cube.mask())
}

fn finish(
    model: &VaeEmulator,
    mut values: Vec<f64>,
    h: usize,
    w: usize,
    mask: Option<&[bool]>,
) -> Result<HyperspectralCube> {
    if let Some(mask) = mask {
        for (px, &ok) in values.chunks_exact_mut(model.bands).zip(mask) {
            if !ok {
                px.fill(0.0);
            }
        }
    }
    let cube = HyperspectralCube::from_f64(h, w, model.scaling.wavelengths_nm.clone(), &values)?;
    match mask {
        Some(m) => cube.with_mask(m.to_vec()),
        None => Ok(cube),
    }
}

fn unscale_into(model: &VaeEmulator, row: &[f64], out: &mut [f64]) {
    for (b, (o, &v)) in out.iter_mut().zip(row).enumerate() {
        *o = model.scaling.unscale_band(b, v);
    }
}

fn decode(
    model: &VaeEmulator,
    head: &Tensor,
    mode: EmulationMode,
    noise: impl FnOnce(&[usize]) -> Tensor,
) -> Result<Tensor> {
    let code = LatentCode::from_head(head)?;
    let z = match mode {
        EmulationMode::Mean => code.mu,
        EmulationMode::Sample => {
            let eps = noise(code.mu.shape());
            reparameterize(&code, &eps)?
        }
    };
    model.decoder.forward(&z)
}

fn run_pixels(
    model: &VaeEmulator,
    front: &Sequential,
    inputs: &[f64],
    c: usize,
    mode: EmulationMode,
    seed: u64,
) -> Result<Vec<f64>> {
    let (b, z) = (model.bands, model.latent_dim);
    let n = inputs.len() / c;
    let chunks: Vec<Result<Vec<f64>>> = (0..n.div_ceil(PIXEL_CHUNK))
        .into_par_iter()
        .map(|ci| {
            let lo = ci * PIXEL_CHUNK;
            let hi = (lo + PIXEL_CHUNK).min(n);
            let head = front.forward(&Tensor::new(vec![hi - lo, c], inputs[lo * c..hi * c].to_vec())?)?;
            let out = decode(model, &head, mode, |shape| {
                let mut data = Vec::with_capacity(shape.iter().product());
                for i in lo..hi {
                    let mut rng = SplitMix64::new(derive_seed(seed, i as u64));
                    data.extend((0..z).map(|_| rng.next_normal()));
                }
                Tensor::new(shape.to_vec(), data).expect("noise shape")
            })?;
            let mut vals = vec![0.0; (hi - lo) * b];
            for (dst, src) in vals.chunks_exact_mut(b).zip(out.data().chunks_exact(b)) {
                unscale_into(model, src, dst);
            }
            Ok(vals)
        })
        .collect();
    let mut values = Vec::with_capacity(n * b);
    for c in chunks {
        values.extend(c?);
    }
    Ok(values)
}

#[allow(clippy::too_many_arguments)]
fn run_planes(
    model: &VaeEmulator,
    front: &Sequential,
    planes: &[f64],
    p: usize,
    h: usize,
    w: usize,
    mode: EmulationMode,
    seed: u64,
) -> Result<Vec<f64>> {
    let b = model.bands;
    let m = model.spatial_multiple();
    let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    // edge-replicate up to a multiple of the downsampling factor
    let mut x = vec![0.0; p * hp * wp];
    for k in 0..p {
        for r in 0..hp {
            for c in 0..wp {
                x[(k * hp + r) * wp + c] = planes[(k * h + r.min(h - 1)) * w + c.min(w - 1)];
            }
        }
    }
    let head = front.forward(&Tensor::new(vec![1, p, hp, wp], x)?)?;
    let out = decode(model, &head, mode, |shape| {
        let mut rng = SplitMix64::new(derive_seed(seed, 0));
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.next_normal()).collect()).expect("noise shape")
    })?;
    if out.shape() != [1, b, hp, wp] {
        return Err(Error::Model(format!("decoder produced shape {:?}", out.shape())));
    }
    let mut values = vec![0.0; h * w * b];
    let mut px = vec![0.0; b];
    let mut row = vec![0.0; b];
    for r in 0..h {
        for c in 0..w {
            for (k, v) in px.iter_mut().enumerate() {
                *v = out.data()[(k * hp + r) * wp + c];
            }
            unscale_into(model, &px, &mut row);
            values[(r * w + c) * b..(r * w + c + 1) * b].copy_from_slice(&row);
        }
    }
    Ok(values)
}
