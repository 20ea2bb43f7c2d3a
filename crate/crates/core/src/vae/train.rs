use super::model::{vae_objective, Family, Formulation, VaeEmulator};
use super::schedule::TrainSchedule;
use crate::error::{Error, Result};
use crate::hsdata::{HyperspectralCube, ParameterMap};
use crate::nn::{adam_step, AdamState, Sequential, Tensor};
use crate::rng::{derive_seed, SplitMix64};
use crate::training::{EpochLog, Scaling, SpectralData};

/// Training examples for the VAE trainers.
#[derive(Debug, Clone, Copy)]
pub enum TrainData<'a> {
    /// Per-pixel samples (P2P only).
    Spectra(&'a SpectralData),
    /// Whole `(map, cube)` pairs; flattened to pixels for P2P.
    Cubes(&'a [(ParameterMap, HyperspectralCube)]),
}

const PHASE_PRETRAIN: u64 = 0x5052;
const PHASE_INTERP: u64 = 0x494e;
const PHASE_JOINT: u64 = 0x4a4f;

/// Channel-first copy of one example: `P × H × W` inputs, `B × H × W` targets.
struct Plane {
    height: usize,
    width: usize,
    params: Vec<f64>,
    spectra: Vec<f64>,
}

enum Prepared {
    Pixels { n: usize, params: Vec<f64>, spectra: Vec<f64> },
    Planes(Vec<Plane>),
}

fn prepare(model: &VaeEmulator, data: TrainData<'_>, need_params: bool) -> Result<Prepared> {
    let s = &model.scaling;
    match model.family() {
        Family::P2p => {
            let owned;
            let d = match data {
                TrainData::Spectra(d) => d,
                TrainData::Cubes(pairs) => {
                    owned = SpectralData::from_pairs(pairs)?;
                    &owned
                }
            };
            s.check_bands(&d.wavelengths_nm)?;
            if need_params {
                s.check_params(&d.names)?;
            }
            let params = d
                .inputs
                .chunks_exact(d.n_params().max(1))
                .flat_map(|row| row.iter().enumerate().map(|(k, &v)| s.scale_param(k, v)))
                .collect();
            let spectra = d
                .targets
                .chunks_exact(d.bands())
                .flat_map(|row| row.iter().enumerate().map(|(b, &v)| s.scale_band(b, v)))
                .collect();
            Ok(Prepared::Pixels { n: d.len(), params, spectra })
        }
        Family::FcVae => {
            let TrainData::Cubes(pairs) = data else {
                return Err(Error::invalid("FC-VAE training needs whole (map, cube) pairs"));
            };
            let mut planes = Vec::with_capacity(pairs.len());
            for (map, cube) in pairs {
                s.check_bands(cube.wavelengths_nm())?;
                if need_params {
                    s.check_params(map.names())?;
                }
                planes.push(Plane {
                    height: cube.height(),
                    width: cube.width(),
                    params: map_planes(s, map),
                    spectra: cube_planes(s, cube),
                });
            }
            if let Some(first) = planes.first() {
                if planes.iter().any(|p| p.height != first.height || p.width != first.width) {
                    return Err(Error::shape("FC-VAE training cubes must share one spatial size"));
                }
            }
            Ok(Prepared::Planes(planes))
        }
    }
}

/// Scaled map values laid out `P × H × W`.
pub(crate) fn map_planes(s: &Scaling, map: &ParameterMap) -> Vec<f64> {
    let (p, hw) = (map.n_params(), map.height() * map.width());
    let mut out = vec![0.0; p * hw];
    for (i, px) in map.values().chunks_exact(p).enumerate() {
        for (k, &v) in px.iter().enumerate() {
            out[k * hw + i] = s.scale_param(k, v as f64);
        }
    }
    out
}

/// Standardized cube values laid out `B × H × W`.
pub(crate) fn cube_planes(s: &Scaling, cube: &HyperspectralCube) -> Vec<f64> {
    let (b, hw) = (cube.bands(), cube.pixels());
    let mut out = vec![0.0; b * hw];
    for (i, px) in cube.values().chunks_exact(b).enumerate() {
        for (k, &v) in px.iter().enumerate() {
            out[k * hw + i] = s.scale_band(k, v as f64);
        }
    }
    out
}

fn crop_into(src: &[f64], channels: usize, h: usize, w: usize, r0: usize, c0: usize, p: usize, dst: &mut Vec<f64>) {
    for c in 0..channels {
        for r in r0..r0 + p {
            let start = c * h * w + r * w + c0;
            dst.extend_from_slice(&src[start..start + p]);
        }
    }
}

/// One mini-batch: `(inputs, targets)` with the front network's input first.
type Batch = (Tensor, Tensor);

fn batches(
    prepared: &Prepared,
    model: &VaeEmulator,
    schedule: &TrainSchedule,
    epoch: usize,
    from_spectra: bool,
    rng: &mut SplitMix64,
) -> Result<Vec<Batch>> {
    let bs = schedule.batch_size;
    let mut out = Vec::new();
    match prepared {
        Prepared::Pixels { n, params, spectra } => {
            let (p, b) = (model.n_params, model.bands);
            let mut order: Vec<usize> = (0..*n).collect();
            rng.shuffle(&mut order);
            for chunk in order.chunks(bs) {
                let mut x = Vec::with_capacity(chunk.len() * p.max(b));
                let mut y = Vec::with_capacity(chunk.len() * b);
                for &i in chunk {
                    y.extend_from_slice(&spectra[i * b..(i + 1) * b]);
                    if !from_spectra {
                        x.extend_from_slice(&params[i * p..(i + 1) * p]);
                    }
                }
                let y = Tensor::new(vec![chunk.len(), b], y)?;
                let x = if from_spectra { y.clone() } else { Tensor::new(vec![chunk.len(), p], x)? };
                out.push((x, y));
            }
        }
        Prepared::Planes(planes) => {
            let Some(first) = planes.first() else {
                return Ok(out);
            };
            let m = model.spatial_multiple();
            let side = schedule.patch_size_at(epoch).min(first.height).min(first.width);
            let side = side / m * m;
            if side == 0 {
                return Err(Error::shape(format!(
                    "cubes of {}x{} are smaller than the model's spatial multiple {m}",
                    first.height, first.width
                )));
            }
            let mut order: Vec<usize> = (0..planes.len()).collect();
            rng.shuffle(&mut order);
            let (p, b) = (model.n_params, model.bands);
            for chunk in order.chunks(bs) {
                let mut x = Vec::new();
                let mut y = Vec::new();
                for &i in chunk {
                    let pl = &planes[i];
                    let r0 = rng.below((pl.height - side + 1) as u64) as usize;
                    let c0 = rng.below((pl.width - side + 1) as u64) as usize;
                    crop_into(&pl.spectra, b, pl.height, pl.width, r0, c0, side, &mut y);
                    if !from_spectra {
                        crop_into(&pl.params, p, pl.height, pl.width, r0, c0, side, &mut x);
                    }
                }
                let y = Tensor::new(vec![chunk.len(), b, side, side], y)?;
                let x = if from_spectra { y.clone() } else { Tensor::new(vec![chunk.len(), p, side, side], x)? };
                out.push((x, y));
            }
        }
    }
    Ok(out)
}

fn noise(shape: &[usize], rng: &mut SplitMix64) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.next_normal()).collect())
}

fn latent_shape(model: &VaeEmulator, x: &Tensor) -> Vec<usize> {
    let mut s = x.shape().to_vec();
    s[1] = model.latent_dim;
    let f = model.spatial_multiple();
    for d in s.iter_mut().skip(2) {
        *d /= f;
    }
    s
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    Pretrain,
    Interpolator,
    Joint,
}

fn run_phase(
    model: &mut VaeEmulator,
    data: TrainData<'_>,
    schedule: &TrainSchedule,
    seed: u64,
    phase: Phase,
) -> Result<Vec<EpochLog>> {
    schedule.validate()?;
    let (tag, name) = match phase {
        Phase::Pretrain => (PHASE_PRETRAIN, "pretrain"),
        Phase::Interpolator => (PHASE_INTERP, "interpolator"),
        Phase::Joint => (PHASE_JOINT, "joint"),
    };
    if schedule.epochs == 0 {
        return Ok(Vec::new());
    }
    let prepared = prepare(model, data, phase != Phase::Pretrain)?;
    let from_spectra = phase == Phase::Pretrain;
    let mut front: Sequential = if from_spectra {
        model.encoder.take().ok_or_else(|| Error::Model("pretraining needs an encoder".into()))?
    } else {
        std::mem::replace(&mut model.interpolator, Sequential::new(Vec::new()))
    };
    let update_decoder = phase != Phase::Interpolator;
    let mut front_state = AdamState::new(&front.params());
    let mut dec_state = AdamState::new(&model.decoder.params());
    let mut logs = Vec::with_capacity(schedule.epochs);
    let mut result = Ok(());
    'epochs: for epoch in 0..schedule.epochs {
        let mut rng = SplitMix64::new(derive_seed(derive_seed(seed, tag), epoch as u64));
        let lr = schedule.lr_at(epoch);
        let beta = schedule.kl_weight(epoch);
        let patch = schedule.patch_size_at(epoch);
        let list = match batches(&prepared, model, schedule, epoch, from_spectra, &mut rng) {
            Ok(l) => l,
            Err(e) => {
                result = Err(e);
                break;
            }
        };
        let (mut sum_t, mut sum_r, mut sum_k, mut count) = (0.0, 0.0, 0.0, 0usize);
        for (x, y) in list {
            let n = x.dim(0);
            let step = noise(&latent_shape(model, &x), &mut rng)
                .and_then(|eps| vae_objective(&front, &model.decoder, x, &y, Some(&eps), beta));
            let obj = match step {
                Ok(o) if o.total.is_finite() => o,
                Ok(o) => {
                    result = Err(Error::Divergence { epoch, detail: format!("{name} loss became {}", o.total) });
                    break 'epochs;
                }
                Err(Error::NonFinite(what)) => {
                    result = Err(Error::Divergence { epoch, detail: format!("{name}: non-finite {what}") });
                    break 'epochs;
                }
                Err(e) => {
                    result = Err(e);
                    break 'epochs;
                }
            };
            let stepped = adam_step(&mut front.params_mut(), &obj.front_grads, &mut front_state, lr).and_then(|_| {
                if update_decoder {
                    adam_step(&mut model.decoder.params_mut(), &obj.decoder_grads, &mut dec_state, lr)
                } else {
                    Ok(())
                }
            });
            if let Err(e) = stepped {
                result = Err(Error::Divergence { epoch, detail: format!("{name}: {e}") });
                break 'epochs;
            }
            sum_t += obj.total * n as f64;
            sum_r += obj.recon * n as f64;
            sum_k += obj.kl * n as f64;
            count += n;
        }
        let c = count.max(1) as f64;
        logs.push(EpochLog {
            phase: name.into(),
            epoch,
            lr,
            beta,
            patch_size: if model.family() == Family::FcVae { patch } else { 1 },
            recon: sum_r / c,
            kl: sum_k / c,
            total: sum_t / c,
        });
    }
    if from_spectra {
        model.encoder = Some(front);
    } else {
        model.interpolator = front;
    }
    result.map(|_| logs)
}

/// Pretrains encoder and decoder as a VAE on spectra alone, then marks the
/// decoder frozen.
pub fn train_vae_pretrain(
    model: &mut VaeEmulator,
    data: TrainData<'_>,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<Vec<EpochLog>> {
    if model.formulation != Formulation::TwoStep {
        return Err(Error::Model("pretraining applies to two-step models".into()));
    }
    let logs = run_phase(model, data, schedule, seed, Phase::Pretrain)?;
    if schedule.epochs > 0 {
        model.decoder_frozen = true;
    }
    Ok(logs)
}

/// Trains the interpolator through the frozen pretrained decoder.
pub fn train_interpolator(
    model: &mut VaeEmulator,
    data: TrainData<'_>,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<Vec<EpochLog>> {
    if model.formulation != Formulation::TwoStep || !model.decoder_frozen {
        return Err(Error::Model("interpolator training needs a pretrained, frozen decoder".into()));
    }
    run_phase(model, data, schedule, seed, Phase::Interpolator)
}

/// Jointly trains interpolator and decoder (one-step formulation).
pub fn train_one_step(
    model: &mut VaeEmulator,
    data: TrainData<'_>,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<Vec<EpochLog>> {
    if model.formulation != Formulation::OneStep {
        return Err(Error::Model("joint training applies to one-step models".into()));
    }
    run_phase(model, data, schedule, seed, Phase::Joint)
}
