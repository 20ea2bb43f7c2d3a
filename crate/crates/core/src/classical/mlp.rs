use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, Sequential, Tensor};
use crate::rng::{derive_seed, SplitMix64};
use crate::training::{EpochLog, Scaling, SpectralData};
use crate::vae::{dense_stack, TrainSchedule};

pub const MLP_HIDDEN: [usize; 2] = [256, 512];

/// Direct parameter-to-spectrum regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub hidden: Vec<usize>,
    pub net: Sequential,
    pub scaling: Scaling,
}

impl MlpModel {
    pub fn n_params(&self) -> usize {
        self.scaling.n_params()
    }

    pub fn bands(&self) -> usize {
        self.scaling.bands()
    }
}

/// Glorot-initialized network `P → hidden → B` with identity scaling.
pub fn mlp_init(n_params: usize, bands: usize, hidden: &[usize], seed: u64) -> Result<MlpModel> {
    if n_params == 0 || bands == 0 {
        return Err(Error::invalid("MLP needs at least one input and one band"));
    }
    Ok(MlpModel {
        hidden: hidden.to_vec(),
        net: dense_stack(n_params, hidden, bands, &mut SplitMix64::new(derive_seed(seed, 4))),
        scaling: Scaling::identity(n_params, bands),
    })
}

/// Minimizes the mean squared error between predicted and standardized
/// spectra with Adam under `schedule`'s learning rate and batch size.
pub fn mlp_train(
    model: &mut MlpModel,
    data: &SpectralData,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<Vec<EpochLog>> {
    schedule.validate()?;
    if schedule.epochs == 0 {
        return Ok(Vec::new());
    }
    let s = &model.scaling;
    s.check_params(&data.names)?;
    s.check_bands(&data.wavelengths_nm)?;
    let (p, b) = (data.n_params(), data.bands());
    let x: Vec<f64> =
        data.inputs.chunks_exact(p).flat_map(|r| r.iter().enumerate().map(|(k, &v)| s.scale_param(k, v))).collect();
    let y: Vec<f64> =
        data.targets.chunks_exact(b).flat_map(|r| r.iter().enumerate().map(|(k, &v)| s.scale_band(k, v))).collect();
    let mut state = AdamState::new(&model.net.params());
    let mut logs = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        let mut rng = SplitMix64::new(derive_seed(derive_seed(seed, 0x4d4c), epoch as u64));
        let lr = schedule.lr_at(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        rng.shuffle(&mut order);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(schedule.batch_size) {
            let xb: Vec<f64> = chunk.iter().flat_map(|&i| x[i * p..(i + 1) * p].iter().copied()).collect();
            let yb: Vec<f64> = chunk.iter().flat_map(|&i| y[i * b..(i + 1) * b].iter().copied()).collect();
            let acts = model.net.forward_cached(Tensor::new(vec![chunk.len(), p], xb)?)?;
            let out = acts.last().expect("nonempty");
            let scale = 2.0 / out.len() as f64;
            let mut loss = 0.0;
            let dy: Vec<f64> = out
                .data()
                .iter()
                .zip(&yb)
                .map(|(o, t)| {
                    loss += (o - t) * (o - t);
                    scale * (o - t)
                })
                .collect();
            loss /= out.len() as f64;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, detail: format!("MLP loss became {loss}") });
            }
            let (_, grads) = model.net.backward(&acts, Tensor::new(out.shape().to_vec(), dy)?, false)?;
            adam_step(&mut model.net.params_mut(), &grads, &mut state, lr)
                .map_err(|e| Error::Divergence { epoch, detail: e.to_string() })?;
            sum += loss * chunk.len() as f64;
            count += chunk.len();
        }
        let mean = sum / count.max(1) as f64;
        logs.push(EpochLog {
            phase: "mlp".into(),
            epoch,
            lr,
            beta: 0.0,
            patch_size: 1,
            recon: mean,
            kl: 0.0,
            total: mean,
        });
    }
    Ok(logs)
}

/// Predicted spectrum for raw parameter vectors `ys` (`n × P`), unclamped.
pub fn mlp_predict_batch(model: &MlpModel, ys: &[f64]) -> Result<Vec<f64>> {
    let p = model.n_params();
    if !ys.len().is_multiple_of(p) {
        return Err(Error::shape(format!("{} values are not rows of {p} parameters", ys.len())));
    }
    let n = ys.len() / p;
    let x: Vec<f64> =
        ys.chunks_exact(p).flat_map(|r| r.iter().enumerate().map(|(k, &v)| model.scaling.scale_param(k, v))).collect();
    let out = model.net.forward(&Tensor::new(vec![n, p], x)?)?;
    let b = model.bands();
    Ok(out
        .data()
        .chunks_exact(b)
        .flat_map(|r| r.iter().enumerate().map(|(k, &v)| model.scaling.unscale_band(k, v)))
        .collect())
}

pub fn mlp_predict(model: &MlpModel, y: &[f64]) -> Result<Vec<f64>> {
    mlp_predict_batch(model, y)
}
