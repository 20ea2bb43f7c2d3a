use serde::{Deserialize, Serialize};

use super::latent::{
    join_channels, kl_gaussian_grad, mse_grad, reparameterize, reparameterize_backward, split_channels, vae_loss,
    LatentCode, LOG_VAR_MAX, LOG_VAR_MIN,
};
use crate::error::{Error, Result};
use crate::nn::{ConvParams, DenseParams, Layer, NormParams, Sequential, Tensor};
use crate::rng::{derive_seed, SplitMix64};
use crate::training::Scaling;

pub const P2P_HIDDEN: [usize; 2] = [512, 256];
pub const FCVAE_DESK_WIDTHS: [usize; 3] = [16, 32, 64];
pub const FCVAE_DESK_DOWN: usize = 2;
pub const FCVAE_SENTINEL3_WIDTHS: [usize; 5] = [40, 80, 160, 320, 640];
pub const FCVAE_SIMULATED_WIDTHS: [usize; 3] = [400, 600, 800];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    P2p,
    FcVae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    OneStep,
    TwoStep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Architecture {
    P2p { hidden: Vec<usize> },
    FcVae { widths: Vec<usize>, n_down: usize },
}

/// Parameter-conditioned VAE emulator: interpolator `f_φ` into the latent
/// space, decoder `D_θ` out of it, and for the two-step formulation the
/// encoder `E_ψ` used while pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeEmulator {
    pub formulation: Formulation,
    pub arch: Architecture,
    pub latent_dim: usize,
    pub bands: usize,
    pub n_params: usize,
    pub encoder: Option<Sequential>,
    pub interpolator: Sequential,
    pub decoder: Sequential,
    /// Set once the decoder has been pretrained; interpolator training then
    /// leaves it untouched.
    pub decoder_frozen: bool,
    pub scaling: Scaling,
}

impl VaeEmulator {
    pub fn family(&self) -> Family {
        match self.arch {
            Architecture::P2p { .. } => Family::P2p,
            Architecture::FcVae { .. } => Family::FcVae,
        }
    }

    /// Spatial factor the FC-VAE input sides must divide into.
    pub fn spatial_multiple(&self) -> usize {
        match &self.arch {
            Architecture::P2p { .. } => 1,
            Architecture::FcVae { n_down, .. } => 1 << n_down,
        }
    }

    pub fn discard_encoder(&mut self) {
        self.encoder = None;
    }

    pub fn with_scaling(mut self, scaling: Scaling) -> Result<Self> {
        if scaling.n_params() != self.n_params || scaling.bands() != self.bands {
            return Err(Error::shape(format!(
                "scaling is for {} parameters and {} bands, model has {} and {}",
                scaling.n_params(),
                scaling.bands(),
                self.n_params,
                self.bands
            )));
        }
        self.scaling = scaling;
        Ok(self)
    }

    /// Keeps the band statistics and replaces the parameter definitions,
    /// e.g. before retraining only the interpolator on reordered inputs.
    pub fn set_param_scaling(&mut self, names: Vec<String>, ranges: Vec<(f64, f64)>) -> Result<()> {
        if names.len() != self.n_params || ranges.len() != self.n_params {
            return Err(Error::shape(format!("model takes {} parameters", self.n_params)));
        }
        self.scaling.param_names = names;
        self.scaling.param_ranges = ranges;
        Ok(())
    }

    pub fn check_consistency(&self) -> Result<()> {
        let mut probe = match &self.arch {
            Architecture::P2p { .. } => Tensor::zeros(&[1, self.n_params]),
            Architecture::FcVae { .. } => {
                let s = self.spatial_multiple();
                Tensor::zeros(&[1, self.n_params, s, s])
            }
        };
        let head = self.interpolator.forward(&probe)?;
        let (mu, _) = split_channels(&head)?;
        if mu.dim(1) != self.latent_dim {
            return Err(Error::Model("interpolator latent size differs from the decoder's".into()));
        }
        let out = self.decoder.forward(&mu)?;
        if out.dim(1) != self.bands {
            return Err(Error::Model("decoder output bands differ".into()));
        }
        if let Some(enc) = &self.encoder {
            probe = match &self.arch {
                Architecture::P2p { .. } => Tensor::zeros(&[1, self.bands]),
                Architecture::FcVae { .. } => {
                    let s = self.spatial_multiple();
                    Tensor::zeros(&[1, self.bands, s, s])
                }
            };
            let (emu, _) = split_channels(&enc.forward(&probe)?)?;
            if emu.shape() != mu.shape() {
                return Err(Error::Model("encoder and interpolator latent shapes differ".into()));
            }
        }
        Ok(())
    }
}

/// Fully connected stack with ReLU between layers and a linear output.
pub fn dense_stack(inputs: usize, hidden: &[usize], outputs: usize, rng: &mut SplitMix64) -> Sequential {
    let mut layers = Vec::new();
    let mut fin = inputs;
    for &h in hidden {
        layers.push(Layer::Dense(DenseParams::init(fin, h, rng)));
        layers.push(Layer::Relu);
        fin = h;
    }
    layers.push(Layer::Dense(DenseParams::init(fin, outputs, rng)));
    Sequential::new(layers)
}

fn check_sizes(bands: usize, n_params: usize, z: usize) -> Result<()> {
    if bands == 0 || n_params == 0 || z == 0 {
        return Err(Error::invalid("bands, parameters and latent size must be positive"));
    }
    Ok(())
}

/// Pixel-to-pixel VAE. Encoder `B → hidden → 2z`, interpolator `P → hidden →
/// 2z`, decoder `z → reversed hidden → B`.
pub fn build_p2p(
    bands: usize,
    n_params: usize,
    z: usize,
    hidden: &[usize],
    formulation: Formulation,
    seed: u64,
) -> Result<VaeEmulator> {
    check_sizes(bands, n_params, z)?;
    let rev: Vec<usize> = hidden.iter().rev().copied().collect();
    let encoder = (formulation == Formulation::TwoStep)
        .then(|| dense_stack(bands, hidden, 2 * z, &mut SplitMix64::new(derive_seed(seed, 1))));
    let interpolator = dense_stack(n_params, hidden, 2 * z, &mut SplitMix64::new(derive_seed(seed, 2)));
    let decoder = dense_stack(z, &rev, bands, &mut SplitMix64::new(derive_seed(seed, 3)));
    Ok(VaeEmulator {
        formulation,
        arch: Architecture::P2p { hidden: hidden.to_vec() },
        latent_dim: z,
        bands,
        n_params,
        encoder,
        interpolator,
        decoder,
        decoder_frozen: false,
        scaling: Scaling::identity(n_params, bands),
    })
}

fn conv_block(layers: &mut Vec<Layer>, cin: usize, cout: usize, k: usize, stride: usize, rng: &mut SplitMix64) {
    layers.push(Layer::Conv2d(ConvParams::init(cin, cout, k, stride, k / 2, rng)));
    layers.push(Layer::ChannelNorm(NormParams::identity(cout)));
    layers.push(Layer::Relu);
}

fn fc_encoder(cin: usize, z: usize, widths: &[usize], n_down: usize, rng: &mut SplitMix64) -> Sequential {
    let mut layers = Vec::new();
    conv_block(&mut layers, cin, widths[0], 1, 1, rng);
    conv_block(&mut layers, widths[0], widths[0], 7, 1, rng);
    for i in 0..n_down {
        conv_block(&mut layers, widths[i], widths[i + 1], 3, 2, rng);
    }
    layers.push(Layer::Conv2d(ConvParams::init(widths[n_down], 2 * z, 1, 1, 0, rng)));
    Sequential::new(layers)
}

fn fc_decoder(z: usize, bands: usize, widths: &[usize], n_down: usize, rng: &mut SplitMix64) -> Sequential {
    let mut layers = Vec::new();
    conv_block(&mut layers, z, widths[n_down], 1, 1, rng);
    for i in (0..n_down).rev() {
        layers.push(Layer::Upsample2x);
        conv_block(&mut layers, widths[i + 1], widths[i], 3, 1, rng);
    }
    conv_block(&mut layers, widths[0], widths[0], 7, 1, rng);
    layers.push(Layer::Conv2d(ConvParams::init(widths[0], bands, 1, 1, 0, rng)));
    Sequential::new(layers)
}

/// Fully convolutional VAE. Encoder and interpolator: 1×1 conv, 7×7 conv,
/// then `n_down` stride-2 3×3 convs (each followed by channel norm and ReLU)
/// and a 1×1 head. The decoder mirrors it with nearest-neighbour upsampling.
/// `widths` needs at least `n_down + 1` entries; only the first `n_down + 1`
/// are used.
pub fn build_fcvae(
    bands: usize,
    n_params: usize,
    z: usize,
    widths: &[usize],
    n_down: usize,
    formulation: Formulation,
    seed: u64,
) -> Result<VaeEmulator> {
    check_sizes(bands, n_params, z)?;
    if widths.len() < n_down + 1 || widths.contains(&0) {
        return Err(Error::invalid(format!(
            "{n_down} downsampling stages need {} positive widths, got {widths:?}",
            n_down + 1
        )));
    }
    let widths = &widths[..n_down + 1];
    let encoder = (formulation == Formulation::TwoStep)
        .then(|| fc_encoder(bands, z, widths, n_down, &mut SplitMix64::new(derive_seed(seed, 1))));
    let interpolator = fc_encoder(n_params, z, widths, n_down, &mut SplitMix64::new(derive_seed(seed, 2)));
    let decoder = fc_decoder(z, bands, widths, n_down, &mut SplitMix64::new(derive_seed(seed, 3)));
    Ok(VaeEmulator {
        formulation,
        arch: Architecture::FcVae { widths: widths.to_vec(), n_down },
        latent_dim: z,
        bands,
        n_params,
        encoder,
        interpolator,
        decoder,
        decoder_frozen: false,
        scaling: Scaling::identity(n_params, bands),
    })
}

/// Loss terms and gradients of one mini-batch through `front` (encoder or
/// interpolator) and `decoder`.
#[derive(Debug, Clone)]
pub struct Objective {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub front_grads: Vec<Tensor>,
    pub decoder_grads: Vec<Tensor>,
}

/// Evaluates `recon + beta·KL` for `decoder(reparameterize(front(input), eps))`
/// against `target` and backpropagates it. `eps = None` decodes the mean.
pub fn vae_objective(
    front: &Sequential,
    decoder: &Sequential,
    input: Tensor,
    target: &Tensor,
    eps: Option<&Tensor>,
    beta: f64,
) -> Result<Objective> {
    let front_acts = front.forward_cached(input)?;
    let head = front_acts.last().expect("nonempty");
    let (mu, raw_lv) = split_channels(head)?;
    if !mu.is_finite() || !raw_lv.is_finite() {
        return Err(Error::NonFinite("latent code".into()));
    }
    let code = LatentCode::new(mu, raw_lv.clone())?;
    let z = match eps {
        Some(e) => reparameterize(&code, e)?,
        None => code.mu.clone(),
    };
    let dec_acts = decoder.forward_cached(z)?;
    let out = dec_acts.last().expect("nonempty");
    let (total, recon, kl) = vae_loss(target, out, &code, beta)?;
    let dout = mse_grad(target, out);
    let (dz, decoder_grads) = decoder.backward(&dec_acts, dout, true)?;
    let dz = dz.expect("requested");
    let (mut dmu, mut dlv) = match eps {
        Some(e) => reparameterize_backward(&code, e, &dz)?,
        None => (dz, Tensor::zeros_like(&code.log_var)),
    };
    let (kmu, klv) = kl_gaussian_grad(&code);
    for (d, k) in dmu.data_mut().iter_mut().zip(kmu.data()) {
        *d += beta * k;
    }
    for ((d, k), raw) in dlv.data_mut().iter_mut().zip(klv.data()).zip(raw_lv.data()) {
        // clamped entries do not move with the raw head output
        *d = if (LOG_VAR_MIN..=LOG_VAR_MAX).contains(raw) { *d + beta * k } else { 0.0 };
    }
    let dhead = join_channels(&dmu, &dlv)?;
    let (_, front_grads) = front.backward(&front_acts, dhead, false)?;
    Ok(Objective { total, recon, kl, front_grads, decoder_grads })
}
