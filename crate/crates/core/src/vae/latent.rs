use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;
pub const DEFAULT_LATENT: usize = 20;

/// Mean and log-variance of a diagonal Gaussian posterior.
///
/// Batch is the leading axis of both tensors: `[N, z]` for pixel codes,
/// `[N, z, h, w]` for spatial ones.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub mu: Tensor,
    pub log_var: Tensor,
}

impl LatentCode {
    /// Clamps `log_var` into `[-10, 10]`.
    pub fn new(mu: Tensor, log_var: Tensor) -> Result<Self> {
        mu.expect_same_shape(&log_var, "latent code")?;
        if !mu.is_finite() || !log_var.is_finite() {
            return Err(Error::NonFinite("latent code".into()));
        }
        let log_var = log_var.map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX));
        Ok(Self { mu, log_var })
    }

    /// Splits a network head output along axis 1: the first half of the
    /// channels is `mu`, the second `log_var` (before clamping).
    pub fn from_head(head: &Tensor) -> Result<Self> {
        let (mu, lv) = split_channels(head)?;
        Self::new(mu, lv)
    }

    pub fn batch(&self) -> usize {
        self.mu.dim(0)
    }
}

/// Halves a `[N, 2z, ...]` tensor along axis 1.
pub(crate) fn split_channels(head: &Tensor) -> Result<(Tensor, Tensor)> {
    let shape = head.shape();
    if shape.len() < 2 || !shape[1].is_multiple_of(2) {
        return Err(Error::shape(format!("latent head needs an even channel axis, got {shape:?}")));
    }
    let n = shape[0];
    let z = shape[1] / 2;
    let inner: usize = shape[2..].iter().product();
    let mut mu = Vec::with_capacity(n * z * inner);
    let mut lv = Vec::with_capacity(n * z * inner);
    for s in head.data().chunks_exact(2 * z * inner) {
        mu.extend_from_slice(&s[..z * inner]);
        lv.extend_from_slice(&s[z * inner..]);
    }
    let mut half = shape.to_vec();
    half[1] = z;
    Ok((Tensor::new(half.clone(), mu)?, Tensor::new(half, lv)?))
}

/// Inverse of [`split_channels`] for gradients.
pub(crate) fn join_channels(dmu: &Tensor, dlv: &Tensor) -> Result<Tensor> {
    dmu.expect_same_shape(dlv, "latent gradient")?;
    let shape = dmu.shape();
    let (n, z) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    let mut out = Vec::with_capacity(2 * dmu.len());
    for i in 0..n {
        let r = i * z * inner..(i + 1) * z * inner;
        out.extend_from_slice(&dmu.data()[r.clone()]);
        out.extend_from_slice(&dlv.data()[r]);
    }
    let mut full = shape.to_vec();
    full[1] = 2 * z;
    Tensor::new(full, out)
}

/// `KL(q ‖ N(0, I))` summed over latent entries and averaged over the batch.
pub fn kl_gaussian(code: &LatentCode) -> f64 {
    let s: f64 = code.mu.data().iter().zip(code.log_var.data()).map(|(&m, &lv)| m * m + lv.exp() - 1.0 - lv).sum();
    0.5 * s / code.batch().max(1) as f64
}

/// Gradient of [`kl_gaussian`] with respect to `(mu, log_var)`.
pub fn kl_gaussian_grad(code: &LatentCode) -> (Tensor, Tensor) {
    let n = code.batch().max(1) as f64;
    (code.mu.map(|m| m / n), code.log_var.map(|lv| 0.5 * (lv.exp() - 1.0) / n))
}

/// `mu + exp(log_var / 2) ⊙ eps`.
pub fn reparameterize(code: &LatentCode, eps: &Tensor) -> Result<Tensor> {
    code.mu.expect_same_shape(eps, "reparameterize")?;
    let data = code
        .mu
        .data()
        .iter()
        .zip(code.log_var.data())
        .zip(eps.data())
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect();
    Tensor::new(code.mu.shape().to_vec(), data)
}

/// Pulls `dz` back through [`reparameterize`] onto `(mu, log_var)`.
pub fn reparameterize_backward(code: &LatentCode, eps: &Tensor, dz: &Tensor) -> Result<(Tensor, Tensor)> {
    code.mu.expect_same_shape(dz, "reparameterize backward")?;
    code.mu.expect_same_shape(eps, "reparameterize backward")?;
    let dlv = code
        .log_var
        .data()
        .iter()
        .zip(eps.data())
        .zip(dz.data())
        .map(|((&lv, &e), &g)| g * 0.5 * (0.5 * lv).exp() * e)
        .collect();
    Ok((dz.clone(), Tensor::new(code.mu.shape().to_vec(), dlv)?))
}

/// Mean squared error over every element.
pub fn mse(reference: &Tensor, estimate: &Tensor) -> Result<f64> {
    reference.expect_same_shape(estimate, "reconstruction loss")?;
    let n = reference.len().max(1) as f64;
    Ok(reference.data().iter().zip(estimate.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// Returns `(total, recon, kl)` with `total = recon + beta·kl`.
pub fn vae_loss(reference: &Tensor, estimate: &Tensor, code: &LatentCode, beta: f64) -> Result<(f64, f64, f64)> {
    let recon = mse(reference, estimate)?;
    let kl = kl_gaussian(code);
    Ok((recon + beta * kl, recon, kl))
}

/// Gradient of the mean squared error with respect to `estimate`.
pub(crate) fn mse_grad(reference: &Tensor, estimate: &Tensor) -> Tensor {
    let scale = 2.0 / reference.len().max(1) as f64;
    let data = estimate.data().iter().zip(reference.data()).map(|(e, r)| scale * (e - r)).collect();
    Tensor::new(estimate.shape().to_vec(), data).expect("same shape")
}
