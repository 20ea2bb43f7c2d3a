use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimization schedule shared by the VAE trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_reset_period: usize,
    /// Decades of decay over one reset period.
    pub lr_decades: f64,
    pub kl_beta_max: f64,
    pub kl_cycle: usize,
    pub patch_start: usize,
    pub patch_cap: usize,
    pub patch_period: usize,
    /// Spectra per step for pixel models, cubes per step for convolutional ones.
    pub batch_size: usize,
}

impl TrainSchedule {
    pub fn p2p(epochs: usize) -> Self {
        Self {
            epochs,
            base_lr: 1e-4,
            lr_reset_period: 35,
            lr_decades: 1.0,
            kl_beta_max: 1e-3,
            kl_cycle: 50,
            patch_start: 8,
            patch_cap: 128,
            patch_period: 100,
            batch_size: 64,
        }
    }

    pub fn fcvae(epochs: usize) -> Self {
        Self { kl_cycle: 15, batch_size: 8, ..Self::p2p(epochs) }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_reset_period", self.lr_reset_period),
            ("kl_cycle", self.kl_cycle),
            ("patch_start", self.patch_start),
            ("patch_cap", self.patch_cap),
            ("patch_period", self.patch_period),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::invalid("base_lr must be positive"));
        }
        if !(self.kl_beta_max >= 0.0 && self.kl_beta_max.is_finite()) || !(self.lr_decades >= 0.0) {
            return Err(Error::invalid("kl_beta_max and lr_decades must be nonnegative"));
        }
        if !self.patch_start.is_power_of_two() || !self.patch_cap.is_power_of_two() || self.patch_cap < self.patch_start
        {
            return Err(Error::invalid("patch sizes must be powers of two with start <= cap"));
        }
        Ok(())
    }

    pub fn kl_weight(&self, epoch: usize) -> f64 {
        kl_weight(epoch, self.kl_cycle, self.kl_beta_max)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let phase = (epoch % self.lr_reset_period) as f64 / self.lr_reset_period as f64;
        self.base_lr * 10f64.powf(-self.lr_decades * phase)
    }

    pub fn patch_size_at(&self, epoch: usize) -> usize {
        let mut p = self.patch_start;
        for _ in 0..epoch / self.patch_period {
            if p >= self.patch_cap {
                break;
            }
            p *= 2;
        }
        p.min(self.patch_cap)
    }
}

/// Cyclic annealing: linear ramp over the first half of each `cycle`, then
/// held at `beta_max`.
pub fn kl_weight(epoch: usize, cycle: usize, beta_max: f64) -> f64 {
    let cycle = cycle.max(1);
    let ramp = 2.0 * (epoch % cycle) as f64 / cycle as f64;
    beta_max * ramp.min(1.0)
}

/// `1e-4 · 10^(-(e mod 35) / 35)`.
pub fn lr_at(epoch: usize) -> f64 {
    TrainSchedule::p2p(0).lr_at(epoch)
}

/// `8 · 2^min(floor(e / 100), 4)`.
pub fn patch_size_at(epoch: usize) -> usize {
    TrainSchedule::p2p(0).patch_size_at(epoch)
}
