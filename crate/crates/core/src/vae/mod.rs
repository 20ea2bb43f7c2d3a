//! Parameter-conditioned variational autoencoders: the pixel-wise P2P and
//! the fully convolutional FC-VAE, each trainable in one step or in two
//! (VAE pretraining, then an interpolator against the frozen decoder).

mod emulate;
mod latent;
mod model;
mod schedule;
mod train;

pub use emulate::{emulate, reconstruct, EmulationMode};
pub use latent::{
    kl_gaussian, kl_gaussian_grad, mse, reparameterize, reparameterize_backward, vae_loss, LatentCode, DEFAULT_LATENT,
    LOG_VAR_MAX, LOG_VAR_MIN,
};
pub use model::{
    build_fcvae, build_p2p, dense_stack, vae_objective, Architecture, Family, Formulation, Objective, VaeEmulator,
    FCVAE_DESK_DOWN, FCVAE_DESK_WIDTHS, FCVAE_SENTINEL3_WIDTHS, FCVAE_SIMULATED_WIDTHS, P2P_HIDDEN,
};
pub use schedule::{kl_weight, lr_at, patch_size_at, TrainSchedule};
pub use train::{train_interpolator, train_one_step, train_vae_pretrain, TrainData};
