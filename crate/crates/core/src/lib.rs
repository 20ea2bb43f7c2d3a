//! Hyperspectral image emulation.
//!
//! The crate generates synthetic canopy-reflectance cubes from a closed-form
//! surrogate radiative-transfer model, trains parameter-conditioned emulators
//! (PCA + kernel regression, a direct MLP, and pixel-wise / fully convolutional
//! VAEs in one-step and two-step formulations), scores emulated cubes with
//! RMSE, SSIM, spectral angle and PSNR, and checks them on a downstream
//! LUT-based chlorophyll retrieval.

pub mod checkpoint;
pub mod classical;
pub mod emulator;
pub mod error;
pub mod hsdata;
pub mod metrics;
pub mod nn;
pub mod retrieval;
pub mod rng;
pub mod synthrtm;
pub mod training;
pub mod vae;

pub use emulator::{EmulationMode, EmulatorModel};
pub use error::{Error, Result};
pub use hsdata::{DatasetSplit, HyperspectralCube, ParameterMap, Spectrum};
pub use rng::SplitMix64;
