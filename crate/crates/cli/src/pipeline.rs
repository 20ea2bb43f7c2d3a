//! Model construction and training for every emulator kind.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use hyperem::classical::{
    fit_pca_kernel, mlp_init, mlp_train, ClassicalModel, KernelKind, PcaKernelConfig, MLP_HIDDEN,
};
use hyperem::rng::derive_seed;
use hyperem::training::{EpochLog, Scaling, SpectralData};
use hyperem::vae::{
    build_fcvae, build_p2p, train_interpolator, train_one_step, train_vae_pretrain, Formulation, TrainData,
    TrainSchedule, VaeEmulator, DEFAULT_LATENT, FCVAE_DESK_DOWN, FCVAE_DESK_WIDTHS, P2P_HIDDEN,
};
use hyperem::{EmulatorModel, HyperspectralCube, ParameterMap};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    P2p,
    P2pPre,
    FcVae,
    FcVaePre,
    Mlp,
    Krr,
    Gpr,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::P2p,
        ModelKind::P2pPre,
        ModelKind::FcVae,
        ModelKind::FcVaePre,
        ModelKind::Mlp,
        ModelKind::Krr,
        ModelKind::Gpr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::P2p => "p2p",
            ModelKind::P2pPre => "p2p-pre",
            ModelKind::FcVae => "fc-vae",
            ModelKind::FcVaePre => "fc-vae-pre",
            ModelKind::Mlp => "mlp",
            ModelKind::Krr => "krr",
            ModelKind::Gpr => "gpr",
        }
    }

    fn is_vae(self) -> bool {
        matches!(self, ModelKind::P2p | ModelKind::P2pPre | ModelKind::FcVae | ModelKind::FcVaePre)
    }

    fn is_convolutional(self) -> bool {
        matches!(self, ModelKind::FcVae | ModelKind::FcVaePre)
    }

    fn is_two_step(self) -> bool {
        matches!(self, ModelKind::P2pPre | ModelKind::FcVaePre)
    }
}

impl FromStr for ModelKind {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
            CliError::usage(format!("unknown model kind {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

/// Which phases of a two-step model to run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseSelect {
    #[default]
    Both,
    Pretrain,
    Interpolator,
}

fn d_samples() -> usize {
    16_384
}
fn d_latent() -> usize {
    DEFAULT_LATENT
}
fn d_n_down() -> usize {
    FCVAE_DESK_DOWN
}
fn d_components() -> usize {
    2
}
fn d_regularizers() -> Vec<f64> {
    vec![1e-3]
}
fn d_max_rows() -> usize {
    hyperem::classical::GPR_MAX_ROWS
}
fn d_split() -> String {
    "train".into()
}

/// `train` configuration. Schedule fields left unset take the family
/// defaults (60 epochs for pixel models, 300 for FC-VAE; base learning rate
/// 1e-4; batch 64 spectra or 8 cubes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: String,
    pub seed: u64,
    /// Dataset directory (command only).
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default = "d_split")]
    pub split: String,
    /// Checkpoint path (command only).
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// CSV log path; defaults to the checkpoint path with a `.csv` extension.
    #[serde(default)]
    pub log: Option<PathBuf>,
    /// Checkpoint to continue from.
    #[serde(default)]
    pub resume: Option<PathBuf>,
    #[serde(default)]
    pub phase: PhaseSelect,
    #[serde(default)]
    pub epochs: Option<usize>,
    /// Two-step pretraining epochs; defaults to `epochs`.
    #[serde(default)]
    pub pretrain_epochs: Option<usize>,
    /// Spectra drawn from the training scenes for pixel models.
    #[serde(default = "d_samples")]
    pub samples: usize,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub base_lr: Option<f64>,
    #[serde(default)]
    pub kl_beta_max: Option<f64>,
    #[serde(default)]
    pub kl_cycle: Option<usize>,
    #[serde(default = "d_latent")]
    pub latent_dim: usize,
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    #[serde(default)]
    pub widths: Option<Vec<usize>>,
    #[serde(default = "d_n_down")]
    pub n_down: usize,
    #[serde(default = "d_components")]
    pub components: usize,
    /// KRR `λ` or GPR `σ²` candidates; several are ranked on the validation split.
    #[serde(default = "d_regularizers")]
    pub regularizers: Vec<f64>,
    #[serde(default)]
    pub lengthscale: Option<f64>,
    #[serde(default = "d_max_rows")]
    pub max_rows: usize,
}

impl TrainConfig {
    /// Defaults for `kind` with `seed`; no paths.
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({"model": kind.name(), "seed": seed})).expect("defaults deserialize")
    }

    pub fn kind(&self) -> CliResult<ModelKind> {
        self.model.parse()
    }

    pub fn schedule(&self, kind: ModelKind, epochs: Option<usize>) -> CliResult<TrainSchedule> {
        let mut s = if kind.is_convolutional() {
            TrainSchedule::fcvae(epochs.unwrap_or(300))
        } else {
            TrainSchedule::p2p(epochs.unwrap_or(60))
        };
        if let Some(b) = self.batch_size {
            s.batch_size = b;
        }
        if let Some(lr) = self.base_lr {
            s.base_lr = lr;
        }
        if let Some(b) = self.kl_beta_max {
            s.kl_beta_max = b;
        }
        if let Some(t) = self.kl_cycle {
            s.kl_cycle = t;
        }
        s.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(s)
    }
}

/// Trained model plus its CSV log.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: EmulatorModel,
    pub log_csv: String,
}

fn epoch_csv(logs: &[EpochLog]) -> String {
    let mut s = String::from(EpochLog::CSV_HEADER);
    s.push('\n');
    for l in logs {
        s.push_str(&l.csv_row());
        s.push('\n');
    }
    s
}

type Pairs = [(ParameterMap, HyperspectralCube)];

/// Trains `cfg.kind()` on `train` (and `val` for regularizer selection),
/// optionally continuing from `resume`.
pub fn train(cfg: &TrainConfig, train: &Pairs, val: &Pairs, resume: Option<EmulatorModel>) -> CliResult<Trained> {
    let kind = cfg.kind()?;
    if let Some(m) = &resume {
        if m.kind() != kind.name() {
            return Err(CliError::usage(format!(
                "checkpoint holds a {} model, config asks for {}",
                m.kind(),
                kind.name()
            )));
        }
    }
    if cfg.phase != PhaseSelect::Both && !kind.is_two_step() {
        return Err(CliError::usage(format!("phase selection applies to two-step models, not {}", kind.name())));
    }
    if train.is_empty() && resume.is_none() {
        return Err(CliError::runtime("the training split is empty"));
    }
    let init_seed = derive_seed(cfg.seed, 1);
    let sample_seed = derive_seed(cfg.seed, 2);
    if kind.is_vae() {
        return train_vae(cfg, kind, train, resume, init_seed, sample_seed);
    }
    let data = SpectralData::sample_pairs(train, cfg.samples, sample_seed)?;
    match kind {
        ModelKind::Mlp => {
            let mut model = match resume {
                Some(EmulatorModel::Classical(ClassicalModel::Mlp(m))) => m,
                _ => {
                    let hidden = cfg.hidden.clone().unwrap_or(MLP_HIDDEN.to_vec());
                    let mut m = mlp_init(data.n_params(), data.bands(), &hidden, init_seed)?;
                    m.scaling = Scaling::fit(&data);
                    m
                }
            };
            let logs = mlp_train(&mut model, &data, &cfg.schedule(kind, cfg.epochs)?, derive_seed(cfg.seed, 3))?;
            Ok(Trained { model: EmulatorModel::Classical(ClassicalModel::Mlp(model)), log_csv: epoch_csv(&logs) })
        }
        _ => {
            if let Some(m) = resume {
                return Ok(Trained { model: m, log_csv: "regularizer,val_rmse\n".into() });
            }
            let kernel = if kind == ModelKind::Krr { KernelKind::Krr } else { KernelKind::Gpr };
            let pk = PcaKernelConfig {
                kind: kernel,
                components: cfg.components,
                regularizers: cfg.regularizers.clone(),
                lengthscale: cfg.lengthscale,
                max_rows: cfg.max_rows,
            };
            let val_data = if cfg.regularizers.len() > 1 {
                if val.is_empty() {
                    return Err(CliError::usage("several regularizers need a non-empty validation split"));
                }
                Some(SpectralData::sample_pairs(val, cfg.samples, derive_seed(cfg.seed, 5))?)
            } else {
                None
            };
            let (model, table) = fit_pca_kernel(&data, val_data.as_ref(), &pk, derive_seed(cfg.seed, 3))?;
            let mut log = String::from("regularizer,val_rmse\n");
            for c in table {
                let _ = writeln!(log, "{:e},{:e}", c.regularizer, c.val_rmse);
            }
            Ok(Trained { model: EmulatorModel::Classical(ClassicalModel::PcaKernel(model)), log_csv: log })
        }
    }
}

fn train_vae(
    cfg: &TrainConfig,
    kind: ModelKind,
    train: &Pairs,
    resume: Option<EmulatorModel>,
    init_seed: u64,
    sample_seed: u64,
) -> CliResult<Trained> {
    let formulation = if kind.is_two_step() { Formulation::TwoStep } else { Formulation::OneStep };
    let spectra;
    let data = if kind.is_convolutional() {
        TrainData::Cubes(train)
    } else {
        spectra = SpectralData::sample_pairs(train, cfg.samples, sample_seed)?;
        TrainData::Spectra(&spectra)
    };
    let mut model: VaeEmulator = match resume {
        Some(EmulatorModel::Vae(m)) => m,
        Some(_) => unreachable!("kind checked by the caller"),
        None => {
            let first = &train[0];
            let (bands, p) = (first.1.bands(), first.0.n_params());
            let m = if kind.is_convolutional() {
                let widths = cfg.widths.clone().unwrap_or(FCVAE_DESK_WIDTHS.to_vec());
                build_fcvae(bands, p, cfg.latent_dim, &widths, cfg.n_down, formulation, init_seed)?
            } else {
                let hidden = cfg.hidden.clone().unwrap_or(P2P_HIDDEN.to_vec());
                build_p2p(bands, p, cfg.latent_dim, &hidden, formulation, init_seed)?
            };
            let scaling = match data {
                TrainData::Spectra(d) => Scaling::fit(d),
                TrainData::Cubes(pairs) => Scaling::fit_pairs(pairs)?,
            };
            m.with_scaling(scaling)?
        }
    };
    let train_seed = derive_seed(cfg.seed, 3);
    let mut logs = Vec::new();
    if kind.is_two_step() {
        if cfg.phase != PhaseSelect::Interpolator {
            let s = cfg.schedule(kind, cfg.pretrain_epochs.or(cfg.epochs))?;
            logs.extend(train_vae_pretrain(&mut model, data, &s, train_seed)?);
        }
        if cfg.phase != PhaseSelect::Pretrain {
            let s = cfg.schedule(kind, cfg.epochs)?;
            logs.extend(train_interpolator(&mut model, data, &s, derive_seed(cfg.seed, 4))?);
        }
    } else {
        logs = train_one_step(&mut model, data, &cfg.schedule(kind, cfg.epochs)?, train_seed)?;
    }
    Ok(Trained { model: EmulatorModel::Vae(model), log_csv: epoch_csv(&logs) })
}
