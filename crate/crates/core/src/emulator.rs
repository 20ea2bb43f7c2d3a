//! Uniform handle over every trained emulator, with HEM1 persistence.

use std::path::Path;

use serde::Deserialize;
use serde_json::json;

use crate::checkpoint::{Blob, Checkpoint};
use crate::classical::{
    emulate_classical, ClassicalModel, KernelKind, KernelModel, MlpModel, PcaKernelEmulator, PcaModel,
};
use crate::error::{Error, Result};
use crate::hsdata::{HyperspectralCube, ParameterMap};
use crate::nn::{LayerSpec, Sequential};
use crate::training::Scaling;
use crate::vae::{emulate, Architecture, Family, Formulation, VaeEmulator};

pub use crate::vae::EmulationMode;

/// Model kinds, named as on the command line.
pub const MODEL_KINDS: [&str; 7] = ["p2p", "p2p-pre", "fc-vae", "fc-vae-pre", "mlp", "krr", "gpr"];

#[derive(Debug, Clone, PartialEq)]
pub enum EmulatorModel {
    Vae(VaeEmulator),
    Classical(ClassicalModel),
}

impl EmulatorModel {
    pub fn kind(&self) -> &'static str {
        match self {
            EmulatorModel::Vae(m) => match (m.family(), m.formulation) {
                (Family::P2p, Formulation::OneStep) => "p2p",
                (Family::P2p, Formulation::TwoStep) => "p2p-pre",
                (Family::FcVae, Formulation::OneStep) => "fc-vae",
                (Family::FcVae, Formulation::TwoStep) => "fc-vae-pre",
            },
            EmulatorModel::Classical(ClassicalModel::Mlp(_)) => "mlp",
            EmulatorModel::Classical(ClassicalModel::PcaKernel(m)) => match m.kernel.kind {
                KernelKind::Krr => "krr",
                KernelKind::Gpr => "gpr",
            },
        }
    }

    pub fn param_names(&self) -> &[String] {
        match self {
            EmulatorModel::Vae(m) => &m.scaling.param_names,
            EmulatorModel::Classical(c) => c.param_names(),
        }
    }

    pub fn wavelengths_nm(&self) -> &[f64] {
        match self {
            EmulatorModel::Vae(m) => &m.scaling.wavelengths_nm,
            EmulatorModel::Classical(c) => c.wavelengths_nm(),
        }
    }

    /// Classical models ignore `mode` and `seed`.
    pub fn emulate(&self, map: &ParameterMap, mode: EmulationMode, seed: u64) -> Result<HyperspectralCube> {
        match self {
            EmulatorModel::Vae(m) => emulate(m, map, mode, seed),
            EmulatorModel::Classical(c) => emulate_classical(c, map),
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut blobs = Vec::new();
        let meta = match self {
            EmulatorModel::Vae(m) => {
                let mut specs = serde_json::Map::new();
                if let Some(e) = &m.encoder {
                    push_net(&mut blobs, "encoder", e);
                    specs.insert("encoder".into(), serde_json::to_value(e.specs()).map_err(header_err)?);
                }
                push_net(&mut blobs, "interpolator", &m.interpolator);
                push_net(&mut blobs, "decoder", &m.decoder);
                json!({
                    "formulation": m.formulation,
                    "arch": m.arch,
                    "latent_dim": m.latent_dim,
                    "bands": m.bands,
                    "n_params": m.n_params,
                    "decoder_frozen": m.decoder_frozen,
                    "scaling": m.scaling,
                    "interpolator": m.interpolator.specs(),
                    "decoder": m.decoder.specs(),
                    "encoder": specs.get("encoder"),
                })
            }
            EmulatorModel::Classical(ClassicalModel::Mlp(m)) => {
                push_net(&mut blobs, "net", &m.net);
                json!({"hidden": m.hidden, "scaling": m.scaling, "net": m.net.specs()})
            }
            EmulatorModel::Classical(ClassicalModel::PcaKernel(m)) => {
                let b = m.pca.bands();
                let k = &m.kernel;
                blobs.push(Blob::vector("pca.mean", &m.pca.mean));
                blobs.push(Blob::new("pca.components", vec![m.pca.n_components(), b], m.pca.components.clone()));
                blobs.push(Blob::vector("pca.eigenvalues", &m.pca.eigenvalues));
                blobs.push(Blob::vector("kernel.input_mean", &k.input_mean));
                blobs.push(Blob::vector("kernel.input_std", &k.input_std));
                blobs.push(Blob::new("kernel.inputs", vec![k.len(), k.n_inputs], k.inputs.clone()));
                blobs.push(Blob::new("kernel.dual", vec![k.len(), k.n_outputs], k.dual.clone()));
                json!({
                    "param_names": m.param_names,
                    "wavelengths_nm": m.wavelengths_nm,
                    "total_variance": m.pca.total_variance,
                    "lengthscale": k.lengthscale,
                    "regularizer": k.regularizer,
                })
            }
        };
        Ok(Checkpoint { kind: self.kind().into(), meta, blobs })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = &ck.meta;
        match ck.kind.as_str() {
            "p2p" | "p2p-pre" | "fc-vae" | "fc-vae-pre" => {
                let formulation: Formulation = field(meta, "formulation")?;
                let arch: Architecture = field(meta, "arch")?;
                let expect_pre = ck.kind.ends_with("-pre");
                let expect_p2p = ck.kind.starts_with("p2p");
                if (formulation == Formulation::TwoStep) != expect_pre
                    || matches!(arch, Architecture::P2p { .. }) != expect_p2p
                {
                    return Err(Error::Header(format!("metadata contradicts kind {}", ck.kind)));
                }
                let enc_specs: Option<Vec<LayerSpec>> = field(meta, "encoder")?;
                let encoder = enc_specs.map(|s| load_net(ck, "encoder", &s)).transpose()?;
                let m = VaeEmulator {
                    formulation,
                    arch,
                    latent_dim: field(meta, "latent_dim")?,
                    bands: field(meta, "bands")?,
                    n_params: field(meta, "n_params")?,
                    encoder,
                    interpolator: load_net(ck, "interpolator", &field::<Vec<LayerSpec>>(meta, "interpolator")?)?,
                    decoder: load_net(ck, "decoder", &field::<Vec<LayerSpec>>(meta, "decoder")?)?,
                    decoder_frozen: field(meta, "decoder_frozen")?,
                    scaling: field(meta, "scaling")?,
                };
                m.check_consistency()?;
                Ok(EmulatorModel::Vae(m))
            }
            "mlp" => {
                let scaling: Scaling = field(meta, "scaling")?;
                let net = load_net(ck, "net", &field::<Vec<LayerSpec>>(meta, "net")?)?;
                Ok(EmulatorModel::Classical(ClassicalModel::Mlp(MlpModel {
                    hidden: field(meta, "hidden")?,
                    net,
                    scaling,
                })))
            }
            "krr" | "gpr" => {
                let kind = if ck.kind == "krr" { KernelKind::Krr } else { KernelKind::Gpr };
                let comps = ck.blob("pca.components")?;
                let inputs = ck.blob("kernel.inputs")?;
                let dual = ck.blob("kernel.dual")?;
                if comps.shape.len() != 2 || inputs.shape.len() != 2 || dual.shape.len() != 2 {
                    return Err(Error::Header("kernel blobs must be matrices".into()));
                }
                let pca = PcaModel {
                    mean: ck.blob("pca.mean")?.data.clone(),
                    components: comps.data.clone(),
                    eigenvalues: ck.blob("pca.eigenvalues")?.data.clone(),
                    total_variance: field(meta, "total_variance")?,
                };
                let kernel = KernelModel::from_parts(
                    kind,
                    ck.blob("kernel.input_mean")?.data.clone(),
                    ck.blob("kernel.input_std")?.data.clone(),
                    inputs.data.clone(),
                    inputs.shape[1],
                    dual.data.clone(),
                    dual.shape[1],
                    field(meta, "lengthscale")?,
                    field(meta, "regularizer")?,
                )?;
                if pca.n_components() != kernel.n_outputs || pca.components.len() != pca.n_components() * pca.bands() {
                    return Err(Error::Header("PCA and kernel sizes disagree".into()));
                }
                Ok(EmulatorModel::Classical(ClassicalModel::PcaKernel(PcaKernelEmulator {
                    param_names: field(meta, "param_names")?,
                    wavelengths_nm: field(meta, "wavelengths_nm")?,
                    pca,
                    kernel,
                })))
            }
            other => Err(Error::Header(format!("unknown model kind {other:?}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

fn header_err(e: serde_json::Error) -> Error {
    Error::Header(e.to_string())
}

fn field<T: for<'de> Deserialize<'de>>(meta: &serde_json::Value, key: &str) -> Result<T> {
    let v = meta.get(key).cloned().unwrap_or(serde_json::Value::Null);
    serde_json::from_value(v).map_err(|e| Error::Header(format!("{key}: {e}")))
}

fn push_net(blobs: &mut Vec<Blob>, prefix: &str, net: &Sequential) {
    for (i, p) in net.params().iter().enumerate() {
        blobs.push(Blob::from_tensor(format!("{prefix}.{i}"), p));
    }
}

fn load_net(ck: &Checkpoint, prefix: &str, specs: &[LayerSpec]) -> Result<Sequential> {
    let mut net = Sequential::from_specs(specs);
    for (i, p) in net.params_mut().into_iter().enumerate() {
        let b = ck.blob(&format!("{prefix}.{i}"))?;
        if b.shape != p.shape() {
            return Err(Error::Header(format!(
                "{prefix}.{i} has shape {:?}, architecture needs {:?}",
                b.shape,
                p.shape()
            )));
        }
        p.data_mut().copy_from_slice(&b.data);
    }
    if ck.blobs.iter().any(|b| {
        b.name
            .strip_prefix(prefix)
            .and_then(|r| r.strip_prefix('.'))
            .and_then(|r| r.parse::<usize>().ok())
            .is_some_and(|i| i >= net.params().len())
    }) {
        return Err(Error::Header(format!("{prefix} has more tensors than its architecture")));
    }
    Ok(net)
}
