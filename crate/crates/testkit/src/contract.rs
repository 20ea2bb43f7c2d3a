//! Gradient contract: every kernel and both emulator families against
//! central finite differences.

use hyperem::nn::{
    channel_norm_backward, channel_norm_forward, conv2d_backward, conv2d_forward, dense_backward, dense_forward,
    nn_upsample2x_backward, nn_upsample2x_forward, relu, relu_backward, sigmoid, sigmoid_backward, ConvParams,
    DenseParams, Layer, Sequential, Tensor,
};
use hyperem::rng::{derive_seed, SplitMix64};
use hyperem::vae::{
    build_fcvae, build_p2p, kl_gaussian, kl_gaussian_grad, reparameterize, reparameterize_backward, vae_loss,
    vae_objective, Formulation, LatentCode, VaeEmulator,
};

use crate::gen::{kink_safe_tensor, random_tensor};
use crate::gradcheck::{check_tensors, GradCheckReport};

/// Named outcome of one check.
#[derive(Debug, Clone)]
pub struct ContractCase {
    pub name: String,
    pub report: GradCheckReport,
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn dense_case(seed: u64) -> GradCheckReport {
    let mut rng = SplitMix64::new(seed);
    let (n, fin, fout) = (1 + rng.below(3) as usize, 1 + rng.below(5) as usize, 1 + rng.below(5) as usize);
    let x = random_tensor(derive_seed(seed, 1), &[n, fin], -1.0, 1.0);
    let w = random_tensor(derive_seed(seed, 2), &[fin, fout], -1.0, 1.0);
    let b = random_tensor(derive_seed(seed, 3), &[fout], -1.0, 1.0);
    let r = random_tensor(derive_seed(seed, 4), &[n, fout], -1.0, 1.0);
    let p = DenseParams { weight: w.clone(), bias: b.clone() };
    let (dx, dw, db) = dense_backward(&x, &p, &r).unwrap();
    check_tensors(
        &names(&["x", "weight", "bias"]),
        &[x.data().to_vec(), w.data().to_vec(), b.data().to_vec()],
        &[dx.into_data(), dw.into_data(), db.into_data()],
        |v| {
            let p = DenseParams { weight: tensor(&[fin, fout], &v[1]), bias: tensor(&[fout], &v[2]) };
            dense_forward(&tensor(&[n, fin], &v[0]), &p).unwrap().dot(&r)
        },
    )
}

fn conv_case(seed: u64, k: usize, stride: usize, pad: usize) -> GradCheckReport {
    let mut rng = SplitMix64::new(seed);
    let (n, cin, cout) = (1 + rng.below(2) as usize, 1 + rng.below(3) as usize, 1 + rng.below(3) as usize);
    let base = if 2 * pad >= k { 1 } else { k - 2 * pad };
    let (h, w) = (base + rng.below(4) as usize, base + rng.below(4) as usize);
    let x = random_tensor(derive_seed(seed, 1), &[n, cin, h, w], -1.0, 1.0);
    let wt = random_tensor(derive_seed(seed, 2), &[cout, cin, k, k], -0.5, 0.5);
    let b = random_tensor(derive_seed(seed, 3), &[cout], -1.0, 1.0);
    let p = ConvParams { weight: wt.clone(), bias: b.clone(), stride, pad };
    let (oh, ow) = p.output_size(h, w).unwrap();
    let r = random_tensor(derive_seed(seed, 4), &[n, cout, oh, ow], -1.0, 1.0);
    let (dx, dw, db) = conv2d_backward(&x, &p, &r).unwrap();
    check_tensors(
        &names(&["x", "weight", "bias"]),
        &[x.data().to_vec(), wt.data().to_vec(), b.data().to_vec()],
        &[dx.into_data(), dw.into_data(), db.into_data()],
        |v| {
            let p = ConvParams { weight: tensor(&[cout, cin, k, k], &v[1]), bias: tensor(&[cout], &v[2]), stride, pad };
            conv2d_forward(&tensor(&[n, cin, h, w], &v[0]), &p).unwrap().dot(&r)
        },
    )
}

fn norm_case(seed: u64) -> GradCheckReport {
    let mut rng = SplitMix64::new(seed);
    let (n, c) = (1 + rng.below(2) as usize, 1 + rng.below(3) as usize);
    let (h, w) = (1 + rng.below(4) as usize, 2 + rng.below(3) as usize);
    let shape = [n, c, h, w];
    let x = random_tensor(derive_seed(seed, 1), &shape, -1.0, 1.0);
    let g = random_tensor(derive_seed(seed, 2), &[c], 0.5, 1.5);
    let s = random_tensor(derive_seed(seed, 3), &[c], -1.0, 1.0);
    let r = random_tensor(derive_seed(seed, 4), &shape, -1.0, 1.0);
    let (dx, dg, ds) = channel_norm_backward(&x, &g, &r).unwrap();
    check_tensors(
        &names(&["x", "gain", "shift"]),
        &[x.data().to_vec(), g.data().to_vec(), s.data().to_vec()],
        &[dx.into_data(), dg.into_data(), ds.into_data()],
        |v| channel_norm_forward(&tensor(&shape, &v[0]), &tensor(&[c], &v[1]), &tensor(&[c], &v[2])).unwrap().dot(&r),
    )
}

fn upsample_case(seed: u64) -> GradCheckReport {
    let mut rng = SplitMix64::new(seed);
    let shape =
        [1 + rng.below(2) as usize, 1 + rng.below(3) as usize, 1 + rng.below(3) as usize, 1 + rng.below(3) as usize];
    let x = random_tensor(derive_seed(seed, 1), &shape, -1.0, 1.0);
    let out = [shape[0], shape[1], 2 * shape[2], 2 * shape[3]];
    let r = random_tensor(derive_seed(seed, 4), &out, -1.0, 1.0);
    let dx = nn_upsample2x_backward(&r).unwrap();
    check_tensors(&names(&["x"]), &[x.data().to_vec()], &[dx.into_data()], |v| {
        nn_upsample2x_forward(&tensor(&shape, &v[0])).unwrap().dot(&r)
    })
}

fn activation_case(seed: u64, use_relu: bool) -> GradCheckReport {
    let shape = [2, 1 + SplitMix64::new(seed).below(8) as usize];
    let x = kink_safe_tensor(derive_seed(seed, 1), &shape, 3.0, 1e-3);
    let r = random_tensor(derive_seed(seed, 4), &shape, -1.0, 1.0);
    let dx = if use_relu { relu_backward(&x, &r).unwrap() } else { sigmoid_backward(&x, &r).unwrap() };
    check_tensors(&names(&["x"]), &[x.data().to_vec()], &[dx.into_data()], |v| {
        let t = tensor(&shape, &v[0]);
        if use_relu { relu(&t) } else { sigmoid(&t) }.dot(&r)
    })
}

fn latent_case(seed: u64) -> GradCheckReport {
    let mut rng = SplitMix64::new(seed);
    let shape = [1 + rng.below(3) as usize, 1 + rng.below(5) as usize];
    let mu = random_tensor(derive_seed(seed, 1), &shape, -2.0, 2.0);
    let lv = random_tensor(derive_seed(seed, 2), &shape, -3.0, 3.0);
    let eps = random_tensor(derive_seed(seed, 3), &shape, -2.0, 2.0);
    let r = random_tensor(derive_seed(seed, 4), &shape, -1.0, 1.0);
    let code = LatentCode::new(mu.clone(), lv.clone()).unwrap();
    let (mut dmu, mut dlv) = reparameterize_backward(&code, &eps, &r).unwrap();
    let (kmu, klv) = kl_gaussian_grad(&code);
    dmu.add_assign(&kmu);
    dlv.add_assign(&klv);
    check_tensors(
        &names(&["mu", "log_var"]),
        &[mu.data().to_vec(), lv.data().to_vec()],
        &[dmu.into_data(), dlv.into_data()],
        |v| {
            let code = LatentCode::new(tensor(&shape, &v[0]), tensor(&shape, &v[1])).unwrap();
            reparameterize(&code, &eps).unwrap().dot(&r) + kl_gaussian(&code)
        },
    )
}

/// Every kernel, `trials` randomized draws each.
pub fn kernel_cases(trials: usize, seed: u64) -> Vec<ContractCase> {
    let mut out = Vec::new();
    let mut push = |name: String, report| out.push(ContractCase { name, report });
    for t in 0..trials as u64 {
        let s = |k: u64| derive_seed(derive_seed(seed, k), t);
        push(format!("dense #{t}"), dense_case(s(1)));
        push(format!("conv1x1 #{t}"), conv_case(s(2), 1, 1, 0));
        push(format!("conv3x3 #{t}"), conv_case(s(3), 3, 1, 1));
        push(format!("conv3x3/2 #{t}"), conv_case(s(4), 3, 2, 1));
        push(format!("conv7x7 #{t}"), conv_case(s(5), 7, 1, 3));
        push(format!("channel_norm #{t}"), norm_case(s(6)));
        push(format!("upsample2x #{t}"), upsample_case(s(7)));
        push(format!("relu #{t}"), activation_case(s(8), true));
        push(format!("sigmoid #{t}"), activation_case(s(9), false));
        push(format!("reparameterize+kl #{t}"), latent_case(s(10)));
    }
    out
}

fn set_params(net: &mut Sequential, values: &[Vec<f64>]) {
    for (p, v) in net.params_mut().into_iter().zip(values) {
        p.data_mut().copy_from_slice(v);
    }
}

/// Forward-only evaluation of the objective that `vae_objective`
/// differentiates.
fn objective_value(
    front: &Sequential,
    decoder: &Sequential,
    input: &Tensor,
    target: &Tensor,
    eps: &Tensor,
    beta: f64,
) -> f64 {
    let code = LatentCode::from_head(&front.forward(input).unwrap()).unwrap();
    let z = reparameterize(&code, eps).unwrap();
    vae_loss(target, &decoder.forward(&z).unwrap(), &code, beta).unwrap().0
}

/// Checks the gradient of `recon + beta·KL` with respect to the front
/// network and, unless `frozen_decoder`, the decoder.
pub fn objective_check(
    front_name: &str,
    front: &Sequential,
    decoder: &Sequential,
    input: &Tensor,
    target: &Tensor,
    eps: &Tensor,
    beta: f64,
    frozen_decoder: bool,
) -> GradCheckReport {
    let obj = vae_objective(front, decoder, input.clone(), target, Some(eps), beta).unwrap();
    let mut labels = Vec::new();
    let mut params = Vec::new();
    let mut grads = Vec::new();
    for (i, (p, g)) in front.params().iter().zip(&obj.front_grads).enumerate() {
        labels.push(format!("{front_name}.{i}"));
        params.push(p.data().to_vec());
        grads.push(g.data().to_vec());
    }
    let nf = params.len();
    if !frozen_decoder {
        for (i, (p, g)) in decoder.params().iter().zip(&obj.decoder_grads).enumerate() {
            labels.push(format!("decoder.{i}"));
            params.push(p.data().to_vec());
            grads.push(g.data().to_vec());
        }
    }
    let mut f = front.clone();
    let mut d = decoder.clone();
    check_tensors(&labels, &params, &grads, |v| {
        set_params(&mut f, &v[..nf]);
        if !frozen_decoder {
            set_params(&mut d, &v[nf..]);
        }
        objective_value(&f, &d, input, target, eps, beta)
    })
}

// large enough that the KL part of the gradient is not lost under recon
const CHECK_BETA: f64 = 0.3;
/// Smallest distance of any ReLU input from its kink.
pub const KINK_MARGIN: f64 = 1e-3;
const MAX_DRAWS: u64 = 500;

fn relu_margin(net: &Sequential, input: &Tensor) -> f64 {
    let acts = net.forward_cached(input.clone()).unwrap();
    let mut m = f64::INFINITY;
    for (layer, a) in net.layers.iter().zip(&acts) {
        if matches!(layer, Layer::Relu) {
            m = a.data().iter().fold(m, |m, v| m.min(v.abs()));
        }
    }
    m
}

fn model_margin(front: &Sequential, decoder: &Sequential, input: &Tensor, eps: &Tensor) -> f64 {
    let code = LatentCode::from_head(&front.forward(input).unwrap()).unwrap();
    let z = reparameterize(&code, eps).unwrap();
    relu_margin(front, input).min(relu_margin(decoder, &z))
}

struct Draw {
    model: VaeEmulator,
    params: Tensor,
    spectra: Tensor,
    eps: Tensor,
}

// first draw whose every ReLU input, for both phases, clears KINK_MARGIN
fn draw_clear_of_kinks(seed: u64, make: impl Fn(u64) -> Draw) -> Draw {
    for t in 0..MAX_DRAWS {
        let d = make(derive_seed(seed, t));
        let mut margin = model_margin(&d.model.interpolator, &d.model.decoder, &d.params, &d.eps);
        if let Some(enc) = &d.model.encoder {
            margin = margin.min(model_margin(enc, &d.model.decoder, &d.spectra, &d.eps));
        }
        if margin >= KINK_MARGIN {
            return d;
        }
    }
    panic!("no draw clears the ReLU kinks by {KINK_MARGIN} after {MAX_DRAWS} tries");
}

fn family_cases(tag: &str, d: &Draw, out: &mut Vec<ContractCase>) {
    let m = &d.model;
    if let Some(enc) = &m.encoder {
        out.push(ContractCase {
            name: format!("{tag} pretrain"),
            report: objective_check("encoder", enc, &m.decoder, &d.spectra, &d.spectra, &d.eps, CHECK_BETA, false),
        });
    }
    let frozen = m.formulation == Formulation::TwoStep;
    out.push(ContractCase {
        name: format!("{tag} {}", if frozen { "interpolator" } else { "joint" }),
        report: objective_check(
            "interpolator",
            &m.interpolator,
            &m.decoder,
            &d.params,
            &d.spectra,
            &d.eps,
            CHECK_BETA,
            frozen,
        ),
    });
}

/// P2P and FC-VAE micro-models, one-step and both two-step phases, on
/// 2-sample batches with fixed reparameterization noise.
pub fn model_cases(seed: u64) -> Vec<ContractCase> {
    let mut out = Vec::new();
    let (p, z) = (6, 3);
    for form in [Formulation::OneStep, Formulation::TwoStep] {
        let bands = 7;
        let d = draw_clear_of_kinks(derive_seed(seed, 1), |s| Draw {
            model: build_p2p(bands, p, z, &[8, 5], form, derive_seed(s, 1)).unwrap(),
            params: random_tensor(derive_seed(s, 2), &[2, p], 0.0, 1.0),
            spectra: random_tensor(derive_seed(s, 3), &[2, bands], -1.0, 1.0),
            eps: random_tensor(derive_seed(s, 4), &[2, z], -1.5, 1.5),
        });
        let tag = if form == Formulation::OneStep { "p2p one-step" } else { "p2p two-step" };
        family_cases(tag, &d, &mut out);
    }
    for form in [Formulation::OneStep, Formulation::TwoStep] {
        let (bands, side) = (3, 4);
        let d = draw_clear_of_kinks(derive_seed(seed, 2), |s| Draw {
            model: build_fcvae(bands, p, z, &[3, 4], 1, form, derive_seed(s, 1)).unwrap(),
            params: random_tensor(derive_seed(s, 2), &[2, p, side, side], 0.0, 1.0),
            spectra: random_tensor(derive_seed(s, 3), &[2, bands, side, side], -1.0, 1.0),
            eps: random_tensor(derive_seed(s, 4), &[2, z, side / 2, side / 2], -1.5, 1.5),
        });
        let tag = if form == Formulation::OneStep { "fc-vae one-step" } else { "fc-vae two-step" };
        family_cases(tag, &d, &mut out);
    }
    out
}
