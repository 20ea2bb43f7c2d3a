//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). It exits 0 after printing the
//! table unless `HYPEREM_ACCEPTANCE_STRICT=1`, in which case any FAIL makes
//! it exit 1. `HYPEREM_ACCEPTANCE_ONLY=2,7` restricts the run to the listed
//! criteria.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use hyperem::classical::{gpr_fit, gpr_predict, krr_fit, krr_predict, pca_fit, pca_project, pca_reconstruct};
use hyperem::hsdata::{read_cube, read_map, write_cube, write_map};
use hyperem::metrics::{evaluate, psnr_from_mse, rmse, spectral_angle, spectrum_angle, ssim};
use hyperem::retrieval::{lut_invert, nearest_row, relative_error_map, retrieve_map, InversionCost};
use hyperem::rng::SplitMix64;
use hyperem::synthrtm::{build_lut, gen_dataset, BandGrid, DatasetConfig, LookUpTable, LutGrid, PARAM_RANGES};
use hyperem::training::{Scaling, SpectralData};
use hyperem::vae::{
    build_fcvae, build_p2p, kl_weight, lr_at, patch_size_at, train_interpolator, train_vae_pretrain, Formulation,
    TrainData, TrainSchedule, VaeEmulator, P2P_HIDDEN,
};
use hyperem::{EmulationMode, EmulatorModel, HyperspectralCube, ParameterMap, Spectrum};
use hyperem_cli::dataset::{generate, DatasetSettings};
use hyperem_cli::pipeline::{train, ModelKind, TrainConfig};
use hyperem_testkit::contract::{kernel_cases, model_cases};
use hyperem_testkit::{oracle, random_cube, random_map};
use tempfile::TempDir;

type Pairs = Vec<(ParameterMap, HyperspectralCube)>;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Collects named sub-checks; the criterion passes when all of them do.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    count: usize,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        self.count += 1;
        if !ok {
            self.failed.push(what.into());
        }
    }

    fn outcome(self, extra: &str) -> Outcome {
        let head = format!("{}/{} checks", self.count - self.failed.len(), self.count);
        let mut detail = if extra.is_empty() { head } else { format!("{head}; {extra}") };
        if !self.failed.is_empty() {
            let _ = write!(detail, "; failed: {}", self.failed.join(" | "));
        }
        Outcome::new(self.failed.is_empty(), detail)
    }
}

fn cube_from(h: usize, w: usize, wl: &[f64], values: Vec<f32>) -> HyperspectralCube {
    HyperspectralCube::new(h, w, wl.to_vec(), values).unwrap()
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut cases = kernel_cases(20, 2024);
    let n_kernel = cases.len();
    for seed in [7, 8] {
        cases.extend(model_cases(seed));
    }
    let secs = t.elapsed().as_secs_f64();
    let worst = cases.iter().map(|c| c.report.max_rel_error()).fold(0.0, f64::max);
    let bad: Vec<&str> = cases.iter().filter(|c| !c.report.passed()).map(|c| c.name.as_str()).collect();
    let mut c = Checks::default();
    c.check(bad.is_empty(), format!("over tolerance: {}", bad.join(", ")));
    c.check(secs < 120.0, format!("runtime {secs:.1} s >= 120 s"));
    c.outcome(&format!(
        "{n_kernel} kernel + {} model cases, worst rel err {worst:.2e} (tol 1e-4), {secs:.1} s",
        cases.len() - n_kernel
    ))
}

fn criterion_2() -> Outcome {
    let mut c = Checks::default();
    let x = random_cube(1, 9, 11, 13);
    c.check(rmse(&x, &x).unwrap() == 0.0, "rmse(x,x)");
    c.check((ssim(&x, &x).unwrap() - 1.0).abs() <= 1e-12, "ssim(x,x)");
    c.check(spectral_angle(&x, &x).unwrap() == 0.0, "sa(x,x)");
    for k in [0.125f32, 0.25, 0.5] {
        // powers of two keep c·x exact in f32 storage; cubes clamp to [0, 1]
        let y = cube_from(9, 11, x.wavelengths_nm(), x.values().iter().map(|v| v * k).collect());
        c.check(spectral_angle(&x, &y).unwrap() == 0.0, format!("cube sa(x, {k}x)"));
    }
    let mut rng = SplitMix64::new(5);
    for _ in 0..200 {
        let a: Vec<f64> = (0..50).map(|_| rng.uniform(0.01, 1.0)).collect();
        let k = rng.uniform(1e-3, 1e3);
        let b: Vec<f64> = a.iter().map(|v| k * v).collect();
        let t = spectrum_angle(&a, &b).unwrap();
        c.check(t <= 1e-12, format!("sa(a, {k}·a) = {t:e}"));
    }
    let p = psnr_from_mse(0.01, 1.0);
    c.check((p - 20.0).abs() <= 1e-9, format!("psnr {p}"));
    let ortho = spectrum_angle(&[0.3, 0.0, 0.0, 0.0], &[0.0, 0.0, 1.7, 0.0]).unwrap();
    c.check((ortho - std::f64::consts::FRAC_PI_2).abs() <= 1e-9, format!("orthogonal {ortho}"));
    let wl = [500.0, 600.0];
    let a = cube_from(1, 2, &wl, vec![1.0, 0.0, 0.0, 0.5]);
    let b = cube_from(1, 2, &wl, vec![0.0, 0.25, 1.0, 0.0]);
    let sa = spectral_angle(&a, &b).unwrap();
    c.check((sa - std::f64::consts::FRAC_PI_2).abs() <= 1e-9, format!("orthogonal cube {sa}"));
    c.outcome(&format!("psnr(0.01, 1) = {p:.12} dB, orthogonal sa = {ortho:.12}"))
}

fn random_matrix(seed: u64, rows: usize, cols: usize) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

fn criterion_3() -> Outcome {
    let mut c = Checks::default();
    let (n, b) = (40, 9);
    let x = random_matrix(1, n, b);
    let pca = pca_fit(&x, b, b).unwrap();
    let mut worst_pca = 0.0f64;
    for row in x.chunks_exact(b) {
        let back = pca_reconstruct(&pca, &pca_project(&pca, row).unwrap()).unwrap();
        worst_pca = row.iter().zip(&back).map(|(u, v)| (u - v).abs()).fold(worst_pca, f64::max);
    }
    c.check(worst_pca <= 1e-9, format!("pca round trip {worst_pca:e}"));

    let (n, p, m) = (30, 4, 3);
    let x = random_matrix(2, n, p);
    let y = random_matrix(3, n, m);
    let krr = krr_fit(&x, p, &y, m, 1e-10, Some(0.9)).unwrap();
    let mut worst_krr = 0.0f64;
    for i in 0..n {
        let pred = krr_predict(&krr, &x[i * p..(i + 1) * p]).unwrap();
        worst_krr = (0..m).map(|k| (pred[k] - y[i * m + k]).abs()).fold(worst_krr, f64::max);
    }
    c.check(worst_krr <= 1e-6, format!("krr interpolation {worst_krr:e}"));

    let (n, p) = (15, 3);
    let x = random_matrix(4, n, p);
    let y = random_matrix(5, n, 1);
    let gpr = gpr_fit(&x, p, &y, 1, 0.0, Some(0.6)).unwrap();
    let mut worst_gpr = 0.0f64;
    for i in 0..n {
        let (mean, _) = gpr_predict(&gpr, &x[i * p..(i + 1) * p]).unwrap();
        worst_gpr = worst_gpr.max((mean[0] - y[i]).abs());
    }
    c.check(worst_gpr <= 1e-9, format!("gpr interpolation {worst_gpr:e}"));

    let x2 = [0.2, -0.5, 0.8, 0.1];
    let y2 = [1.5, -0.5];
    let mut worst_eq = 0.0f64;
    for s2 in [1e-6, 1e-3, 0.5] {
        let g = gpr_fit(&x2, 2, &y2, 1, s2, Some(0.7)).unwrap();
        let k = krr_fit(&x2, 2, &y2, 1, s2, Some(0.7)).unwrap();
        for q in [[0.0, 0.0], [0.2, -0.5], [1.0, 1.0]] {
            let d = (gpr_predict(&g, &q).unwrap().0[0] - krr_predict(&k, &q).unwrap()[0]).abs();
            worst_eq = worst_eq.max(d);
        }
    }
    c.check(worst_eq <= 1e-9, format!("gpr mean vs krr {worst_eq:e}"));
    c.outcome(&format!(
        "max errors: pca {worst_pca:.1e}, krr {worst_krr:.1e}, gpr {worst_gpr:.1e}, gpr-krr {worst_eq:.1e}"
    ))
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let mut c = Checks::default();
    let grid = LutGrid::default_cab();
    let bands = BandGrid::default();
    let lut = build_lut(&grid, &bands).unwrap();
    c.check(lut.len() == 17_253, format!("LUT has {} rows", lut.len()));
    let wl = bands.wavelengths_arc();
    let mut self_miss = 0;
    for row in 0..lut.len() {
        let s = Spectrum::new(wl.clone(), lut.spectrum(row).to_vec()).unwrap();
        if lut_invert(&s, &lut).unwrap() != *lut.params(row) {
            self_miss += 1;
        }
    }
    c.check(self_miss == 0, format!("{self_miss} rows not recovered"));
    let mut rng = SplitMix64::new(44);
    let mut oracle_miss = 0;
    for _ in 0..1000 {
        let row = rng.below(lut.len() as u64) as usize;
        let sd = rng.uniform(1e-4, 2e-2);
        let v: Vec<f64> = lut.spectrum(row).iter().map(|x| x + sd * rng.next_normal()).collect();
        let want = *lut.params(oracle::nearest_row(&v, &lut));
        let got = lut_invert(&Spectrum::new(wl.clone(), v.clone()).unwrap(), &lut).unwrap();
        if got != want || nearest_row(&v, &lut, InversionCost::Rmse).unwrap() != oracle::nearest_row(&v, &lut) {
            oracle_miss += 1;
        }
    }
    c.check(oracle_miss == 0, format!("{oracle_miss}/1000 perturbed spectra disagree with brute force"));
    let secs = t.elapsed().as_secs_f64();
    c.check(secs < 60.0, format!("runtime {secs:.1} s >= 60 s"));
    c.outcome(&format!(
        "{} rows self-invert with {self_miss} misses (0% RE), 1000 perturbed: {oracle_miss} disagreements, {secs:.1} s",
        lut.len()
    ))
}

#[derive(Debug, Clone, Copy, Default)]
struct Scores {
    rmse: f64,
    ssim: f64,
    sa: f64,
}

/// Models trained per seed, kept for the downstream retrieval criterion.
struct SeedRun {
    seed: u64,
    scores: Vec<(ModelKind, Scores)>,
    reference: HyperspectralCube,
    p2p_cube: HyperspectralCube,
    gpr_cube: HyperspectralCube,
    retrieval_train_s: f64,
}

const ORDERING_KINDS: [ModelKind; 5] =
    [ModelKind::P2p, ModelKind::P2pPre, ModelKind::Mlp, ModelKind::Krr, ModelKind::Gpr];

fn ordering_config(kind: ModelKind, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(kind, seed);
    if matches!(kind, ModelKind::P2p | ModelKind::P2pPre | ModelKind::Mlp) {
        cfg.base_lr = Some(1e-3);
    }
    if kind == ModelKind::P2pPre {
        // two phases; half the spectra keeps its cost near the one-step model
        cfg.samples = 8192;
    }
    cfg
}

fn seed_run(seed: u64) -> SeedRun {
    let settings = DatasetSettings {
        seed: 1000 * seed,
        n_cubes: 200,
        height: 32,
        width: 32,
        bands: BandGrid::DEFAULT_BANDS,
        param_ranges: PARAM_RANGES.to_vec(),
        split: [0.8, 0.1, 0.1],
    };
    let (pairs, split) = generate(&settings).unwrap();
    let pick = |idx: &[usize]| -> Pairs { idx.iter().map(|&i| pairs[i].clone()).collect() };
    let (tr, va, te) = (pick(&split.train), pick(&split.val), pick(&split.test));
    let mut scores = Vec::new();
    let (mut p2p_cube, mut gpr_cube) = (None, None);
    let mut retrieval_train_s = 0.0;
    for kind in ORDERING_KINDS {
        let t = Instant::now();
        let model = train(&ordering_config(kind, seed), &tr, &va, None).unwrap().model;
        let train_s = t.elapsed().as_secs_f64();
        let mut s = Scores::default();
        for (map, cube) in &te {
            let emu = model.emulate(map, EmulationMode::Mean, 0).unwrap();
            let r = evaluate(cube, &emu).unwrap();
            s.rmse += r.rmse;
            s.ssim += r.ssim;
            s.sa += r.sa_radians;
        }
        let n = te.len() as f64;
        s = Scores { rmse: s.rmse / n, ssim: s.ssim / n, sa: s.sa / n };
        eprintln!(
            "  seed {seed} {:<8} rmse {:.5} ssim {:.5} sa {:.5}  ({train_s:.0} s)",
            kind.name(),
            s.rmse,
            s.ssim,
            s.sa
        );
        let first = model.emulate(&te[0].0, EmulationMode::Mean, 0).unwrap();
        match kind {
            ModelKind::P2p => {
                p2p_cube = Some(first);
                retrieval_train_s += train_s;
            }
            ModelKind::Gpr => {
                gpr_cube = Some(first);
                retrieval_train_s += train_s;
            }
            _ => {}
        }
        scores.push((kind, s));
    }
    SeedRun {
        seed,
        scores,
        reference: te[0].1.clone(),
        p2p_cube: p2p_cube.unwrap(),
        gpr_cube: gpr_cube.unwrap(),
        retrieval_train_s,
    }
}

fn score(run: &SeedRun, kind: ModelKind) -> Scores {
    run.scores.iter().find(|(k, _)| *k == kind).unwrap().1
}

fn criterion_5(runs: &[SeedRun], secs: f64) -> Outcome {
    let mut c = Checks::default();
    let mut table = String::new();
    for run in runs {
        for good in [ModelKind::P2p, ModelKind::Mlp] {
            let g = score(run, good);
            let tag = format!("seed {} {}", run.seed, good.name());
            c.check(g.ssim > 0.99, format!("{tag} ssim {:.5}", g.ssim));
            c.check(g.sa < 0.02, format!("{tag} sa {:.5}", g.sa));
            for base in [ModelKind::Krr, ModelKind::Gpr] {
                let b = score(run, base);
                c.check(g.rmse < b.rmse, format!("{tag} rmse {:.5} vs {} {:.5}", g.rmse, base.name(), b.rmse));
                c.check(g.sa < b.sa, format!("{tag} sa {:.5} vs {} {:.5}", g.sa, base.name(), b.sa));
            }
        }
        let _ = write!(table, " seed {}:", run.seed);
        for (k, s) in &run.scores {
            let _ = write!(table, " {} {:.4}/{:.4}/{:.4}", k.name(), s.rmse, s.ssim, s.sa);
        }
        table.push(';');
    }
    c.check(secs < 1800.0, format!("runtime {secs:.0} s >= 1800 s"));
    c.outcome(&format!("rmse/ssim/sa on held-out split:{table} {secs:.0} s total"))
}

fn criterion_8(runs: &[SeedRun], lut: &LookUpTable) -> Outcome {
    let t = Instant::now();
    let mut c = Checks::default();
    let range = LutGrid::default_cab().range_of("cab").unwrap();
    let width = range.1 - range.0;
    let mut detail = String::new();
    let mut train_s = 0.0;
    for run in runs {
        let reference = retrieve_map(&run.reference, lut, "cab").unwrap();
        let re = |cube: &HyperspectralCube| {
            let est = retrieve_map(cube, lut, "cab").unwrap();
            relative_error_map(&reference, &est, width).unwrap().mean_relative_error
        };
        let (p2p, gpr) = (re(&run.p2p_cube), re(&run.gpr_cube));
        c.check(p2p < 2.0, format!("seed {} RE(p2p) {p2p:.3}%", run.seed));
        c.check(gpr > 2.0, format!("seed {} RE(gpr) {gpr:.3}%", run.seed));
        c.check(p2p < gpr, format!("seed {} RE(p2p) {p2p:.3}% !< RE(gpr) {gpr:.3}%", run.seed));
        let _ = write!(detail, " seed {}: p2p {p2p:.3}%, gpr {gpr:.3}%;", run.seed);
        train_s += run.retrieval_train_s;
    }
    let secs = train_s + t.elapsed().as_secs_f64();
    c.check(secs < 600.0, format!("runtime {secs:.0} s >= 600 s"));
    c.outcome(&format!("mean Cab RE:{detail} {secs:.0} s incl. P2P and GPR training"))
}

fn decoder_bits(m: &VaeEmulator) -> Vec<u64> {
    m.decoder.flat_params().iter().map(|v| v.to_bits()).collect()
}

fn criterion_6() -> Outcome {
    let mut c = Checks::default();
    let tmp = TempDir::new().unwrap();
    let pairs =
        gen_dataset(&DatasetConfig { n_cubes: 2, height: 4, width: 6, bands: 211, seed: 6, ..Default::default() })
            .unwrap();
    let data = SpectralData::from_pairs(&pairs).unwrap();
    let mut sched = TrainSchedule::p2p(20);
    sched.batch_size = 8;
    let mut m = build_p2p(data.bands(), 6, 20, &P2P_HIDDEN, Formulation::TwoStep, 2)
        .unwrap()
        .with_scaling(Scaling::fit(&data))
        .unwrap();
    train_vae_pretrain(&mut m, TrainData::Spectra(&data), &sched, 1).unwrap();
    let ckpt = tmp.path().join("pre.hem");
    EmulatorModel::Vae(m.clone()).save(&ckpt).unwrap();
    let EmulatorModel::Vae(pre) = EmulatorModel::load(&ckpt).unwrap() else {
        return Outcome::new(false, "checkpoint did not reload as a VAE");
    };
    let theta = decoder_bits(&pre);
    train_interpolator(&mut m, TrainData::Spectra(&data), &sched, 2).unwrap();
    c.check(decoder_bits(&m) == theta, "decoder changed during interpolator training");

    let order = [4, 2, 5, 0, 3, 1];
    let mut swapped = data.clone();
    swapped.names = order.iter().map(|&k| data.names[k].clone()).collect();
    swapped.ranges = order.iter().map(|&k| data.ranges[k]).collect();
    swapped.inputs = data.inputs.chunks_exact(6).flat_map(|row| order.map(|k| row[k])).collect();
    let mut permuted = pre.clone();
    permuted.set_param_scaling(swapped.names.clone(), swapped.ranges.clone()).unwrap();
    train_interpolator(&mut permuted, TrainData::Spectra(&swapped), &sched, 3).unwrap();
    c.check(decoder_bits(&permuted) == theta, "decoder changed after retraining on permuted parameters");

    let fc_pairs =
        gen_dataset(&DatasetConfig { n_cubes: 2, height: 8, width: 8, bands: 10, seed: 6, ..Default::default() })
            .unwrap();
    let mut fs = TrainSchedule::fcvae(3);
    fs.batch_size = 2;
    let mut fc = build_fcvae(10, 6, 4, &[4, 6], 1, Formulation::TwoStep, 3)
        .unwrap()
        .with_scaling(Scaling::fit_pairs(&fc_pairs).unwrap())
        .unwrap();
    train_vae_pretrain(&mut fc, TrainData::Cubes(&fc_pairs), &fs, 1).unwrap();
    let theta_fc = decoder_bits(&fc);
    train_interpolator(&mut fc, TrainData::Cubes(&fc_pairs), &fs, 2).unwrap();
    c.check(decoder_bits(&fc) == theta_fc, "fc-vae decoder changed during interpolator training");
    c.outcome(&format!("P2P decoder {} params bit-identical to the pretrained checkpoint", theta.len()))
}

fn criterion_7() -> Outcome {
    let mut c = Checks::default();
    for t in [15usize, 50] {
        for e in 0..=3 * t {
            let want = 1e-3 * (2.0 * (e % t) as f64 / t as f64).min(1.0);
            let got = kl_weight(e, t, 1e-3);
            c.check((got - want).abs() <= 1e-15, format!("beta({e}; T={t}) = {got}"));
        }
        let s = if t == 15 { TrainSchedule::fcvae(0) } else { TrainSchedule::p2p(0) };
        c.check(s.kl_cycle == t && s.kl_beta_max == 1e-3, format!("default schedule for T={t}"));
    }
    c.check((lr_at(0) - 1e-4).abs() <= 1e-18, format!("lr(0) = {}", lr_at(0)));
    c.check((lr_at(35) - 1e-4).abs() <= 1e-18, format!("lr(35) = {}", lr_at(35)));
    let closed = 1e-4 * 10f64.powf(-34.0 / 35.0);
    c.check((lr_at(34) - closed).abs() <= 1e-9, format!("lr(34) = {}", lr_at(34)));
    c.check((lr_at(34) - 1.068e-5).abs() <= 1e-8, format!("lr(34) = {} not ~1.068e-5", lr_at(34)));
    for (e, p) in [(0, 8), (100, 16), (200, 32), (300, 64), (400, 128), (99, 8), (1000, 128)] {
        c.check(patch_size_at(e) == p, format!("patch({e}) = {}", patch_size_at(e)));
    }
    c.outcome(&format!("lr(34) = {:.6e}", lr_at(34)))
}

fn tiny_config(kind: ModelKind) -> TrainConfig {
    let mut cfg = TrainConfig::new(kind, 5);
    cfg.epochs = Some(2);
    cfg.samples = 48;
    cfg.batch_size = Some(if kind == ModelKind::FcVae || kind == ModelKind::FcVaePre { 2 } else { 16 });
    cfg.hidden = Some(vec![8, 6]);
    cfg.widths = Some(vec![4, 6]);
    cfg.n_down = 1;
    cfg.latent_dim = 3;
    cfg
}

fn run_cli(dir: &Path, args: &[String]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hyperem"))
        .args(args)
        .current_dir(dir)
        .env_remove("HYPEREM_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

/// Every file below `dir` with its bytes, in path order.
fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Bench timings differ run to run; keep the row labels and header only.
fn bench_layout(bytes: &[u8]) -> Vec<String> {
    String::from_utf8_lossy(bytes)
        .lines()
        .map(|l| if l.starts_with('#') { l.to_string() } else { l.split(',').next().unwrap().to_string() })
        .collect()
}

fn cli_pipeline(dir: &Path) -> Result<(), String> {
    let s = |v: &[&str]| -> Vec<String> { v.iter().map(|x| x.to_string()).collect() };
    run_cli(
        dir,
        &s(&[
            "gen-data",
            "--set",
            "out_dir=data",
            "--set",
            "n_cubes=5",
            "--set",
            "height=6",
            "--set",
            "width=6",
            "--set",
            "seed=21",
        ]),
    )?;
    for (kind, extra) in [("p2p-pre", "samples=96"), ("krr", "samples=96")] {
        let m = format!("model={kind}");
        let o = format!("out=models/{kind}.hem");
        run_cli(
            dir,
            &s(&[
                "train",
                "--set",
                &m,
                "--set",
                &o,
                "--set",
                "data=data",
                "--set",
                "seed=8",
                "--set",
                "epochs=2",
                "--set",
                extra,
            ]),
        )?;
    }
    run_cli(
        dir,
        &s(&[
            "emulate",
            "--set",
            "model=models/p2p-pre.hem",
            "--set",
            "data=data",
            "--set",
            "split=all",
            "--set",
            "out_dir=emu",
            "--set",
            "mode=sample",
            "--set",
            "seed=3",
        ]),
    )?;
    run_cli(
        dir,
        &s(&[
            "eval",
            "--set",
            "model=models/krr.hem",
            "--set",
            "data=data",
            "--set",
            "split=all",
            "--set",
            "out=eval.csv",
            "--set",
            "reports_dir=reports",
        ]),
    )?;
    run_cli(
        dir,
        &s(&[
            "invert",
            "--set",
            "reference=data/cube_0000.hsc",
            "--set",
            r#"emulated={"p2p-pre": "emu/emu_0000.hsc"}"#,
            "--set",
            "out_dir=inv",
        ]),
    )?;
    run_cli(
        dir,
        &s(&[
            "--workers",
            "1",
            "bench",
            "--set",
            "model=models/krr.hem",
            "--set",
            "out=bench/bench.csv",
            "--set",
            "seed=2",
            "--set",
            "n_maps=2",
            "--set",
            "height=4",
            "--set",
            "width=4",
        ]),
    )?;
    run_cli(
        dir,
        &s(&[
            "plot",
            "--set",
            r#"error_maps=["inv/re_p2p-pre.hpm"]"#,
            "--set",
            "reference=data/cube_0000.hsc",
            "--set",
            "emulated=emu/emu_0000.hsc",
            "--set",
            "bands=[0,5]",
            "--set",
            "out_dir=plots",
        ]),
    )?;
    Ok(())
}

fn criterion_9() -> Outcome {
    let mut c = Checks::default();
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();

    for (i, masked) in [(0u64, false), (1, true)] {
        let mut cube = random_cube(10 + i, 5, 7, 9);
        let mut map = random_map(20 + i, 5, 7);
        if masked {
            let mask: Vec<bool> = (0..35).map(|k| k % 4 != 1).collect();
            cube = cube.with_mask(mask.clone()).unwrap();
            map = map.with_mask(mask).unwrap();
        }
        let (cp, mp) = (d.join(format!("c{i}.hsc")), d.join(format!("m{i}.hpm")));
        write_cube(&cube, &cp).unwrap();
        write_map(&map, &mp).unwrap();
        let (cube2, map2) = (read_cube(&cp).unwrap(), read_map(&mp).unwrap());
        c.check(cube2 == cube, format!("HSC1 round trip (mask {masked})"));
        c.check(map2 == map, format!("HPM1 round trip (mask {masked})"));
        write_cube(&cube2, d.join("again.hsc")).unwrap();
        write_map(&map2, d.join("again.hpm")).unwrap();
        c.check(fs::read(&cp).unwrap() == fs::read(d.join("again.hsc")).unwrap(), "HSC1 bytes");
        c.check(fs::read(&mp).unwrap() == fs::read(d.join("again.hpm")).unwrap(), "HPM1 bytes");
    }

    let pairs =
        gen_dataset(&DatasetConfig { n_cubes: 2, height: 4, width: 4, bands: 12, seed: 2, ..Default::default() })
            .unwrap();
    for kind in ModelKind::ALL {
        let model = match train(&tiny_config(kind), &pairs, &pairs, None) {
            Ok(t) => t.model,
            Err(e) => {
                c.check(false, format!("{} training: {e}", kind.name()));
                continue;
            }
        };
        let p = d.join(format!("{}.hem", kind.name()));
        model.save(&p).unwrap();
        let back = EmulatorModel::load(&p).unwrap();
        c.check(back == model, format!("HEM1 {} round trip", kind.name()));
        back.save(d.join("again.hem")).unwrap();
        c.check(fs::read(&p).unwrap() == fs::read(d.join("again.hem")).unwrap(), format!("HEM1 {} bytes", kind.name()));
    }

    let (a, b) = (d.join("run_a"), d.join("run_b"));
    let mut files = 0;
    for dir in [&a, &b] {
        fs::create_dir_all(dir).unwrap();
        if let Err(e) = cli_pipeline(dir) {
            c.check(false, e);
        }
    }
    let (ta, tb) = (tree(&a), tree(&b));
    c.check(ta.len() == tb.len() && !ta.is_empty(), format!("file sets differ: {} vs {}", ta.len(), tb.len()));
    for ((na, ba), (nb, bb)) in ta.iter().zip(&tb) {
        files += 1;
        let same = if na.ends_with("bench.csv") { bench_layout(ba) == bench_layout(bb) } else { ba == bb };
        c.check(na == nb && same, format!("{na} differs between runs"));
    }
    c.outcome(&format!("7 HEM1 kinds; CLI: {files} output files compared across two runs of all 7 commands"))
}

fn log_column(csv: &str, phase: &str, col: usize) -> Vec<f64> {
    csv.lines()
        .skip(1)
        .filter(|l| l.starts_with(&format!("{phase},")))
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect()
}

fn criterion_10() -> Outcome {
    let t = Instant::now();
    let mut c = Checks::default();
    let pairs =
        gen_dataset(&DatasetConfig { n_cubes: 20, height: 16, width: 16, bands: 24, seed: 10, ..Default::default() })
            .unwrap();
    let mut cfg = TrainConfig::new(ModelKind::FcVaePre, 1);
    // same learning-rate override as the pixel models; 10 steps per epoch
    cfg.base_lr = Some(1e-3);
    cfg.batch_size = Some(2);
    let trained = train(&cfg, &pairs, &[], None).unwrap();
    let total = log_column(&trained.log_csv, "pretrain", 7);
    let recon = log_column(&trained.log_csv, "pretrain", 5);
    let interp = log_column(&trained.log_csv, "interpolator", 7);
    let ratio = |v: &[f64]| v[0] / v.last().unwrap();
    let mut s = 0.0;
    for (map, cube) in &pairs {
        s += ssim(cube, &trained.model.emulate(map, EmulationMode::Mean, 0).unwrap()).unwrap();
    }
    let mean_ssim = s / pairs.len() as f64;
    c.check(total.len() == 300, format!("{} pretraining epochs", total.len()));
    c.check(ratio(&total) >= 10.0, format!("loss drop {:.2}x < 10x", ratio(&total)));
    c.check(mean_ssim > 0.9, format!("ssim {mean_ssim:.4}"));
    let kl = log_column(&trained.log_csv, "pretrain", 6);
    let beta = log_column(&trained.log_csv, "pretrain", 3);
    c.outcome(&format!(
        "pretrain total {:.4} -> {:.4} ({:.2}x), recon {:.2}x, final beta*KL {:.4}, interpolator total {:.2}x, emulated ssim {mean_ssim:.4}, {:.0} s",
        total[0],
        total.last().unwrap(),
        ratio(&total),
        ratio(&recon),
        beta.last().unwrap() * kl.last().unwrap(),
        ratio(&interp),
        t.elapsed().as_secs_f64()
    ))
}

const NAMES: [&str; 10] = [
    "gradient contract",
    "metric identities",
    "classical oracles",
    "LUT self-consistency",
    "desk-scale ordering",
    "two-step contract",
    "schedules",
    "downstream retrieval",
    "formats and determinism",
    "FC-VAE smoke",
];

fn main() {
    let only: Option<Vec<usize>> = std::env::var("HYPEREM_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|o| o.contains(&i));
    let mut results: Vec<(usize, Outcome, f64)> = Vec::new();
    let mut run = |i: usize, f: &mut dyn FnMut() -> Outcome| {
        if wanted(i) {
            let t = Instant::now();
            let o = f();
            let secs = t.elapsed().as_secs_f64();
            println!(
                "criterion {i:>2} {} {} ({secs:.1} s): {}",
                NAMES[i - 1],
                if o.pass { "PASS" } else { "FAIL" },
                o.detail
            );
            results.push((i, o, secs));
        }
    };
    run(1, &mut criterion_1);
    run(2, &mut criterion_2);
    run(3, &mut criterion_3);
    run(4, &mut criterion_4);
    if wanted(5) || wanted(8) {
        let t = Instant::now();
        let runs: Vec<SeedRun> = [1, 2, 3].into_iter().map(seed_run).collect();
        let secs = t.elapsed().as_secs_f64();
        run(5, &mut || criterion_5(&runs, secs));
        let lut = build_lut(&LutGrid::default_cab(), &BandGrid::default()).unwrap();
        run(8, &mut || criterion_8(&runs, &lut));
    }
    run(6, &mut criterion_6);
    run(7, &mut criterion_7);
    run(9, &mut criterion_9);
    run(10, &mut criterion_10);
    results.sort_by_key(|r| r.0);

    println!("\nacceptance summary");
    for (i, o, secs) in &results {
        println!("  {i:>2}. {:<26} {}  {secs:>7.1} s", NAMES[i - 1], if o.pass { "PASS" } else { "FAIL" });
    }
    let failed = results.iter().filter(|r| !r.1.pass).count();
    println!("{} of {} criteria pass", results.len() - failed, results.len());
    let strict = std::env::var("HYPEREM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
