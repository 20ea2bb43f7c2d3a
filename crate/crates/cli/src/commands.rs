//! The seven subcommands. Each takes the merged JSON configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hyperem::hsdata::{read_cube, read_map, write_cube, write_map};
use hyperem::metrics::{evaluate, scatter_export, throughput_bench, MetricsReport};
use hyperem::retrieval::{relative_error_map, retrieve_map_with, DownstreamTable, InversionCost};
use hyperem::rng::derive_seed;
use hyperem::synthrtm::{build_lut, gen_param_maps, BandGrid, LutGrid, PARAM_RANGES};
use hyperem::{EmulationMode, EmulatorModel, HyperspectralCube, ParameterMap};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{self, parse, resolve_seed};
use crate::dataset::{self, Dataset, GenDataConfig};
use crate::error::{CliError, CliResult};
use crate::pipeline::{self, TrainConfig};
use crate::svg;

/// Process-wide options shared by every command.
#[derive(Debug, Clone, Copy, Default)]
pub struct Context {
    pub workers: Option<usize>,
}

impl Context {
    fn workers(&self) -> usize {
        self.workers.unwrap_or_else(rayon::current_num_threads)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Mean,
    Sample,
}

impl From<Mode> for EmulationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Mean => EmulationMode::Mean,
            Mode::Sample => EmulationMode::Sample,
        }
    }
}

fn d_test() -> String {
    "test".into()
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn load_model(path: &Path) -> CliResult<EmulatorModel> {
    EmulatorModel::load(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// Seed for stochastic emulation; mean mode needs none.
fn emulation_seed(mode: Mode, seed: Option<u64>) -> CliResult<u64> {
    match (mode, seed) {
        (_, Some(s)) => Ok(s),
        (Mode::Mean, None) => Ok(0),
        (Mode::Sample, None) => {
            Err(CliError::usage(format!("sample mode needs a seed (config, --set seed=N or {})", config::SEED_ENV)))
        }
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:e}")
    }
}

fn safe_name(name: &str) -> CliResult<()> {
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(CliError::usage(format!("name {name:?} may only use letters, digits, '-', '_' and '.'")))
    }
}

pub fn gen_data(v: Value, _ctx: &Context) -> CliResult<()> {
    let mut v = v;
    resolve_seed(&mut v, true)?;
    let cfg: GenDataConfig = parse(v)?;
    let m = dataset::write(&cfg)?;
    eprintln!(
        "wrote {} scenes to {} (train {}, val {}, test {}; config {})",
        m.files.len(),
        cfg.out_dir.display(),
        m.split.train.len(),
        m.split.val.len(),
        m.split.test.len(),
        &m.config_hash[..12]
    );
    Ok(())
}

pub fn train(v: Value, _ctx: &Context) -> CliResult<()> {
    let mut v = v;
    resolve_seed(&mut v, true)?;
    let cfg: TrainConfig = parse(v)?;
    let kind = cfg.kind()?;
    let data = cfg.data.as_ref().ok_or_else(|| CliError::usage("train needs \"data\" (a dataset directory)"))?;
    let out = cfg.out.clone().ok_or_else(|| CliError::usage("train needs \"out\" (a checkpoint path)"))?;
    let ds = Dataset::open(data)?;
    let train_pairs = ds.split_pairs(&cfg.split)?;
    let val_pairs = if cfg.regularizers.len() > 1 { ds.split_pairs("val")? } else { Vec::new() };
    let resume = cfg.resume.as_deref().map(load_model).transpose()?;
    eprintln!("training {} on {} scenes", kind.name(), train_pairs.len());
    let trained = pipeline::train(&cfg, &train_pairs, &val_pairs, resume)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    trained.model.save(&out)?;
    let log = cfg.log.clone().unwrap_or_else(|| out.with_extension("csv"));
    write_text(&log, &trained.log_csv)?;
    if let Some(last) = trained.log_csv.lines().skip(1).last() {
        eprintln!("last log row: {last}");
    }
    eprintln!("wrote {} and {}", out.display(), log.display());
    Ok(())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmulateConfig {
    model: PathBuf,
    out_dir: PathBuf,
    #[serde(default)]
    data: Option<PathBuf>,
    #[serde(default = "d_test")]
    split: String,
    #[serde(default)]
    maps: Vec<PathBuf>,
    #[serde(default)]
    mode: Mode,
    #[serde(default)]
    seed: Option<u64>,
}

/// `(output stem, map)` pairs from a dataset split or explicit map files.
fn collect_maps(data: Option<&Path>, split: &str, maps: &[PathBuf]) -> CliResult<Vec<(String, ParameterMap)>> {
    let mut out = Vec::new();
    if let Some(dir) = data {
        let ds = Dataset::open(dir)?;
        for i in ds.manifest.indices(split)? {
            out.push((format!("{i:04}"), read_map(ds.map_path(i))?));
        }
    }
    for p in maps {
        let stem = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CliError::usage(format!("bad map path {}", p.display())))?;
        out.push((stem.to_string(), read_map(p)?));
    }
    if out.is_empty() {
        return Err(CliError::usage("no parameter maps: give \"data\" or \"maps\""));
    }
    Ok(out)
}

pub fn emulate(v: Value, _ctx: &Context) -> CliResult<()> {
    let mut v = v;
    resolve_seed(&mut v, false)?;
    let cfg: EmulateConfig = parse(v)?;
    let seed = emulation_seed(cfg.mode, cfg.seed)?;
    let model = load_model(&cfg.model)?;
    let maps = collect_maps(cfg.data.as_deref(), &cfg.split, &cfg.maps)?;
    create_dir(&cfg.out_dir)?;
    for (k, (stem, map)) in maps.iter().enumerate() {
        let cube = model.emulate(map, cfg.mode.into(), derive_seed(seed, k as u64))?;
        write_cube(&cube, cfg.out_dir.join(format!("emu_{stem}.hsc")))?;
    }
    eprintln!("emulated {} maps into {}", maps.len(), cfg.out_dir.display());
    Ok(())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalConfig {
    out: PathBuf,
    #[serde(default)]
    reference: Vec<PathBuf>,
    #[serde(default)]
    emulated: Vec<PathBuf>,
    #[serde(default)]
    model: Option<PathBuf>,
    #[serde(default)]
    data: Option<PathBuf>,
    #[serde(default = "d_test")]
    split: String,
    #[serde(default)]
    mode: Mode,
    #[serde(default)]
    seed: Option<u64>,
    /// Directory for one full report (with per-band correlation) per pair.
    #[serde(default)]
    reports_dir: Option<PathBuf>,
}

/// Summary table: one row per pair and a final `mean` row.
pub fn metrics_table(rows: &[(String, MetricsReport)]) -> String {
    let mut s = String::from("name,rmse,ssim,sa_radians,psnr_db,valid_pixels\n");
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{}",
            fmt_num(r.rmse),
            fmt_num(r.ssim),
            fmt_num(r.sa_radians),
            fmt_num(r.psnr_db),
            r.valid_pixels
        );
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean = |f: fn(&MetricsReport) -> f64| rows.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
        let _ = writeln!(
            s,
            "mean,{},{},{},{},{}",
            fmt_num(mean(|r| r.rmse)),
            fmt_num(mean(|r| r.ssim)),
            fmt_num(mean(|r| r.sa_radians)),
            fmt_num(mean(|r| r.psnr_db)),
            rows.iter().map(|(_, r)| r.valid_pixels).sum::<usize>()
        );
    }
    s
}

pub fn eval(v: Value, _ctx: &Context) -> CliResult<()> {
    let mut v = v;
    resolve_seed(&mut v, false)?;
    let cfg: EvalConfig = parse(v)?;
    let mut rows = Vec::new();
    match (&cfg.model, cfg.reference.is_empty()) {
        (Some(model_path), true) => {
            let data = cfg.data.as_ref().ok_or_else(|| CliError::usage("evaluating a model needs \"data\""))?;
            let seed = emulation_seed(cfg.mode, cfg.seed)?;
            let model = load_model(model_path)?;
            let ds = Dataset::open(data)?;
            for (k, i) in ds.manifest.indices(&cfg.split)?.into_iter().enumerate() {
                let map = read_map(ds.map_path(i))?;
                let reference = read_cube(ds.cube_path(i))?;
                let emu = model.emulate(&map, cfg.mode.into(), derive_seed(seed, k as u64))?;
                rows.push((format!("{i:04}"), evaluate(&reference, &emu)?));
            }
        }
        (None, false) => {
            if cfg.reference.len() != cfg.emulated.len() {
                return Err(CliError::usage("\"reference\" and \"emulated\" must list the same number of cubes"));
            }
            for (r, e) in cfg.reference.iter().zip(&cfg.emulated) {
                let name = e.file_stem().and_then(|s| s.to_str()).unwrap_or("cube").to_string();
                rows.push((name, evaluate(&read_cube(r)?, &read_cube(e)?)?));
            }
        }
        _ => {
            return Err(CliError::usage(
                "eval needs either \"model\" with \"data\", or \"reference\" and \"emulated\" cube lists",
            ))
        }
    }
    if rows.is_empty() {
        return Err(CliError::usage("nothing to evaluate"));
    }
    if let Some(dir) = &cfg.reports_dir {
        create_dir(dir)?;
        for (name, r) in &rows {
            write_text(&dir.join(format!("metrics_{name}.csv")), &r.to_csv())?;
        }
    }
    write_text(&cfg.out, &metrics_table(&rows))?;
    eprintln!("evaluated {} pairs; wrote {}", rows.len(), cfg.out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Cost {
    #[default]
    Rmse,
    SpectralAngle,
}

fn d_cab() -> String {
    "cab".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct InvertConfig {
    reference: PathBuf,
    /// Emulator name → emulated cube.
    emulated: BTreeMap<String, PathBuf>,
    out_dir: PathBuf,
    #[serde(default = "d_cab")]
    param: String,
    #[serde(default)]
    cost: Cost,
    /// LUT grid; defaults to 71 Cab values by 3 values of every other parameter.
    #[serde(default)]
    lut: Option<LutGrid>,
}

pub fn invert(v: Value, _ctx: &Context) -> CliResult<()> {
    let cfg: InvertConfig = parse(v)?;
    if cfg.emulated.is_empty() {
        return Err(CliError::usage("\"emulated\" must name at least one cube"));
    }
    for name in cfg.emulated.keys() {
        safe_name(name)?;
    }
    let grid = cfg.lut.clone().unwrap_or_else(LutGrid::default_cab);
    let range =
        grid.range_of(&cfg.param).ok_or_else(|| CliError::usage(format!("unknown parameter {:?}", cfg.param)))?;
    let cost = match cfg.cost {
        Cost::Rmse => InversionCost::Rmse,
        Cost::SpectralAngle => InversionCost::SpectralAngle,
    };
    let reference = read_cube(&cfg.reference)?;
    let bands = BandGrid::new(reference.bands())?;
    if bands.wavelengths_nm() != reference.wavelengths_nm() {
        return Err(CliError::runtime("reference cube is not on the standard band grid"));
    }
    let lut = build_lut(&grid, &bands)?;
    create_dir(&cfg.out_dir)?;
    let ref_map = retrieve_map_with(&reference, &lut, &cfg.param, cost)?;
    write_map(&ref_map.to_parameter_map(&cfg.param, range)?, cfg.out_dir.join("retrieved_reference.hpm"))?;
    let width = range.1 - range.0;
    let mut table = DownstreamTable { param: cfg.param.clone(), normalization_range: width, rows: Vec::new() };
    for (name, path) in &cfg.emulated {
        let cube = read_cube(path)?;
        let est = retrieve_map_with(&cube, &lut, &cfg.param, cost)?;
        let res = relative_error_map(&ref_map, &est, width)?;
        write_map(&est.to_parameter_map(&cfg.param, range)?, cfg.out_dir.join(format!("retrieved_{name}.hpm")))?;
        write_map(
            &res.error.to_parameter_map("re_percent", (0.0, 100.0))?,
            cfg.out_dir.join(format!("re_{name}.hpm")),
        )?;
        eprintln!("{name}: mean RE {:.4}%", res.mean_relative_error);
        table.rows.push((name.clone(), res.mean_relative_error));
    }
    write_text(&cfg.out_dir.join("summary.csv"), &table.to_csv())?;
    Ok(())
}

fn d_maps() -> usize {
    16
}
fn d_side() -> usize {
    32
}
fn d_repeats() -> usize {
    3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchConfig {
    model: PathBuf,
    out: PathBuf,
    #[serde(default)]
    data: Option<PathBuf>,
    #[serde(default = "d_test")]
    split: String,
    /// Synthetic maps generated when no dataset is given.
    #[serde(default = "d_maps")]
    n_maps: usize,
    #[serde(default = "d_side")]
    height: usize,
    #[serde(default = "d_side")]
    width: usize,
    #[serde(default = "d_repeats")]
    repeats: usize,
    #[serde(default)]
    mode: Mode,
    #[serde(default)]
    seed: Option<u64>,
}

pub fn bench(v: Value, ctx: &Context) -> CliResult<()> {
    let mut v = v;
    resolve_seed(&mut v, false)?;
    let cfg: BenchConfig = parse(v)?;
    let model = load_model(&cfg.model)?;
    let maps: Vec<ParameterMap> = match &cfg.data {
        Some(dir) => collect_maps(Some(dir), &cfg.split, &[])?.into_iter().map(|(_, m)| m).collect(),
        None => {
            let seed = cfg
                .seed
                .ok_or_else(|| CliError::usage(format!("synthetic bench maps need a seed ({})", config::SEED_ENV)))?;
            (0..cfg.n_maps)
                .map(|i| gen_param_maps(derive_seed(seed, i as u64), cfg.height, cfg.width, &PARAM_RANGES))
                .collect::<Result<_, _>>()?
        }
    };
    let seed = emulation_seed(cfg.mode, cfg.seed)?;
    let mode: EmulationMode = cfg.mode.into();
    if cfg.repeats == 0 || maps.is_empty() {
        return Err(CliError::usage("bench needs at least one map and repeats >= 1"));
    }
    let report = throughput_bench(|m| model.emulate(m, mode, seed), &maps, cfg.repeats, ctx.workers())?;
    write_text(&cfg.out, &report.to_csv())?;
    eprintln!(
        "{} images, median {:.4} s per pass, {:.2} images/s",
        report.images, report.median_s, report.images_per_second
    );
    Ok(())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlotConfig {
    out_dir: PathBuf,
    /// Single-valued HPM1 maps rendered as SVG heatmaps.
    #[serde(default)]
    error_maps: Vec<PathBuf>,
    /// Legend maximum; defaults to each map's largest value.
    #[serde(default)]
    max: Option<f64>,
    #[serde(default)]
    reference: Option<PathBuf>,
    #[serde(default)]
    emulated: Option<PathBuf>,
    /// Scatter bands; all bands when absent.
    #[serde(default)]
    bands: Option<Vec<usize>>,
}

fn map_values(map: &ParameterMap) -> Vec<f64> {
    let mut v = map.field(0);
    if let Some(mask) = map.mask() {
        for (x, &ok) in v.iter_mut().zip(mask) {
            if !ok {
                *x = f64::NAN;
            }
        }
    }
    v
}

pub fn plot(v: Value, _ctx: &Context) -> CliResult<()> {
    let cfg: PlotConfig = parse(v)?;
    let scatter = match (&cfg.reference, &cfg.emulated) {
        (Some(r), Some(e)) => Some((r, e)),
        (None, None) => None,
        _ => return Err(CliError::usage("scatter export needs both \"reference\" and \"emulated\"")),
    };
    if cfg.error_maps.is_empty() && scatter.is_none() {
        return Err(CliError::usage("nothing to plot: give \"error_maps\" or \"reference\" and \"emulated\""));
    }
    create_dir(&cfg.out_dir)?;
    for p in &cfg.error_maps {
        let map = read_map(p)?;
        if map.n_params() != 1 {
            return Err(CliError::runtime(format!("{} holds {} parameters, expected 1", p.display(), map.n_params())));
        }
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("map");
        let svg = svg::heatmap(&map_values(&map), map.height(), map.width(), &map.names()[0], cfg.max);
        write_text(&cfg.out_dir.join(format!("{stem}.svg")), &svg)?;
    }
    if let Some((r, e)) = scatter {
        let (reference, emulated): (HyperspectralCube, HyperspectralCube) = (read_cube(r)?, read_cube(e)?);
        let bands = cfg.bands.clone().unwrap_or_else(|| (0..reference.bands()).collect());
        let mut summary = String::from("band,wavelength_nm,pearson_r\n");
        for b in bands {
            let r = scatter_export(&reference, &emulated, b, cfg.out_dir.join(format!("scatter_band_{b:03}.csv")))?;
            let _ = writeln!(summary, "{b},{},{}", reference.wavelengths_nm()[b], fmt_num(r));
        }
        write_text(&cfg.out_dir.join("scatter_summary.csv"), &summary)?;
    }
    eprintln!("wrote figure data to {}", cfg.out_dir.display());
    Ok(())
}
