//! On-disk synthetic datasets: one HPM1 map and one HSC1 cube per scene plus
//! a JSON manifest.

use std::path::{Path, PathBuf};

use hyperem::hsdata::{read_cube, read_map, split_dataset, write_cube, write_map};
use hyperem::synthrtm::{gen_dataset, BandGrid, DatasetConfig, PARAM_RANGES};
use hyperem::{HyperspectralCube, ParameterMap};
use serde::{Deserialize, Serialize};

use crate::config;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "hyperem-dataset-1";

fn d_n_cubes() -> usize {
    200
}
fn d_side() -> usize {
    32
}
fn d_bands() -> usize {
    BandGrid::DEFAULT_BANDS
}
fn d_ranges() -> Vec<(f64, f64)> {
    PARAM_RANGES.to_vec()
}
fn d_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

/// `gen-data` configuration. Defaults: 200 scenes of 32×32 pixels on the
/// 211-band grid, full parameter ranges, an 80/10/10 split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    #[serde(default = "d_n_cubes")]
    pub n_cubes: usize,
    #[serde(default = "d_side")]
    pub height: usize,
    #[serde(default = "d_side")]
    pub width: usize,
    #[serde(default = "d_bands")]
    pub bands: usize,
    #[serde(default = "d_ranges")]
    pub param_ranges: Vec<(f64, f64)>,
    /// Train, validation and test fractions.
    #[serde(default = "d_split")]
    pub split: [f64; 3],
}

/// Everything in [`GenDataConfig`] that affects the written files. The output
/// directory is left out so the same settings hash alike wherever they land.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSettings {
    pub seed: u64,
    pub n_cubes: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub param_ranges: Vec<(f64, f64)>,
    pub split: [f64; 3],
}

impl GenDataConfig {
    pub fn settings(&self) -> DatasetSettings {
        DatasetSettings {
            seed: self.seed,
            n_cubes: self.n_cubes,
            height: self.height,
            width: self.width,
            bands: self.bands,
            param_ranges: self.param_ranges.clone(),
            split: self.split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub map: String,
    pub cube: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub config_hash: String,
    pub config: DatasetSettings,
    pub files: Vec<FileEntry>,
    pub split: SplitIndices,
}

impl Manifest {
    /// Indices of `name` (`train`, `val`, `test` or `all`).
    pub fn indices(&self, name: &str) -> CliResult<Vec<usize>> {
        Ok(match name {
            "train" => self.split.train.clone(),
            "val" => self.split.val.clone(),
            "test" => self.split.test.clone(),
            "all" => (0..self.files.len()).collect(),
            _ => return Err(CliError::usage(format!("unknown split {name:?}; use train, val, test or all"))),
        })
    }
}

/// Generates the scenes in memory and the split over them. Fewer than three
/// scenes all go to training.
pub fn generate(settings: &DatasetSettings) -> CliResult<(Vec<(ParameterMap, HyperspectralCube)>, SplitIndices)> {
    let pairs = gen_dataset(&DatasetConfig {
        n_cubes: settings.n_cubes,
        height: settings.height,
        width: settings.width,
        bands: settings.bands,
        seed: settings.seed,
        param_ranges: settings.param_ranges.clone(),
    })?;
    let n = settings.n_cubes;
    let split = if n < 3 {
        SplitIndices { train: (0..n).collect(), ..Default::default() }
    } else {
        let [a, b, c] = settings.split;
        let s = split_dataset(n, (a, b, c), settings.seed)?;
        SplitIndices { train: s.train, val: s.val, test: s.test }
    };
    Ok((pairs, split))
}

pub fn write(cfg: &GenDataConfig) -> CliResult<Manifest> {
    let settings = cfg.settings();
    let (pairs, split) = generate(&settings)?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    let mut files = Vec::with_capacity(pairs.len());
    for (i, (map, cube)) in pairs.iter().enumerate() {
        let entry = FileEntry { map: format!("map_{i:04}.hpm"), cube: format!("cube_{i:04}.hsc") };
        write_map(map, cfg.out_dir.join(&entry.map))?;
        write_cube(cube, cfg.out_dir.join(&entry.cube))?;
        files.push(entry);
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        config_hash: config::hash(&settings),
        config: settings,
        files,
        split,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(cfg.out_dir.join(MANIFEST), text)?;
    Ok(manifest)
}

/// A dataset directory and its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(dir: impl AsRef<Path>) -> CliResult<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(CliError::runtime(format!("{}: unknown format {:?}", path.display(), manifest.format)));
        }
        Ok(Self { dir, manifest })
    }

    pub fn map_path(&self, i: usize) -> PathBuf {
        self.dir.join(&self.manifest.files[i].map)
    }

    pub fn cube_path(&self, i: usize) -> PathBuf {
        self.dir.join(&self.manifest.files[i].cube)
    }

    pub fn load_pairs(&self, indices: &[usize]) -> CliResult<Vec<(ParameterMap, HyperspectralCube)>> {
        indices
            .iter()
            .map(|&i| {
                if i >= self.manifest.files.len() {
                    return Err(CliError::runtime(format!("manifest index {i} out of range")));
                }
                Ok((read_map(self.map_path(i))?, read_cube(self.cube_path(i))?))
            })
            .collect()
    }

    pub fn split_pairs(&self, name: &str) -> CliResult<Vec<(ParameterMap, HyperspectralCube)>> {
        self.load_pairs(&self.manifest.indices(name)?)
    }
}
