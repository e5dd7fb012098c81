//! Flat `key = value` configuration with per-key command-line overrides.
//!
//! Lines are `key = value`; `#` starts a comment. Relative paths in a file
//! resolve against that file's directory, relative paths given on the
//! command line against the working directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use canopy_core::lod1::ZonalReduction;
use canopy_core::predictor::{ModelConfig, TrainConfig};
use canopy_core::synth::SyntheticCitySpec;

use crate::error::StageError;

/// Every accepted key, its default (empty = unset) and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("out", "canopy_out", "output directory"),
    ("seed", "42", "seed for every random draw"),
    ("verbose", "false", "debug logging"),
    ("synthetic", "false", "generate a synthetic city first and read inputs from it"),
    ("points", "", "labeled point cloud CSV (x,y,z,label)"),
    ("coarse_dsm", "", "coarse surface model raster"),
    ("coarse_dem", "", "coarse terrain model raster"),
    ("population", "", "coarse population density raster"),
    ("footprints", "", "building footprints GeoJSON"),
    ("cell_size", "1", "fine grid cell size, meters"),
    ("resolutions", "300", "comma-separated UCP grid resolutions, meters"),
    ("wind_directions", "0,90", "comma-separated wind directions for frontal area, degrees"),
    ("bin_width", "5", "height histogram bin width, meters"),
    ("hist_cap", "75", "height above which the histogram has one open bin, meters"),
    ("mape_min_reference", "1", "MAPE skips reference values below this"),
    ("zonal", "mean", "per-footprint height reduction: mean or median"),
    ("predictor", "baseline", "height predictor: baseline or unet"),
    ("tile_size", "256", "tile side in cells"),
    ("depth", "3", "encoder levels"),
    ("base_filters", "8", "filters at the first level"),
    ("learning_rate", "0.001", "SGD step size"),
    ("epochs", "20", "training epochs"),
    ("batch_size", "1", "samples per SGD step"),
    ("synth_extent", "2000", "synthetic scene side, meters"),
    ("synth_buildings", "150", "synthetic building count"),
    ("synth_size_min", "20", "smallest synthetic footprint side, meters"),
    ("synth_size_max", "80", "largest synthetic footprint side, meters"),
    ("synth_height_min", "3", "lowest synthetic building, meters"),
    ("synth_height_max", "60", "tallest synthetic building, meters"),
    ("synth_terrain_slope", "0.005", "synthetic terrain rise per meter eastward"),
    ("synth_coarse_factor", "30", "coarse cell size in fine cells"),
    ("synth_noise_sigma", "2", "noise on the coarse surface, meters"),
    ("synth_min_gap", "4", "minimum distance between synthetic buildings, meters"),
];

/// Input files and where a synthetic run puts them.
pub const INPUT_KEYS: &[(&str, &str)] = &[
    ("points", "synth/points.csv"),
    ("coarse_dsm", "synth/coarse_dsm.glbr"),
    ("coarse_dem", "synth/coarse_dem.glbr"),
    ("population", "synth/population.glbr"),
    ("footprints", "synth/footprints.geojson"),
];

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    base: Option<PathBuf>,
}

/// Raw key/value settings after merging file and overrides.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    entries: BTreeMap<String, Entry>,
}

fn config_error(key: &str, message: impl Into<String>) -> StageError {
    StageError::config("config", Some(key), message)
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

impl Settings {
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, StageError> {
        let mut s = Settings::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                StageError::config("config", None, format!("line {}: expected `key = value`", n + 1))
            })?;
            s.set(k.trim(), v.trim(), base.map(Path::to_path_buf))?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, StageError> {
        let text = fs::read_to_string(path).map_err(|e| {
            StageError::config("config", Some("config"), format!("{}: {e}", path.display()))
        })?;
        Self::parse(&text, path.parent())
    }

    pub fn set(&mut self, key: &str, value: &str, base: Option<PathBuf>) -> Result<(), StageError> {
        if !known(key) {
            return Err(config_error(key, format!("unknown key `{key}`")));
        }
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                base,
            },
        );
        Ok(())
    }

    /// Applies `--key value` / `--key=value` pairs; a bare `--flag` means `true`.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<(), StageError> {
        let mut i = 0;
        while i < args.len() {
            let Some(flag) = args[i].strip_prefix("--") else {
                return Err(StageError::config(
                    "config",
                    None,
                    format!("unexpected argument `{}`; overrides look like --key value", args[i]),
                ));
            };
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k.replace('-', "_"), v.to_string()),
                None => {
                    let key = flag.replace('-', "_");
                    match args.get(i + 1) {
                        Some(v) if !v.starts_with("--") => {
                            i += 1;
                            (key, v.clone())
                        }
                        _ => (key, "true".to_string()),
                    }
                }
            };
            self.set(&key, &value, None)?;
            i += 1;
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str()).or_else(|| {
            KEYS.iter()
                .find(|(k, _, _)| *k == key)
                .map(|(_, d, _)| *d)
                .filter(|d| !d.is_empty())
        })
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T, StageError> {
        let raw = self.raw(key).unwrap_or("");
        raw.parse()
            .map_err(|_| config_error(key, format!("cannot parse `{raw}` for `{key}`")))
    }

    fn list(&self, key: &str) -> Result<Vec<f64>, StageError> {
        let raw = self.raw(key).unwrap_or("");
        raw.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| config_error(key, format!("cannot parse `{s}` in `{key}`")))
            })
            .collect()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let e = self.entries.get(key)?;
        if e.value.is_empty() {
            return None;
        }
        let p = PathBuf::from(&e.value);
        Some(match (&e.base, p.is_relative()) {
            (Some(base), true) => base.join(p),
            _ => p,
        })
    }

    fn bool(&self, key: &str) -> Result<bool, StageError> {
        match self.raw(key).unwrap_or("false") {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => Err(config_error(key, format!("expected true or false, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predictor {
    Baseline,
    Unet,
}

/// Fully typed configuration of a pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub verbose: bool,
    pub synthetic: bool,
    inputs: BTreeMap<String, PathBuf>,
    pub cell_size: f64,
    pub resolutions: Vec<f64>,
    pub wind_directions: Vec<f64>,
    pub bin_width: f64,
    pub hist_cap: f64,
    pub mape_min_reference: f64,
    pub zonal: ZonalReduction,
    pub predictor: Predictor,
    pub tile_size: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SyntheticCitySpec,
    /// Effective raw value of every key except `out` and `verbose`, for the report.
    pub provenance: Vec<(String, String)>,
}

/// Channels fed to the network: resampled nDSM, population, footprint mask.
pub const IN_CHANNELS: usize = 3;

impl PipelineConfig {
    pub fn from_settings(s: &Settings) -> Result<Self, StageError> {
        let out = s
            .path("out")
            .unwrap_or_else(|| PathBuf::from(s.raw("out").unwrap_or("canopy_out")));
        let seed: u64 = s.parsed("seed")?;
        let mut inputs = BTreeMap::new();
        for (key, _) in INPUT_KEYS {
            if let Some(p) = s.path(key) {
                inputs.insert(key.to_string(), p);
            }
        }
        let zonal = match s.raw("zonal").unwrap_or("mean") {
            "mean" => ZonalReduction::Mean,
            "median" => ZonalReduction::Median,
            other => return Err(config_error("zonal", format!("expected mean or median, got `{other}`"))),
        };
        let predictor = match s.raw("predictor").unwrap_or("baseline") {
            "baseline" => Predictor::Baseline,
            "unet" => Predictor::Unet,
            other => {
                return Err(config_error(
                    "predictor",
                    format!("expected baseline or unet, got `{other}`"),
                ))
            }
        };
        let cfg = Self {
            out,
            seed,
            verbose: s.bool("verbose")?,
            synthetic: s.bool("synthetic")?,
            inputs,
            cell_size: s.parsed("cell_size")?,
            resolutions: s.list("resolutions")?,
            wind_directions: s.list("wind_directions")?,
            bin_width: s.parsed("bin_width")?,
            hist_cap: s.parsed("hist_cap")?,
            mape_min_reference: s.parsed("mape_min_reference")?,
            zonal,
            predictor,
            tile_size: s.parsed("tile_size")?,
            model: ModelConfig {
                depth: s.parsed("depth")?,
                base_filters: s.parsed("base_filters")?,
                kernel_size: 3,
                in_channels: IN_CHANNELS,
                seed,
            },
            train: TrainConfig {
                learning_rate: s.parsed("learning_rate")?,
                epochs: s.parsed("epochs")?,
                batch_size: s.parsed("batch_size")?,
                seed,
            },
            synth: SyntheticCitySpec {
                extent: s.parsed("synth_extent")?,
                buildings: s.parsed("synth_buildings")?,
                size_min: s.parsed("synth_size_min")?,
                size_max: s.parsed("synth_size_max")?,
                height_min: s.parsed("synth_height_min")?,
                height_max: s.parsed("synth_height_max")?,
                terrain_slope: s.parsed("synth_terrain_slope")?,
                coarse_factor: s.parsed("synth_coarse_factor")?,
                noise_sigma: s.parsed("synth_noise_sigma")?,
                min_gap: s.parsed("synth_min_gap")?,
                cell_size: s.parsed("cell_size")?,
                seed,
                ..SyntheticCitySpec::default()
            },
            provenance: KEYS
                .iter()
                .filter(|(k, _, _)| !matches!(*k, "out" | "verbose"))
                .map(|(k, _, _)| (k.to_string(), s.raw(k).unwrap_or("").to_string()))
                .collect(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), StageError> {
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(config_error("cell_size", "cell size must be positive"));
        }
        if self.resolutions.is_empty() {
            return Err(config_error("resolutions", "at least one resolution is required"));
        }
        for &r in &self.resolutions {
            let k = r / self.cell_size;
            if !(r > 0.0) || (k - k.round()).abs() > 1e-9 * k || k.round() < 1.0 {
                return Err(config_error(
                    "resolutions",
                    format!("{r} m is not a positive multiple of the {} m cell size", self.cell_size),
                ));
            }
        }
        for &d in &self.wind_directions {
            if !(0.0..360.0).contains(&d) {
                return Err(config_error("wind_directions", format!("{d} is outside [0, 360)")));
            }
        }
        if !(self.bin_width > 0.0 && self.hist_cap > 0.0) {
            return Err(config_error("bin_width", "bin width and cap must be positive"));
        }
        if self.tile_size == 0 || !self.tile_size.is_multiple_of(self.model.spatial_multiple()) {
            return Err(config_error(
                "tile_size",
                format!("tile size must be a positive multiple of 2^depth = {}", self.model.spatial_multiple()),
            ));
        }
        self.model
            .validate()
            .map_err(|e| config_error("depth", e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| config_error("learning_rate", e.to_string()))?;
        self.synth
            .validate()
            .map_err(|e| config_error("synth_extent", e.to_string()))?;
        Ok(())
    }

    /// Path of an input file: the configured one, or the synthetic output
    /// location when running on a generated city.
    pub fn input(&self, stage: &'static str, key: &str) -> Result<PathBuf, StageError> {
        let path = match self.inputs.get(key) {
            Some(p) => p.clone(),
            None if self.synthetic => {
                let rel = INPUT_KEYS
                    .iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, r)| *r)
                    .expect("input key");
                self.out.join(rel)
            }
            None => {
                return Err(StageError::config(
                    stage,
                    Some(key),
                    format!("input `{key}` is not set"),
                ))
            }
        };
        if !path.exists() {
            return Err(StageError::config(
                stage,
                Some(key),
                format!("input `{key}` does not exist: {}", path.display()),
            ));
        }
        Ok(path)
    }

    pub fn set_input(&mut self, key: &str, path: PathBuf) {
        self.inputs.insert(key.to_string(), path);
    }
}
