//! One function per subcommand. Each reads its inputs from the configured
//! paths or from earlier stage outputs under `out`, and writes its outputs
//! under `out` with fixed names.

use std::fs;
use std::path::{Path, PathBuf};

use canopy_core::footprints::{rasterize, read_footprints, write_footprints, FootprintMask};
use canopy_core::lod1::{assign_heights, read_lod1, write_lod1};
use canopy_core::pointcloud::{
    fill_voids_nearest, grid_elevation, read_points_csv, write_points_csv, Label,
};
use canopy_core::predictor::{
    baseline_predict, init_weights, predict_city, read_weights, train, write_loss_history,
    write_weights, Tensor,
};
use canopy_core::raster::{
    clamp_nonnegative, minmax_normalize, read_raster, resample_cubic, subtract, write_raster,
    NormalizationParams, Raster, DEFAULT_NODATA,
};
use canopy_core::synth::generate;
use canopy_core::tiler::{dump_tiles, split_sized};
use canopy_core::ucp::{aggregate_all, export_grid, number_label, read_grid_json, UcpOptions};
use canopy_core::validation::export_comparison;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{PipelineConfig, Predictor, INPUT_KEYS};
use crate::error::StageError;

/// Subcommands in pipeline order.
pub const STAGES: &[&str] = &[
    "synth",
    "rasterize-points",
    "ndsm",
    "resample",
    "tile",
    "train",
    "predict",
    "lod1",
    "ucp",
    "validate",
    "report",
];

pub fn run_stage(name: &str, cfg: &PipelineConfig) -> Result<(), StageError> {
    log::info!("stage {name}");
    match name {
        "synth" => synth(cfg),
        "rasterize-points" => rasterize_points(cfg),
        "ndsm" => ndsm(cfg),
        "resample" => resample(cfg),
        "tile" => tile(cfg),
        "train" => train_stage(cfg),
        "predict" => predict(cfg),
        "lod1" => lod1(cfg),
        "ucp" => ucp(cfg),
        "validate" => validate(cfg),
        "report" => report(cfg),
        other => Err(StageError::config("cli", None, format!("unknown stage `{other}`"))),
    }
}

/// Every stage in order; `synth` only when the run is synthetic.
pub fn run_all(cfg: &PipelineConfig) -> Result<(), StageError> {
    for name in STAGES {
        if *name == "synth" && !cfg.synthetic {
            continue;
        }
        run_stage(name, cfg)?;
    }
    Ok(())
}

fn core<T>(stage: &'static str, r: canopy_core::Result<T>) -> Result<T, StageError> {
    r.map_err(|e| StageError::core(stage, e))
}

fn out_path(cfg: &PipelineConfig, rel: &str) -> PathBuf {
    cfg.out.join(rel)
}

fn ensure_dir(stage: &'static str, dir: &Path) -> Result<(), StageError> {
    fs::create_dir_all(dir).map_err(|e| StageError::io(stage, dir, e))
}

/// Output of an earlier stage; missing files are an input error naming the producer.
fn earlier(stage: &'static str, cfg: &PipelineConfig, rel: &str, producer: &str) -> Result<PathBuf, StageError> {
    let p = out_path(cfg, rel);
    if !p.exists() {
        return Err(StageError {
            stage,
            kind: "missing_input".into(),
            key: None,
            message: format!("{} not found; run `{producer}` first", p.display()),
            exit_code: 2,
        });
    }
    Ok(p)
}

fn read_earlier_raster(
    stage: &'static str,
    cfg: &PipelineConfig,
    rel: &str,
    producer: &str,
) -> Result<Raster, StageError> {
    core(stage, read_raster(earlier(stage, cfg, rel, producer)?))
}

fn write_text(stage: &'static str, path: &Path, text: &str) -> Result<(), StageError> {
    fs::write(path, text).map_err(|e| StageError::io(stage, path, e))
}

// ---- synth -------------------------------------------------------------------

fn synth(cfg: &PipelineConfig) -> Result<(), StageError> {
    const S: &str = "synth";
    let city = core(S, generate(&cfg.synth))?;
    let dir = out_path(cfg, "synth");
    ensure_dir(S, &dir)?;
    core(S, write_points_csv(dir.join("points.csv"), &city.points))?;
    core(S, write_footprints(dir.join("footprints.geojson"), &city.footprints))?;
    for (name, r) in [
        ("truth_ndsm", &city.truth_ndsm),
        ("coarse_dsm", &city.coarse_dsm),
        ("coarse_dem", &city.coarse_dem),
        ("coarse_ndsm", &city.coarse_ndsm),
        ("population", &city.population),
    ] {
        core(S, write_raster(r, dir.join(format!("{name}.glbr"))))?;
    }
    let mut text = format!(
        "# synthetic city: {} buildings, seed {}\nout = ..\nseed = {}\n",
        city.footprints.len(),
        cfg.seed,
        cfg.seed
    );
    for (key, rel) in INPUT_KEYS {
        let file = Path::new(rel).file_name().expect("file name").to_string_lossy();
        text.push_str(&format!("{key} = {file}\n"));
    }
    write_text(S, &dir.join("pipeline.cfg"), &text)?;
    log::info!(
        "synthetic city: {} buildings on {}×{} cells",
        city.footprints.len(),
        city.truth_ndsm.width(),
        city.truth_ndsm.height()
    );
    Ok(())
}

// ---- rasters -------------------------------------------------------------------

/// Fine grid covering the coarse DSM extent at `cell_size`.
fn fine_template(stage: &'static str, cfg: &PipelineConfig) -> Result<Raster, StageError> {
    let coarse = core(stage, read_raster(cfg.input(stage, "coarse_dsm")?))?;
    let cells = |extent: f64| -> Result<usize, StageError> {
        let n = extent / cfg.cell_size;
        if (n - n.round()).abs() > 1e-6 * n.max(1.0) || n.round() < 1.0 {
            return Err(StageError::config(
                stage,
                Some("cell_size"),
                format!("coarse extent {extent} m is not a whole number of {} m cells", cfg.cell_size),
            ));
        }
        Ok(n.round() as usize)
    };
    let (w, h) = (cells(coarse.extent_width())?, cells(coarse.extent_height())?);
    core(
        stage,
        Raster::new(
            w,
            h,
            coarse.origin_x(),
            coarse.origin_y(),
            cfg.cell_size,
            DEFAULT_NODATA,
            vec![0.0; w * h],
        ),
    )
}

fn rasterize_points(cfg: &PipelineConfig) -> Result<(), StageError> {
    const S: &str = "rasterize-points";
    let template = fine_template(S, cfg)?;
    let points = core(S, read_points_csv(cfg.input(S, "points")?))?;
    let dsm = core(S, grid_elevation(&points, &[Label::Ground, Label::Building], &template))?;
    let dem = core(S, grid_elevation(&points, &[Label::Ground], &template))?;
    log::info!(
        "{} points; DSM voids {}, DEM voids {}",
        points.len(),
        dsm.count_nodata(),
        dem.count_nodata()
    );
    ensure_dir(S, &cfg.out)?;
    core(S, write_raster(&core(S, fill_voids_nearest(&dsm))?, out_path(cfg, "dsm.glbr")))?;
    core(S, write_raster(&core(S, fill_voids_nearest(&dem))?, out_path(cfg, "dem.glbr")))?;
    Ok(())
}

fn ndsm(cfg: &PipelineConfig) -> Result<(), StageError> {
    const S: &str = "ndsm";
    let dsm = read_earlier_raster(S, cfg, "dsm.glbr", "rasterize-points")?;
    let dem = read_earlier_raster(S, cfg, "dem.glbr", "rasterize-points")?;
    let reference = clamp_nonnegative(&core(S, subtract(&dsm, &dem))?);
    let coarse_dsm = core(S, read_raster(cfg.input(S, "coarse_dsm")?))?;
    let coarse_dem = core(S, read_raster(cfg.input(S, "coarse_dem")?))?;
    let coarse = core(S, subtract(&coarse_dsm, &coarse_dem))?;
    core(S, write_raster(&reference, out_path(cfg, "reference_ndsm.glbr")))?;
    core(S, write_raster(&coarse, out_path(cfg, "coarse_ndsm.glbr")))?;
    Ok(())
}

fn footprint_mask(
    stage: &'static str,
    cfg: &PipelineConfig,
    template: &Raster,
) -> Result<(Vec<canopy_core::BuildingFootprint>, FootprintMask), StageError> {
    let footprints = core(stage, read_footprints(cfg.input(stage, "footprints")?))?;
    let (mask, warnings) = core(stage, rasterize(&footprints, template))?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((footprints, mask))
}

fn resample(cfg: &PipelineConfig) -> Result<(), StageError> {
    const S: &str = "resample";
    let coarse = read_earlier_raster(S, cfg, "coarse_ndsm.glbr", "ndsm")?;
    let fine = core(S, resample_cubic(&coarse, cfg.cell_size))?;
    let population = core(S, read_raster(cfg.input(S, "population")?))?;
    let population = core(S, resample_cubic(&population, cfg.cell_size))?;
    core(S, fine.ensure_aligned(&population, "resampled population"))?;
    let (_, mask) = footprint_mask(S, cfg, &fine)?;
    log::info!("{} built cells of {}", mask.built_count(), fine.len());
    core(S, write_raster(&fine, out_path(cfg, "ndsm_resampled.glbr")))?;
    core(S, write_raster(&population, out_path(cfg, "population_resampled.glbr")))?;
    core(S, write_raster(&mask.raster, out_path(cfg, "mask.glbr")))?;
    Ok(())
}

// ---- network inputs ------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Normalization {
    ndsm: NormalizationParams,
    population: NormalizationParams,
    /// Maps network output back to meters.
    target: NormalizationParams,
}

/// Normalized network channels plus their parameters.
fn channels(
    stage: &'static str,
    cfg: &PipelineConfig,
    saved: Option<Normalization>,
) -> Result<(Vec<Raster>, Normalization), StageError> {
    let ndsm = read_earlier_raster(stage, cfg, "ndsm_resampled.glbr", "resample")?;
    let population = read_earlier_raster(stage, cfg, "population_resampled.glbr", "resample")?;
    let mask = read_earlier_raster(stage, cfg, "mask.glbr", "resample")?;
    let (n, np) = core(stage, minmax_normalize(&ndsm, saved.map(|s| s.ndsm)))?;
    let (p, pp) = core(stage, minmax_normalize(&population, saved.map(|s| s.population)))?;
    let norm = saved.unwrap_or(Normalization {
        ndsm: np,
        population: pp,
        target: np,
    });
    Ok((vec![n, p, mask], norm))
}

fn read_normalization(stage: &'static str, cfg: &PipelineConfig) -> Result<Normalization, StageError> {
    let path = earlier(stage, cfg, "normalization.json", "tile")?;
    let text = fs::read_to_string(&path).map_err(|e| StageError::io(stage, &path, e))?;
    serde_json::from_str(&text).map_err(|e| StageError {
        stage,
        kind: "format".into(),
        key: None,
        message: format!("{}: {e}", path.display()),
        exit_code: 2,
    })
}

fn tile(cfg: &PipelineConfig) -> Result<(), StageError> {
    const S: &str = "tile";
    let (chans, norm) = channels(S, cfg, None)?;
    let (plan, tiles) = core(S, split_sized(&chans, cfg.tile_size))?;
    let dir = out_path(cfg, "tiles");
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| StageError::io(S, &dir, e))?;
    }
    ensure_dir(S, &dir)?;
    core(S, dump_tiles(&dir, &tiles))?;
    let json = serde_json::to_string_pretty(&norm).expect("normalization serializes");
    write_text(S, &out_path(cfg, "normalization.json"), &(json + "\n"))?;
    log::info!("{} tiles ({}×{})", plan.tile_count(), plan.tiles_x, plan.tiles_y);
    Ok(())
}

fn train_stage(cfg: &PipelineConfig) -> Result<(), StageError> {
    const S: &str = "train";
    if cfg.predictor == Predictor::Baseline {
        log::info!("baseline predictor has no parameters; nothing to train");
        return Ok(());
    }
    let norm = read_normalization(S, cfg)?;
    let (chans, _) = channels(S, cfg, Some(norm))?;
    let reference = read_earlier_raster(S, cfg, "reference_ndsm.glbr", "ndsm")?;
    core(S, chans[0].ensure_aligned(&reference, "reference nDSM"))?;
    let (target, _) = core(S, minmax_normalize(&reference, Some(norm.target)))?;
    let (_, inputs) = core(S, split_sized(&chans, cfg.tile_size))?;
    let (_, targets) = core(S, split_sized(std::slice::from_ref(&target), cfg.tile_size))?;
    let t = cfg.tile_size;
    let dataset: Vec<(Tensor<f32>, Vec<f32>)> = inputs
        .iter()
        .zip(targets)
        .map(|(x, y)| {
            (
                Tensor::from_planes(&x.channels, t, t),
                y.channels.into_iter().next().expect("one target channel"),
            )
        })
        .collect();
    let w0 = core(S, init_weights(&cfg.model))?;
    let (w, history) = core(S, train(&w0, &dataset, &cfg.train))?;
    core(S, write_weights(out_path(cfg, "weights.glbw"), &w))?;
    core(S, write_loss_history(out_path(cfg, "loss_history.csv"), &history))?;
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        log::info!("loss {first:.4e} -> {last:.4e} over {} epochs", history.len());
    }
    Ok(())
}

fn predict(cfg: &PipelineConfig) -> Result<(), StageError> {
    const S: &str = "predict";
    let pred = match cfg.predictor {
        Predictor::Baseline => {
            let ndsm = read_earlier_raster(S, cfg, "ndsm_resampled.glbr", "resample")?;
            let (_, mask) = footprint_mask(S, cfg, &ndsm)?;
            core(S, baseline_predict(&ndsm, &mask))?
        }
        Predictor::Unet => {
            let norm = read_normalization(S, cfg)?;
            let (chans, _) = channels(S, cfg, Some(norm))?;
            let w = core(S, read_weights(earlier(S, cfg, "weights.glbw", "train")?))?;
            core(S, predict_city(&w, &chans, norm.target, cfg.tile_size))?
        }
    };
    core(S, write_raster(&pred, out_path(cfg, "prediction.glbr")))?;
    Ok(())
}

// ---- buildings and canopy parameters --------------------------------------------

fn lod1(cfg: &PipelineConfig) -> Result<(), StageError> {
    const S: &str = "lod1";
    let pred = read_earlier_raster(S, cfg, "prediction.glbr", "predict")?;
    let reference = read_earlier_raster(S, cfg, "reference_ndsm.glbr", "ndsm")?;
    let (footprints, mask) = footprint_mask(S, cfg, &pred)?;
    for (raster, name) in [(&pred, "lod1_pred.geojson"), (&reference, "lod1_truth.geojson")] {
        let (buildings, warnings) = core(S, assign_heights(raster, &mask, &footprints, cfg.zonal))?;
        for w in &warnings {
            log::warn!("{name}: {w}");
        }
        core(S, write_lod1(out_path(cfg, name), &buildings))?;
    }
    Ok(())
}

fn ucp(cfg: &PipelineConfig) -> Result<(), StageError> {
    const S: &str = "ucp";
    let template = read_earlier_raster(S, cfg, "mask.glbr", "resample")?;
    let (_, mask) = footprint_mask(S, cfg, &template)?;
    for (file, dir) in [("lod1_pred.geojson", "ucp/pred"), ("lod1_truth.geojson", "ucp/truth")] {
        let buildings = core(S, read_lod1(earlier(S, cfg, file, "lod1")?))?;
        for &resolution in &cfg.resolutions {
            let opts = UcpOptions {
                resolution,
                wind_directions: cfg.wind_directions.clone(),
                bin_width: cfg.bin_width,
                hist_cap: cfg.hist_cap,
            };
            let (grid, warnings) = core(S, aggregate_all(&buildings, &mask, &opts))?;
            for w in &warnings {
                log::warn!("{dir} at {resolution} m: {w}");
            }
            core(S, export_grid(out_path(cfg, dir), &grid))?;
        }
    }
    Ok(())
}

fn validate(cfg: &PipelineConfig) -> Result<(), StageError> {
    const S: &str = "validate";
    for &resolution in &cfg.resolutions {
        let res = number_label(resolution);
        let file = format!("ucp_{res}m.json");
        let pred = core(S, read_grid_json(earlier(S, cfg, &format!("ucp/pred/{file}"), "ucp")?))?;
        let truth = core(S, read_grid_json(earlier(S, cfg, &format!("ucp/truth/{file}"), "ucp")?))?;
        let dir = out_path(cfg, &format!("validation/{res}m"));
        let metrics = core(S, export_comparison(&pred, &truth, &dir, cfg.mape_min_reference))?;
        for m in metrics.iter().filter(|m| m.field == "mean_height" || m.field == "lambda_p") {
            log::info!("{res} m {}: n={} rmse={:.4}", m.field, m.n, m.rmse);
        }
    }
    Ok(())
}

// ---- report ----------------------------------------------------------------------

fn sha256_file(stage: &'static str, path: &Path) -> Result<String, StageError> {
    let bytes = fs::read(path).map_err(|e| StageError::io(stage, path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn report(cfg: &PipelineConfig) -> Result<(), StageError> {
    const S: &str = "report";
    let mut text = String::from("canopy pipeline report\n\n[config]\n");
    for (k, v) in &cfg.provenance {
        text.push_str(&format!("{k} = {v}\n"));
    }

    for &resolution in &cfg.resolutions {
        let res = number_label(resolution);
        let path = earlier(S, cfg, &format!("validation/{res}m/metrics.csv"), "validate")?;
        let metrics = fs::read_to_string(&path).map_err(|e| StageError::io(S, &path, e))?;
        text.push_str(&format!("\n[metrics {res} m]\n{metrics}"));
    }

    text.push_str("\n[inputs sha256]\n");
    for (key, _) in INPUT_KEYS {
        if let Ok(p) = cfg.input(S, key) {
            text.push_str(&format!("{key} {}\n", sha256_file(S, &p)?));
        }
    }
    text.push_str("\n[outputs sha256]\n");
    for rel in [
        "dsm.glbr",
        "dem.glbr",
        "reference_ndsm.glbr",
        "coarse_ndsm.glbr",
        "ndsm_resampled.glbr",
        "population_resampled.glbr",
        "mask.glbr",
        "normalization.json",
        "weights.glbw",
        "loss_history.csv",
        "prediction.glbr",
        "lod1_pred.geojson",
        "lod1_truth.geojson",
    ] {
        let p = out_path(cfg, rel);
        if p.exists() {
            text.push_str(&format!("{rel} {}\n", sha256_file(S, &p)?));
        }
    }
    write_text(S, &out_path(cfg, "report.txt"), &text)
}
