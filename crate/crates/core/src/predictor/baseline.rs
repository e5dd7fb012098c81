use rayon::prelude::*;

use super::network::{forward, Weights};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::footprints::FootprintMask;
use crate::raster::{clamp_nonnegative, denormalize, NormalizationParams, Raster};
use crate::tiler::{split_sized, stitch, TileStack};

/// Resampled coarse nDSM inside footprints, zero elsewhere.
pub fn baseline_predict(ndsm_resampled: &Raster, mask: &FootprintMask) -> Result<Raster> {
    ndsm_resampled.ensure_aligned(&mask.raster, "footprint mask")?;
    let values = ndsm_resampled
        .values()
        .iter()
        .zip(&mask.source_ids)
        .map(|(&v, &id)| {
            if id != 0 && !ndsm_resampled.is_nodata(v) && v > 0.0 {
                v
            } else {
                0.0
            }
        })
        .collect();
    ndsm_resampled.with_values(values)
}

/// Network output for one tile, in normalized units.
pub fn predict_tile(w: &Weights<f32>, tile: &TileStack) -> Result<Vec<f32>> {
    let side = (tile.channels[0].len() as f64).sqrt() as usize;
    let input = Tensor::<f32>::from_planes(&tile.channels, side, side);
    Ok(forward(w, &input)?.data)
}

/// Tiles normalized channels, runs the network on every tile, stitches,
/// maps back to meters with `target_params` and clamps at zero.
pub fn predict_city(
    w: &Weights<f32>,
    channels: &[Raster],
    target_params: NormalizationParams,
    tile_size: usize,
) -> Result<Raster> {
    for (i, ch) in channels.iter().enumerate() {
        if ch.count_nodata() > 0 {
            return Err(Error::Input(format!(
                "channel {i} has {} nodata cells; fill voids before prediction",
                ch.count_nodata()
            )));
        }
    }
    let (plan, tiles) = split_sized(channels, tile_size)?;
    let outputs = tiles
        .par_iter()
        .map(|t| Ok((t.row_index, t.col_index, predict_tile(w, t)?)))
        .collect::<Result<Vec<_>>>()?;
    let stitched = stitch(&plan, &outputs)?;
    Ok(clamp_nonnegative(&denormalize(&stitched, target_params)))
}
