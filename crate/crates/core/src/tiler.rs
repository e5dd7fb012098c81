//! Non-overlapping square tiling of co-registered channels and lossless stitching.
//!
//! Tiles are `TILE_SIZE` cells on a side. Tiles at the high-column and
//! high-row edges are zero-padded and record how many rows and columns hold
//! real data.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{write_raster, Raster, DEFAULT_NODATA};

pub const TILE_SIZE: usize = 256;

/// Layout of a tiling over a source grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TilePlan {
    pub width: usize,
    pub height: usize,
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub pad_right: usize,
    pub pad_bottom: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub nodata: f32,
}

impl TilePlan {
    pub fn new(template: &Raster, tile_size: usize) -> Result<Self> {
        if tile_size == 0 {
            return Err(Error::Shape("tile size must be positive".into()));
        }
        let tiles_x = template.width().div_ceil(tile_size);
        let tiles_y = template.height().div_ceil(tile_size);
        Ok(Self {
            width: template.width(),
            height: template.height(),
            tile_size,
            tiles_x,
            tiles_y,
            pad_right: tiles_x * tile_size - template.width(),
            pad_bottom: tiles_y * tile_size - template.height(),
            origin_x: template.origin_x(),
            origin_y: template.origin_y(),
            cell_size: template.cell_size(),
            nodata: template.nodata(),
        })
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Real (unpadded) rows and columns of tile `(row, col)`.
    pub fn valid_extent(&self, row: usize, col: usize) -> (usize, usize) {
        let t = self.tile_size;
        (
            (self.height - row * t).min(t),
            (self.width - col * t).min(t),
        )
    }

    /// Ground coordinates of the tile's outer corner.
    pub fn tile_origin(&self, row: usize, col: usize) -> (f64, f64) {
        let step = self.tile_size as f64 * self.cell_size;
        (
            self.origin_x + col as f64 * step,
            self.origin_y + row as f64 * step,
        )
    }
}

/// One window of every channel, `tile_size²` values each, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TileStack {
    pub row_index: usize,
    pub col_index: usize,
    pub channels: Vec<Vec<f32>>,
    pub valid_rows: usize,
    pub valid_cols: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
}

/// Splits aligned channels into `TILE_SIZE` tiles.
pub fn split(channels: &[Raster]) -> Result<(TilePlan, Vec<TileStack>)> {
    split_sized(channels, TILE_SIZE)
}

/// [`split`] with an explicit tile size, for small networks and tests.
pub fn split_sized(channels: &[Raster], tile_size: usize) -> Result<(TilePlan, Vec<TileStack>)> {
    let first = channels
        .first()
        .ok_or_else(|| Error::Input("split needs at least one channel".into()))?;
    for (i, ch) in channels.iter().enumerate().skip(1) {
        first.ensure_aligned(ch, &format!("channel {i}"))?;
    }
    let plan = TilePlan::new(first, tile_size)?;
    let t = tile_size;
    let mut tiles = Vec::with_capacity(plan.tile_count());
    for tr in 0..plan.tiles_y {
        for tc in 0..plan.tiles_x {
            let (vr, vc) = plan.valid_extent(tr, tc);
            let data = channels
                .iter()
                .map(|ch| {
                    let mut buf = vec![0.0f32; t * t];
                    for r in 0..vr {
                        let src = (tr * t + r) * ch.width() + tc * t;
                        buf[r * t..r * t + vc].copy_from_slice(&ch.values()[src..src + vc]);
                    }
                    buf
                })
                .collect();
            let (ox, oy) = plan.tile_origin(tr, tc);
            tiles.push(TileStack {
                row_index: tr,
                col_index: tc,
                channels: data,
                valid_rows: vr,
                valid_cols: vc,
                origin_x: ox,
                origin_y: oy,
                cell_size: plan.cell_size,
            });
        }
    }
    Ok((plan, tiles))
}

/// Reassembles per-tile arrays into a raster of the plan's original size.
///
/// Every tile coordinate must appear exactly once; padding is discarded.
pub fn stitch(plan: &TilePlan, tiles: &[(usize, usize, Vec<f32>)]) -> Result<Raster> {
    let t = plan.tile_size;
    let mut by_pos: BTreeMap<(usize, usize), &[f32]> = BTreeMap::new();
    for (r, c, data) in tiles {
        if *r >= plan.tiles_y || *c >= plan.tiles_x {
            return Err(Error::Coverage(format!("tile ({r}, {c}) is outside the plan")));
        }
        if data.len() != t * t {
            return Err(Error::Shape(format!(
                "tile ({r}, {c}) has {} values, expected {}",
                data.len(),
                t * t
            )));
        }
        if by_pos.insert((*r, *c), data).is_some() {
            return Err(Error::Coverage(format!("duplicate tile ({r}, {c})")));
        }
    }
    let mut out = vec![0.0f32; plan.width * plan.height];
    for tr in 0..plan.tiles_y {
        for tc in 0..plan.tiles_x {
            let data = by_pos
                .get(&(tr, tc))
                .ok_or_else(|| Error::Coverage(format!("missing tile ({tr}, {tc})")))?;
            let (vr, vc) = plan.valid_extent(tr, tc);
            for r in 0..vr {
                let dst = (tr * t + r) * plan.width + tc * t;
                out[dst..dst + vc].copy_from_slice(&data[r * t..r * t + vc]);
            }
        }
    }
    Raster::new(
        plan.width,
        plan.height,
        plan.origin_x,
        plan.origin_y,
        plan.cell_size,
        plan.nodata,
        out,
    )
}

/// Writes `tile_{row}_{col}_{channel}.glbr` for every tile and channel.
pub fn dump_tiles(dir: impl AsRef<Path>, tiles: &[TileStack]) -> Result<()> {
    let dir = dir.as_ref();
    for tile in tiles {
        let t = (tile.channels[0].len() as f64).sqrt() as usize;
        for (ch, data) in tile.channels.iter().enumerate() {
            let r = Raster::new(
                t,
                t,
                tile.origin_x,
                tile.origin_y,
                tile.cell_size,
                DEFAULT_NODATA,
                data.clone(),
            )?;
            write_raster(
                &r,
                dir.join(format!("tile_{}_{}_{}.glbr", tile.row_index, tile.col_index, ch)),
            )?;
        }
    }
    Ok(())
}
