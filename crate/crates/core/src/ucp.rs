//! Gridded urban canopy parameters from flat-roof buildings and the 1-m mask.
//!
//! A UCP cell covers `resolution / cell_size` mask cells on a side. Cells at
//! the high-x and high-y edges may extend past the mask; their area `A_t` is
//! the mask area they actually cover, so every ratio stays within the
//! observed extent. Buildings join the cell holding their footprint centroid.
//! Plan and roof areas come from mask pixel counts.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::footprints::{centroid, projected_width, FootprintMask};
use crate::lod1::Lod1Building;
use crate::raster::{write_raster, Raster, DEFAULT_NODATA};

pub const DEFAULT_BIN_WIDTH: f64 = 5.0;
pub const DEFAULT_HIST_CAP: f64 = 75.0;

/// Layout of a UCP grid over a mask raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UcpGeometry {
    pub resolution: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub rows: usize,
    pub cols: usize,
    /// Mask cells per UCP cell side.
    pub factor: usize,
    pub mask_width: usize,
    pub mask_height: usize,
    pub mask_cell_size: f64,
}

impl UcpGeometry {
    pub fn new(mask: &Raster, resolution: f64) -> Result<Self> {
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(Error::Input(format!("resolution must be positive, got {resolution}")));
        }
        let ratio = resolution / mask.cell_size();
        let factor = ratio.round();
        if factor < 1.0 || (ratio - factor).abs() > 1e-9 * ratio {
            return Err(Error::Alignment(format!(
                "resolution {resolution} m is not a multiple of the {} m mask cell",
                mask.cell_size()
            )));
        }
        let factor = factor as usize;
        Ok(Self {
            resolution,
            origin_x: mask.origin_x(),
            origin_y: mask.origin_y(),
            rows: mask.height().div_ceil(factor),
            cols: mask.width().div_ceil(factor),
            factor,
            mask_width: mask.width(),
            mask_height: mask.height(),
            mask_cell_size: mask.cell_size(),
        })
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Mask cells covered by UCP cell `(row, col)`.
    pub fn covered_pixels(&self, row: usize, col: usize) -> usize {
        let h = (self.mask_height - row * self.factor).min(self.factor);
        let w = (self.mask_width - col * self.factor).min(self.factor);
        h * w
    }

    /// `A_t`: covered ground area of a cell in square meters.
    pub fn cell_area(&self, row: usize, col: usize) -> f64 {
        self.covered_pixels(row, col) as f64 * self.mask_cell_size * self.mask_cell_size
    }

    /// UCP cell holding a ground point, `None` outside the mask extent.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let cs = self.mask_cell_size;
        let c = ((x - self.origin_x) / cs).floor();
        let r = ((y - self.origin_y) / cs).floor();
        if c < 0.0 || r < 0.0 || c >= self.mask_width as f64 || r >= self.mask_height as f64 {
            return None;
        }
        Some((r as usize / self.factor, c as usize / self.factor))
    }

    fn check_mask(&self, mask: &FootprintMask) -> Result<()> {
        let m = &mask.raster;
        if m.width() != self.mask_width
            || m.height() != self.mask_height
            || m.cell_size() != self.mask_cell_size
            || m.origin_x() != self.origin_x
            || m.origin_y() != self.origin_y
        {
            return Err(Error::Alignment("mask does not match the UCP grid geometry".into()));
        }
        Ok(())
    }
}

/// Built mask cells per UCP cell, row-major.
fn built_pixels(mask: &FootprintMask, g: &UcpGeometry) -> Result<Vec<usize>> {
    g.check_mask(mask)?;
    let mut counts = vec![0usize; g.cell_count()];
    for r in 0..g.mask_height {
        let base = (r / g.factor) * g.cols;
        let row = &mask.source_ids[r * g.mask_width..(r + 1) * g.mask_width];
        for (c, &id) in row.iter().enumerate() {
            if id != 0 {
                counts[base + c / g.factor] += 1;
            }
        }
    }
    Ok(counts)
}

/// Indices into `buildings` grouped by the UCP cell holding each centroid.
pub fn assign_to_cells(
    buildings: &[Lod1Building],
    g: &UcpGeometry,
) -> Result<(Vec<Vec<usize>>, Vec<Warning>)> {
    let mut members = vec![Vec::new(); g.cell_count()];
    let mut warnings = Vec::new();
    for (i, b) in buildings.iter().enumerate() {
        let p = centroid(&b.footprint)?;
        match g.cell_of(p.x, p.y) {
            Some((r, c)) => members[r * g.cols + c].push(i),
            None => warnings.push(Warning::CentroidOutsideGrid {
                id: b.footprint.id(),
            }),
        }
    }
    Ok((members, warnings))
}

/// `λ_p = A_f / A_t` per cell.
pub fn lambda_p(mask: &FootprintMask, g: &UcpGeometry) -> Result<Vec<f64>> {
    let built = built_pixels(mask, g)?;
    Ok(built
        .iter()
        .enumerate()
        .map(|(i, &b)| b as f64 / g.covered_pixels(i / g.cols, i % g.cols) as f64)
        .collect())
}

/// `λ_b = (A_r + Σ P·H) / A_t` per cell.
pub fn lambda_b(buildings: &[Lod1Building], mask: &FootprintMask, g: &UcpGeometry) -> Result<Vec<f64>> {
    let built = built_pixels(mask, g)?;
    let (members, _) = assign_to_cells(buildings, g)?;
    let px_area = g.mask_cell_size * g.mask_cell_size;
    Ok((0..g.cell_count())
        .map(|i| {
            let walls: f64 = members[i]
                .iter()
                .map(|&b| buildings[b].footprint.perimeter() * buildings[b].height as f64)
                .sum();
            (built[i] as f64 * px_area + walls) / g.cell_area(i / g.cols, i % g.cols)
        })
        .collect())
}

/// `λ_f(θ) = Σ projected_width(θ)·H / A_t` per cell.
pub fn lambda_f(buildings: &[Lod1Building], g: &UcpGeometry, wind_direction: f64) -> Result<Vec<f64>> {
    let (members, _) = assign_to_cells(buildings, g)?;
    Ok((0..g.cell_count())
        .map(|i| {
            let front: f64 = members[i]
                .iter()
                .map(|&b| {
                    projected_width(&buildings[b].footprint, wind_direction)
                        * buildings[b].height as f64
                })
                .sum();
            front / g.cell_area(i / g.cols, i % g.cols)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

fn stats_of(heights: &[f64]) -> HeightStats {
    if heights.is_empty() {
        return HeightStats {
            mean: 0.0,
            std: 0.0,
            count: 0,
        };
    }
    let n = heights.len() as f64;
    let mean = heights.iter().sum::<f64>() / n;
    let var = heights.iter().map(|h| (h - mean) * (h - mean)).sum::<f64>() / n;
    HeightStats {
        mean,
        std: var.sqrt(),
        count: heights.len(),
    }
}

fn member_heights(buildings: &[Lod1Building], members: &[usize]) -> Vec<f64> {
    members.iter().map(|&b| buildings[b].height as f64).collect()
}

pub fn height_stats(buildings: &[Lod1Building], g: &UcpGeometry) -> Result<Vec<HeightStats>> {
    let (members, _) = assign_to_cells(buildings, g)?;
    Ok(members
        .iter()
        .map(|m| stats_of(&member_heights(buildings, m)))
        .collect())
}

/// Number of histogram bins: regular bins up to `cap`, plus one open bin.
pub fn bin_count(bin_width: f64, cap: f64) -> usize {
    (cap / bin_width).ceil() as usize + 1
}

/// Bin of a height: `[k·w, (k+1)·w)` below `cap`, the last bin at or above.
pub fn bin_index(h: f64, bin_width: f64, cap: f64) -> usize {
    if h >= cap {
        bin_count(bin_width, cap) - 1
    } else {
        (h.max(0.0) / bin_width).floor() as usize
    }
}

fn histogram_of(heights: &[f64], bin_width: f64, cap: f64) -> Vec<f64> {
    let mut counts = vec![0usize; bin_count(bin_width, cap)];
    for &h in heights {
        counts[bin_index(h, bin_width, cap)] += 1;
    }
    let n = heights.len();
    counts
        .iter()
        .map(|&k| if n == 0 { 0.0 } else { k as f64 / n as f64 })
        .collect()
}

fn check_bins(bin_width: f64, cap: f64) -> Result<()> {
    if !(bin_width.is_finite() && bin_width > 0.0 && cap.is_finite() && cap > 0.0) {
        return Err(Error::Input(format!(
            "bin width and cap must be positive, got {bin_width} and {cap}"
        )));
    }
    Ok(())
}

/// Per-cell fraction of member buildings in each height bin.
pub fn height_histogram(
    buildings: &[Lod1Building],
    g: &UcpGeometry,
    bin_width: f64,
    cap: f64,
) -> Result<Vec<Vec<f64>>> {
    check_bins(bin_width, cap)?;
    let (members, _) = assign_to_cells(buildings, g)?;
    Ok(members
        .iter()
        .map(|m| histogram_of(&member_heights(buildings, m), bin_width, cap))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcpCell {
    pub building_count: usize,
    pub mean_height: f64,
    pub std_height: f64,
    /// Footprint-area-weighted mean height.
    pub area_weighted_height: f64,
    pub histogram: Vec<f64>,
    /// Share of member buildings lower than 5 m.
    pub fraction_below_5m: f64,
    pub lambda_p: f64,
    pub lambda_b: f64,
    /// One value per entry of [`UcpGrid::wind_directions`].
    pub lambda_f: Vec<f64>,
    /// `A_t` in square meters.
    pub area: f64,
}

impl UcpCell {
    pub fn is_empty(&self) -> bool {
        self.building_count == 0 && self.lambda_p == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcpGrid {
    pub geometry: UcpGeometry,
    pub bin_width: f64,
    pub hist_cap: f64,
    pub wind_directions: Vec<f64>,
    /// Row-major, row 0 at the low-y edge.
    pub cells: Vec<UcpCell>,
}

impl UcpGrid {
    pub fn cell(&self, row: usize, col: usize) -> &UcpCell {
        &self.cells[row * self.geometry.cols + col]
    }

    pub fn resolution(&self) -> f64 {
        self.geometry.resolution
    }
}

/// Options for [`aggregate_all`].
#[derive(Debug, Clone, PartialEq)]
pub struct UcpOptions {
    pub resolution: f64,
    pub wind_directions: Vec<f64>,
    pub bin_width: f64,
    pub hist_cap: f64,
}

impl Default for UcpOptions {
    fn default() -> Self {
        Self {
            resolution: 300.0,
            wind_directions: vec![0.0, 90.0],
            bin_width: DEFAULT_BIN_WIDTH,
            hist_cap: DEFAULT_HIST_CAP,
        }
    }
}

/// Every UCP for every cell.
pub fn aggregate_all(
    buildings: &[Lod1Building],
    mask: &FootprintMask,
    opts: &UcpOptions,
) -> Result<(UcpGrid, Vec<Warning>)> {
    check_bins(opts.bin_width, opts.hist_cap)?;
    for &d in &opts.wind_directions {
        if !(0.0..360.0).contains(&d) {
            return Err(Error::Input(format!("wind direction {d} is outside [0, 360)")));
        }
    }
    let g = UcpGeometry::new(&mask.raster, opts.resolution)?;
    let built = built_pixels(mask, &g)?;
    let (members, warnings) = assign_to_cells(buildings, &g)?;
    let px_area = g.mask_cell_size * g.mask_cell_size;

    let cells = (0..g.cell_count())
        .map(|i| {
            let (r, c) = (i / g.cols, i % g.cols);
            let a_t = g.cell_area(r, c);
            let m = &members[i];
            let heights = member_heights(buildings, m);
            let st = stats_of(&heights);
            let (mut weighted, mut plan) = (0.0, 0.0);
            let mut walls = 0.0;
            for &b in m {
                let fp = &buildings[b].footprint;
                let h = buildings[b].height as f64;
                weighted += fp.area() * h;
                plan += fp.area();
                walls += fp.perimeter() * h;
            }
            let below = heights.iter().filter(|&&h| h < 5.0).count();
            UcpCell {
                building_count: st.count,
                mean_height: st.mean,
                std_height: st.std,
                area_weighted_height: if plan > 0.0 { weighted / plan } else { 0.0 },
                histogram: histogram_of(&heights, opts.bin_width, opts.hist_cap),
                fraction_below_5m: if st.count == 0 {
                    0.0
                } else {
                    below as f64 / st.count as f64
                },
                lambda_p: built[i] as f64 / g.covered_pixels(r, c) as f64,
                lambda_b: (built[i] as f64 * px_area + walls) / a_t,
                lambda_f: opts
                    .wind_directions
                    .iter()
                    .map(|&d| {
                        m.iter()
                            .map(|&b| {
                                projected_width(&buildings[b].footprint, d)
                                    * buildings[b].height as f64
                            })
                            .sum::<f64>()
                            / a_t
                    })
                    .collect(),
                area: a_t,
            }
        })
        .collect();

    Ok((
        UcpGrid {
            geometry: g,
            bin_width: opts.bin_width,
            hist_cap: opts.hist_cap,
            wind_directions: opts.wind_directions.clone(),
            cells,
        },
        warnings,
    ))
}

/// Compact label for a direction or resolution: `90`, `22.5`.
pub fn number_label(v: f64) -> String {
    format!("{v}")
}

/// Scalar fields exported as rasters, with their per-cell accessor.
pub fn scalar_fields(grid: &UcpGrid) -> Vec<(String, Vec<f64>)> {
    let col = |f: fn(&UcpCell) -> f64| grid.cells.iter().map(f).collect::<Vec<f64>>();
    let mut out = vec![
        ("count".to_string(), col(|c| c.building_count as f64)),
        ("mean_height".to_string(), col(|c| c.mean_height)),
        ("std_height".to_string(), col(|c| c.std_height)),
        ("area_weighted_height".to_string(), col(|c| c.area_weighted_height)),
        ("fraction_below_5m".to_string(), col(|c| c.fraction_below_5m)),
        ("lambda_p".to_string(), col(|c| c.lambda_p)),
        ("lambda_b".to_string(), col(|c| c.lambda_b)),
    ];
    for (k, &d) in grid.wind_directions.iter().enumerate() {
        out.push((
            format!("lambda_f_{}", number_label(d)),
            grid.cells.iter().map(|c| c.lambda_f[k]).collect(),
        ));
    }
    out
}

/// Writes `ucp_{name}_{res}m.glbr` per scalar field, `ucp_{res}m.csv` and
/// the full grid as `ucp_{res}m.json`. Returns the written paths.
pub fn export_grid(dir: impl AsRef<Path>, grid: &UcpGrid) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &grid.geometry;
    let res = number_label(g.resolution);
    let mut written = Vec::new();
    for (name, values) in scalar_fields(grid) {
        let raster = Raster::new(
            g.cols,
            g.rows,
            g.origin_x,
            g.origin_y,
            g.resolution,
            DEFAULT_NODATA,
            values.iter().map(|&v| v as f32).collect(),
        )?;
        let path = dir.join(format!("ucp_{name}_{res}m.glbr"));
        write_raster(&raster, &path)?;
        written.push(path);
    }

    let path = dir.join(format!("ucp_{res}m.csv"));
    fs::write(&path, render_csv(grid)).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join(format!("ucp_{res}m.json"));
    let json = serde_json::to_string(grid).expect("grid serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

pub fn render_csv(grid: &UcpGrid) -> String {
    let mut s = String::from("cell_row,cell_col,count,mean,std,lambda_p,lambda_b");
    for &d in &grid.wind_directions {
        s.push_str(&format!(",lambda_f_{}", number_label(d)));
    }
    let bins = bin_count(grid.bin_width, grid.hist_cap);
    for k in 0..bins {
        s.push_str(&format!(",hist_bin_{k}"));
    }
    s.push('\n');
    for (i, c) in grid.cells.iter().enumerate() {
        let (r, col) = (i / grid.geometry.cols, i % grid.geometry.cols);
        s.push_str(&format!(
            "{r},{col},{},{},{},{},{}",
            c.building_count, c.mean_height, c.std_height, c.lambda_p, c.lambda_b
        ));
        for v in c.lambda_f.iter().chain(&c.histogram) {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

pub fn read_grid_json(path: impl AsRef<Path>) -> Result<UcpGrid> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        offset: 0,
        message: format!("{}: {e}", path.display()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::footprints::{rasterize, BuildingFootprint};

    fn scene(fps: &[(u64, f64, f64, f64, f64, f32)], size: usize) -> (Vec<Lod1Building>, FootprintMask) {
        let template = Raster::filled(size, size, 0.0, 0.0, 1.0, 0.0).unwrap();
        let footprints: Vec<BuildingFootprint> = fps
            .iter()
            .map(|&(id, x0, y0, x1, y1, _)| BuildingFootprint::rectangle(id, x0, y0, x1, y1).unwrap())
            .collect();
        let (mask, _) = rasterize(&footprints, &template).unwrap();
        let buildings = footprints
            .into_iter()
            .zip(fps)
            .map(|(footprint, f)| Lod1Building {
                n_cells: 0,
                height: f.5,
                footprint,
            })
            .collect();
        (buildings, mask)
    }

    fn opts(resolution: f64) -> UcpOptions {
        UcpOptions {
            resolution,
            ..UcpOptions::default()
        }
    }

    #[test]
    fn single_slab_fractions() {
        let (b, mask) = scene(&[(1, 45.0, 45.0, 55.0, 55.0, 5.0)], 100);
        let (grid, w) = aggregate_all(&b, &mask, &opts(100.0)).unwrap();
        assert!(w.is_empty());
        let c = grid.cell(0, 0);
        assert_eq!(c.lambda_p, 0.01);
        assert_eq!(c.lambda_b, 0.03);
        assert_eq!(c.mean_height, 5.0);
        assert_eq!(c.std_height, 0.0);
        assert_eq!(c.histogram[1], 1.0);
        assert_eq!(c.fraction_below_5m, 0.0);
    }

    #[test]
    fn face_on_slab_frontal_index() {
        // 10 m wide across the wind from the north, 20 m tall
        let (b, mask) = scene(&[(1, 45.0, 49.0, 55.0, 51.0, 20.0)], 100);
        let (grid, _) = aggregate_all(&b, &mask, &opts(100.0)).unwrap();
        assert_eq!(grid.cell(0, 0).lambda_f[0], 0.02);
        let f = lambda_f(&b, &grid.geometry, 180.0).unwrap();
        assert_eq!(f[0], 0.02);
    }

    #[test]
    fn two_heights_population_std() {
        let (b, mask) = scene(
            &[(1, 10.0, 10.0, 20.0, 20.0, 5.0), (2, 50.0, 50.0, 60.0, 60.0, 15.0)],
            100,
        );
        let st = height_stats(&b, &UcpGeometry::new(&mask.raster, 100.0).unwrap()).unwrap();
        assert_eq!((st[0].mean, st[0].std, st[0].count), (10.0, 5.0, 2));
    }

    #[test]
    fn histogram_boundaries() {
        let (b, mask) = scene(
            &[
                (1, 1.0, 1.0, 5.0, 5.0, 2.0),
                (2, 11.0, 1.0, 15.0, 5.0, 7.0),
                (3, 21.0, 1.0, 25.0, 5.0, 12.0),
                (4, 31.0, 1.0, 35.0, 5.0, 5.0),
                (5, 41.0, 1.0, 45.0, 5.0, 80.0),
            ],
            100,
        );
        let g = UcpGeometry::new(&mask.raster, 100.0).unwrap();
        let h = height_histogram(&b, &g, 5.0, 75.0).unwrap();
        assert_eq!(h[0].len(), 16);
        assert_eq!(&h[0][..4], &[0.2, 0.4, 0.2, 0.0]);
        assert_eq!(h[0][15], 0.2);
    }

    #[test]
    fn partial_edge_cells_use_covered_area() {
        let (b, mask) = scene(&[(1, 100.0, 100.0, 110.0, 110.0, 3.0)], 110);
        let (grid, _) = aggregate_all(&b, &mask, &opts(100.0)).unwrap();
        assert_eq!((grid.geometry.rows, grid.geometry.cols), (2, 2));
        let c = grid.cell(1, 1);
        assert_eq!(c.area, 100.0);
        assert_eq!(c.lambda_p, 1.0);
        assert_eq!(c.building_count, 1);
    }

    #[test]
    fn resolution_must_nest() {
        let (_, mask) = scene(&[], 10);
        assert!(matches!(UcpGeometry::new(&mask.raster, 2.5), Err(Error::Alignment(_))));
    }

    #[test]
    fn empty_scene_is_all_zero() {
        let (b, mask) = scene(&[], 200);
        let (grid, _) = aggregate_all(&b, &mask, &opts(100.0)).unwrap();
        for c in &grid.cells {
            assert!(c.is_empty());
            assert_eq!(c.lambda_b, 0.0);
            assert!(c.histogram.iter().all(|&f| f == 0.0));
        }
    }
}
