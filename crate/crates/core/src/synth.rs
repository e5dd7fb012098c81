//! Deterministic synthetic cities: footprints, a 1-m truth nDSM, a labeled
//! point cloud and coarse DSM / DEM / population layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::footprints::{rasterize, BuildingFootprint, FootprintMask};
use crate::pointcloud::{Label, LabeledPoint, PointCloud};
use crate::raster::{downsample_average, Raster};

/// Attempts allowed per requested building before packing gives up.
pub const ATTEMPTS_PER_BUILDING: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCitySpec {
    /// Side of the square scene in meters. Rounded up so the fine grid is a
    /// whole number of coarse cells.
    pub extent: f64,
    pub buildings: usize,
    /// Rectangle side lengths are drawn from `[size_min, size_max]`.
    pub size_min: f64,
    pub size_max: f64,
    pub height_min: f64,
    pub height_max: f64,
    /// Terrain rise per meter eastward; 0 gives flat ground.
    pub terrain_slope: f64,
    pub terrain_base: f64,
    pub coarse_factor: usize,
    /// Standard deviation of Gaussian noise on the coarse nDSM, meters.
    pub noise_sigma: f64,
    /// Minimum clear distance between buildings, meters.
    pub min_gap: f64,
    /// Share of extra vegetation / clutter points labeled `other`.
    pub other_fraction: f64,
    pub cell_size: f64,
    pub seed: u64,
}

impl Default for SyntheticCitySpec {
    fn default() -> Self {
        Self {
            extent: 2000.0,
            buildings: 150,
            size_min: 20.0,
            size_max: 80.0,
            height_min: 3.0,
            height_max: 60.0,
            terrain_slope: 0.005,
            terrain_base: 100.0,
            coarse_factor: 30,
            noise_sigma: 2.0,
            min_gap: 4.0,
            other_fraction: 0.01,
            cell_size: 1.0,
            seed: 42,
        }
    }
}

impl SyntheticCitySpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if !(self.cell_size > 0.0 && self.extent >= self.cell_size) {
            return bad(format!(
                "extent {} must be at least the cell size {}",
                self.extent, self.cell_size
            ));
        }
        if !(self.size_min > 0.0 && self.size_min <= self.size_max) {
            return bad(format!("size range [{}, {}] is not ordered", self.size_min, self.size_max));
        }
        if !(self.height_min >= 0.0 && self.height_min <= self.height_max) {
            return bad(format!(
                "height range [{}, {}] is not ordered",
                self.height_min, self.height_max
            ));
        }
        if self.coarse_factor == 0 {
            return bad("coarse factor must be at least 1".into());
        }
        if !(self.noise_sigma >= 0.0 && self.min_gap >= 0.0) {
            return bad("noise sigma and gap must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.other_fraction) {
            return bad(format!("other fraction {} is outside [0, 1]", self.other_fraction));
        }
        Ok(())
    }

    /// Fine cells per side after rounding up to the coarse factor.
    pub fn fine_cells(&self) -> usize {
        let n = (self.extent / self.cell_size).ceil() as usize;
        n.div_ceil(self.coarse_factor) * self.coarse_factor
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCity {
    pub footprints: Vec<BuildingFootprint>,
    /// Height per footprint, aligned with `footprints`.
    pub heights: Vec<f32>,
    pub mask: FootprintMask,
    pub terrain: Raster,
    pub truth_ndsm: Raster,
    pub points: PointCloud,
    pub coarse_dsm: Raster,
    pub coarse_dem: Raster,
    pub coarse_ndsm: Raster,
    pub population: Raster,
}

struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

fn place_rectangles(spec: &SyntheticCitySpec, rng: &mut ChaCha8Rng) -> Result<Vec<Rect>> {
    let cs = spec.cell_size;
    let snap = |v: f64| (v / cs).round() * cs;
    let limit = spec.buildings * ATTEMPTS_PER_BUILDING;
    let mut rects: Vec<Rect> = Vec::with_capacity(spec.buildings);
    let mut attempts = 0;
    while rects.len() < spec.buildings {
        if attempts == limit {
            return Err(Error::Packing {
                placed: rects.len(),
                requested: spec.buildings,
                attempts,
            });
        }
        attempts += 1;
        let w = snap(rng.random_range(spec.size_min..=spec.size_max)).max(cs);
        let h = snap(rng.random_range(spec.size_min..=spec.size_max)).max(cs);
        if w > spec.extent || h > spec.extent {
            continue;
        }
        let x0 = snap(rng.random_range(0.0..=spec.extent - w));
        let y0 = snap(rng.random_range(0.0..=spec.extent - h));
        let r = Rect {
            x0,
            y0,
            x1: x0 + w,
            y1: y0 + h,
        };
        let g = spec.min_gap;
        let clear = rects.iter().all(|o| {
            r.x1 + g <= o.x0 || o.x1 + g <= r.x0 || r.y1 + g <= o.y0 || o.y1 + g <= r.y0
        });
        if clear {
            rects.push(r);
        }
    }
    Ok(rects)
}

/// 3×3 box smoothing with edge cells averaging over their in-grid neighbors.
fn box_smooth(r: &Raster) -> Result<Raster> {
    let (w, h) = (r.width(), r.height());
    let mut out = vec![0.0f32; w * h];
    for row in 0..h {
        for col in 0..w {
            let (mut s, mut n) = (0.0f64, 0);
            for rr in row.saturating_sub(1)..(row + 2).min(h) {
                for cc in col.saturating_sub(1)..(col + 2).min(w) {
                    s += r.get(rr, cc) as f64;
                    n += 1;
                }
            }
            out[row * w + col] = (s / n as f64) as f32;
        }
    }
    r.with_values(out)
}

/// People per coarse cell at full built coverage.
const PEOPLE_PER_BUILT_CELL: f64 = 1000.0;

pub fn generate(spec: &SyntheticCitySpec) -> Result<SyntheticCity> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.fine_cells();
    let cs = spec.cell_size;

    let rects = place_rectangles(spec, &mut rng)?;
    let footprints = rects
        .iter()
        .enumerate()
        .map(|(i, r)| BuildingFootprint::rectangle(i as u64 + 1, r.x0, r.y0, r.x1, r.y1))
        .collect::<Result<Vec<_>>>()?;
    let heights: Vec<f32> = footprints
        .iter()
        .map(|_| rng.random_range(spec.height_min..=spec.height_max) as f32)
        .collect();

    let template = Raster::filled(n, n, 0.0, 0.0, cs, 0.0)?;
    let (mask, _) = rasterize(&footprints, &template)?;
    let truth: Vec<f32> = mask
        .source_ids
        .iter()
        .map(|&id| if id == 0 { 0.0 } else { heights[id as usize - 1] })
        .collect();
    let truth_ndsm = template.with_values(truth)?;
    let terrain_values: Vec<f32> = (0..n * n)
        .map(|i| {
            let (x, _) = template.cell_center(i / n, i % n);
            (spec.terrain_base + spec.terrain_slope * x) as f32
        })
        .collect();
    let terrain = template.with_values(terrain_values)?;

    let mut points = Vec::with_capacity(n * n + (spec.other_fraction * (n * n) as f64) as usize);
    for row in 0..n {
        for col in 0..n {
            let x = (col as f64 + rng.random_range(0.0..1.0)) * cs;
            let y = (row as f64 + rng.random_range(0.0..1.0)) * cs;
            let ground = spec.terrain_base + spec.terrain_slope * x;
            let h = truth_ndsm.get(row, col) as f64;
            let label = if mask.is_built(row, col) {
                Label::Building
            } else {
                Label::Ground
            };
            points.push(LabeledPoint {
                x,
                y,
                z: ground + h,
                label,
            });
            if rng.random_bool(spec.other_fraction) {
                points.push(LabeledPoint {
                    x: (col as f64 + rng.random_range(0.0..1.0)) * cs,
                    y: (row as f64 + rng.random_range(0.0..1.0)) * cs,
                    z: ground + h + rng.random_range(0.0..10.0),
                    label: Label::Other,
                });
            }
        }
    }
    let points = PointCloud::new(points)?;

    let f = spec.coarse_factor;
    let coarse_dem = downsample_average(&terrain, f)?;
    let coarse_truth = downsample_average(&truth_ndsm, f)?;
    let noisy: Vec<f32> = if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("positive sigma");
        coarse_truth
            .values()
            .iter()
            .map(|&v| (v as f64 + normal.sample(&mut rng)) as f32)
            .collect()
    } else {
        coarse_truth.values().to_vec()
    };
    let coarse_ndsm = coarse_truth.with_values(noisy)?;
    let coarse_dsm = coarse_ndsm.with_values(
        coarse_ndsm
            .values()
            .iter()
            .zip(coarse_dem.values())
            .map(|(&h, &g)| h + g)
            .collect(),
    )?;

    let built = mask
        .raster
        .with_values(mask.source_ids.iter().map(|&id| (id != 0) as u8 as f32).collect())?;
    let density = box_smooth(&downsample_average(&built, f)?)?;
    let population =
        density.with_values(density.values().iter().map(|&d| (d as f64 * PEOPLE_PER_BUILT_CELL) as f32).collect())?;

    Ok(SyntheticCity {
        footprints,
        heights,
        mask,
        terrain,
        truth_ndsm,
        points,
        coarse_dsm,
        coarse_dem,
        coarse_ndsm,
        population,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticCitySpec {
        SyntheticCitySpec {
            extent: 200.0,
            buildings: 12,
            size_min: 8.0,
            size_max: 25.0,
            coarse_factor: 10,
            ..SyntheticCitySpec::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.footprints, b.footprints);
        assert_eq!(a.points, b.points);
        assert_eq!(a.coarse_dsm, b.coarse_dsm);
        let c = generate(&SyntheticCitySpec { seed: 7, ..small() }).unwrap();
        assert_ne!(a.footprints, c.footprints);
    }

    #[test]
    fn extent_rounds_up_to_factor() {
        let spec = SyntheticCitySpec {
            extent: 2000.0,
            coarse_factor: 30,
            ..small()
        };
        assert_eq!(spec.fine_cells(), 2010);
    }

    #[test]
    fn footprints_do_not_overlap_and_heights_in_range() {
        let s = small();
        let city = generate(&s).unwrap();
        assert_eq!(city.footprints.len(), 12);
        let area: f64 = city.footprints.iter().map(BuildingFootprint::area).sum();
        assert_eq!(city.mask.built_count() as f64, area);
        for &h in &city.heights {
            assert!((s.height_min as f32..=s.height_max as f32).contains(&h));
        }
    }

    #[test]
    fn zero_buildings_gives_flat_truth() {
        let city = generate(&SyntheticCitySpec {
            buildings: 0,
            ..small()
        })
        .unwrap();
        assert!(city.footprints.is_empty());
        assert!(city.truth_ndsm.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noiseless_unit_factor_keeps_truth() {
        let city = generate(&SyntheticCitySpec {
            noise_sigma: 0.0,
            coarse_factor: 1,
            ..small()
        })
        .unwrap();
        assert_eq!(city.coarse_ndsm.values(), city.truth_ndsm.values());
    }

    #[test]
    fn impossible_packing_fails() {
        let r = generate(&SyntheticCitySpec {
            buildings: 50,
            size_min: 60.0,
            size_max: 60.0,
            ..small()
        });
        assert!(matches!(r, Err(Error::Packing { requested: 50, .. })));
    }
}
