//! Georeferenced single-band rasters.
//!
//! Rows run south to north: cell `(0, 0)` is the south-west cell and the
//! origin is its outer (lower-left) corner. Cell `(row, col)` spans
//! `[origin_x + col·cs, origin_x + (col+1)·cs) × [origin_y + row·cs, origin_y + (row+1)·cs)`.

mod io;
mod resample;

pub use io::{decode_ascii, decode_glbr, encode_ascii, encode_glbr, read_raster, write_raster, RasterFormat};
pub use resample::{catmull_rom_weight, resample_cubic};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default nodata sentinel used when none is specified.
pub const DEFAULT_NODATA: f32 = -9999.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    origin_x: f64,
    origin_y: f64,
    cell_size: f64,
    nodata: f32,
    values: Vec<f32>,
}

/// Scale used by min-max normalization; needed to map predictions back to meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min_value: f64,
    pub max_value: f64,
}

impl NormalizationParams {
    pub fn new(min_value: f64, max_value: f64) -> Result<Self> {
        if !(min_value.is_finite() && max_value.is_finite()) || max_value < min_value {
            return Err(Error::Input(format!(
                "normalization range [{min_value}, {max_value}] is invalid"
            )));
        }
        Ok(Self {
            min_value,
            max_value,
        })
    }

    pub fn span(&self) -> f64 {
        self.max_value - self.min_value
    }
}

impl Raster {
    pub fn new(
        width: usize,
        height: usize,
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        nodata: f32,
        values: Vec<f32>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("raster must be at least 1×1, got {width}×{height}")));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::Input(format!("cell size must be positive, got {cell_size}")));
        }
        if !(origin_x.is_finite() && origin_y.is_finite()) {
            return Err(Error::Input("origin must be finite".into()));
        }
        if !nodata.is_finite() {
            return Err(Error::Input("nodata sentinel must be finite".into()));
        }
        let expected = width
            .checked_mul(height)
            .ok_or_else(|| Error::Shape(format!("{width}×{height} overflows")))?;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} values for {width}×{height}, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "cell {i} holds a non-finite value {}",
                values[i]
            )));
        }
        Ok(Self {
            width,
            height,
            origin_x,
            origin_y,
            cell_size,
            nodata,
            values,
        })
    }

    /// Raster of constant value.
    pub fn filled(
        width: usize,
        height: usize,
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        value: f32,
    ) -> Result<Self> {
        Self::new(
            width,
            height,
            origin_x,
            origin_y,
            cell_size,
            DEFAULT_NODATA,
            vec![value; width.saturating_mul(height)],
        )
    }

    /// New raster on the same grid as `self` with the given values.
    pub fn with_values(&self, values: Vec<f32>) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.origin_x,
            self.origin_y,
            self.cell_size,
            self.nodata,
            values,
        )
    }

    // Cell-wise maps that cannot introduce non-finite values skip revalidation.
    fn map_valid(&self, f: impl Fn(f32) -> f32) -> Self {
        let nodata = self.nodata;
        let values = self
            .values
            .iter()
            .map(|&v| if v == nodata { nodata } else { f(v) })
            .collect();
        Self {
            width: self.width,
            height: self.height,
            origin_x: self.origin_x,
            origin_y: self.origin_y,
            cell_size: self.cell_size,
            nodata,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn origin_x(&self) -> f64 {
        self.origin_x
    }

    pub fn origin_y(&self) -> f64 {
        self.origin_y
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn nodata(&self) -> f32 {
        self.nodata
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[self.index(row, col)]
    }

    #[inline]
    pub fn is_nodata(&self, v: f32) -> bool {
        v == self.nodata
    }

    /// Value at `(row, col)` or `None` for nodata.
    pub fn value(&self, row: usize, col: usize) -> Option<f32> {
        let v = self.get(row, col);
        (v != self.nodata).then_some(v)
    }

    pub fn set(&mut self, row: usize, col: usize, v: f32) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::Input(format!("cannot store non-finite value {v}")));
        }
        let i = self.index(row, col);
        self.values[i] = v;
        Ok(())
    }

    pub fn count_nodata(&self) -> usize {
        self.values.iter().filter(|&&v| v == self.nodata).count()
    }

    pub fn extent_width(&self) -> f64 {
        self.width as f64 * self.cell_size
    }

    pub fn extent_height(&self) -> f64 {
        self.height as f64 * self.cell_size
    }

    /// Ground coordinates of the center of cell `(row, col)`.
    #[inline]
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.cell_size,
            self.origin_y + (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Cell containing ground point `(x, y)` using half-open cell intervals.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.origin_x) / self.cell_size).floor();
        let fy = ((y - self.origin_y) / self.cell_size).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fy as usize, fx as usize))
    }

    /// True when both rasters share dimensions, origin and cell size.
    pub fn same_grid(&self, other: &Raster) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.origin_x == other.origin_x
            && self.origin_y == other.origin_y
            && self.cell_size == other.cell_size
    }

    pub fn ensure_aligned(&self, other: &Raster, what: &str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::Alignment(format!(
                "{what}: {}×{} @ ({}, {}) cs {} vs {}×{} @ ({}, {}) cs {}",
                self.width,
                self.height,
                self.origin_x,
                self.origin_y,
                self.cell_size,
                other.width,
                other.height,
                other.origin_x,
                other.origin_y,
                other.cell_size
            )))
        }
    }

    /// Valid (non-nodata) values.
    pub fn valid_values(&self) -> impl Iterator<Item = f32> + '_ {
        self.values.iter().copied().filter(move |&v| v != self.nodata)
    }

    /// Min and max over valid cells, or `None` when every cell is nodata.
    pub fn min_max(&self) -> Option<(f32, f32)> {
        self.valid_values().fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    /// Mean over valid cells with 64-bit accumulation.
    pub fn mean(&self) -> Option<f64> {
        let (sum, n) = self
            .valid_values()
            .fold((0.0f64, 0usize), |(s, n), v| (s + v as f64, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    fn zip_with(&self, other: &Raster, what: &str, f: impl Fn(f32, f32) -> f32) -> Result<Raster> {
        self.ensure_aligned(other, what)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| {
                if a == self.nodata || b == other.nodata {
                    self.nodata
                } else {
                    f(a, b)
                }
            })
            .collect();
        self.with_values(values)
    }
}

/// Cell-wise `minuend − subtrahend`; nodata in either operand yields nodata.
pub fn subtract(minuend: &Raster, subtrahend: &Raster) -> Result<Raster> {
    minuend.zip_with(subtrahend, "subtract", |a, b| a - b)
}

/// Cell-wise sum with the same nodata rule as [`subtract`].
pub fn add(a: &Raster, b: &Raster) -> Result<Raster> {
    a.zip_with(b, "add", |x, y| x + y)
}

pub fn clamp_nonnegative(r: &Raster) -> Raster {
    // max(0, -0.0) stays -0.0 under f32::max, so compare explicitly.
    r.map_valid(|v| if v > 0.0 { v } else { 0.0 })
}

/// Min-max scaling to `[0, 1]`.
///
/// With `params` absent the range is computed from the valid cells. A
/// degenerate range (`max == min`) maps every valid cell to `0.0`.
pub fn minmax_normalize(
    r: &Raster,
    params: Option<NormalizationParams>,
) -> Result<(Raster, NormalizationParams)> {
    let params = match params {
        Some(p) => p,
        None => {
            let (lo, hi) = r.min_max().ok_or_else(|| {
                Error::EmptyStatistics("cannot normalize a raster with no valid cells".into())
            })?;
            NormalizationParams::new(lo as f64, hi as f64)?
        }
    };
    let span = params.span();
    let min = params.min_value;
    let out = if span == 0.0 {
        r.map_valid(|_| 0.0)
    } else {
        r.map_valid(|v| ((v as f64 - min) / span) as f32)
    };
    Ok((out, params))
}

/// Inverse of [`minmax_normalize`].
pub fn denormalize(r: &Raster, params: NormalizationParams) -> Raster {
    let span = params.span();
    let min = params.min_value;
    r.map_valid(|v| (v as f64 * span + min) as f32)
}

/// Block mean over `factor × factor` blocks, ignoring nodata.
pub fn downsample_average(src: &Raster, factor: usize) -> Result<Raster> {
    if factor == 0 {
        return Err(Error::Shape("downsample factor must be positive".into()));
    }
    if !src.width.is_multiple_of(factor) || !src.height.is_multiple_of(factor) {
        return Err(Error::Shape(format!(
            "{}×{} is not divisible by factor {factor}",
            src.width, src.height
        )));
    }
    let (w, h) = (src.width / factor, src.height / factor);
    let mut out = Vec::with_capacity(w * h);
    for br in 0..h {
        for bc in 0..w {
            let mut sum = 0.0f64;
            let mut n = 0usize;
            for r in br * factor..(br + 1) * factor {
                let row = &src.values[r * src.width + bc * factor..r * src.width + (bc + 1) * factor];
                for &v in row {
                    if v != src.nodata {
                        sum += v as f64;
                        n += 1;
                    }
                }
            }
            out.push(if n == 0 { src.nodata } else { (sum / n as f64) as f32 });
        }
    }
    Raster::new(
        w,
        h,
        src.origin_x,
        src.origin_y,
        src.cell_size * factor as f64,
        src.nodata,
        out,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ND: f32 = DEFAULT_NODATA;

    fn grid(w: usize, h: usize, values: Vec<f32>) -> Raster {
        Raster::new(w, h, 0.0, 0.0, 1.0, ND, values).unwrap()
    }

    fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: f32, hi: f32) -> Raster {
        grid(w, h, (0..w * h).map(|_| rng.random_range(lo..hi)).collect())
    }

    #[test]
    fn constructor_rejects_bad_inputs() {
        assert!(matches!(
            Raster::new(2, 2, 0.0, 0.0, 1.0, ND, vec![0.0; 3]),
            Err(Error::Shape(_))
        ));
        assert!(Raster::new(0, 2, 0.0, 0.0, 1.0, ND, vec![]).is_err());
        assert!(Raster::new(1, 1, 0.0, 0.0, 0.0, ND, vec![0.0]).is_err());
        assert!(Raster::new(1, 1, 0.0, 0.0, 1.0, ND, vec![f32::NAN]).is_err());
        assert!(Raster::new(1, 1, 0.0, 0.0, 1.0, f32::NAN, vec![0.0]).is_err());
    }

    #[test]
    fn cell_geometry_is_half_open() {
        let r = Raster::filled(4, 3, 10.0, 20.0, 2.0, 0.0).unwrap();
        assert_eq!(r.cell_center(0, 0), (11.0, 21.0));
        assert_eq!(r.cell_of(10.0, 20.0), Some((0, 0)));
        assert_eq!(r.cell_of(12.0, 20.0), Some((0, 1)));
        assert_eq!(r.cell_of(17.999, 25.999), Some((2, 3)));
        assert_eq!(r.cell_of(18.0, 21.0), None);
        assert_eq!(r.cell_of(9.999, 21.0), None);
    }

    #[test]
    fn subtract_dsm_minus_dem() {
        let dsm = grid(2, 1, vec![110.0, 50.0]);
        let dem = grid(2, 1, vec![100.0, ND]);
        let ndsm = subtract(&dsm, &dem).unwrap();
        assert_eq!(ndsm.values(), &[10.0, ND]);
    }

    #[test]
    fn subtract_matches_cell_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dsm = random_grid(&mut rng, 3, 3, 90.0, 150.0);
        let mut dem_values = random_grid(&mut rng, 3, 3, 80.0, 120.0).into_values();
        dem_values[4] = ND;
        let dem = grid(3, 3, dem_values);
        let out = subtract(&dsm, &dem).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let expected = match (dsm.value(r, c), dem.value(r, c)) {
                    (Some(a), Some(b)) => a - b,
                    _ => ND,
                };
                assert_eq!(out.get(r, c), expected);
            }
        }
    }

    #[test]
    fn subtract_rejects_misaligned() {
        let a = grid(2, 2, vec![0.0; 4]);
        let b = Raster::new(2, 2, 1.0, 0.0, 1.0, ND, vec![0.0; 4]).unwrap();
        assert!(matches!(subtract(&a, &b), Err(Error::Alignment(_))));
        let c = grid(4, 1, vec![0.0; 4]);
        assert!(matches!(subtract(&a, &c), Err(Error::Alignment(_))));
    }

    #[test]
    fn clamp_cases() {
        let r = grid(4, 1, vec![-2.5, 7.0, ND, -0.0]);
        let out = clamp_nonnegative(&r);
        assert_eq!(out.values()[..3], [0.0, 7.0, ND]);
        assert!(out.values()[3].is_sign_positive());
    }

    #[test]
    fn normalize_definition() {
        let r = grid(3, 1, vec![0.0, 5.0, 10.0]);
        let (n, p) = minmax_normalize(&r, None).unwrap();
        assert_eq!(n.values(), &[0.0, 0.5, 1.0]);
        assert_eq!(p, NormalizationParams::new(0.0, 10.0).unwrap());
    }

    #[test]
    fn normalize_constant_is_zero() {
        let r = grid(3, 1, vec![7.0; 3]);
        let (n, p) = minmax_normalize(&r, None).unwrap();
        assert_eq!(n.values(), &[0.0; 3]);
        assert_eq!((p.min_value, p.max_value), (7.0, 7.0));
        assert_eq!(denormalize(&n, p).values(), &[7.0; 3]);
    }

    #[test]
    fn normalize_all_nodata_errors() {
        let r = grid(2, 1, vec![ND, ND]);
        assert!(matches!(minmax_normalize(&r, None), Err(Error::EmptyStatistics(_))));
    }

    #[test]
    fn normalize_preserves_nodata_and_uses_given_params() {
        let r = grid(3, 1, vec![ND, 2.0, 4.0]);
        let p = NormalizationParams::new(0.0, 8.0).unwrap();
        let (n, used) = minmax_normalize(&r, Some(p)).unwrap();
        assert_eq!(used, p);
        assert_eq!(n.values(), &[ND, 0.25, 0.5]);
    }

    #[test]
    fn denormalize_definition() {
        let r = grid(1, 1, vec![0.5]);
        let out = denormalize(&r, NormalizationParams::new(0.0, 10.0).unwrap());
        assert_eq!(out.values(), &[5.0]);
        let c = denormalize(&grid(2, 1, vec![0.1, 0.9]), NormalizationParams::new(3.0, 3.0).unwrap());
        assert_eq!(c.values(), &[3.0, 3.0]);
    }

    #[test]
    fn normalize_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = random_grid(&mut rng, 8, 8, -50.0, 300.0);
        let (n, p) = minmax_normalize(&r, None).unwrap();
        let back = denormalize(&n, p);
        for (a, b) in r.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn downsample_block_mean() {
        let r = grid(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let d = downsample_average(&r, 2).unwrap();
        assert_eq!(d.values(), &[2.5]);
        assert_eq!(d.cell_size(), 2.0);
        let c = downsample_average(&Raster::filled(6, 6, 0.0, 0.0, 1.0, 3.25).unwrap(), 3).unwrap();
        assert_eq!(c.values(), &[3.25; 4]);
    }

    #[test]
    fn downsample_nodata_blocks() {
        let r = grid(4, 2, vec![ND, ND, 1.0, ND, ND, ND, ND, 3.0]);
        let d = downsample_average(&r, 2).unwrap();
        assert_eq!(d.values(), &[ND, 2.0]);
    }

    #[test]
    fn downsample_rejects_indivisible() {
        let r = grid(3, 2, vec![0.0; 6]);
        assert!(matches!(downsample_average(&r, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn downsample_matches_block_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random_grid(&mut rng, 8, 8, 0.0, 100.0);
        let d = downsample_average(&r, 4).unwrap();
        for br in 0..2 {
            for bc in 0..2 {
                let mut s = 0.0f64;
                for i in 0..4 {
                    for j in 0..4 {
                        s += r.get(br * 4 + i, bc * 4 + j) as f64;
                    }
                }
                assert_eq!(d.get(br, bc), (s / 16.0) as f32);
            }
        }
    }

    proptest! {
        #[test]
        fn subtract_then_add_recovers_minuend(
            vals in proptest::collection::vec((-500.0f32..500.0, -500.0f32..500.0), 16)
        ) {
            let a = grid(4, 4, vals.iter().map(|v| v.0).collect());
            let b = grid(4, 4, vals.iter().map(|v| v.1).collect());
            let back = add(&subtract(&a, &b).unwrap(), &b).unwrap();
            for (x, y) in a.values().iter().zip(back.values()) {
                // one rounding in subtraction and one in addition
                prop_assert!((x - y).abs() <= 2.0 * f32::EPSILON * 1000.0);
            }
        }

        #[test]
        fn normalized_values_in_unit_interval(
            vals in proptest::collection::vec(-1e4f32..1e4, 1..64)
        ) {
            let r = grid(vals.len(), 1, vals);
            let (n, _) = minmax_normalize(&r, None).unwrap();
            prop_assert!(n.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn downsample_preserves_global_mean(
            vals in proptest::collection::vec(0.0f32..1000.0, 36),
            factor in prop_oneof![Just(1usize), Just(2), Just(3), Just(6)],
        ) {
            let r = grid(6, 6, vals);
            let d = downsample_average(&r, factor).unwrap();
            let oracle: f64 = r.values().iter().map(|&v| v as f64).sum::<f64>() / 36.0;
            let got = d.mean().unwrap();
            prop_assert!((got - oracle).abs() <= 1e-5 * oracle.abs().max(1.0));
        }
    }
}
