use rayon::prelude::*;

use super::Raster;
use crate::error::{Error, Result};

const CATMULL_ROM_A: f64 = -0.5;

/// Cubic convolution kernel with `a = -0.5` (Catmull-Rom).
pub fn catmull_rom_weight(x: f64) -> f64 {
    let a = CATMULL_ROM_A;
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// Four clamped source indices and their weights for sample position `u`
/// (in source cell-center coordinates).
fn taps(u: f64, len: usize) -> ([usize; 4], [f64; 4]) {
    let base = u.floor();
    let t = u - base;
    let base = base as i64;
    let last = len as i64 - 1;
    let mut idx = [0usize; 4];
    let mut w = [0f64; 4];
    for k in 0..4 {
        let i = base - 1 + k as i64;
        idx[k] = i.clamp(0, last) as usize;
        w[k] = catmull_rom_weight(t - (k as f64 - 1.0));
    }
    (idx, w)
}

fn output_len(cells: usize, cell_size: f64, target: f64, axis: &str) -> Result<usize> {
    let ratio = cells as f64 * cell_size / target;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-6 * ratio.max(1.0) {
        return Err(Error::Shape(format!(
            "{axis} extent {} m is not a whole number of {target} m cells",
            cells as f64 * cell_size
        )));
    }
    Ok(n as usize)
}

/// Bicubic resampling onto a grid of `target_cell_size` covering the same extent.
///
/// Output cell centers are mapped into source cell-center coordinates and
/// interpolated with the separable Catmull-Rom kernel; stencil taps beyond
/// the source edges are clamped to the border cells. Any nodata cell in a
/// stencil is an error: fill voids before resampling.
pub fn resample_cubic(src: &Raster, target_cell_size: f64) -> Result<Raster> {
    if !(target_cell_size.is_finite() && target_cell_size > 0.0) {
        return Err(Error::Input(format!(
            "target cell size must be positive, got {target_cell_size}"
        )));
    }
    let cs = src.cell_size();
    let out_w = output_len(src.width(), cs, target_cell_size, "x")?;
    let out_h = output_len(src.height(), cs, target_cell_size, "y")?;
    let scale = target_cell_size / cs;

    let col_taps: Vec<_> = (0..out_w)
        .map(|c| taps((c as f64 + 0.5) * scale - 0.5, src.width()))
        .collect();
    let row_taps: Vec<_> = (0..out_h)
        .map(|r| taps((r as f64 + 0.5) * scale - 0.5, src.height()))
        .collect();

    let nodata = src.nodata();
    let values = src.values();
    let sw = src.width();
    let rows: Vec<Vec<f32>> = row_taps
        .par_iter()
        .enumerate()
        .map(|(r, (ridx, rw))| {
            let mut row = Vec::with_capacity(out_w);
            for (c, (cidx, cw)) in col_taps.iter().enumerate() {
                let mut acc = 0.0f64;
                for (&ri, &wy) in ridx.iter().zip(rw) {
                    let line = &values[ri * sw..(ri + 1) * sw];
                    let mut partial = 0.0f64;
                    for (&ci, &wx) in cidx.iter().zip(cw) {
                        let v = line[ci];
                        if v == nodata {
                            return Err(Error::Void { row: r, col: c });
                        }
                        partial += wx * v as f64;
                    }
                    acc += wy * partial;
                }
                row.push(acc as f32);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    Raster::new(
        out_w,
        out_h,
        src.origin_x(),
        src.origin_y(),
        target_cell_size,
        nodata,
        rows.into_iter().flatten().collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::DEFAULT_NODATA;

    #[test]
    fn kernel_interpolates_and_partitions_unity() {
        assert_eq!(catmull_rom_weight(0.0), 1.0);
        assert_eq!(catmull_rom_weight(1.0), 0.0);
        assert_eq!(catmull_rom_weight(2.0), 0.0);
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let s: f64 = (-1..=2).map(|k| catmull_rom_weight(t - k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_field_is_reproduced() {
        let src = Raster::filled(4, 3, 100.0, 200.0, 30.0, 42.0).unwrap();
        let out = resample_cubic(&src, 1.0).unwrap();
        assert_eq!((out.width(), out.height()), (120, 90));
        assert_eq!(out.origin_x(), 100.0);
        assert!(out.values().iter().all(|&v| v == 42.0));
    }

    // f(x, y) = x + y sampled at source centers, compared to the same ramp at
    // output centers. Edge clamping bends the ramp within 1.5 source cells of
    // the border, so only cells whose stencil is interior are checked.
    #[test]
    fn linear_ramp_is_reproduced_in_interior() {
        let (w, h, cs) = (10usize, 8usize, 4.0);
        let ramp = |x: f64, y: f64| x + y;
        let mut vals = Vec::new();
        for r in 0..h {
            for c in 0..w {
                vals.push(ramp((c as f64 + 0.5) * cs, (r as f64 + 0.5) * cs) as f32);
            }
        }
        let src = Raster::new(w, h, 0.0, 0.0, cs, DEFAULT_NODATA, vals).unwrap();
        let out = resample_cubic(&src, 1.0).unwrap();
        let mut checked = 0;
        for r in 0..out.height() {
            for c in 0..out.width() {
                let (x, y) = out.cell_center(r, c);
                let (u, v) = (x / cs - 0.5, y / cs - 0.5);
                let interior = u >= 1.0 && u <= w as f64 - 3.0 && v >= 1.0 && v <= h as f64 - 3.0;
                if !interior {
                    continue;
                }
                let expected = ramp(x, y);
                let got = out.get(r, c) as f64;
                assert!((got - expected).abs() <= 1e-4 * expected.abs(), "({r},{c}) {got} vs {expected}");
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn checkerboard_overshoot_is_bounded() {
        // Largest 2-D overshoot of the kernel: sum of positive tensor-product
        // weights minus 1, maximized over the fractional offset.
        let mut bound = 0.0f64;
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            let w: Vec<f64> = (-1..=2).map(|k| catmull_rom_weight(t - k as f64)).collect();
            let pos: f64 = w.iter().filter(|&&x| x > 0.0).sum();
            let neg: f64 = w.iter().filter(|&&x| x < 0.0).sum();
            bound = bound.max(pos * pos + neg * neg - 1.0);
        }
        assert!(bound <= 0.5);

        let src = Raster::new(2, 2, 0.0, 0.0, 4.0, DEFAULT_NODATA, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let out = resample_cubic(&src, 1.0).unwrap();
        for &v in out.values() {
            assert!(v as f64 >= -bound - 1e-6 && v as f64 <= 1.0 + bound + 1e-6);
            assert!((-0.5..=1.5).contains(&v));
        }
    }

    #[test]
    fn nodata_in_stencil_is_void_error() {
        let mut src = Raster::filled(4, 4, 0.0, 0.0, 2.0, 1.0).unwrap();
        src.set(1, 1, DEFAULT_NODATA).unwrap();
        assert!(matches!(resample_cubic(&src, 1.0), Err(Error::Void { .. })));
    }

    #[test]
    fn rejects_fractional_extent() {
        let src = Raster::filled(3, 3, 0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(matches!(resample_cubic(&src, 2.0), Err(Error::Shape(_))));
        assert!(resample_cubic(&src, 0.0).is_err());
    }
}
