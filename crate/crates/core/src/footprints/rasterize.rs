use super::{BuildingFootprint, Point};
use crate::error::{Result, Warning};
use crate::raster::Raster;

/// Binary building mask plus per-cell owning footprint id (0 = none).
#[derive(Debug, Clone, PartialEq)]
pub struct FootprintMask {
    pub raster: Raster,
    pub source_ids: Vec<u64>,
}

impl FootprintMask {
    pub fn is_built(&self, row: usize, col: usize) -> bool {
        self.source_ids[self.raster.index(row, col)] != 0
    }

    pub fn built_count(&self) -> usize {
        self.source_ids.iter().filter(|&&id| id != 0).count()
    }
}

/// Sorted x positions where a horizontal line at `y` crosses the footprint's
/// rings. An edge counts when exactly one endpoint lies strictly above `y`.
fn crossings(f: &BuildingFootprint, y: f64, out: &mut Vec<f64>) {
    out.clear();
    for ring in f.rings() {
        let n = ring.len();
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (ring[i], ring[j]);
            if (a.y > y) != (b.y > y) {
                out.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
            }
            j = i;
        }
    }
    out.sort_by(f64::total_cmp);
}

/// Even-odd membership of a point, holes included. A point exactly on a left
/// or bottom edge is inside; on a right or top edge it is outside.
pub fn point_in_footprint(f: &BuildingFootprint, p: Point) -> bool {
    let mut xs = Vec::new();
    crossings(f, p.y, &mut xs);
    let right = xs.len() - xs.partition_point(|&x| x <= p.x);
    right % 2 == 1
}

/// Burns footprints into a mask on `template`'s grid by cell-center sampling.
///
/// Overlaps form a union; each built cell is owned by the highest id that
/// covers it. Footprints whose bounding box misses the extent produce a
/// warning rather than an error.
pub fn rasterize(
    footprints: &[BuildingFootprint],
    template: &Raster,
) -> Result<(FootprintMask, Vec<Warning>)> {
    let (w, h) = (template.width(), template.height());
    let cs = template.cell_size();
    let (ox, oy) = (template.origin_x(), template.origin_y());
    let mut ids = vec![0u64; w * h];
    let mut warnings = Vec::new();
    let mut xs = Vec::new();

    // Cell index range whose centers may fall in [lo, hi]; padded by one cell.
    let span = |lo: f64, hi: f64, origin: f64, n: usize| -> Option<(usize, usize)> {
        let first = ((lo - origin) / cs - 0.5).floor() - 1.0;
        let last = ((hi - origin) / cs - 0.5).ceil() + 1.0;
        if last < 0.0 || first > (n - 1) as f64 {
            return None;
        }
        Some((first.max(0.0) as usize, (last.min((n - 1) as f64)) as usize))
    };

    for f in footprints {
        let (x0, y0, x1, y1) = f.bbox();
        let (Some((c0, c1)), Some((r0, r1))) = (span(x0, x1, ox, w), span(y0, y1, oy, h)) else {
            warnings.push(Warning::FootprintOutside { id: f.id() });
            continue;
        };
        for row in r0..=r1 {
            let (_, y) = template.cell_center(row, 0);
            crossings(f, y, &mut xs);
            if xs.is_empty() {
                continue;
            }
            let mut k = 0;
            for col in c0..=c1 {
                let (x, _) = template.cell_center(row, col);
                while k < xs.len() && xs[k] <= x {
                    k += 1;
                }
                if (xs.len() - k) % 2 == 1 {
                    let owner = &mut ids[row * w + col];
                    *owner = (*owner).max(f.id());
                }
            }
        }
    }

    let values = ids.iter().map(|&id| if id != 0 { 1.0 } else { 0.0 }).collect();
    let raster = template.with_values(values)?;
    Ok((FootprintMask { raster, source_ids: ids }, warnings))
}
