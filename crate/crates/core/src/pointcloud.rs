//! Pre-labeled point clouds to 1-m elevation rasters and the reference nDSM.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{clamp_nonnegative, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Ground,
    Building,
    Other,
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ground" => Ok(Label::Ground),
            "building" => Ok(Label::Building),
            "other" => Ok(Label::Other),
            other => Err(Error::Input(format!("unknown point label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub label: Label,
}

/// Axis-aligned bounding box `(min_x, min_y, max_x, max_y)`.
pub type Extent = (f64, f64, f64, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<LabeledPoint>,
    extent: Extent,
}

impl PointCloud {
    pub fn new(points: Vec<LabeledPoint>) -> Result<Self> {
        if let Some(p) = points
            .iter()
            .find(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(Error::Input(format!("non-finite point {p:?}")));
        }
        let extent = points.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(x0, y0, x1, y1), p| (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
        );
        Ok(Self { points, extent })
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    /// Bounding box; infinite (inverted) for an empty cloud.
    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct CsvRow {
    x: f64,
    y: f64,
    z: f64,
    label: String,
}

/// Reads a `x,y,z,label` CSV.
pub fn read_points_csv(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(&e))?
        .iter()
        .map(str::trim)
        .collect::<Vec<_>>();
    if headers != ["x", "y", "z", "label"] {
        return Err(Error::format(0, format!("expected header x,y,z,label, got {headers:?}")));
    }
    let mut points = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row.map_err(|e| csv_error(&e))?;
        points.push(LabeledPoint {
            x: row.x,
            y: row.y,
            z: row.z,
            label: row.label.parse()?,
        });
    }
    PointCloud::new(points)
}

fn csv_error(e: &csv::Error) -> Error {
    let offset = e.position().map(|p| p.byte()).unwrap_or(0);
    Error::format(offset, e.to_string())
}

pub fn write_points_csv(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let io_err = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    for p in &pc.points {
        let label = match p.label {
            Label::Ground => "ground",
            Label::Building => "building",
            Label::Other => "other",
        };
        w.serialize(CsvRow {
            x: p.x,
            y: p.y,
            z: p.z,
            label: label.into(),
        })
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// Mean z per cell of points passing `filter`; `None` when no point passes at all.
fn bin_mean(pc: &PointCloud, labels: &[Label], template: &Raster) -> Option<Raster> {
    let n = template.len();
    let mut sum = vec![0.0f64; n];
    let mut count = vec![0u32; n];
    let mut any = false;
    for p in pc.points.iter().filter(|p| labels.contains(&p.label)) {
        any = true;
        if let Some((r, c)) = template.cell_of(p.x, p.y) {
            let i = template.index(r, c);
            sum[i] += p.z;
            count[i] += 1;
        }
    }
    if !any {
        return None;
    }
    let nodata = template.nodata();
    let values = sum
        .iter()
        .zip(&count)
        .map(|(&s, &k)| if k == 0 { nodata } else { (s / k as f64) as f32 })
        .collect();
    Some(template.with_values(values).expect("template grid is valid"))
}

/// Mean elevation of the points whose label is in `labels`, per template cell.
///
/// Cells with no such point are nodata. Accumulation is 64-bit in input order.
pub fn grid_elevation(pc: &PointCloud, labels: &[Label], template: &Raster) -> Result<Raster> {
    bin_mean(pc, labels, template).ok_or_else(|| {
        Error::EmptyCloud(format!("no points with labels {labels:?}"))
    })
}

/// Gives every nodata cell the value of the nearest valid cell.
///
/// Distance is Euclidean between cell centers; ties go to the donor that
/// comes first in row-major order. Search proceeds in square rings of
/// growing radius and stops once the ring cannot hold a closer donor.
pub fn fill_voids_nearest(r: &Raster) -> Result<Raster> {
    let (w, h) = (r.width(), r.height());
    let nodata = r.nodata();
    let vals = r.values();
    if vals.iter().all(|&v| v == nodata) {
        return Err(Error::EmptyStatistics("cannot fill a raster with no valid cells".into()));
    }
    let max_radius = w.max(h) as i64;

    let nearest = |row: usize, col: usize| -> usize {
        let (row, col) = (row as i64, col as i64);
        let mut best: Option<(i64, usize)> = None;
        let consider = |rr: i64, cc: i64, best: &mut Option<(i64, usize)>| {
            if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                return;
            }
            let idx = rr as usize * w + cc as usize;
            if vals[idx] == nodata {
                return;
            }
            let d2 = (rr - row).pow(2) + (cc - col).pow(2);
            if best.is_none_or(|b| (d2, idx) < b) {
                *best = Some((d2, idx));
            }
        };
        for k in 1..=max_radius {
            if best.is_some_and(|(d2, _)| k * k > d2) {
                break;
            }
            for cc in col - k..=col + k {
                consider(row - k, cc, &mut best);
                consider(row + k, cc, &mut best);
            }
            for rr in row - k + 1..row + k {
                consider(rr, col - k, &mut best);
                consider(rr, col + k, &mut best);
            }
        }
        best.expect("at least one valid cell exists").1
    };

    let out: Vec<f32> = (0..h)
        .into_par_iter()
        .flat_map_iter(|row| {
            (0..w).map(move |col| {
                let v = vals[row * w + col];
                if v != nodata {
                    v
                } else {
                    vals[nearest(row, col)]
                }
            })
        })
        .collect();
    r.with_values(out)
}

/// Building DSM minus void-filled ground DEM, clamped at zero.
///
/// Cells without building returns are 0 (no building), never nodata.
pub fn build_reference_ndsm(pc: &PointCloud, template: &Raster) -> Result<Raster> {
    let dem = fill_voids_nearest(&grid_elevation(pc, &[Label::Ground], template)?)?;
    let Some(dsm) = bin_mean(pc, &[Label::Building], template) else {
        return template.with_values(vec![0.0; template.len()]);
    };
    let nodata = dsm.nodata();
    let values = dsm
        .values()
        .iter()
        .zip(dem.values())
        .map(|(&s, &g)| if s == nodata { 0.0 } else { s - g })
        .collect();
    Ok(clamp_nonnegative(&template.with_values(values)?))
}
