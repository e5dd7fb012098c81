//! Building footprint polygons in planar meter coordinates.

mod geojson;
mod rasterize;

pub use geojson::{
    parse_feature_collection, read_footprints, render_feature_collection, write_footprints,
    Feature,
};
pub use rasterize::{point_in_footprint, rasterize, FootprintMask};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

/// A validated footprint: simple exterior ring with optional holes.
///
/// Rings are stored open (the closing edge back to the first vertex is
/// implicit). Ids must be nonzero; zero means "no building" in masks.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingFootprint {
    id: u64,
    exterior: Vec<Point>,
    holes: Vec<Vec<Point>>,
}

impl BuildingFootprint {
    pub fn new(id: u64, exterior: Vec<Point>, holes: Vec<Vec<Point>>) -> Result<Self> {
        let geom = |message: String| Error::Geometry { id, message };
        if id == 0 {
            return Err(geom("id 0 is reserved for empty mask cells".into()));
        }
        let exterior = normalize_ring(exterior).map_err(|m| geom(format!("exterior: {m}")))?;
        let holes = holes
            .into_iter()
            .enumerate()
            .map(|(i, h)| normalize_ring(h).map_err(|m| geom(format!("hole {i}: {m}"))))
            .collect::<Result<Vec<_>>>()?;

        if let Some((a, b)) = self_intersection(&exterior) {
            return Err(geom(format!("exterior edges {a} and {b} intersect")));
        }
        for (i, hole) in holes.iter().enumerate() {
            if let Some((a, b)) = self_intersection(hole) {
                return Err(geom(format!("hole {i} edges {a} and {b} intersect")));
            }
            if !hole.iter().all(|p| inside_ring(&exterior, *p)) {
                return Err(geom(format!("hole {i} is not inside the exterior")));
            }
        }
        let f = Self { id, exterior, holes };
        let area = f.area();
        if !(area > 0.0) {
            return Err(geom(format!("zero or negative area {area}")));
        }
        Ok(f)
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rectangle(id: u64, x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(
            id,
            vec![
                Point::new(x0, y0),
                Point::new(x1, y0),
                Point::new(x1, y1),
                Point::new(x0, y1),
            ],
            Vec::new(),
        )
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn exterior(&self) -> &[Point] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<Point>] {
        &self.holes
    }

    pub fn rings(&self) -> impl Iterator<Item = &[Point]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(Vec::as_slice))
    }

    /// Same footprint with a different id.
    pub fn with_id(&self, id: u64) -> Result<Self> {
        Self::new(id, self.exterior.clone(), self.holes.clone())
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<Self> {
        let shift = |r: &[Point]| r.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect();
        Self::new(
            self.id,
            shift(&self.exterior),
            self.holes.iter().map(|h| shift(h)).collect(),
        )
    }

    /// `(min_x, min_y, max_x, max_y)` of the exterior ring.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        self.exterior.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(x0, y0, x1, y1), p| (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
        )
    }

    pub fn area(&self) -> f64 {
        polygon_area(self)
    }

    pub fn perimeter(&self) -> f64 {
        polygon_perimeter(self)
    }
}

fn normalize_ring(mut ring: Vec<Point>) -> std::result::Result<Vec<Point>, String> {
    if ring.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err("non-finite coordinate".into());
    }
    ring.dedup();
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err(format!("needs at least 3 distinct vertices, got {}", ring.len()));
    }
    Ok(ring)
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_touch(a: Point, b: Point, c: Point, d: Point) -> bool {
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// First pair of intersecting edges, checking every non-adjacent pair and
/// adjacent pairs that fold back onto each other.
fn self_intersection(ring: &[Point]) -> Option<(usize, usize)> {
    let n = ring.len();
    let edge = |i: usize| (ring[i], ring[(i + 1) % n]);
    for i in 0..n {
        let (a, b) = edge(i);
        // adjacent edge sharing vertex b: reject a collinear fold-back
        let c = ring[(i + 2) % n];
        if orient(a, b, c) == 0.0 && (b.x - a.x) * (c.x - b.x) + (b.y - a.y) * (c.y - b.y) < 0.0 {
            return Some((i, (i + 1) % n));
        }
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (c, d) = edge(j);
            if segments_touch(a, b, c, d) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Crossing-number test (even-odd rule) against one ring.
fn inside_ring(ring: &[Point], p: Point) -> bool {
    let mut inside = false;
    let n = ring.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y) {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Signed shoelace area, computed relative to the first vertex.
fn ring_signed_area(ring: &[Point]) -> f64 {
    let o = ring[0];
    let mut twice = 0.0;
    for i in 0..ring.len() {
        let a = ring[i];
        let b = ring[(i + 1) % ring.len()];
        twice += (a.x - o.x) * (b.y - o.y) - (b.x - o.x) * (a.y - o.y);
    }
    twice / 2.0
}

fn ring_length(ring: &[Point]) -> f64 {
    (0..ring.len())
        .map(|i| {
            let a = ring[i];
            let b = ring[(i + 1) % ring.len()];
            (b.x - a.x).hypot(b.y - a.y)
        })
        .sum()
}

/// Signed area and area-weighted centroid of a ring.
fn ring_moments(ring: &[Point]) -> (f64, Point) {
    let o = ring[0];
    let (mut a2, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..ring.len() {
        let p = ring[i];
        let q = ring[(i + 1) % ring.len()];
        let (px, py, qx, qy) = (p.x - o.x, p.y - o.y, q.x - o.x, q.y - o.y);
        let cross = px * qy - qx * py;
        a2 += cross;
        cx += (px + qx) * cross;
        cy += (py + qy) * cross;
    }
    let area = a2 / 2.0;
    (area, Point::new(o.x + cx / (3.0 * a2), o.y + cy / (3.0 * a2)))
}

/// Exterior area minus hole areas, in square meters.
pub fn polygon_area(f: &BuildingFootprint) -> f64 {
    ring_signed_area(&f.exterior).abs()
        - f.holes.iter().map(|h| ring_signed_area(h).abs()).sum::<f64>()
}

/// Total length of exterior and hole rings.
pub fn polygon_perimeter(f: &BuildingFootprint) -> f64 {
    f.rings().map(ring_length).sum()
}

/// Area-weighted centroid with holes subtracted.
pub fn centroid(f: &BuildingFootprint) -> Result<Point> {
    let (ea, ec) = ring_moments(&f.exterior);
    let ea = ea.abs();
    let (mut area, mut mx, mut my) = (ea, ea * ec.x, ea * ec.y);
    for hole in &f.holes {
        let (ha, hc) = ring_moments(hole);
        let ha = ha.abs();
        area -= ha;
        mx -= ha * hc.x;
        my -= ha * hc.y;
    }
    if !(area > 0.0) {
        return Err(Error::Geometry {
            id: f.id,
            message: "degenerate ring has no centroid".into(),
        });
    }
    Ok(Point::new(mx / area, my / area))
}

/// Width of the exterior ring seen by a wind blowing from `wind_direction`
/// degrees (meteorological: 0 = from north, 90 = from east).
///
/// Vertices are projected onto the horizontal axis perpendicular to the wind
/// and the projection's extent is returned.
pub fn projected_width(f: &BuildingFootprint, wind_direction: f64) -> f64 {
    let theta = wind_direction.to_radians();
    let (ax, ay) = (theta.cos(), -theta.sin());
    let (lo, hi) = f
        .exterior
        .iter()
        .map(|p| p.x * ax + p.y * ay)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    hi - lo
}
