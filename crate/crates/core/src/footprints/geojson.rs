//! GeoJSON FeatureCollection of Polygons with planar meter coordinates.
//!
//! Every feature needs an integer `id` property (≥ 1). Other properties are
//! carried through untouched in [`Feature::properties`].

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{BuildingFootprint, Point};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub footprint: BuildingFootprint,
    pub properties: Map<String, Value>,
}

fn err(feature: impl Into<String>, message: impl Into<String>) -> Error {
    Error::GeoJson {
        feature: feature.into(),
        message: message.into(),
    }
}

fn parse_ring(v: &Value, label: &str) -> Result<Vec<Point>> {
    let coords = v
        .as_array()
        .ok_or_else(|| err(label, "ring is not an array"))?;
    coords
        .iter()
        .map(|c| match c.as_array().map(Vec::as_slice) {
            Some([x, y, ..]) => match (x.as_f64(), y.as_f64()) {
                (Some(x), Some(y)) => Ok(Point::new(x, y)),
                _ => Err(err(label, "coordinate is not numeric")),
            },
            _ => Err(err(label, "coordinate must be [x, y]")),
        })
        .collect()
}

fn feature_id(props: &Map<String, Value>, index: usize) -> Result<u64> {
    let label = format!("#{index}");
    let v = props
        .get("id")
        .ok_or_else(|| err(&label, "missing required `id` property"))?;
    match v.as_u64() {
        Some(id) if id > 0 => Ok(id),
        _ => Err(err(label, format!("`id` must be a positive integer, got {v}"))),
    }
}

pub fn parse_feature_collection(text: &str) -> Result<Vec<Feature>> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Format {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(err("collection", "top level must be a FeatureCollection"));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| err("collection", "missing `features` array"))?;

    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(features.len());
    for (index, feat) in features.iter().enumerate() {
        let props = feat
            .get("properties")
            .and_then(Value::as_object)
            .cloned()
            .unwrap_or_default();
        let id = feature_id(&props, index)?;
        let label = format!("id={id}");
        if !seen.insert(id) {
            return Err(err(label, "duplicate id"));
        }
        let geom = feat
            .get("geometry")
            .ok_or_else(|| err(&label, "missing geometry"))?;
        if geom.get("type").and_then(Value::as_str) != Some("Polygon") {
            return Err(err(&label, "geometry must be a Polygon"));
        }
        let rings = geom
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| err(&label, "missing coordinates"))?;
        let (exterior, holes) = rings
            .split_first()
            .ok_or_else(|| err(&label, "polygon has no rings"))?;
        let exterior = parse_ring(exterior, &label)?;
        let holes = holes
            .iter()
            .map(|h| parse_ring(h, &label))
            .collect::<Result<Vec<_>>>()?;
        let footprint = BuildingFootprint::new(id, exterior, holes)?;
        out.push(Feature {
            footprint,
            properties: props,
        });
    }
    Ok(out)
}

fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    if line == 0 {
        return 0;
    }
    let start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (start + column.saturating_sub(1)) as u64
}

fn ring_json(ring: &[Point]) -> Value {
    let mut coords: Vec<Value> = ring.iter().map(|p| json!([p.x, p.y])).collect();
    coords.push(json!([ring[0].x, ring[0].y]));
    Value::Array(coords)
}

/// Deterministic pretty-printed FeatureCollection; `id` is always written.
pub fn render_feature_collection(features: &[Feature]) -> String {
    let feats: Vec<Value> = features
        .iter()
        .map(|f| {
            let mut props = f.properties.clone();
            props.insert("id".into(), json!(f.footprint.id()));
            let rings: Vec<Value> = f.footprint.rings().map(ring_json).collect();
            json!({
                "type": "Feature",
                "properties": props,
                "geometry": { "type": "Polygon", "coordinates": rings },
            })
        })
        .collect();
    let root = json!({ "type": "FeatureCollection", "features": feats });
    let mut s = serde_json::to_string_pretty(&root).expect("JSON values always serialize");
    s.push('\n');
    s
}

pub fn read_footprints(path: impl AsRef<Path>) -> Result<Vec<BuildingFootprint>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_feature_collection(&text)?
        .into_iter()
        .map(|f| f.footprint)
        .collect())
}

pub fn write_footprints(path: impl AsRef<Path>, footprints: &[BuildingFootprint]) -> Result<()> {
    let path = path.as_ref();
    let features: Vec<Feature> = footprints
        .iter()
        .map(|f| Feature {
            footprint: f.clone(),
            properties: Map::new(),
        })
        .collect();
    fs::write(path, render_feature_collection(&features)).map_err(|e| Error::io(path, e))
}
