//! Flat-roof buildings: one height per footprint from the predicted raster.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Map};

use crate::error::{Error, Result, Warning};
use crate::footprints::{
    parse_feature_collection, render_feature_collection, BuildingFootprint, Feature, FootprintMask,
};
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq)]
pub struct Lod1Building {
    pub footprint: BuildingFootprint,
    pub height: f32,
    pub n_cells: usize,
}

/// Reduction applied to a footprint's owned cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZonalReduction {
    #[default]
    Mean,
    Median,
}

/// Height per footprint from the cells the mask assigns to it.
///
/// Output is ordered by footprint id. Footprints owning no cells get height 0
/// and an [`Warning::EmptyZone`] record; nodata prediction cells are skipped.
pub fn assign_heights(
    pred: &Raster,
    mask: &FootprintMask,
    footprints: &[BuildingFootprint],
    reduction: ZonalReduction,
) -> Result<(Vec<Lod1Building>, Vec<Warning>)> {
    pred.ensure_aligned(&mask.raster, "footprint mask")?;
    let mut zones: BTreeMap<u64, Vec<f32>> =
        footprints.iter().map(|f| (f.id(), Vec::new())).collect();
    for (&id, &v) in mask.source_ids.iter().zip(pred.values()) {
        if id == 0 || pred.is_nodata(v) {
            continue;
        }
        if let Some(zone) = zones.get_mut(&id) {
            zone.push(v);
        }
    }

    let mut sorted: Vec<&BuildingFootprint> = footprints.iter().collect();
    sorted.sort_by_key(|f| f.id());
    let mut warnings = Vec::new();
    let buildings = sorted
        .into_iter()
        .map(|f| {
            let cells = &zones[&f.id()];
            if cells.is_empty() {
                warnings.push(Warning::EmptyZone { id: f.id() });
            }
            let h = match reduction {
                ZonalReduction::Mean => mean(cells),
                ZonalReduction::Median => median(cells),
            };
            Lod1Building {
                footprint: f.clone(),
                height: if h > 0.0 { h as f32 } else { 0.0 },
                n_cells: cells.len(),
            }
        })
        .collect();
    Ok((buildings, warnings))
}

fn mean(v: &[f32]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64
}

fn median(v: &[f32]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn render_lod1(buildings: &[Lod1Building]) -> String {
    let features: Vec<Feature> = buildings
        .iter()
        .map(|b| {
            let mut properties = Map::new();
            // f32 widened to f64 prints the shortest string that reparses to the same f32
            properties.insert("height_m".into(), json!(b.height as f64));
            properties.insert("n_cells".into(), json!(b.n_cells));
            Feature {
                footprint: b.footprint.clone(),
                properties,
            }
        })
        .collect();
    render_feature_collection(&features)
}

pub fn parse_lod1(text: &str) -> Result<Vec<Lod1Building>> {
    parse_feature_collection(text)?
        .into_iter()
        .map(|f| {
            let id = f.footprint.id();
            let bad = |message: &str| Error::GeoJson {
                feature: format!("id={id}"),
                message: message.into(),
            };
            let height = f
                .properties
                .get("height_m")
                .ok_or_else(|| bad("missing `height_m` property"))?
                .as_f64()
                .filter(|h| h.is_finite() && *h >= 0.0)
                .ok_or_else(|| bad("`height_m` must be a finite number ≥ 0"))?;
            let n_cells = match f.properties.get("n_cells") {
                None => 0,
                Some(v) => v
                    .as_u64()
                    .ok_or_else(|| bad("`n_cells` must be a non-negative integer"))?
                    as usize,
            };
            Ok(Lod1Building {
                footprint: f.footprint,
                height: height as f32,
                n_cells,
            })
        })
        .collect()
}

pub fn write_lod1(path: impl AsRef<Path>, buildings: &[Lod1Building]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_lod1(buildings)).map_err(|e| Error::io(path, e))
}

pub fn read_lod1(path: impl AsRef<Path>) -> Result<Vec<Lod1Building>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_lod1(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::footprints::rasterize;

    fn grid(w: usize, h: usize, values: Vec<f32>) -> Raster {
        Raster::new(w, h, 0.0, 0.0, 1.0, -9999.0, values).unwrap()
    }

    #[test]
    fn mean_of_owned_cells() {
        let pred = grid(3, 1, vec![10.0, 12.0, 11.0]);
        let fp = BuildingFootprint::rectangle(1, 0.0, 0.0, 3.0, 1.0).unwrap();
        let (mask, _) = rasterize(std::slice::from_ref(&fp), &pred).unwrap();
        let (b, w) = assign_heights(&pred, &mask, &[fp], ZonalReduction::Mean).unwrap();
        assert_eq!(b[0].height, 11.0);
        assert_eq!(b[0].n_cells, 3);
        assert!(w.is_empty());
    }

    #[test]
    fn median_option() {
        let pred = grid(3, 1, vec![10.0, 40.0, 11.0]);
        let fp = BuildingFootprint::rectangle(1, 0.0, 0.0, 3.0, 1.0).unwrap();
        let (mask, _) = rasterize(std::slice::from_ref(&fp), &pred).unwrap();
        let (b, _) = assign_heights(&pred, &mask, &[fp], ZonalReduction::Median).unwrap();
        assert_eq!(b[0].height, 11.0);
    }

    #[test]
    fn outside_footprint_gets_zero_and_warning() {
        let pred = grid(2, 2, vec![5.0; 4]);
        let fp = BuildingFootprint::rectangle(7, 10.0, 10.0, 12.0, 12.0).unwrap();
        let (mask, _) = rasterize(std::slice::from_ref(&fp), &pred).unwrap();
        let (b, w) = assign_heights(&pred, &mask, &[fp], ZonalReduction::Mean).unwrap();
        assert_eq!((b[0].height, b[0].n_cells), (0.0, 0));
        assert_eq!(w, vec![Warning::EmptyZone { id: 7 }]);
    }

    #[test]
    fn output_sorted_by_id() {
        let pred = grid(4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let fps = vec![
            BuildingFootprint::rectangle(9, 2.0, 0.0, 4.0, 1.0).unwrap(),
            BuildingFootprint::rectangle(3, 0.0, 0.0, 2.0, 1.0).unwrap(),
        ];
        let (mask, _) = rasterize(&fps, &pred).unwrap();
        let (b, _) = assign_heights(&pred, &mask, &fps, ZonalReduction::Mean).unwrap();
        let got: Vec<(u64, f32)> = b.iter().map(|b| (b.footprint.id(), b.height)).collect();
        assert_eq!(got, vec![(3, 1.5), (9, 3.5)]);
    }

    #[test]
    fn missing_height_names_feature() {
        let text = r#"{"type":"FeatureCollection","features":[
          {"type":"Feature","properties":{"id":4},
           "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,0]]]}}]}"#;
        match parse_lod1(text) {
            Err(Error::GeoJson { feature, .. }) => assert_eq!(feature, "id=4"),
            other => panic!("{other:?}"),
        }
    }
}
