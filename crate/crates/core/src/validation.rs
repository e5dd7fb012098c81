//! Error metrics between predicted and reference UCP grids and CSV exports
//! for external plotting.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ucp::{number_label, UcpCell, UcpGrid};

/// Matched values with the UCP cell each pair came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairedSeries {
    pub predicted: Vec<f64>,
    pub reference: Vec<f64>,
    pub ids: Vec<(usize, usize)>,
}

impl PairedSeries {
    pub fn new(predicted: Vec<f64>, reference: Vec<f64>) -> Result<Self> {
        let ids = (0..predicted.len()).map(|i| (0, i)).collect();
        Self::with_ids(predicted, reference, ids)
    }

    pub fn with_ids(predicted: Vec<f64>, reference: Vec<f64>, ids: Vec<(usize, usize)>) -> Result<Self> {
        if predicted.len() != reference.len() || ids.len() != predicted.len() {
            return Err(Error::Shape(format!(
                "series lengths differ: {} predicted, {} reference, {} ids",
                predicted.len(),
                reference.len(),
                ids.len()
            )));
        }
        if predicted.iter().chain(&reference).any(|v| !v.is_finite()) {
            return Err(Error::Input("series holds non-finite values".into()));
        }
        Ok(Self {
            predicted,
            reference,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }
}

pub fn rmse(s: &PairedSeries) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::Empty("RMSE of an empty series".into()));
    }
    let sum: f64 = s
        .predicted
        .iter()
        .zip(&s.reference)
        .map(|(p, r)| (p - r) * (p - r))
        .sum();
    Ok((sum / s.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mape {
    /// Percent.
    pub value: f64,
    /// Pairs used.
    pub n: usize,
    /// Pairs dropped because `|reference| < min_reference`.
    pub excluded: usize,
}

/// Mean absolute percentage error over pairs with `|reference| ≥ min_reference`.
pub fn mape(s: &PairedSeries, min_reference: f64) -> Result<Mape> {
    let mut sum = 0.0;
    let mut n = 0;
    for (p, r) in s.predicted.iter().zip(&s.reference) {
        if r.abs() >= min_reference {
            sum += (p - r).abs() / r.abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty(format!(
            "no pairs with |reference| ≥ {min_reference} for MAPE"
        )));
    }
    Ok(Mape {
        value: 100.0 * sum / n as f64,
        n,
        excluded: s.len() - n,
    })
}

/// Names accepted by [`pair_grids`] for a grid.
pub fn field_names(grid: &UcpGrid) -> Vec<String> {
    let mut names: Vec<String> = [
        "mean_height",
        "std_height",
        "area_weighted_height",
        "lambda_p",
        "lambda_b",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for &d in &grid.wind_directions {
        names.push(format!("lambda_f_{}", number_label(d)));
    }
    names.push("fraction_below_5m".into());
    names.push("count".into());
    names
}

fn field_value(grid: &UcpGrid, cell: &UcpCell, field: &str) -> Option<f64> {
    Some(match field {
        "mean_height" => cell.mean_height,
        "std_height" => cell.std_height,
        "area_weighted_height" => cell.area_weighted_height,
        "lambda_p" => cell.lambda_p,
        "lambda_b" => cell.lambda_b,
        "fraction_below_5m" => cell.fraction_below_5m,
        "count" => cell.building_count as f64,
        other => {
            let d = other.strip_prefix("lambda_f_")?;
            let k = grid
                .wind_directions
                .iter()
                .position(|&w| number_label(w) == d)?;
            cell.lambda_f[k]
        }
    })
}

fn check_geometry(pred: &UcpGrid, reference: &UcpGrid) -> Result<()> {
    if pred.geometry != reference.geometry {
        return Err(Error::Alignment(format!(
            "grid geometries differ ({} m {}×{} vs {} m {}×{})",
            pred.geometry.resolution,
            pred.geometry.cols,
            pred.geometry.rows,
            reference.geometry.resolution,
            reference.geometry.cols,
            reference.geometry.rows
        )));
    }
    if pred.wind_directions != reference.wind_directions
        || pred.bin_width != reference.bin_width
        || pred.hist_cap != reference.hist_cap
    {
        return Err(Error::Alignment("grids use different directions or histogram bins".into()));
    }
    Ok(())
}

/// One field from every cell that is non-empty in at least one grid.
pub fn pair_grids(pred: &UcpGrid, reference: &UcpGrid, field: &str) -> Result<PairedSeries> {
    check_geometry(pred, reference)?;
    let cols = pred.geometry.cols;
    let mut s = PairedSeries::default();
    for (i, (p, r)) in pred.cells.iter().zip(&reference.cells).enumerate() {
        if p.is_empty() && r.is_empty() {
            continue;
        }
        let pv = field_value(pred, p, field)
            .ok_or_else(|| Error::Input(format!("unknown UCP field `{field}`")))?;
        let rv = field_value(reference, r, field).expect("same field set");
        s.predicted.push(pv);
        s.reference.push(rv);
        s.ids.push((i / cols, i % cols));
    }
    PairedSeries::with_ids(s.predicted, s.reference, s.ids)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldMetrics {
    pub field: String,
    pub n: usize,
    pub rmse: f64,
    /// `None` when every reference value is below the MAPE threshold.
    pub mape: Option<f64>,
    pub excluded: usize,
}

/// RMSE and MAPE of one field.
pub fn field_metrics(s: &PairedSeries, field: &str, min_reference: f64) -> Result<FieldMetrics> {
    let rmse = rmse(s)?;
    let (mape, excluded) = match mape(s, min_reference) {
        Ok(m) => (Some(m.value), m.excluded),
        Err(Error::Empty(_)) => (None, s.len()),
        Err(e) => return Err(e),
    };
    Ok(FieldMetrics {
        field: field.to_string(),
        n: s.len(),
        rmse,
        mape,
        excluded,
    })
}

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `scatter_{field}.csv` for every field, `metrics.csv` and
/// `histogram_comparison.csv` into `out_dir`; returns the metrics rows.
///
/// Fields without any paired cell get a header-only scatter file and no
/// metrics row.
pub fn export_comparison(
    pred: &UcpGrid,
    reference: &UcpGrid,
    out_dir: impl AsRef<Path>,
    min_reference: f64,
) -> Result<Vec<FieldMetrics>> {
    let out_dir = out_dir.as_ref();
    check_geometry(pred, reference)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut metrics = Vec::new();
    for field in field_names(pred) {
        let s = pair_grids(pred, reference, &field)?;
        let mut text = String::from("cell_row,cell_col,predicted,reference\n");
        for ((&(r, c), p), q) in s.ids.iter().zip(&s.predicted).zip(&s.reference) {
            text.push_str(&format!("{r},{c},{p},{q}\n"));
        }
        write(&out_dir.join(format!("scatter_{field}.csv")), text)?;
        if !s.is_empty() {
            metrics.push(field_metrics(&s, &field, min_reference)?);
        }
    }

    let mut text = String::from("field,n,rmse,mape,excluded\n");
    for m in &metrics {
        let mape = m.mape.map_or_else(|| "nan".to_string(), |v| v.to_string());
        text.push_str(&format!("{},{},{},{mape},{}\n", m.field, m.n, m.rmse, m.excluded));
    }
    write(&out_dir.join("metrics.csv"), text)?;

    let cols = pred.geometry.cols;
    let mut text =
        String::from("cell_row,cell_col,bin,bin_lower_m,predicted_fraction,reference_fraction\n");
    for (i, (p, r)) in pred.cells.iter().zip(&reference.cells).enumerate() {
        if p.building_count == 0 && r.building_count == 0 {
            continue;
        }
        for (k, (pf, rf)) in p.histogram.iter().zip(&r.histogram).enumerate() {
            let lower = k as f64 * pred.bin_width;
            text.push_str(&format!(
                "{},{},{k},{},{pf},{rf}\n",
                i / cols,
                i % cols,
                lower.min(pred.hist_cap)
            ));
        }
    }
    write(&out_dir.join("histogram_comparison.csv"), text)?;
    Ok(metrics)
}
