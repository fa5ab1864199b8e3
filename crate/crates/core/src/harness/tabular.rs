use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::RegressionDataset;

/// Response transform applied on load.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Identity,
    /// `y -> ln(1 + y)`, e.g. for comment counts.
    Log1p,
}

impl Transform {
    pub fn apply(self, y: f64) -> f64 {
        match self {
            Transform::Identity => y,
            Transform::Log1p => y.ln_1p(),
        }
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "none" => Ok(Transform::Identity),
            "log1p" => Ok(Transform::Log1p),
            other => Err(Error::invalid(format!("unknown transform `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TabularData {
    pub dataset: RegressionDataset,
    pub feature_names: Vec<String>,
    /// Rows skipped because a cell was missing or non-finite.
    pub dropped_rows: usize,
}

/// Reads a headed CSV whose cells are all numeric. Every column other than
/// `response_column` becomes a feature, in file order. Empty cells, NaN and
/// infinities drop the row; anything unparsable is an error.
pub fn load_tabular(path: impl AsRef<Path>, response_column: &str, transform: Transform) -> Result<TabularData> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let response_idx = headers
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| Error::MissingColumn(response_column.to_owned()))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != response_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if feature_names.is_empty() {
        return Err(Error::invalid("CSV has no feature columns"));
    }

    let mut features = Vec::new();
    let mut responses = Vec::new();
    let mut dropped_rows = 0;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(feature_names.len());
        let mut response = f64::NAN;
        for (col, cell) in record.iter().enumerate() {
            let value = if cell.is_empty() {
                f64::NAN
            } else {
                cell.parse::<f64>().map_err(|_| Error::NonNumeric {
                    row: row_idx + 1,
                    column: headers[col].clone(),
                    value: cell.to_owned(),
                })?
            };
            if col == response_idx {
                response = transform.apply(value);
            } else {
                row.push(value);
            }
        }
        if response.is_finite() && row.iter().all(|v| v.is_finite()) {
            features.extend(row);
            responses.push(response);
        } else {
            dropped_rows += 1;
        }
    }
    if responses.is_empty() {
        return Err(Error::NoUsableRows(path.to_owned()));
    }
    let n = responses.len();
    let x = DMatrix::from_row_slice(n, feature_names.len(), &features);
    Ok(TabularData {
        dataset: RegressionDataset::new(x, DVector::from_vec(responses))?,
        feature_names,
        dropped_rows,
    })
}

/// Reads the named columns, in the given order, as a feature matrix. Used for
/// prediction-time files that may lack a response column. Every cell must be
/// a finite number.
pub fn load_features(path: impl AsRef<Path>, columns: &[String]) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let idx = columns
        .iter()
        .map(|c| headers.iter().position(|h| h == c).ok_or_else(|| Error::MissingColumn(c.clone())))
        .collect::<Result<Vec<usize>>>()?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        for (&col, name) in idx.iter().zip(columns) {
            let cell = record.get(col).unwrap_or("");
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::NonNumeric {
                        row: row_idx + 1,
                        column: name.clone(),
                        value: cell.to_owned(),
                    })
                }
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::NoUsableRows(path.to_owned()));
    }
    Ok(DMatrix::from_row_slice(rows, columns.len(), &values))
}

/// Writes `x0, ..., x{p-1}, y` with shortest round-trip float formatting.
pub fn write_dataset_csv<W: Write>(data: &RegressionDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..data.dim()).map(|k| format!("x{k}")).collect();
    header.push("y".to_owned());
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(data.dim() + 1);
    for i in 0..data.len() {
        record.clear();
        record.extend(data.features().row(i).iter().map(|v| v.to_string()));
        record.push(data.responses()[i].to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
