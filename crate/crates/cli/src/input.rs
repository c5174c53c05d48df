use std::path::Path;
use std::sync::Arc;

use sae_core::models::ResponseKind;
use sae_core::params::{AreaDataset, AreaDesign};

use crate::error::CliError;

/// An observed dataset with the area ids from the first column.
#[derive(Debug, Clone, PartialEq)]
pub struct InputData {
    pub areas: Vec<String>,
    pub data: AreaDataset,
}

/// Reads `area,y,s[,x1..xp]` (continuous responses) or `area,y,n[,x1..xp]`
/// (counts). With no covariate columns the design is intercept-free; add an
/// `x1` column of ones for an intercept.
pub fn read_input(path: &Path, kind: ResponseKind) -> Result<InputData, CliError> {
    let err = |line: u64, message: String| CliError::Input {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let header = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let known = match kind {
        ResponseKind::Continuous => "s",
        ResponseKind::Discrete => "n",
    };
    if header.len() < 3 || &header[0] != "area" || &header[1] != "y" || &header[2] != known {
        return Err(err(1, format!("header must start with `area,y,{known}`")));
    }
    for (j, name) in header.iter().enumerate().skip(3) {
        let want = format!("x{}", j - 2);
        if name != want {
            return Err(err(
                1,
                format!("column {} must be named `{want}`, found `{name}`", j + 1),
            ));
        }
    }

    let mut areas = Vec::new();
    let mut designs = Vec::new();
    let mut y = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row as u64 + 2;
        let record = record.map_err(|e| err(line, e.to_string()))?;
        let num = |j: usize| -> Result<f64, CliError> {
            let v: f64 = record[j]
                .parse()
                .map_err(|_| err(line, format!("{}: `{}` is not a number", &header[j], &record[j])))?;
            if !v.is_finite() {
                return Err(err(line, format!("{}: must be finite", &header[j])));
            }
            Ok(v)
        };
        let yi = num(1)?;
        let k = num(2)?;
        if k <= 0.0 {
            return Err(err(line, format!("{known}: must be positive, got {k}")));
        }
        if kind == ResponseKind::Discrete {
            if k.fract() != 0.0 {
                return Err(err(line, format!("n: must be an integer, got {k}")));
            }
            if yi.fract() != 0.0 || yi < 0.0 || yi > k {
                return Err(err(line, format!("y: must be an integer count in [0, {k}], got {yi}")));
            }
        }
        let x = (3..record.len()).map(num).collect::<Result<Vec<_>, _>>()?;
        areas.push(record[0].to_string());
        designs.push(AreaDesign::new(x, k).map_err(|e| err(line, e.to_string()))?);
        y.push(yi);
    }
    let data = AreaDataset::new(Arc::from(designs), y).map_err(|e| err(1, e.to_string()))?;
    Ok(InputData { areas, data })
}
