//! Dataset loaders and the synthetic logistic data generator.
//!
//! All files are UTF-8 CSV with a header row and `.` decimal separator.
//! Schemas:
//! - `mammal.csv`: species, body_kg, brain_g — model: log brain on
//!   [1, log body].
//! - `stackloss.csv`: air_flow, water_temp, acid_conc, stack_loss —
//!   model: stack_loss on [air_flow, water_temp, acid_conc, 1].
//! - `leukemia.csv`: time_weeks, wbc, ag — outcome 1{time >= 50},
//!   covariates [wbc / 1e4, ag], prior N(0, 10 I). The white-cell count
//!   is rescaled so the coefficients are O(1).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, UpsError};
use crate::models::linear::LinearModel;
use crate::models::logistic::{expit, LogisticModel};

fn read_csv(path: &Path, columns: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UpsError::Io(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < columns {
            return Err(UpsError::Io(format!(
                "{} line {}: expected {columns} columns, got {}",
                path.display(),
                i + 1,
                fields.len()
            )));
        }
        // Numeric fields are the trailing `columns` entries, so a leading
        // label column (mammal species) is skipped.
        let start = fields.len() - columns;
        let row: std::result::Result<Vec<f64>, _> = fields[start..]
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect();
        rows.push(row.map_err(|e| {
            UpsError::Io(format!("{} line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(rows)
}

/// Brain weight regression: log brain_g on [1, log body_kg], n = 62.
pub fn load_mammal(path: &Path) -> Result<LinearModel> {
    let rows = read_csv(path, 2)?;
    let n = rows.len();
    let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { rows[i][0].ln() });
    let y = DVector::from_fn(n, |i, _| rows[i][1].ln());
    LinearModel::new(design, y)
}

/// Stack-loss regression: stack_loss on [air_flow, water_temp,
/// acid_conc, 1], n = 21.
pub fn load_stackloss(path: &Path) -> Result<LinearModel> {
    let rows = read_csv(path, 4)?;
    let n = rows.len();
    let design = DMatrix::from_fn(n, 4, |i, j| if j == 3 { 1.0 } else { rows[i][j] });
    let y = DVector::from_fn(n, |i, _| rows[i][3]);
    LinearModel::new(design, y)
}

/// Leukemia survival classification: outcome 1{time >= 50 weeks} on
/// [wbc / 1e4, ag] with prior N(0, 10 I), n = 31.
pub fn load_leukemia(path: &Path) -> Result<LogisticModel> {
    let rows = read_csv(path, 3)?;
    let n = rows.len();
    let design = DMatrix::from_fn(n, 2, |i, j| {
        if j == 0 {
            rows[i][1] / 1e4
        } else {
            rows[i][2]
        }
    });
    let y = DVector::from_fn(n, |i, _| if rows[i][0] >= 50.0 { 1.0 } else { 0.0 });
    LogisticModel::new(
        design,
        y,
        DVector::zeros(2),
        DMatrix::identity(2, 2) * 10.0,
    )
}

/// Synthetic logistic regression data: n = 1000 observations on p = 7
/// standard-normal covariates with true coefficients
/// (0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6), prior N(0, 10 I).
pub fn synthetic_logistic(rng: &mut dyn RngCore) -> LogisticModel {
    let (n, p) = (1000, 7);
    let beta_star = DVector::from_fn(p, |j, _| j as f64 * 0.1);
    let design = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut *rng));
    let eta = &design * &beta_star;
    let y = DVector::from_fn(n, |i, _| {
        if rng.gen::<f64>() < expit(eta[i]) {
            1.0
        } else {
            0.0
        }
    });
    LogisticModel::new(
        design,
        y,
        DVector::zeros(p),
        DMatrix::identity(p, p) * 10.0,
    )
    .expect("synthetic data is always well-formed")
}

/// Path to a bundled dataset file.
pub fn bundled(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}
