//! Regressors: leaf-wise gradient boosting, linear least squares and the
//! average/random baselines.

pub mod baseline;
pub mod gbm;
pub mod linear;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use baseline::{baseline_average, baseline_random, AveragePredictor, RandomPredictor};
pub use gbm::{feature_importance, fit_gbm, predict_gbm, top_k_features, GbmModel, GbmParams};
pub use linear::{fit_linear, predict_linear, LinearModel};

/// Per-column training medians used to fill missing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    pub medians: Vec<f64>,
}

impl Imputer {
    /// Medians of the observed values per column; a column with no
    /// observations gets 0.
    pub fn fit(x: &[Vec<Option<f64>>], n_cols: usize) -> Result<Self> {
        let mut medians = Vec::with_capacity(n_cols);
        for j in 0..n_cols {
            let mut col: Vec<f64> = Vec::with_capacity(x.len());
            for (i, row) in x.iter().enumerate() {
                if row.len() != n_cols {
                    return Err(Error::ColumnMismatch(format!(
                        "row {i} has {} columns, expected {n_cols}",
                        row.len()
                    )));
                }
                if let Some(v) = row[j] {
                    col.push(v);
                }
            }
            col.sort_by(f64::total_cmp);
            let m = match col.len() {
                0 => 0.0,
                n if n % 2 == 1 => col[n / 2],
                n => 0.5 * (col[n / 2 - 1] + col[n / 2]),
            };
            medians.push(m);
        }
        Ok(Imputer { medians })
    }

    pub fn transform(&self, x: &[Vec<Option<f64>>]) -> Result<Vec<Vec<f64>>> {
        x.iter()
            .enumerate()
            .map(|(i, row)| {
                if row.len() != self.medians.len() {
                    return Err(Error::ColumnMismatch(format!(
                        "row {i} has {} columns, expected {}",
                        row.len(),
                        self.medians.len()
                    )));
                }
                Ok(row.iter().zip(&self.medians).map(|(v, m)| v.unwrap_or(*m)).collect())
            })
            .collect()
    }
}

/// Checks that a prediction matrix uses the training column registry.
pub(crate) fn check_columns(expected: &[String], given: &[String]) -> Result<()> {
    if expected != given {
        return Err(Error::ColumnMismatch(format!(
            "model was trained on {} columns [{}], got {} columns [{}]",
            expected.len(),
            expected.join(","),
            given.len(),
            given.join(",")
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imputer_medians() {
        let x = vec![
            vec![Some(1.0), None],
            vec![Some(3.0), None],
            vec![None, None],
            vec![Some(2.0), None],
            vec![Some(10.0), None],
        ];
        let imp = Imputer::fit(&x, 2).unwrap();
        assert_eq!(imp.medians, vec![2.5, 0.0]);
        let filled = imp.transform(&x).unwrap();
        assert_eq!(filled[2], vec![2.5, 0.0]);
        assert!(imp.transform(&[vec![Some(1.0)]]).is_err());
    }
}
