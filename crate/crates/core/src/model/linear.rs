//! Ordinary least squares on standardized columns with a small ridge jitter.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_columns, Imputer};
use crate::error::{Error, Result};

const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub feature_names: Vec<String>,
    /// Coefficients in the original feature units.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub imputer: Imputer,
}

pub fn fit_linear(feature_names: &[String], x: &[Vec<Option<f64>>], y: &[f64]) -> Result<LinearModel> {
    if x.len() != y.len() {
        return Err(Error::validation(format!("{} rows but {} targets", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} training rows, at least 2 needed",
            x.len()
        )));
    }
    let p = feature_names.len();
    let imputer = Imputer::fit(x, p)?;
    let dense = imputer.transform(x)?;
    let n = dense.len();
    let y_mean = y.iter().sum::<f64>() / n as f64;

    let mut means = vec![0.0; p];
    let mut stds = vec![0.0; p];
    for j in 0..p {
        let m = dense.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let v = dense.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n as f64;
        means[j] = m;
        stds[j] = v.sqrt();
    }
    // Constant columns are left at zero and get a zero coefficient.
    let z = DMatrix::from_fn(n, p, |i, j| {
        if stds[j] > 0.0 {
            (dense[i][j] - means[j]) / stds[j]
        } else {
            0.0
        }
    });
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = z.transpose() * &z;
    for d in 0..p {
        gram[(d, d)] += RIDGE;
    }
    let rhs = z.transpose() * yc;
    let beta = gram
        .cholesky()
        .ok_or_else(|| Error::validation("normal equations are not positive definite"))?
        .solve(&rhs);

    let coefficients: Vec<f64> = (0..p)
        .map(|j| if stds[j] > 0.0 { beta[j] / stds[j] } else { 0.0 })
        .collect();
    let intercept = y_mean - coefficients.iter().zip(&means).map(|(c, m)| c * m).sum::<f64>();
    Ok(LinearModel {
        feature_names: feature_names.to_vec(),
        coefficients,
        intercept,
        imputer,
    })
}

pub fn predict_linear(model: &LinearModel, feature_names: &[String], x: &[Vec<Option<f64>>]) -> Result<Vec<f64>> {
    check_columns(&model.feature_names, feature_names)?;
    let dense = model.imputer.transform(x)?;
    Ok(dense
        .iter()
        .map(|r| model.intercept + r.iter().zip(&model.coefficients).map(|(v, c)| v * c).sum::<f64>())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn recovers_exact_line() {
        let x: Vec<Vec<Option<f64>>> = (0..10).map(|i| vec![Some(i as f64)]).collect();
        let y: Vec<f64> = (0..10).map(|i| 2.0 * i as f64 + 1.0).collect();
        let m = fit_linear(&names(1), &x, &y).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-8);
        assert!((m.intercept - 1.0).abs() < 1e-8);
    }

    #[test]
    fn matches_normal_equations_oracle() {
        // Two independent columns; compare to the closed-form 2x2 solve.
        let x1 = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let x2 = [2.0, 1.0, 4.0, 3.0, 6.0, 8.0];
        let y = [3.1, 3.9, 7.2, 7.8, 11.1, 14.2];
        let rows: Vec<Vec<Option<f64>>> = x1.iter().zip(&x2).map(|(a, b)| vec![Some(*a), Some(*b)]).collect();
        let m = fit_linear(&names(2), &rows, &y).unwrap();

        let n = 6.0;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let (m1, m2, my) = (mean(&x1), mean(&x2), mean(&y));
        let s = |a: &[f64], ma: f64, b: &[f64], mb: f64| a.iter().zip(b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>();
        let (s11, s12, s22) = (s(&x1, m1, &x1, m1), s(&x1, m1, &x2, m2), s(&x2, m2, &x2, m2));
        let (s1y, s2y) = (s(&x1, m1, &y, my), s(&x2, m2, &y, my));
        let det = s11 * s22 - s12 * s12;
        let b1 = (s22 * s1y - s12 * s2y) / det;
        let b2 = (s11 * s2y - s12 * s1y) / det;
        assert!((m.coefficients[0] - b1).abs() < 1e-7);
        assert!((m.coefficients[1] - b2).abs() < 1e-7);
        assert!((m.intercept - (my - b1 * m1 - b2 * m2)).abs() < 1e-7);
    }

    #[test]
    fn duplicate_and_constant_columns_are_stable() {
        let x: Vec<Vec<Option<f64>>> = (0..20)
            .map(|i| vec![Some(i as f64), Some(i as f64), Some(7.0), None])
            .collect();
        let y: Vec<f64> = (0..20).map(|i| 3.0 * i as f64 - 2.0).collect();
        let m = fit_linear(&names(4), &x, &y).unwrap();
        assert_eq!(m.coefficients[2], 0.0);
        let p = predict_linear(&m, &names(4), &x).unwrap();
        for (a, b) in p.iter().zip(&y) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(predict_linear(&m, &names(3), &[vec![None; 3]]).is_err());
    }
}
