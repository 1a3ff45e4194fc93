//! Reference predictors that ignore the features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predicts the training mean everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragePredictor {
    pub mean: f64,
}

impl AveragePredictor {
    pub fn predict(&self, n: usize) -> Vec<f64> {
        vec![self.mean; n]
    }
}

pub fn baseline_average(y_train: &[f64]) -> Result<AveragePredictor> {
    if y_train.is_empty() {
        return Err(Error::InsufficientData("no training targets".into()));
    }
    Ok(AveragePredictor {
        mean: y_train.iter().sum::<f64>() / y_train.len() as f64,
    })
}

/// Draws each prediction uniformly from the training targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomPredictor {
    pub pool: Vec<f64>,
    pub seed: u64,
}

impl RandomPredictor {
    pub fn predict(&self, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..n)
            .map(|_| self.pool[rng.random_range(0..self.pool.len())])
            .collect()
    }
}

pub fn baseline_random(y_train: &[f64], seed: u64) -> Result<RandomPredictor> {
    if y_train.is_empty() {
        return Err(Error::InsufficientData("no training targets".into()));
    }
    Ok(RandomPredictor {
        pool: y_train.to_vec(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_and_random() {
        let y = [1.0, 2.0, 6.0];
        assert_eq!(baseline_average(&y).unwrap().predict(2), vec![3.0, 3.0]);
        let r = baseline_random(&y, 9).unwrap();
        let a = r.predict(200);
        assert_eq!(a, r.predict(200));
        assert!(a.iter().all(|v| y.contains(v)));
        for v in y {
            assert!(a.contains(&v));
        }
        assert!(baseline_average(&[]).is_err());
        assert!(baseline_random(&[], 1).is_err());
    }
}
