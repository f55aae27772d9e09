//! Batch and online classifiers over [`FeatureVector`]s.

mod batch;
mod online;

pub use batch::{
    batch_train, default_grid, grid_search, hinge_subgradient, regularized_hinge_loss, BatchModel,
    Hyperparams,
};
pub use online::{
    online_init, online_predict, online_update, GaussianLearner, OnlineModel, RunningStats,
    DEFAULT_ENSEMBLE_SIZE, DEFAULT_POISSON_LAMBDA,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Label, Sample};
use crate::features::{FeatureVector, FEATURE_COUNT};

/// Lower bound for standard deviations and variances.
pub const STD_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("need at least 2 training vectors, have {0}")]
    TooSmall(usize),
    #[error("training data contains only one class")]
    SingleClass,
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("no grid point had a usable validation fold")]
    NoValidConfig,
}

pub trait Classifier {
    fn predict(&self, x: &FeatureVector) -> Label;
}

/// A classifier that can absorb one labelled sample at a time.
pub trait OnlineLearner: Classifier {
    fn learn(&mut self, sample: &Sample);
}

/// Per-feature standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: [f64; FEATURE_COUNT],
    /// Population standard deviation, floored at [`STD_FLOOR`].
    pub std: [f64; FEATURE_COUNT],
}

impl Scaler {
    pub fn transform(&self, x: &FeatureVector) -> [f64; FEATURE_COUNT] {
        let v = x.values();
        std::array::from_fn(|k| (v[k] - self.mean[k]) / self.std[k])
    }
}

pub fn fit_scaler<'a, I>(train: I) -> Result<Scaler, LearnError>
where
    I: IntoIterator<Item = &'a FeatureVector>,
{
    let rows: Vec<[f64; FEATURE_COUNT]> = train.into_iter().map(FeatureVector::values).collect();
    if rows.len() < 2 {
        return Err(LearnError::TooSmall(rows.len()));
    }
    let n = rows.len() as f64;
    let mut mean = [0.0; FEATURE_COUNT];
    for r in &rows {
        for k in 0..FEATURE_COUNT {
            mean[k] += r[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; FEATURE_COUNT];
    for r in &rows {
        for k in 0..FEATURE_COUNT {
            var[k] += (r[k] - mean[k]).powi(2);
        }
    }
    let std = var.map(|v| (v / n).sqrt().max(STD_FLOOR));
    Ok(Scaler { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv_len(len: f64) -> FeatureVector {
        FeatureVector {
            avg_length: len,
            ..FeatureVector::default()
        }
    }

    #[test]
    fn two_point_scaler() {
        let s = fit_scaler(&[fv_len(2.0), fv_len(4.0)]).unwrap();
        assert_eq!(s.mean[2], 3.0);
        assert_eq!(s.std[2], 1.0);
        // constant features clamp
        assert_eq!(s.std[0], STD_FLOOR);
    }

    #[test]
    fn scaler_needs_two() {
        assert_eq!(fit_scaler(&[fv_len(1.0)]), Err(LearnError::TooSmall(1)));
    }

    #[test]
    fn transformed_train_is_centered() {
        let data: Vec<FeatureVector> = (0..50)
            .map(|i| FeatureVector::from_values(std::array::from_fn(|k| (i * (k + 1)) as f64 * 0.37 + k as f64), 1))
            .collect();
        let s = fit_scaler(&data).unwrap();
        let mut sums = [0.0; FEATURE_COUNT];
        for x in &data {
            let t = s.transform(x);
            for k in 0..FEATURE_COUNT {
                sums[k] += t[k];
            }
        }
        for k in 0..FEATURE_COUNT {
            assert!((sums[k] / 50.0).abs() < 1e-9);
        }
    }
}
