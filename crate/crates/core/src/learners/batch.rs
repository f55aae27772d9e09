//! Linear max-margin classifier trained by stochastic subgradient descent on
//! the regularized hinge loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_scaler, Classifier, LearnError, Scaler};
use crate::dataset::{Label, Sample};
use crate::features::{FeatureVector, FEATURE_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Weight on ‖w‖².
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: u32,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda: 1e-3,
            learning_rate: 1e-2,
            epochs: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchModel {
    pub weights: [f64; FEATURE_COUNT],
    pub bias: f64,
    pub scaler: Scaler,
    pub hyperparams: Hyperparams,
}

impl BatchModel {
    pub fn margin(&self, x: &FeatureVector) -> f64 {
        dot(&self.weights, &self.scaler.transform(x)) + self.bias
    }
}

impl Classifier for BatchModel {
    /// Strictly positive margin is SE; zero or negative is NOT_SE.
    fn predict(&self, x: &FeatureVector) -> Label {
        if self.margin(x) > 0.0 {
            Label::Se
        } else {
            Label::NotSe
        }
    }
}

fn dot(a: &[f64; FEATURE_COUNT], b: &[f64; FEATURE_COUNT]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean hinge loss over the batch plus `lambda·‖w‖²`. `ys` are ±1.
pub fn regularized_hinge_loss(
    w: &[f64; FEATURE_COUNT],
    b: f64,
    xs: &[[f64; FEATURE_COUNT]],
    ys: &[f64],
    lambda: f64,
) -> f64 {
    let hinge: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (1.0 - y * (dot(w, x) + b)).max(0.0))
        .sum();
    hinge / xs.len() as f64 + lambda * dot(w, w)
}

/// A subgradient of [`regularized_hinge_loss`]; at the kink (margin exactly 1)
/// the hinge term contributes zero.
pub fn hinge_subgradient(
    w: &[f64; FEATURE_COUNT],
    b: f64,
    xs: &[[f64; FEATURE_COUNT]],
    ys: &[f64],
    lambda: f64,
) -> ([f64; FEATURE_COUNT], f64) {
    let n = xs.len() as f64;
    let mut gw = w.map(|wk| 2.0 * lambda * wk);
    let mut gb = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        if y * (dot(w, x) + b) < 1.0 {
            for k in 0..FEATURE_COUNT {
                gw[k] -= y * x[k] / n;
            }
            gb -= y / n;
        }
    }
    (gw, gb)
}

fn check_both_classes(train: &[Sample]) -> Result<(), LearnError> {
    let has = |l| train.iter().any(|s| s.label == l);
    if has(Label::Se) && has(Label::NotSe) {
        Ok(())
    } else {
        Err(LearnError::SingleClass)
    }
}

pub fn batch_train(train: &[Sample], hp: Hyperparams, seed: u64) -> Result<BatchModel, LearnError> {
    if hp.lambda <= 0.0 || hp.learning_rate <= 0.0 {
        return Err(LearnError::BadConfig(format!("{hp:?}")));
    }
    check_both_classes(train)?;
    let scaler = fit_scaler(train.iter().map(|s| &s.features))?;
    let xs: Vec<[f64; FEATURE_COUNT]> = train.iter().map(|s| scaler.transform(&s.features)).collect();
    let ys: Vec<f64> = train.iter().map(|s| s.label.sign()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut w = [0.0; FEATURE_COUNT];
    let mut b = 0.0;
    for _ in 0..hp.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (gw, gb) = hinge_subgradient(&w, b, std::slice::from_ref(&xs[i]), &ys[i..=i], hp.lambda);
            for k in 0..FEATURE_COUNT {
                w[k] -= hp.learning_rate * gw[k];
            }
            b -= hp.learning_rate * gb;
        }
    }
    Ok(BatchModel {
        weights: w,
        bias: b,
        scaler,
        hyperparams: hp,
    })
}

/// λ ∈ {1e-4 … 1e1} (log-spaced, 6 values) × η ∈ {1e-3, 1e-2, 1e-1} × epochs ∈ {20, 50}.
pub fn default_grid() -> Vec<Hyperparams> {
    let mut grid = Vec::new();
    for exp in -4..=1 {
        for learning_rate in [1e-3, 1e-2, 1e-1] {
            for epochs in [20, 50] {
                grid.push(Hyperparams {
                    lambda: 10f64.powi(exp),
                    learning_rate,
                    epochs,
                });
            }
        }
    }
    grid
}

/// Picks the grid point with the best mean k-fold validation accuracy on
/// `train`. Folds whose training part is single-class are skipped; earliest
/// grid point wins ties.
pub fn grid_search(
    train: &[Sample],
    grid: &[Hyperparams],
    folds: usize,
    seed: u64,
) -> Result<Hyperparams, LearnError> {
    if grid.is_empty() {
        return Err(LearnError::BadConfig("empty grid".into()));
    }
    if folds < 2 {
        return Err(LearnError::BadConfig(format!("folds must be ≥ 2, got {folds}")));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0usize; train.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    let fold_sets: Vec<(Vec<Sample>, Vec<Sample>)> = (0..folds)
        .map(|f| {
            let (fit, val): (Vec<_>, Vec<_>) = train
                .iter()
                .enumerate()
                .partition(|(i, _)| fold_of[*i] != f);
            (
                fit.into_iter().map(|(_, s)| s.clone()).collect(),
                val.into_iter().map(|(_, s)| s.clone()).collect(),
            )
        })
        .collect();

    let scores: Vec<Option<f64>> = grid
        .par_iter()
        .map(|&hp| {
            let accs: Vec<f64> = fold_sets
                .iter()
                .filter(|(_, val)| !val.is_empty())
                .filter_map(|(fit, val)| {
                    let model = batch_train(fit, hp, seed).ok()?;
                    let correct = val.iter().filter(|s| model.predict(&s.features) == s.label).count();
                    Some(correct as f64 / val.len() as f64)
                })
                .collect();
            (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, score) in scores.into_iter().enumerate() {
        if let Some(s) = score {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| grid[i]).ok_or(LearnError::NoValidConfig)
}
