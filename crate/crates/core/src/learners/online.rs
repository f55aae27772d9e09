//! Leveraging bagging: each ensemble member sees every arriving sample a
//! Poisson(λ)-distributed number of times. Members are incremental Gaussian
//! naive-Bayes learners.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{Classifier, LearnError, OnlineLearner, STD_FLOOR};
use crate::dataset::{Label, Sample};
use crate::features::{FeatureVector, FEATURE_COUNT};

pub const DEFAULT_ENSEMBLE_SIZE: usize = 10;
pub const DEFAULT_POISSON_LAMBDA: f64 = 6.0;

/// Welford running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Sample variance, floored; the floor alone below two observations.
    pub fn variance(&self) -> f64 {
        if self.n >= 2 {
            (self.m2 / (self.n - 1) as f64).max(STD_FLOOR)
        } else {
            STD_FLOOR
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianLearner {
    /// Indexed by [`Label::index`].
    pub class_counts: [u64; 2],
    pub stats: [[RunningStats; FEATURE_COUNT]; 2],
}

impl GaussianLearner {
    pub fn observe(&mut self, x: &FeatureVector, label: Label) {
        let c = label.index();
        self.class_counts[c] += 1;
        for (s, v) in self.stats[c].iter_mut().zip(x.values()) {
            s.push(v);
        }
    }

    fn log_joint(&self, class: usize, x: &[f64; FEATURE_COUNT]) -> f64 {
        let total = (self.class_counts[0] + self.class_counts[1]) as f64;
        let prior = (self.class_counts[class] as f64 / total).ln();
        let likelihood: f64 = self.stats[class]
            .iter()
            .zip(x)
            .map(|(s, &v)| {
                let var = s.variance();
                -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (v - s.mean).powi(2) / (2.0 * var)
            })
            .sum();
        prior + likelihood
    }

    /// `None` before any observation.
    pub fn vote(&self, x: &FeatureVector) -> Option<Label> {
        match self.class_counts {
            [0, 0] => None,
            [_, 0] => Some(Label::NotSe),
            [0, _] => Some(Label::Se),
            _ => {
                let v = x.values();
                if self.log_joint(1, &v) > self.log_joint(0, &v) {
                    Some(Label::Se)
                } else {
                    Some(Label::NotSe)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineModel {
    pub learners: Vec<GaussianLearner>,
    pub poisson_lambda: f64,
    pub seed: u64,
    rng: ChaCha8Rng,
}

pub fn online_init(k: usize, poisson_lambda: f64, seed: u64) -> Result<OnlineModel, LearnError> {
    if k == 0 {
        return Err(LearnError::BadConfig("ensemble size must be ≥ 1".into()));
    }
    if !(poisson_lambda > 0.0 && poisson_lambda.is_finite()) {
        return Err(LearnError::BadConfig(format!("poisson lambda must be > 0, got {poisson_lambda}")));
    }
    Ok(OnlineModel {
        learners: vec![GaussianLearner::default(); k],
        poisson_lambda,
        seed,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

impl OnlineModel {
    /// Feeds the sample to learner `i` exactly `weights[i]` times.
    pub fn update_with_weights(&mut self, sample: &Sample, weights: &[u32]) {
        for (learner, &w) in self.learners.iter_mut().zip(weights) {
            for _ in 0..w {
                learner.observe(&sample.features, sample.label);
            }
        }
    }

    /// Draws one Poisson weight per learner from the model's generator.
    pub fn draw_weights(&mut self) -> Vec<u32> {
        let poisson = Poisson::new(self.poisson_lambda).expect("lambda validated at init");
        (0..self.learners.len())
            .map(|_| poisson.sample(&mut self.rng) as u32)
            .collect()
    }

    pub fn update(&mut self, sample: &Sample) {
        let weights = self.draw_weights();
        self.update_with_weights(sample, &weights);
    }

    /// Number of SE votes.
    pub fn se_votes(&self, x: &FeatureVector) -> usize {
        self.learners
            .iter()
            .filter(|l| l.vote(x) == Some(Label::Se))
            .count()
    }
}

pub fn online_update(model: &mut OnlineModel, sample: &Sample) {
    model.update(sample);
}

pub fn online_predict(model: &OnlineModel, x: &FeatureVector) -> Label {
    model.predict(x)
}

impl Classifier for OnlineModel {
    /// Strict majority for SE; ties and abstentions go to NOT_SE.
    fn predict(&self, x: &FeatureVector) -> Label {
        let se = self.se_votes(x);
        if 2 * se > self.learners.len() {
            Label::Se
        } else {
            Label::NotSe
        }
    }
}

impl OnlineLearner for OnlineModel {
    fn learn(&mut self, sample: &Sample) {
        self.update(sample);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(entropy: f64, label: Label) -> Sample {
        Sample {
            sample_id: String::new(),
            family: String::new(),
            label,
            features: FeatureVector {
                avg_entropy: entropy,
                ..FeatureVector::default()
            },
        }
    }

    #[test]
    fn init_validation() {
        assert_eq!(online_init(10, 6.0, 0).unwrap().learners.len(), 10);
        assert!(matches!(online_init(0, 6.0, 0), Err(LearnError::BadConfig(_))));
        assert!(matches!(online_init(3, 0.0, 0), Err(LearnError::BadConfig(_))));
        assert!(matches!(online_init(3, f64::NAN, 0), Err(LearnError::BadConfig(_))));
    }

    #[test]
    fn cold_model_says_not_se() {
        let m = online_init(5, 6.0, 1).unwrap();
        assert_eq!(m.predict(&FeatureVector::default()), Label::NotSe);
        assert_eq!(m.predict(&s(7.0, Label::Se).features), Label::NotSe);
    }

    #[test]
    fn incremental_stats_small_case() {
        let mut l = GaussianLearner::default();
        l.observe(&s(1.0, Label::Se).features, Label::Se);
        l.observe(&s(3.0, Label::Se).features, Label::Se);
        let st = l.stats[Label::Se.index()][0];
        assert_eq!(st.mean, 2.0);
        assert_eq!(st.m2, 2.0);
        assert_eq!(st.variance(), 2.0);
        assert_eq!(l.class_counts, [0, 2]);
    }

    #[test]
    fn single_class_learner_votes_that_class() {
        let mut m = online_init(1, 6.0, 0).unwrap();
        m.update_with_weights(&s(100.0, Label::Se), &[1]);
        assert_eq!(m.predict(&s(-50.0, Label::NotSe).features), Label::Se);
    }

    #[test]
    fn even_split_vote_is_not_se() {
        let mut m = online_init(2, 6.0, 0).unwrap();
        m.update_with_weights(&s(1.0, Label::Se), &[1, 0]);
        m.update_with_weights(&s(1.0, Label::NotSe), &[0, 1]);
        assert_eq!(m.se_votes(&s(1.0, Label::Se).features), 1);
        assert_eq!(m.predict(&s(1.0, Label::Se).features), Label::NotSe);
    }

    #[test]
    fn vanishing_lambda_changes_nothing() {
        let mut m = online_init(4, 1e-12, 3).unwrap();
        let before = m.learners.clone();
        for i in 0..100 {
            m.update(&s(i as f64, Label::Se));
        }
        assert_eq!(m.learners, before);
    }

    #[test]
    fn updates_are_seed_deterministic() {
        let stream: Vec<Sample> = (0..50)
            .map(|i| s((i % 9) as f64, if i % 3 == 0 { Label::Se } else { Label::NotSe }))
            .collect();
        let run = |seed| {
            let mut m = online_init(10, 6.0, seed).unwrap();
            stream.iter().for_each(|x| m.update(x));
            m
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5).learners, run(6).learners);
    }

    #[test]
    fn poisson_weights_average_near_lambda() {
        let mut m = online_init(10, 6.0, 11).unwrap();
        let total: u64 = (0..1000).map(|_| m.draw_weights().iter().map(|&w| w as u64).sum::<u64>()).sum();
        let mean = total as f64 / 10_000.0;
        assert!((mean - 6.0).abs() < 0.15, "mean {mean}");
    }

    #[test]
    fn json_roundtrip_preserves_rng_position() {
        let mut m = online_init(3, 6.0, 2).unwrap();
        m.update(&s(1.0, Label::Se));
        let json = serde_json::to_string(&m).unwrap();
        let mut back: OnlineModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.draw_weights(), m.draw_weights());
    }
}
