//! Holdout and prequential evaluation, repeated-split experiments, LOFO and
//! box-plot statistics.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    family_disjoint_split, lofo_splits, random_split, validate_split, Corpus, DatasetError, Label,
    Sample, Split, Strategy,
};
use crate::features::FeatureVector;
use crate::learners::{
    batch_train, default_grid, grid_search, online_init, Classifier, Hyperparams, LearnError,
    OnlineLearner, DEFAULT_ENSEMBLE_SIZE, DEFAULT_POISSON_LAMBDA,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test set is empty")]
    EmptyTest,
    #[error("stream is empty")]
    EmptyStream,
    #[error("no values")]
    Empty,
    #[error("bad experiment configuration: {0}")]
    BadConfig(String),
    #[error("every repetition failed")]
    NoSuccessfulRuns,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Learn(#[from] LearnError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Confusion counts with SE as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Se, Label::Se) => self.tp += 1,
            (Label::NotSe, Label::Se) => self.fp += 1,
            (Label::NotSe, Label::NotSe) => self.tn += 1,
            (Label::Se, Label::NotSe) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalResult {
    /// Precision and recall are 0 when undefined.
    pub fn from_confusion(c: Confusion) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        EvalResult {
            confusion: c,
            accuracy: ratio(c.tp + c.tn, c.total()),
            precision,
            recall,
            f1,
        }
    }
}

pub fn holdout_eval<F>(predict: F, test: &[Sample]) -> Result<EvalResult>
where
    F: Fn(&FeatureVector) -> Label,
{
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let mut c = Confusion::default();
    for s in test {
        c.record(s.label, predict(&s.features));
    }
    Ok(EvalResult::from_confusion(c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrequentialResult {
    pub per_sample_correct: Vec<bool>,
    pub running_accuracy: Vec<f64>,
    pub final_accuracy: f64,
}

/// Test-then-train over `stream`: each sample is classified, scored, and only
/// then learned from.
pub fn prequential_eval<M: OnlineLearner>(model: &mut M, stream: &[Sample]) -> Result<PrequentialResult> {
    if stream.is_empty() {
        return Err(EvalError::EmptyStream);
    }
    let mut per_sample_correct = Vec::with_capacity(stream.len());
    let mut running_accuracy = Vec::with_capacity(stream.len());
    let mut correct = 0usize;
    for (i, s) in stream.iter().enumerate() {
        let ok = model.predict(&s.features) == s.label;
        correct += usize::from(ok);
        per_sample_correct.push(ok);
        running_accuracy.push(correct as f64 / (i + 1) as f64);
        model.learn(s);
    }
    Ok(PrequentialResult {
        per_sample_correct,
        running_accuracy,
        final_accuracy: correct as f64 / stream.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyAccuracy {
    pub family: String,
    pub n: usize,
    pub accuracy: f64,
}

/// Σ nᵢ·accᵢ / Σ nᵢ.
pub fn weighted_family_accuracy(rows: &[FamilyAccuracy]) -> Result<f64> {
    if rows.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(r) = rows.iter().find(|r| r.n == 0) {
        return Err(EvalError::BadConfig(format!("family {} has n = 0", r.family)));
    }
    let total: usize = rows.iter().map(|r| r.n).sum();
    let weighted: f64 = rows.iter().map(|r| r.n as f64 * r.accuracy).sum();
    Ok(weighted / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    /// Ascending.
    pub outliers: Vec<f64>,
}

/// Linear interpolation between closest ranks on sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quartiles plus Tukey whiskers at 1.5·IQR.
pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = || sorted.iter().copied().filter(|&v| v >= lo_fence && v <= hi_fence);
    let whisker_lo = inside().next().unwrap_or(q1);
    let whisker_hi = inside().next_back().unwrap_or(q3);
    let outliers = sorted
        .iter()
        .copied()
        .filter(|&v| v < lo_fence || v > hi_fence)
        .collect();
    let mut mean = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        mean += (v - mean) / (k + 1) as f64;
    }
    Ok(BoxStats {
        mean,
        median,
        q1,
        q3,
        whisker_lo,
        whisker_hi,
        outliers,
    })
}

impl BoxStats {
    /// `x q1 whisker_lo whisker_hi q3 median`, the column order of gnuplot's
    /// `candlesticks` style.
    pub fn gnuplot_row(&self, x: usize) -> String {
        format!(
            "{x} {} {} {} {} {}",
            self.q1, self.whisker_lo, self.whisker_hi, self.q3, self.median
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LearnerKind {
    #[serde(rename = "BATCH")]
    Batch,
    #[serde(rename = "ONLINE")]
    Online,
}

impl LearnerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LearnerKind::Batch => "BATCH",
            LearnerKind::Online => "ONLINE",
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LearnerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "batch" | "svm" => Ok(LearnerKind::Batch),
            "online" => Ok(LearnerKind::Online),
            _ => Err(format!("unknown learner {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerOptions {
    pub grid: Vec<Hyperparams>,
    pub folds: usize,
    pub ensemble_size: usize,
    pub poisson_lambda: f64,
}

impl Default for LearnerOptions {
    fn default() -> Self {
        LearnerOptions {
            grid: default_grid(),
            folds: 3,
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            poisson_lambda: DEFAULT_POISSON_LAMBDA,
        }
    }
}

/// A trained model of either kind.
pub enum Trained {
    Batch(crate::learners::BatchModel),
    Online(crate::learners::OnlineModel),
}

impl Classifier for Trained {
    fn predict(&self, x: &FeatureVector) -> Label {
        match self {
            Trained::Batch(m) => m.predict(x),
            Trained::Online(m) => m.predict(x),
        }
    }
}

/// Batch: grid search then a final fit on all of `train`. Online: one pass
/// over a seeded shuffle of `train`.
pub fn train_learner(kind: LearnerKind, train: &[Sample], seed: u64, opts: &LearnerOptions) -> Result<Trained> {
    match kind {
        LearnerKind::Batch => {
            let hp = grid_search(train, &opts.grid, opts.folds, seed)?;
            Ok(Trained::Batch(batch_train(train, hp, seed)?))
        }
        LearnerKind::Online => {
            let mut model = online_init(opts.ensemble_size, opts.poisson_lambda, seed)?;
            let mut order: Vec<&Sample> = train.iter().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            order.shuffle(&mut rng);
            for s in order {
                model.learn(s);
            }
            Ok(Trained::Online(model))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub retries: u32,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub strategy: Strategy,
    pub learner: LearnerKind,
    pub repetitions: usize,
    pub seeds: Vec<u64>,
    pub per_run: Vec<RunRecord>,
    #[serde(rename = "box")]
    pub box_stats: BoxStats,
    pub mean: f64,
    /// Sample variance of per-run accuracy; 0 for a single run.
    pub variance: f64,
    pub failed_runs: Vec<FailedRun>,
}

pub const RUN_CSV_HEADER: [&str; 7] = ["seed", "accuracy", "precision", "recall", "f1", "retries", "strategy"];

impl ExperimentSummary {
    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.per_run
            .iter()
            .map(|r| {
                vec![
                    r.seed.to_string(),
                    crate::features::format_sig9(r.accuracy),
                    crate::features::format_sig9(r.precision),
                    crate::features::format_sig9(r.recall),
                    crate::features::format_sig9(r.f1),
                    r.retries.to_string(),
                    self.strategy.as_str().to_string(),
                ]
            })
            .collect()
    }
}

fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn make_split(corpus: &Corpus, strategy: Strategy, seed: u64) -> std::result::Result<Split, DatasetError> {
    match strategy {
        Strategy::Random => random_split(corpus, seed),
        Strategy::FamilyDisjoint => family_disjoint_split(corpus, seed),
        Strategy::Lofo => unreachable!("rejected by caller"),
    }
}

enum RunOutcome {
    Done(RunRecord),
    Failed(FailedRun),
}

fn one_run(
    corpus: &Corpus,
    strategy: Strategy,
    learner: LearnerKind,
    seed: u64,
    opts: &LearnerOptions,
) -> Result<RunOutcome> {
    let failed = |error: String| Ok(RunOutcome::Failed(FailedRun { seed, error }));
    let split = match make_split(corpus, strategy, seed) {
        Ok(s) => s,
        Err(e) => return failed(e.to_string()),
    };
    let report = validate_split(corpus, &split)?;
    if !report.partition_ok || (strategy == Strategy::FamilyDisjoint && report.family_overlap > 0) {
        return failed(format!("split failed validation: {report:?}"));
    }
    let (train_idx, test_idx) = corpus.resolve(&split)?;
    let train = corpus.subset(&train_idx);
    let test = corpus.subset(&test_idx);
    let model = train_learner(learner, &train, seed, opts)?;
    let r = holdout_eval(|x| model.predict(x), &test)?;
    Ok(RunOutcome::Done(RunRecord {
        seed,
        accuracy: r.accuracy,
        precision: r.precision,
        recall: r.recall,
        f1: r.f1,
        retries: split.retries,
        confusion: r.confusion,
    }))
}

/// Repetition `i` uses seed `base_seed + i` for the split and the learner.
pub fn run_experiment(
    corpus: &Corpus,
    strategy: Strategy,
    learner: LearnerKind,
    repetitions: usize,
    base_seed: u64,
) -> Result<ExperimentSummary> {
    run_experiment_with(corpus, strategy, learner, repetitions, base_seed, &LearnerOptions::default())
}

pub fn run_experiment_with(
    corpus: &Corpus,
    strategy: Strategy,
    learner: LearnerKind,
    repetitions: usize,
    base_seed: u64,
    opts: &LearnerOptions,
) -> Result<ExperimentSummary> {
    if repetitions == 0 {
        return Err(EvalError::BadConfig("repetitions must be ≥ 1".into()));
    }
    if strategy == Strategy::Lofo {
        return Err(EvalError::BadConfig("LOFO runs through run_lofo".into()));
    }
    let seeds: Vec<u64> = (0..repetitions as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let outcomes: Vec<Result<RunOutcome>> = seeds
        .par_iter()
        .map(|&seed| one_run(corpus, strategy, learner, seed, opts))
        .collect();
    let mut per_run = Vec::new();
    let mut failed_runs = Vec::new();
    for o in outcomes {
        match o? {
            RunOutcome::Done(r) => per_run.push(r),
            RunOutcome::Failed(f) => failed_runs.push(f),
        }
    }
    if per_run.is_empty() {
        return Err(EvalError::NoSuccessfulRuns);
    }
    let accs: Vec<f64> = per_run.iter().map(|r| r.accuracy).collect();
    let box_stats = box_stats(&accs)?;
    Ok(ExperimentSummary {
        strategy,
        learner,
        repetitions,
        seeds,
        mean: box_stats.mean,
        variance: sample_variance(&accs),
        box_stats,
        per_run,
        failed_runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofoFamilyResult {
    pub family: String,
    pub n: usize,
    pub accuracy: f64,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofoSummary {
    pub learner: LearnerKind,
    pub seed: u64,
    pub families: Vec<LofoFamilyResult>,
    pub weighted_accuracy: f64,
    /// Over the union of all held-out predictions.
    pub pooled: EvalResult,
    /// Largest minus smallest per-family accuracy.
    pub accuracy_span: f64,
    /// Families whose complement lacked a class, with the reason.
    pub skipped: Vec<FailedRun>,
}

impl From<&LofoFamilyResult> for FamilyAccuracy {
    fn from(r: &LofoFamilyResult) -> Self {
        FamilyAccuracy {
            family: r.family.clone(),
            n: r.n,
            accuracy: r.accuracy,
        }
    }
}

/// Holds out each family in turn (lexicographic order), trains on the rest
/// with `seed`, and scores the held-out family.
pub fn run_lofo(corpus: &Corpus, learner: LearnerKind, seed: u64, opts: &LearnerOptions) -> Result<LofoSummary> {
    let splits = lofo_splits(corpus)?;
    let outcomes: Vec<Result<std::result::Result<LofoFamilyResult, FailedRun>>> = splits
        .par_iter()
        .map(|split| {
            let family = split.held_out_family.clone().unwrap_or_default();
            let (train_idx, test_idx) = corpus.resolve(split)?;
            let train = corpus.subset(&train_idx);
            let test = corpus.subset(&test_idx);
            let model = match train_learner(learner, &train, seed, opts) {
                Ok(m) => m,
                Err(EvalError::Learn(e @ (LearnError::SingleClass | LearnError::TooSmall(_)))) => {
                    return Ok(Err(FailedRun {
                        seed,
                        error: format!("{family}: {e}"),
                    }))
                }
                Err(e) => return Err(e),
            };
            let r = holdout_eval(|x| model.predict(x), &test)?;
            Ok(Ok(LofoFamilyResult {
                family,
                n: test.len(),
                accuracy: r.accuracy,
                confusion: r.confusion,
            }))
        })
        .collect();
    let mut families = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o? {
            Ok(r) => families.push(r),
            Err(f) => skipped.push(f),
        }
    }
    if families.is_empty() {
        return Err(EvalError::NoSuccessfulRuns);
    }
    let rows: Vec<FamilyAccuracy> = families.iter().map(FamilyAccuracy::from).collect();
    let weighted_accuracy = weighted_family_accuracy(&rows)?;
    let mut pooled = Confusion::default();
    families.iter().for_each(|f| pooled.merge(&f.confusion));
    let max = families.iter().map(|f| f.accuracy).fold(f64::MIN, f64::max);
    let min = families.iter().map(|f| f.accuracy).fold(f64::MAX, f64::min);
    Ok(LofoSummary {
        learner,
        seed,
        families,
        weighted_accuracy,
        pooled: EvalResult::from_confusion(pooled),
        accuracy_span: max - min,
        skipped,
    })
}
