//! Labelled corpora with family metadata, and the three train/test split strategies.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apk::{extract_app_strings, ApkError};
use crate::features::{feature_vector, FeatureVector, FEATURE_COUNT, FEATURE_NAMES};

/// Maximum number of reseeded attempts after the first family-disjoint draw.
pub const MAX_SPLIT_RETRIES: u32 = 1000;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("bad manifest header: {0}")]
    BadHeader(String),
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("unknown label {label:?} for sample {sample_id:?}")]
    UnknownLabel { sample_id: String, label: String },
    #[error("manifest row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("need at least 2 samples, have {0}")]
    TooSmall(usize),
    #[error("need at least 2 families, have {0}")]
    TooFewFamilies(usize),
    #[error("no valid family-disjoint split after {retries} retries")]
    Degenerate { retries: u32 },
    #[error("split references unknown sample id {0:?}")]
    UnknownId(String),
    #[error("{path}: {source}")]
    Extract {
        path: PathBuf,
        #[source]
        source: ApkError,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "NOT_SE")]
    NotSe,
    #[serde(rename = "SE")]
    Se,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Se => "SE",
            Label::NotSe => "NOT_SE",
        }
    }

    /// +1 for SE, -1 for NOT_SE.
    pub fn sign(self) -> f64 {
        match self {
            Label::Se => 1.0,
            Label::NotSe => -1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Label::NotSe => 0,
            Label::Se => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "SE" => Ok(Label::Se),
            "NOT_SE" => Ok(Label::NotSe),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub family: String,
    pub label: Label,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    /// Family → indices into `samples`, in sample order.
    pub family_index: BTreeMap<String, Vec<usize>>,
    /// Samples dropped during loading because strict decoding excluded them.
    pub excluded: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(samples.len());
        let mut family_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if ids.insert(s.sample_id.clone(), i).is_some() {
                return Err(DatasetError::DuplicateId(s.sample_id.clone()));
            }
            family_index.entry(s.family.clone()).or_default().push(i);
        }
        Ok(Corpus {
            samples,
            family_index,
            excluded: Vec::new(),
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn index_of(&self, sample_id: &str) -> Option<usize> {
        self.ids.get(sample_id).copied()
    }

    /// Sample indices for the two sides of `split`.
    pub fn resolve(&self, split: &Split) -> Result<(Vec<usize>, Vec<usize>)> {
        let lookup = |ids: &[String]| -> Result<Vec<usize>> {
            ids.iter()
                .map(|id| self.index_of(id).ok_or_else(|| DatasetError::UnknownId(id.clone())))
                .collect()
        };
        Ok((lookup(&split.train_ids)?, lookup(&split.test_ids)?))
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<Sample> {
        indices.iter().map(|&i| self.samples[i].clone()).collect()
    }
}

/// Manifest rows either point at an APK or carry precomputed features.
#[derive(Debug, Clone, PartialEq)]
pub enum ManifestSource {
    Path(PathBuf),
    Features(FeatureVector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub sample_id: String,
    pub family: String,
    pub label: Label,
    pub source: ManifestSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ManifestKind {
    Paths,
    Features,
}

fn manifest_kind(headers: &csv::StringRecord) -> Result<ManifestKind> {
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 4 || cols[..3] != ["sample_id", "family", "label"] {
        return Err(DatasetError::BadHeader(format!(
            "expected sample_id,family,label,... got {}",
            cols.join(",")
        )));
    }
    if cols[3] == "path" {
        return Ok(ManifestKind::Paths);
    }
    if cols.len() > 3 + FEATURE_COUNT
        && cols[3..3 + FEATURE_COUNT] == FEATURE_NAMES
        && cols[3 + FEATURE_COUNT] == "n_strings"
    {
        return Ok(ManifestKind::Features);
    }
    Err(DatasetError::BadHeader(format!(
        "fourth column must be `path` or the feature columns, got {}",
        cols[3]
    )))
}

/// Reads a manifest CSV. Relative APK paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::Reader::from_path(path)?;
    parse_manifest(&mut reader, &base)
}

pub fn parse_manifest<R: std::io::Read>(
    reader: &mut csv::Reader<R>,
    base: &Path,
) -> Result<Vec<ManifestRow>> {
    let kind = manifest_kind(reader.headers()?)?;
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let field = |k: usize| {
            record.get(k).ok_or_else(|| DatasetError::BadRow {
                row,
                reason: format!("missing column {k}"),
            })
        };
        let sample_id = field(0)?.to_string();
        let family = field(1)?.to_string();
        let label: Label = field(2)?.parse().map_err(|label| DatasetError::UnknownLabel {
            sample_id: sample_id.clone(),
            label,
        })?;
        if !seen.insert(sample_id.clone()) {
            return Err(DatasetError::DuplicateId(sample_id));
        }
        let source = match kind {
            ManifestKind::Paths => ManifestSource::Path(base.join(field(3)?)),
            ManifestKind::Features => {
                let mut values = [0.0; FEATURE_COUNT];
                for (k, v) in values.iter_mut().enumerate() {
                    *v = field(3 + k)?.parse().map_err(|e| DatasetError::BadRow {
                        row,
                        reason: format!("{}: {e}", FEATURE_NAMES[k]),
                    })?;
                }
                let n_strings = field(3 + FEATURE_COUNT)?.parse().map_err(|e| {
                    DatasetError::BadRow {
                        row,
                        reason: format!("n_strings: {e}"),
                    }
                })?;
                ManifestSource::Features(FeatureVector::from_values(values, n_strings))
            }
        };
        rows.push(ManifestRow {
            sample_id,
            family,
            label,
            source,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Drop samples with any undecodable string entry.
    pub strict: bool,
}

/// Loads a manifest into a corpus, extracting features from APKs where needed.
pub fn load_manifest(path: &Path) -> Result<Corpus> {
    load_manifest_with(path, LoadOptions::default())
}

pub fn load_manifest_with(path: &Path, opts: LoadOptions) -> Result<Corpus> {
    let rows = read_manifest(path)?;
    corpus_from_rows(rows, opts)
}

pub fn corpus_from_rows(rows: Vec<ManifestRow>, opts: LoadOptions) -> Result<Corpus> {
    // Ok(Err(id)) marks a strict-mode exclusion.
    let loaded: Vec<Result<std::result::Result<Sample, String>>> = rows
        .into_par_iter()
        .map(|row| {
            let features = match row.source {
                ManifestSource::Features(fv) => fv,
                ManifestSource::Path(path) => {
                    let app = extract_app_strings(&path, opts.strict)
                        .map_err(|source| DatasetError::Extract { path, source })?;
                    if app.strict_excluded {
                        return Ok(Err(row.sample_id));
                    }
                    feature_vector(&app)
                }
            };
            Ok(Ok(Sample {
                sample_id: row.sample_id,
                family: row.family,
                label: row.label,
                features,
            }))
        })
        .collect();
    let mut samples = Vec::with_capacity(loaded.len());
    let mut excluded = Vec::new();
    for s in loaded {
        match s? {
            Ok(s) => samples.push(s),
            Err(id) => excluded.push(id),
        }
    }
    let mut corpus = Corpus::new(samples)?;
    corpus.excluded = excluded;
    Ok(corpus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "RANDOM")]
    Random,
    #[serde(rename = "FAMILY_DISJOINT")]
    FamilyDisjoint,
    #[serde(rename = "LOFO")]
    Lofo,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Random => "RANDOM",
            Strategy::FamilyDisjoint => "FAMILY_DISJOINT",
            Strategy::Lofo => "LOFO",
        }
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "random" => Ok(Strategy::Random),
            "family-disjoint" | "non-overlapping" => Ok(Strategy::FamilyDisjoint),
            "lofo" => Ok(Strategy::Lofo),
            _ => Err(format!("unknown strategy {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub strategy: Strategy,
    pub seed: u64,
    /// Rejected family-disjoint draws before this one was accepted.
    pub retries: u32,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub held_out_family: Option<String>,
}

fn split_from_mask(corpus: &Corpus, in_train: &[bool], strategy: Strategy, seed: u64) -> Split {
    let (mut train_ids, mut test_ids) = (Vec::new(), Vec::new());
    for (s, &t) in corpus.samples.iter().zip(in_train) {
        if t {
            train_ids.push(s.sample_id.clone());
        } else {
            test_ids.push(s.sample_id.clone());
        }
    }
    Split {
        strategy,
        seed,
        retries: 0,
        train_ids,
        test_ids,
        held_out_family: None,
    }
}

/// Uniform random halves: ⌈n/2⌉ train, ⌊n/2⌋ test.
pub fn random_split(corpus: &Corpus, seed: u64) -> Result<Split> {
    let n = corpus.len();
    if n < 2 {
        return Err(DatasetError::TooSmall(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; n];
    for &i in &order[..n.div_ceil(2)] {
        in_train[i] = true;
    }
    Ok(split_from_mask(corpus, &in_train, Strategy::Random, seed))
}

/// The family-draw loop: while the training side holds at most half of all
/// samples, draw a remaining family uniformly and move all its samples in.
///
/// `draw(k)` must return an index in `0..k` into the remaining families (kept
/// in their original order). Returns the drawn families in draw order.
pub fn draw_families(
    family_sizes: &[usize],
    total: usize,
    mut draw: impl FnMut(usize) -> usize,
) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..family_sizes.len()).collect();
    let mut chosen = Vec::new();
    let mut train = 0usize;
    while 2 * train <= total && !remaining.is_empty() {
        let f = remaining.remove(draw(remaining.len()));
        train += family_sizes[f];
        chosen.push(f);
    }
    chosen
}

/// A family-disjoint draw is usable when the test side is non-empty and both
/// sides contain both classes.
fn acceptable(corpus: &Corpus, in_train: &[bool]) -> bool {
    let mut seen = [[false; 2]; 2];
    for (s, &t) in corpus.samples.iter().zip(in_train) {
        seen[usize::from(t)][s.label.index()] = true;
    }
    seen.iter().all(|side| side[0] && side[1])
}

fn family_mask(corpus: &Corpus, families: &[&String], chosen: &[usize]) -> Vec<bool> {
    let mut in_train = vec![false; corpus.len()];
    for &f in chosen {
        for &i in &corpus.family_index[families[f]] {
            in_train[i] = true;
        }
    }
    in_train
}

/// Family-disjoint split by repeated family draws, rejecting degenerate
/// outcomes and retrying with `seed + 1`, `seed + 2`, ...
pub fn family_disjoint_split(corpus: &Corpus, seed: u64) -> Result<Split> {
    let families: Vec<&String> = corpus.family_index.keys().collect();
    if families.len() < 2 {
        return Err(DatasetError::TooFewFamilies(families.len()));
    }
    let sizes: Vec<usize> = families.iter().map(|f| corpus.family_index[*f].len()).collect();
    for retries in 0..=MAX_SPLIT_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(retries as u64));
        let chosen = draw_families(&sizes, corpus.len(), |k| rng.random_range(0..k));
        let in_train = family_mask(corpus, &families, &chosen);
        if acceptable(corpus, &in_train) {
            let mut split = split_from_mask(corpus, &in_train, Strategy::FamilyDisjoint, seed);
            split.retries = retries;
            return Ok(split);
        }
    }
    Err(DatasetError::Degenerate {
        retries: MAX_SPLIT_RETRIES,
    })
}

/// One split per family (lexicographic order), holding that family out as the test set.
pub fn lofo_splits(corpus: &Corpus) -> Result<Vec<Split>> {
    if corpus.family_index.len() < 2 {
        return Err(DatasetError::TooFewFamilies(corpus.family_index.len()));
    }
    Ok(corpus
        .family_index
        .iter()
        .map(|(family, members)| {
            let mut in_train = vec![true; corpus.len()];
            for &i in members {
                in_train[i] = false;
            }
            let mut split = split_from_mask(corpus, &in_train, Strategy::Lofo, 0);
            split.held_out_family = Some(family.clone());
            split
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub se: usize,
    pub not_se: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Sides are disjoint and cover the corpus exactly once.
    pub partition_ok: bool,
    pub duplicated_ids: Vec<String>,
    pub missing_ids: Vec<String>,
    /// Families with members on both sides.
    pub family_overlap: usize,
    pub overlapping_families: Vec<String>,
    pub train_classes: ClassCounts,
    pub test_classes: ClassCounts,
    pub train_families: usize,
    pub test_families: usize,
}

pub fn validate_split(corpus: &Corpus, split: &Split) -> Result<ValidationReport> {
    let (train, test) = corpus.resolve(split)?;
    let mut hits = vec![0u32; corpus.len()];
    let mut side_families: [BTreeSet<&str>; 2] = [BTreeSet::new(), BTreeSet::new()];
    let mut classes = [ClassCounts::default(); 2];
    for (side, indices) in [&train, &test].into_iter().enumerate() {
        for &i in indices {
            hits[i] += 1;
            let s = &corpus.samples[i];
            side_families[side].insert(&s.family);
            match s.label {
                Label::Se => classes[side].se += 1,
                Label::NotSe => classes[side].not_se += 1,
            }
        }
    }
    let duplicated_ids: Vec<String> = hits
        .iter()
        .enumerate()
        .filter(|(_, &h)| h > 1)
        .map(|(i, _)| corpus.samples[i].sample_id.clone())
        .collect();
    let missing_ids: Vec<String> = hits
        .iter()
        .enumerate()
        .filter(|(_, &h)| h == 0)
        .map(|(i, _)| corpus.samples[i].sample_id.clone())
        .collect();
    let overlapping_families: Vec<String> = side_families[0]
        .intersection(&side_families[1])
        .map(|f| f.to_string())
        .collect();
    Ok(ValidationReport {
        partition_ok: duplicated_ids.is_empty() && missing_ids.is_empty(),
        duplicated_ids,
        missing_ids,
        family_overlap: overlapping_families.len(),
        overlapping_families,
        train_classes: classes[0],
        test_classes: classes[1],
        train_families: side_families[0].len(),
        test_families: side_families[1].len(),
    })
}
