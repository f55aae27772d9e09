use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use strobe::apk::{extract_app_strings, ApkError};
use strobe::dataset::{
    corpus_from_rows, family_disjoint_split, lofo_splits, random_split, read_manifest,
    validate_split, Corpus, DatasetError, Label, LoadOptions, ManifestRow, ManifestSource, Split,
    Strategy, ValidationReport,
};
use strobe::evaluation::{
    holdout_eval, prequential_eval, run_experiment_with, run_lofo, train_learner, EvalError,
    EvalResult, LearnerKind, LearnerOptions, Trained, RUN_CSV_HEADER,
};
use strobe::features::{feature_csv_record, feature_vector, format_sig9, FEATURE_CSV_HEADER};
use strobe::heuristic::{detect_by_count, HeuristicConfig, StrippedSummary};
use strobe::learners::{online_init, BatchModel, Classifier, LearnError, OnlineModel};
use strobe::synth::{gen_corpus, Scheme, SynthConfig, SynthError};

const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "strobe", version, about = "String-encryption detection for Android apps with leakage-aware evaluation")]
struct Cli {
    /// Seed for every randomized step [default: 42]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for extraction and experiment repetitions
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Drop apps containing any undecodable string entry
    #[arg(long, global = true)]
    strict: bool,
    /// Output file (directory for `synth`); stdout when omitted
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Confounded,
    Control,
    Stripped,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Base64Xor,
    StripAll,
}

#[derive(Subcommand)]
enum Command {
    /// Feature CSV with one row per APK
    ///
    /// With --apk-dir, labels come from `<dir>/manifest.csv` when present;
    /// otherwise the family is the parent directory and the label UNKNOWN.
    Extract {
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        apk_dir: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Generate a synthetic APK corpus and its manifest into --out
    Synth {
        /// SynthConfig JSON; flags below override its fields
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::Confounded)]
        preset: Preset,
        #[arg(long)]
        n_families: Option<usize>,
        #[arg(long)]
        skew: Option<f64>,
        #[arg(long)]
        se_family_fraction: Option<f64>,
        #[arg(long)]
        mixed_family_fraction: Option<f64>,
        #[arg(long)]
        fingerprint_strength: Option<f64>,
        #[arg(long)]
        se_string_fraction: Option<f64>,
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
    },
    /// Build one train/test split (all splits for LOFO) with its validation report
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        strategy: Strategy,
    },
    /// Train a model and write it as JSON
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        learner: LearnerKind,
        /// Train only on the training side of this split
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Score a trained model without updating it
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Score only the test side of this split
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Test-then-train pass of the online ensemble over the manifest order
    Prequential {
        #[arg(long)]
        manifest: PathBuf,
        /// Stream in a seeded shuffled order instead
        #[arg(long)]
        shuffle: bool,
    },
    /// Leave-one-family-out evaluation
    Lofo {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        learner: LearnerKind,
    },
    /// Repeated split-train-evaluate runs with box statistics
    Experiment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        learner: LearnerKind,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        /// Also write a gnuplot candlestick data file
        #[arg(long)]
        gnuplot: Option<PathBuf>,
    },
    /// Flag apps whose string section holds no non-identifier strings
    PraguardCheck {
        #[arg(long, conflicts_with = "apk_dir", required_unless_present = "apk_dir")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        apk_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        max_strings: usize,
    },
    /// Corpus composition per family
    Stats {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Parse(String),
    Dataset(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Parse(_) => 2,
            Failure::Dataset(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Parse(_) => "parse",
            Failure::Dataset(_) => "dataset",
            Failure::Io(_) => "io",
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Parse(m) | Failure::Dataset(m) | Failure::Io(m) => m,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            Failure::Io(e.to_string())
        } else {
            Failure::Parse(e.to_string())
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Parse(e.to_string())
        }
    }
}

impl From<ApkError> for Failure {
    fn from(e: ApkError) -> Self {
        match e {
            ApkError::Io(e) => e.into(),
            other => Failure::Parse(other.to_string()),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(e) => e.into(),
            DatasetError::Csv(e) => e.into(),
            DatasetError::Extract { path, source } => match source {
                ApkError::Io(io) => Failure::Io(format!("{}: {io}", path.display())),
                other => Failure::Parse(format!("{}: {other}", path.display())),
            },
            e @ (DatasetError::BadHeader(_) | DatasetError::BadRow { .. } | DatasetError::UnknownLabel { .. }) => {
                Failure::Parse(e.to_string())
            }
            other => Failure::Dataset(other.to_string()),
        }
    }
}

impl From<LearnError> for Failure {
    fn from(e: LearnError) -> Self {
        Failure::Dataset(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Dataset(d) => d.into(),
            other => Failure::Dataset(other.to_string()),
        }
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidConfig(m) => Failure::Usage(format!("invalid config: {m}")),
            SynthError::Io(e) => e.into(),
            SynthError::Csv(e) => e.into(),
            other => Failure::Dataset(other.to_string()),
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

struct Ctx {
    seed: u64,
    seed_given: bool,
    strict: bool,
    out: Option<PathBuf>,
    format: Format,
}

impl Ctx {
    fn emit(&self, bytes: &[u8]) -> Outcome {
        match &self.out {
            Some(p) => fs::write(p, bytes)?,
            None => std::io::stdout().write_all(bytes)?,
        }
        Ok(())
    }

    fn emit_json<T: Serialize>(&self, value: &T) -> Outcome {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.emit(s.as_bytes())
    }

    fn emit_csv(&self, header: &[&str], rows: &[Vec<String>]) -> Outcome {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Failure::Io(e.to_string()))?;
        self.emit(&bytes)
    }

    fn load(&self, manifest: &Path) -> Outcome<Corpus> {
        let corpus = corpus_from_rows(read_manifest(manifest)?, LoadOptions { strict: self.strict })?;
        for id in &corpus.excluded {
            eprintln!("warning: excluded {id}: undecodable string entries");
        }
        Ok(corpus)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "learner", content = "model")]
enum ModelFile {
    #[serde(rename = "BATCH")]
    Batch(BatchModel),
    #[serde(rename = "ONLINE")]
    Online(OnlineModel),
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    split: Split,
    report: ValidationReport,
}

fn read_split(path: &Path) -> Outcome<Split> {
    let file: SplitFile = serde_json::from_slice(&fs::read(path)?)?;
    Ok(file.split)
}

fn split_side(corpus: &Corpus, split: Option<&Path>, train_side: bool) -> Outcome<Vec<strobe::Sample>> {
    match split {
        None => Ok(corpus.samples.clone()),
        Some(p) => {
            let (train, test) = corpus.resolve(&read_split(p)?)?;
            Ok(corpus.subset(if train_side { &train } else { &test }))
        }
    }
}

fn apk_files(dir: &Path) -> Outcome<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Failure::Io(e.to_string()))?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == "apk") {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn family_of(dir: &Path, path: &Path) -> String {
    path.parent()
        .filter(|p| *p != dir)
        .and_then(|p| p.strip_prefix(dir).ok())
        .map(|p| p.to_string_lossy().replace('\\', "/"))
        .unwrap_or_else(|| "unknown".into())
}

struct Extracted {
    sample_id: String,
    family: String,
    label: String,
    app: strobe::AppStrings,
}

fn extract_dir(ctx: &Ctx, dir: &Path) -> Outcome<Vec<Extracted>> {
    let labels: BTreeMap<String, (String, Label)> = {
        let m = dir.join("manifest.csv");
        if m.is_file() {
            read_manifest(&m)?
                .into_iter()
                .map(|r| (r.sample_id, (r.family, r.label)))
                .collect()
        } else {
            BTreeMap::new()
        }
    };
    let files = apk_files(dir)?;
    let mut seen = std::collections::BTreeSet::new();
    for f in &files {
        if !seen.insert(stem(f)) {
            return Err(DatasetError::DuplicateId(stem(f)).into());
        }
    }
    let results: Vec<Outcome<Extracted>> = files
        .par_iter()
        .map(|path| {
            let sample_id = stem(path);
            let app = extract_app_strings(path, ctx.strict).map_err(|e| {
                let rel = path.strip_prefix(dir).unwrap_or(path);
                Failure::from(DatasetError::Extract {
                    path: rel.to_path_buf(),
                    source: e,
                })
            })?;
            let (family, label) = match labels.get(&sample_id) {
                Some((f, l)) => (f.clone(), l.as_str().to_string()),
                None => (family_of(dir, path), "UNKNOWN".to_string()),
            };
            Ok(Extracted {
                sample_id,
                family,
                label,
                app,
            })
        })
        .collect();
    results.into_iter().collect()
}

fn extract_manifest(ctx: &Ctx, manifest: &Path) -> Outcome<Vec<Extracted>> {
    let rows = read_manifest(manifest)?;
    let results: Vec<Outcome<Option<Extracted>>> = rows
        .into_par_iter()
        .map(|row: ManifestRow| match row.source {
            ManifestSource::Path(path) => {
                let app = extract_app_strings(&path, ctx.strict).map_err(|source| {
                    Failure::from(DatasetError::Extract {
                        path: PathBuf::from(&row.sample_id),
                        source,
                    })
                })?;
                Ok(Some(Extracted {
                    sample_id: row.sample_id,
                    family: row.family,
                    label: row.label.as_str().to_string(),
                    app,
                }))
            }
            ManifestSource::Features(_) => Ok(None),
        })
        .collect();
    let mut out = Vec::new();
    for r in results {
        match r? {
            Some(e) => out.push(e),
            None => {
                return Err(Failure::Usage(
                    "extract needs a manifest with a path column".into(),
                ))
            }
        }
    }
    Ok(out)
}

fn cmd_extract(ctx: &Ctx, apk_dir: Option<&Path>, manifest: Option<&Path>) -> Outcome {
    let mut apps = match (apk_dir, manifest) {
        (_, Some(m)) => extract_manifest(ctx, m)?,
        (Some(d), None) => extract_dir(ctx, d)?,
        (None, None) => return Err(Failure::Usage("need --apk-dir or --manifest".into())),
    };
    apps.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let mut rows = Vec::new();
    for e in &apps {
        if e.app.strict_excluded {
            eprintln!("warning: excluded {}: {} undecodable string entries", e.sample_id, e.app.decode_failures);
            continue;
        }
        let fv = feature_vector(&e.app);
        rows.push(feature_csv_record(&e.sample_id, &e.family, &e.label, &fv, e.app.decode_failures));
    }
    match ctx.format {
        Format::Csv => ctx.emit_csv(&FEATURE_CSV_HEADER, &rows),
        Format::Json => {
            let objects: Vec<BTreeMap<&str, &str>> = rows
                .iter()
                .map(|r| FEATURE_CSV_HEADER.iter().copied().zip(r.iter().map(String::as_str)).collect())
                .collect();
            ctx.emit_json(&objects)
        }
    }
}

struct SynthOverrides {
    n_families: Option<usize>,
    skew: Option<f64>,
    se_family_fraction: Option<f64>,
    mixed_family_fraction: Option<f64>,
    fingerprint_strength: Option<f64>,
    se_string_fraction: Option<f64>,
    scheme: Option<SchemeArg>,
}

fn cmd_synth(ctx: &Ctx, config: Option<&Path>, preset: Preset, o: SynthOverrides) -> Outcome {
    let mut cfg = match config {
        Some(p) => serde_json::from_slice::<SynthConfig>(&fs::read(p)?)?,
        None => match preset {
            Preset::Confounded => SynthConfig::confounded(DEFAULT_SEED),
            Preset::Control => SynthConfig::control(DEFAULT_SEED),
            Preset::Stripped => SynthConfig::stripped(DEFAULT_SEED),
        },
    };
    if ctx.seed_given {
        cfg.seed = ctx.seed;
    }
    if let Some(v) = o.n_families {
        cfg.n_families = v;
    }
    if let Some(v) = o.skew {
        cfg.skew = v;
    }
    if let Some(v) = o.se_family_fraction {
        cfg.se_family_fraction = v;
    }
    if let Some(v) = o.mixed_family_fraction {
        cfg.mixed_family_fraction = v;
    }
    if let Some(v) = o.fingerprint_strength {
        cfg.fingerprint_strength = v;
    }
    if let Some(v) = o.se_string_fraction {
        cfg.se_string_fraction = v;
    }
    if let Some(s) = o.scheme {
        cfg.scheme = match s {
            SchemeArg::Base64Xor => Scheme::Base64Xor,
            SchemeArg::StripAll => Scheme::StripAll,
        };
    }
    let dir = ctx
        .out
        .as_ref()
        .ok_or_else(|| Failure::Usage("synth needs --out <dir>".into()))?;
    let summary = gen_corpus(&cfg, dir)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn make_split(corpus: &Corpus, strategy: Strategy, seed: u64) -> Outcome<Vec<Split>> {
    Ok(match strategy {
        Strategy::Random => vec![random_split(corpus, seed)?],
        Strategy::FamilyDisjoint => vec![family_disjoint_split(corpus, seed)?],
        Strategy::Lofo => lofo_splits(corpus)?,
    })
}

fn cmd_split(ctx: &Ctx, manifest: &Path, strategy: Strategy) -> Outcome {
    let corpus = ctx.load(manifest)?;
    let splits = make_split(&corpus, strategy, ctx.seed)?;
    match ctx.format {
        Format::Json => {
            let files = splits
                .into_iter()
                .map(|split| {
                    let report = validate_split(&corpus, &split)?;
                    Ok(SplitFile { split, report })
                })
                .collect::<Outcome<Vec<_>>>()?;
            if strategy == Strategy::Lofo {
                ctx.emit_json(&files)
            } else {
                ctx.emit_json(&files[0])
            }
        }
        Format::Csv => {
            let mut rows = Vec::new();
            for s in &splits {
                let fold = s.held_out_family.clone().unwrap_or_default();
                for id in &s.train_ids {
                    rows.push(vec![fold.clone(), id.clone(), "train".into()]);
                }
                for id in &s.test_ids {
                    rows.push(vec![fold.clone(), id.clone(), "test".into()]);
                }
            }
            ctx.emit_csv(&["held_out_family", "sample_id", "side"], &rows)
        }
    }
}

fn cmd_train(ctx: &Ctx, manifest: &Path, learner: LearnerKind, split: Option<&Path>) -> Outcome {
    let corpus = ctx.load(manifest)?;
    let train = split_side(&corpus, split, true)?;
    let model = match train_learner(learner, &train, ctx.seed, &LearnerOptions::default())? {
        Trained::Batch(m) => ModelFile::Batch(m),
        Trained::Online(m) => ModelFile::Online(m),
    };
    ctx.emit_json(&model)
}

fn eval_row(r: &EvalResult) -> Vec<String> {
    let c = r.confusion;
    vec![
        format_sig9(r.accuracy),
        format_sig9(r.precision),
        format_sig9(r.recall),
        format_sig9(r.f1),
        c.tp.to_string(),
        c.fp.to_string(),
        c.tn.to_string(),
        c.fn_.to_string(),
    ]
}

const EVAL_CSV_HEADER: [&str; 8] = ["accuracy", "precision", "recall", "f1", "tp", "fp", "tn", "fn"];

fn cmd_eval(ctx: &Ctx, manifest: &Path, model: &Path, split: Option<&Path>) -> Outcome {
    let corpus = ctx.load(manifest)?;
    let test = split_side(&corpus, split, false)?;
    let model: ModelFile = serde_json::from_slice(&fs::read(model)?)?;
    let result = match &model {
        ModelFile::Batch(m) => holdout_eval(|x| m.predict(x), &test)?,
        ModelFile::Online(m) => holdout_eval(|x| m.predict(x), &test)?,
    };
    match ctx.format {
        Format::Json => ctx.emit_json(&result),
        Format::Csv => ctx.emit_csv(&EVAL_CSV_HEADER, &[eval_row(&result)]),
    }
}

fn cmd_prequential(ctx: &Ctx, manifest: &Path, shuffle: bool) -> Outcome {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let corpus = ctx.load(manifest)?;
    let mut stream = corpus.samples.clone();
    if shuffle {
        stream.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(ctx.seed));
    }
    let opts = LearnerOptions::default();
    let mut model = online_init(opts.ensemble_size, opts.poisson_lambda, ctx.seed)?;
    let result = prequential_eval(&mut model, &stream)?;
    match ctx.format {
        Format::Json => ctx.emit_json(&result),
        Format::Csv => {
            let rows: Vec<Vec<String>> = stream
                .iter()
                .zip(&result.per_sample_correct)
                .zip(&result.running_accuracy)
                .enumerate()
                .map(|(i, ((s, ok), acc))| vec![i.to_string(), s.sample_id.clone(), ok.to_string(), format_sig9(*acc)])
                .collect();
            ctx.emit_csv(&["index", "sample_id", "correct", "running_accuracy"], &rows)
        }
    }
}

fn cmd_lofo(ctx: &Ctx, manifest: &Path, learner: LearnerKind) -> Outcome {
    let corpus = ctx.load(manifest)?;
    let summary = run_lofo(&corpus, learner, ctx.seed, &LearnerOptions::default())?;
    match ctx.format {
        Format::Json => ctx.emit_json(&summary),
        Format::Csv => {
            let rows: Vec<Vec<String>> = summary
                .families
                .iter()
                .map(|f| {
                    let c = f.confusion;
                    vec![
                        f.family.clone(),
                        f.n.to_string(),
                        format_sig9(f.accuracy),
                        c.tp.to_string(),
                        c.fp.to_string(),
                        c.tn.to_string(),
                        c.fn_.to_string(),
                    ]
                })
                .collect();
            ctx.emit_csv(&["family", "n", "accuracy", "tp", "fp", "tn", "fn"], &rows)
        }
    }
}

fn cmd_experiment(
    ctx: &Ctx,
    manifest: &Path,
    strategy: Strategy,
    learner: LearnerKind,
    reps: usize,
    gnuplot: Option<&Path>,
) -> Outcome {
    if strategy == Strategy::Lofo {
        return Err(Failure::Usage("use the lofo subcommand for leave-one-family-out".into()));
    }
    if reps == 0 {
        return Err(Failure::Usage("--reps must be ≥ 1".into()));
    }
    let corpus = ctx.load(manifest)?;
    let summary = run_experiment_with(&corpus, strategy, learner, reps, ctx.seed, &LearnerOptions::default())?;
    for f in &summary.failed_runs {
        eprintln!("warning: run with seed {} skipped: {}", f.seed, f.error);
    }
    if let Some(path) = gnuplot {
        let b = &summary.box_stats;
        let mut text = String::from("# x q1 whisker_lo whisker_hi q3 median\n");
        text += &b.gnuplot_row(1);
        text.push('\n');
        for o in &b.outliers {
            text += &format!("# outlier {o}\n");
        }
        fs::write(path, text)?;
    }
    match ctx.format {
        Format::Json => ctx.emit_json(&summary),
        Format::Csv => ctx.emit_csv(&RUN_CSV_HEADER, &summary.csv_rows()),
    }
}

#[derive(Serialize)]
struct VerdictRow {
    sample_id: String,
    n_strings: usize,
    verdict: Label,
}

fn cmd_praguard(ctx: &Ctx, manifest: Option<&Path>, apk_dir: Option<&Path>, max_strings: usize) -> Outcome {
    let cfg = HeuristicConfig { max_strings };
    let mut counts: Vec<(String, usize)> = match (manifest, apk_dir) {
        (Some(m), _) => ctx
            .load(m)?
            .samples
            .iter()
            .map(|s| (s.sample_id.clone(), s.features.n_strings))
            .collect(),
        (None, Some(d)) => extract_dir(ctx, d)?
            .into_iter()
            .filter(|e| !e.app.strict_excluded)
            .map(|e| (e.sample_id, e.app.non_identifier_strings.len()))
            .collect(),
        (None, None) => return Err(Failure::Usage("need --manifest or --apk-dir".into())),
    };
    counts.sort();
    let rows: Vec<VerdictRow> = counts
        .iter()
        .map(|(id, n)| VerdictRow {
            sample_id: id.clone(),
            n_strings: *n,
            verdict: detect_by_count(*n, &cfg),
        })
        .collect();
    let summary = StrippedSummary::from_counts(counts.iter().map(|(_, n)| *n), &cfg);
    match ctx.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Report<'a> {
                rows: &'a [VerdictRow],
                summary: StrippedSummary,
            }
            ctx.emit_json(&Report { rows: &rows, summary })
        }
        Format::Csv => {
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| vec![r.sample_id.clone(), r.n_strings.to_string(), r.verdict.as_str().to_string()])
                .collect();
            ctx.emit_csv(&["sample_id", "n_strings", "verdict"], &table)?;
            if ctx.out.is_some() {
                println!("{}", summary.line());
            } else {
                eprintln!("{}", summary.line());
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct FamilyStats {
    family: String,
    n: usize,
    se: usize,
    not_se: usize,
}

#[derive(Serialize)]
struct CorpusStats {
    samples: usize,
    families: usize,
    se_samples: usize,
    not_se_samples: usize,
    mixed_families: usize,
    largest_family: String,
    largest_family_fraction: f64,
    excluded: Vec<String>,
    per_family: Vec<FamilyStats>,
}

fn cmd_stats(ctx: &Ctx, manifest: &Path) -> Outcome {
    let corpus = ctx.load(manifest)?;
    let per_family: Vec<FamilyStats> = corpus
        .family_index
        .iter()
        .map(|(family, members)| {
            let se = members.iter().filter(|&&i| corpus.samples[i].label == Label::Se).count();
            FamilyStats {
                family: family.clone(),
                n: members.len(),
                se,
                not_se: members.len() - se,
            }
        })
        .collect();
    let largest = per_family.iter().max_by(|a, b| a.n.cmp(&b.n).then(b.family.cmp(&a.family)));
    let se_samples = per_family.iter().map(|f| f.se).sum();
    let stats = CorpusStats {
        samples: corpus.len(),
        families: per_family.len(),
        se_samples,
        not_se_samples: corpus.len() - se_samples,
        mixed_families: per_family.iter().filter(|f| f.se > 0 && f.not_se > 0).count(),
        largest_family: largest.map(|f| f.family.clone()).unwrap_or_default(),
        largest_family_fraction: match largest {
            Some(f) if !corpus.is_empty() => f.n as f64 / corpus.len() as f64,
            _ => 0.0,
        },
        excluded: corpus.excluded.clone(),
        per_family,
    };
    match ctx.format {
        Format::Json => ctx.emit_json(&stats),
        Format::Csv => {
            let rows: Vec<Vec<String>> = stats
                .per_family
                .iter()
                .map(|f| vec![f.family.clone(), f.n.to_string(), f.se.to_string(), f.not_se.to_string()])
                .collect();
            ctx.emit_csv(&["family", "n", "se", "not_se"], &rows)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Failure::Usage("--jobs must be ≥ 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let ctx = Ctx {
        seed: cli.seed.unwrap_or(DEFAULT_SEED),
        seed_given: cli.seed.is_some(),
        strict: cli.strict,
        out: cli.out,
        format: cli.format,
    };
    match cli.command {
        Command::Extract { apk_dir, manifest } => cmd_extract(&ctx, apk_dir.as_deref(), manifest.as_deref()),
        Command::Synth {
            config,
            preset,
            n_families,
            skew,
            se_family_fraction,
            mixed_family_fraction,
            fingerprint_strength,
            se_string_fraction,
            scheme,
        } => cmd_synth(
            &ctx,
            config.as_deref(),
            preset,
            SynthOverrides {
                n_families,
                skew,
                se_family_fraction,
                mixed_family_fraction,
                fingerprint_strength,
                se_string_fraction,
                scheme,
            },
        ),
        Command::Split { manifest, strategy } => cmd_split(&ctx, &manifest, strategy),
        Command::Train { manifest, learner, split } => cmd_train(&ctx, &manifest, learner, split.as_deref()),
        Command::Eval { manifest, model, split } => cmd_eval(&ctx, &manifest, &model, split.as_deref()),
        Command::Prequential { manifest, shuffle } => cmd_prequential(&ctx, &manifest, shuffle),
        Command::Lofo { manifest, learner } => cmd_lofo(&ctx, &manifest, learner),
        Command::Experiment {
            manifest,
            strategy,
            learner,
            reps,
            gnuplot,
        } => cmd_experiment(&ctx, &manifest, strategy, learner, reps, gnuplot.as_deref()),
        Command::PraguardCheck {
            manifest,
            apk_dir,
            max_strings,
        } => cmd_praguard(&ctx, manifest.as_deref(), apk_dir.as_deref(), max_strings),
        Command::Stats { manifest } => cmd_stats(&ctx, &manifest),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            let first = e.to_string().lines().next().unwrap_or_default().to_string();
            let failure = Failure::Usage(first);
            eprintln!("{}", error_line(&failure));
            return ExitCode::from(failure.code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", error_line(&f));
            ExitCode::from(f.code())
        }
    }
}

fn error_line(f: &Failure) -> String {
    serde_json::json!({ "error": f.kind(), "code": f.code(), "message": f.message() }).to_string()
}
