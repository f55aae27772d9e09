use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_dex, encrypt_string, DexSpec, Scheme, SynthConfig, SynthError};
use crate::apk::extract_app_strings_from_bytes;
use crate::apk::zip::{write_zip, METHOD_DEFLATE, METHOD_STORED};
use crate::dataset::{Corpus, DatasetError, Label, LoadOptions, Sample};
use crate::features::feature_vector;

/// Strings every family draws from, shared across the corpus.
const COMMON_POOL_SIZE: usize = 400;
const COMMON_SHARE: f64 = 0.2;
const VOCAB_SIZE: usize = 150;

const NON_ASCII: &[char] = &[
    'é', 'ü', 'ß', 'ñ', 'ø', 'ж', 'и', 'л', 'я', 'ф', '中', '文', '日', '本', 'ا', 'ل',
];

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, family: usize, sample: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(family as u64)) ^ sample)
}

/// How a family writes its strings.
#[derive(Debug, Clone)]
struct Style {
    word_len: f64,
    words_per_string: f64,
    alphabet: Vec<char>,
    p_dash: f64,
    p_slash: f64,
    p_plus: f64,
    p_eq: f64,
    p_non_ascii: f64,
}

impl Style {
    fn common() -> Style {
        Style {
            word_len: 6.0,
            words_per_string: 2.0,
            alphabet: ('a'..='z').collect(),
            p_dash: 0.08,
            p_slash: 0.08,
            p_plus: 0.02,
            p_eq: 0.05,
            p_non_ascii: 0.01,
        }
    }

    fn perturbed(&self, strength: f64, rng: &mut ChaCha8Rng) -> Style {
        let mut shift = || rng.random_range(-1.0..=1.0) * strength;
        let word_len = self.word_len * 2f64.powf(shift());
        let words_per_string = self.words_per_string * 2f64.powf(shift());
        let p_dash = (self.p_dash * 4f64.powf(shift())).min(0.6);
        let p_slash = (self.p_slash * 4f64.powf(shift())).min(0.6);
        let p_plus = (self.p_plus * 4f64.powf(shift())).min(0.3);
        let p_eq = (self.p_eq * 4f64.powf(shift())).min(0.6);
        let p_non_ascii = (self.p_non_ascii * 8f64.powf(shift())).min(0.5);
        let keep = self.alphabet.len() as f64 * 2f64.powf(-1.3 * strength * rng.random::<f64>());
        let mut alphabet = self.alphabet.clone();
        alphabet.shuffle(rng);
        alphabet.truncate((keep.round() as usize).clamp(4, self.alphabet.len()));
        alphabet.sort_unstable();
        Style {
            word_len,
            words_per_string,
            alphabet,
            p_dash,
            p_slash,
            p_plus,
            p_eq,
            p_non_ascii,
        }
    }

    fn word(&self, rng: &mut ChaCha8Rng) -> String {
        let lo = ((0.5 * self.word_len).round() as usize).max(1);
        let hi = ((1.5 * self.word_len).round() as usize).max(lo);
        let len = rng.random_range(lo..=hi);
        (0..len)
            .map(|_| {
                if rng.random_bool(self.p_non_ascii) {
                    *NON_ASCII.choose(rng).expect("non-empty")
                } else {
                    *self.alphabet.choose(rng).expect("non-empty")
                }
            })
            .collect()
    }

    fn phrase(&self, vocab: &[String], rng: &mut ChaCha8Rng) -> String {
        let most = ((2.0 * self.words_per_string - 1.0).round() as usize).max(1);
        let k = rng.random_range(1..=most);
        let mut s = vocab.choose(rng).expect("vocab").clone();
        for _ in 1..k {
            let r: f64 = rng.random();
            let sep = if r < self.p_dash {
                '-'
            } else if r < self.p_dash + self.p_slash {
                '/'
            } else if r < self.p_dash + self.p_slash + self.p_plus {
                '+'
            } else {
                ' '
            };
            s.push(sep);
            s.push_str(vocab.choose(rng).expect("vocab"));
        }
        if rng.random_bool(self.p_eq) {
            s = format!("{}={s}", vocab.choose(rng).expect("vocab"));
        }
        s
    }

    fn pool(&self, size: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        let vocab: Vec<String> = (0..VOCAB_SIZE).map(|_| self.word(rng)).collect();
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(size);
        for _ in 0..size * 4 {
            if out.len() == size {
                break;
            }
            let p = self.phrase(&vocab, rng);
            if seen.insert(p.clone()) {
                out.push(p);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FamilyKind {
    Pure(Label),
    Mixed,
}

struct Family {
    name: String,
    token: String,
    size: usize,
    kind: FamilyKind,
    pool: Vec<String>,
    /// SE members of mixed families come from a related sub-lineage.
    variant_pool: Vec<String>,
}

/// Family sizes by rank: `max · rank^-skew` clamped to `[min, max]`.
pub fn family_sizes(cfg: &SynthConfig) -> Vec<usize> {
    let (lo, hi) = cfg.samples_per_family;
    (1..=cfg.n_families)
        .map(|r| ((hi as f64 * (r as f64).powf(-cfg.skew)).round() as usize).clamp(lo, hi))
        .collect()
}

fn plan_families(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Family> {
    let n = cfg.n_families;
    let mut sizes = family_sizes(cfg);
    sizes.shuffle(rng);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_mixed = (cfg.mixed_family_fraction * n as f64).round() as usize;
    let mut kinds = vec![FamilyKind::Mixed; n];
    // Largest first, holding the SE share of samples near se_family_fraction.
    let mut pure: Vec<usize> = order[n_mixed..].to_vec();
    pure.sort_by_key(|&f| std::cmp::Reverse(sizes[f]));
    let (mut se_samples, mut assigned) = (0usize, 0usize);
    for f in pure {
        let se = if assigned == 0 {
            rng.random_bool(cfg.se_family_fraction)
        } else {
            (se_samples as f64) < cfg.se_family_fraction * assigned as f64
        };
        kinds[f] = FamilyKind::Pure(if se { Label::Se } else { Label::NotSe });
        se_samples += if se { sizes[f] } else { 0 };
        assigned += sizes[f];
    }

    let common = Style::common();
    let pool_size = cfg.strings_per_app.1.max(1) * 2;
    let width = n.saturating_sub(1).to_string().len().max(2);
    (0..n)
        .map(|f| {
            let mut frng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, f, u64::MAX));
            let style = common.perturbed(cfg.fingerprint_strength, &mut frng);
            let pool = style.pool(pool_size, &mut frng);
            let variant_pool = if kinds[f] == FamilyKind::Mixed {
                style
                    .perturbed(0.5 * cfg.fingerprint_strength, &mut frng)
                    .pool(pool_size, &mut frng)
            } else {
                Vec::new()
            };
            Family {
                name: format!("fam{f:0width$}"),
                token: format!("f{f}"),
                size: sizes[f],
                kind: kinds[f],
                pool,
                variant_pool,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthApp {
    pub sample_id: String,
    pub family: String,
    pub label: Label,
    pub apk: Vec<u8>,
}

fn camel(word: &str) -> String {
    let mut c = word.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

const ID_WORDS: &[&str] = &[
    "main", "service", "receiver", "loader", "task", "config", "util", "helper", "payload",
    "handler", "worker", "manager", "client", "view", "state", "cache",
];

fn gen_app(
    cfg: &SynthConfig,
    fam_index: usize,
    family: &Family,
    common_pool: &[String],
    sample: usize,
) -> Result<SynthApp, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, fam_index, sample as u64));
    let label = match family.kind {
        FamilyKind::Pure(l) => l,
        FamilyKind::Mixed => match sample {
            0 => Label::Se,
            1 => Label::NotSe,
            _ if rng.random_bool(0.5) => Label::Se,
            _ => Label::NotSe,
        },
    };
    let own_pool = if label == Label::Se && family.kind == FamilyKind::Mixed {
        &family.variant_pool
    } else {
        &family.pool
    };

    let n = rng.random_range(cfg.strings_per_app.0..=cfg.strings_per_app.1);
    let mut seen = HashSet::new();
    let mut strings: Vec<String> = Vec::with_capacity(n);
    for _ in 0..n * 3 {
        if strings.len() == n {
            break;
        }
        let pool = if rng.random_bool(COMMON_SHARE) { common_pool } else { own_pool };
        if let Some(s) = pool.choose(&mut rng) {
            if seen.insert(s.clone()) {
                strings.push(s.clone());
            }
        }
    }
    if label == Label::Se {
        match cfg.scheme {
            Scheme::StripAll => strings.clear(),
            Scheme::Base64Xor => {
                let k = ((cfg.se_string_fraction * strings.len() as f64).ceil() as usize).min(strings.len());
                let key: u8 = rng.random_range(1..=255);
                let mut idx: Vec<usize> = (0..strings.len()).collect();
                idx.shuffle(&mut rng);
                for &i in &idx[..k] {
                    strings[i] = encrypt_string(&strings[i], key);
                }
                let mut kept = HashSet::new();
                strings.retain(|s| kept.insert(s.clone()));
            }
        }
    }

    let n_ids = rng.random_range(cfg.identifiers_per_app.0..=cfg.identifiers_per_app.1);
    let n_dex = rng.random_range(1..=3usize).min(n_ids);
    let mut specs: Vec<DexSpec> = (0..n_dex)
        .map(|_| DexSpec {
            type_descriptors: Vec::new(),
            method_names: Vec::new(),
            field_names: Vec::new(),
            source_file: None,
            non_identifier_strings: Vec::new(),
        })
        .collect();
    for i in 0..n_ids {
        let d = i % n_dex;
        let word = ID_WORDS.choose(&mut rng).expect("words");
        let spec = &mut specs[d];
        if i < n_dex || i % 3 == 0 {
            spec.type_descriptors
                .push(format!("Lcom/{}/{}{i};", family.token, camel(word)));
        } else if i % 3 == 1 {
            spec.method_names.push(format!("do{}{i}", camel(word)));
        } else {
            spec.field_names.push(format!("m{}{i}", camel(word)));
        }
    }
    specs[0].source_file = Some("Main.java".into());
    for (i, s) in strings.into_iter().enumerate() {
        specs[i % n_dex].non_identifier_strings.push(s);
    }

    let mut dex_files = Vec::with_capacity(n_dex);
    for spec in &mut specs {
        let ids = spec.identifier_strings();
        spec.non_identifier_strings.retain(|s| !ids.contains(s));
        dex_files.push(build_dex(spec)?);
    }
    let names: Vec<String> = (0..n_dex)
        .map(|i| if i == 0 { "classes.dex".to_string() } else { format!("classes{}.dex", i + 1) })
        .collect();
    let manifest = format!("<manifest package=\"com.{}\"/>", family.token);
    let mut entries: Vec<(&str, &[u8], u16)> = vec![("AndroidManifest.xml", manifest.as_bytes(), METHOD_STORED)];
    for (name, bytes) in names.iter().zip(&dex_files) {
        entries.push((name, bytes, METHOD_DEFLATE));
    }
    Ok(SynthApp {
        sample_id: format!("{}-{sample:04}", family.name),
        family: family.name.clone(),
        label,
        apk: write_zip(&entries),
    })
}

/// Builds every app in memory, sorted by sample id.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthApp>, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let families = plan_families(cfg, &mut rng);
    let common_pool = Style::common().pool(COMMON_POOL_SIZE, &mut rng);
    let jobs: Vec<(usize, usize)> = families
        .iter()
        .enumerate()
        .flat_map(|(f, fam)| (0..fam.size).map(move |s| (f, s)))
        .collect();
    let mut apps = jobs
        .par_iter()
        .map(|&(f, s)| gen_app(cfg, f, &families[f], &common_pool, s))
        .collect::<Result<Vec<_>, _>>()?;
    apps.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(apps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub samples: usize,
    pub families: usize,
    pub se_samples: usize,
    pub mixed_families: usize,
    pub largest_family_fraction: f64,
}

impl SynthSummary {
    pub fn of(apps: &[SynthApp]) -> Self {
        let mut by_family: std::collections::BTreeMap<&str, [usize; 2]> = Default::default();
        for a in apps {
            by_family.entry(&a.family).or_default()[a.label.index()] += 1;
        }
        let largest = by_family.values().map(|c| c[0] + c[1]).max().unwrap_or(0);
        SynthSummary {
            samples: apps.len(),
            families: by_family.len(),
            se_samples: apps.iter().filter(|a| a.label == Label::Se).count(),
            mixed_families: by_family.values().filter(|c| c[0] > 0 && c[1] > 0).count(),
            largest_family_fraction: if apps.is_empty() { 0.0 } else { largest as f64 / apps.len() as f64 },
        }
    }
}

/// Writes `out_dir/<family>/<sample_id>.apk` and `out_dir/manifest.csv`.
pub fn gen_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthSummary, SynthError> {
    let apps = generate(cfg)?;
    fs::create_dir_all(out_dir)?;
    let mut manifest = csv::Writer::from_path(out_dir.join("manifest.csv"))?;
    manifest.write_record(["sample_id", "family", "label", "path"])?;
    for app in &apps {
        let rel = PathBuf::from(&app.family).join(format!("{}.apk", app.sample_id));
        fs::create_dir_all(out_dir.join(&app.family))?;
        fs::write(out_dir.join(&rel), &app.apk)?;
        let rel = format!("{}/{}.apk", app.family, app.sample_id);
        manifest.write_record([app.sample_id.as_str(), &app.family, app.label.as_str(), &rel])?;
    }
    manifest.flush()?;
    Ok(SynthSummary::of(&apps))
}

/// Extracts features from in-memory apps.
pub fn synth_to_corpus(apps: &[SynthApp], opts: LoadOptions) -> Result<Corpus, DatasetError> {
    let samples = apps
        .par_iter()
        .map(|a| {
            let strings = extract_app_strings_from_bytes(&a.sample_id, &a.apk, opts.strict).map_err(|source| {
                DatasetError::Extract {
                    path: PathBuf::from(&a.sample_id),
                    source,
                }
            })?;
            Ok(Sample {
                sample_id: a.sample_id.clone(),
                family: a.family.clone(),
                label: a.label,
                features: feature_vector(&strings),
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    Corpus::new(samples)
}
