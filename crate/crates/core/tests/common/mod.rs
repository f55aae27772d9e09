//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strobe::dataset::{Corpus, LoadOptions};
use strobe::synth::{generate, synth_to_corpus, DexSpec, SynthConfig, FROZEN_SEED};

/// Byte-pattern MUTF-8 decoder: collect UTF-16 units by matching bit masks,
/// then let the standard library pair surrogates.
pub fn ref_decode_mutf8(bytes: &[u8]) -> Option<String> {
    let mut units: Vec<u16> = Vec::new();
    let mut i = 0;
    let cont = |b: Option<&u8>| b.filter(|b| **b >> 6 == 0b10).map(|b| (*b & 0x3F) as u16);
    while i < bytes.len() {
        let b = bytes[i];
        if b >> 7 == 0 {
            if b == 0 {
                return None;
            }
            units.push(b as u16);
            i += 1;
        } else if b >> 5 == 0b110 {
            let c1 = cont(bytes.get(i + 1))?;
            let u = ((b & 0x1F) as u16) << 6 | c1;
            if u != 0 && u < 0x80 {
                return None;
            }
            units.push(u);
            i += 2;
        } else if b >> 4 == 0b1110 {
            let c1 = cont(bytes.get(i + 1))?;
            let c2 = cont(bytes.get(i + 2))?;
            let u = ((b & 0x0F) as u16) << 12 | c1 << 6 | c2;
            if u < 0x800 {
                return None;
            }
            units.push(u);
            i += 3;
        } else {
            return None;
        }
    }
    String::from_utf16(&units).ok()
}

/// Textbook SHA-1.
pub fn ref_sha1(data: &[u8]) -> [u8; 20] {
    let mut h: [u32; 5] = [0x67452301, 0xEFCDAB89, 0x98BADCFE, 0x10325476, 0xC3D2E1F0];
    let mut msg = data.to_vec();
    let bit_len = (data.len() as u64).wrapping_mul(8);
    msg.push(0x80);
    while msg.len() % 64 != 56 {
        msg.push(0);
    }
    msg.extend_from_slice(&bit_len.to_be_bytes());
    for block in msg.chunks(64) {
        let mut w = [0u32; 80];
        for t in 0..16 {
            w[t] = u32::from_be_bytes([block[4 * t], block[4 * t + 1], block[4 * t + 2], block[4 * t + 3]]);
        }
        for t in 16..80 {
            w[t] = (w[t - 3] ^ w[t - 8] ^ w[t - 14] ^ w[t - 16]).rotate_left(1);
        }
        let [mut a, mut b, mut c, mut d, mut e] = h;
        for (t, &wt) in w.iter().enumerate() {
            let (f, k) = match t {
                0..=19 => ((b & c) | (!b & d), 0x5A827999),
                20..=39 => (b ^ c ^ d, 0x6ED9EBA1),
                40..=59 => ((b & c) | (b & d) | (c & d), 0x8F1BBCDC),
                _ => (b ^ c ^ d, 0xCA62C1D6u32),
            };
            let tmp = a.rotate_left(5).wrapping_add(f).wrapping_add(e).wrapping_add(k).wrapping_add(wt);
            e = d;
            d = c;
            c = b.rotate_left(30);
            b = a;
            a = tmp;
        }
        for (hi, v) in h.iter_mut().zip([a, b, c, d, e]) {
            *hi = hi.wrapping_add(v);
        }
    }
    let mut out = [0u8; 20];
    for (i, v) in h.iter().enumerate() {
        out[4 * i..4 * i + 4].copy_from_slice(&v.to_be_bytes());
    }
    out
}

/// Adler-32 with a modulo after every byte.
pub fn ref_adler32(data: &[u8]) -> u32 {
    let (mut a, mut b) = (1u64, 0u64);
    for &x in data {
        a = (a + x as u64) % 65521;
        b = (b + a) % 65521;
    }
    ((b << 16) | a) as u32
}

/// Entropy, UTF-8 bytes, code points, '=', '-', '/', '+', repeats.
pub fn ref_metrics(s: &str) -> [f64; 8] {
    let chars: Vec<char> = s.chars().collect();
    let mut distinct: Vec<(char, usize)> = Vec::new();
    for &c in &chars {
        match distinct.iter_mut().find(|(d, _)| *d == c) {
            Some(e) => e.1 += 1,
            None => distinct.push((c, 1)),
        }
    }
    let n = chars.len() as f64;
    let entropy = if chars.len() < 2 {
        0.0
    } else {
        distinct
            .iter()
            .map(|&(_, k)| {
                let p = k as f64 / n;
                -p * p.ln() / std::f64::consts::LN_2
            })
            .sum::<f64>()
            .abs()
    };
    let mut buf = [0u8; 4];
    let bytes: usize = chars.iter().map(|c| c.encode_utf8(&mut buf).len()).sum();
    let count = |t: char| chars.iter().filter(|&&c| c == t).count() as f64;
    [
        entropy,
        bytes as f64,
        n,
        count('='),
        count('-'),
        count('/'),
        count('+'),
        (chars.len() - distinct.len()) as f64,
    ]
}

pub fn ref_feature_means(strings: &[String]) -> [f64; 8] {
    let mut sum = [0.0; 8];
    for s in strings {
        for (acc, v) in sum.iter_mut().zip(ref_metrics(s)) {
            *acc += v;
        }
    }
    if strings.is_empty() {
        return sum;
    }
    sum.map(|v| v / strings.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefBox {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
}

/// Type-7 quartiles from order statistics, Tukey whiskers by scanning.
pub fn ref_box(values: &[f64]) -> RefBox {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| {
        let h = (v.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    let (q1, median, q3) = (q(0.25), q(0.5), q(0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v.iter().copied().filter(|&x| x >= lo_fence && x <= hi_fence).collect();
    RefBox {
        median,
        q1,
        q3,
        whisker_lo: inside.iter().copied().fold(f64::INFINITY, f64::min),
        whisker_hi: inside.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        outliers: v.iter().copied().filter(|&x| x < lo_fence || x > hi_fence).collect(),
    }
}

pub fn random_text(rng: &mut ChaCha8Rng, max_len: usize) -> String {
    const EXTRA: &[char] = &['=', '-', '/', '+', ' ', 'é', 'Ω', '中', '😀', '\u{0}', '\u{7ff}', '\u{ffff}'];
    let n = rng.random_range(0..=max_len);
    (0..n)
        .map(|_| match rng.random_range(0..4) {
            0 => EXTRA[rng.random_range(0..EXTRA.len())],
            1 => char::from_u32(rng.random_range(0x20..0x7f)).unwrap(),
            2 => loop {
                if let Some(c) = char::from_u32(rng.random_range(0..0x11_0000)) {
                    break c;
                }
            },
            _ => rng.random_range(b'a'..=b'f') as char,
        })
        .collect()
}

/// A valid spec with unique identifiers and non-identifier strings disjoint from them.
pub fn random_spec(rng: &mut ChaCha8Rng) -> DexSpec {
    let mut spec = DexSpec::default();
    let n_types = rng.random_range(1..6);
    for i in 0..n_types {
        spec.type_descriptors.push(if i > 0 && rng.random_bool(0.2) {
            format!("[Lcom/t{i};")
        } else {
            format!("Lcom/{}/C{i};", random_text(rng, 4).replace(['/', ';', '\u{0}'], "_"))
        });
    }
    for i in 0..rng.random_range(0..6) {
        spec.method_names.push(format!("m{i}{}", random_text(rng, 3)));
    }
    for i in 0..rng.random_range(0..6) {
        spec.field_names.push(format!("f{i}{}", random_text(rng, 3)));
    }
    if rng.random_bool(0.5) {
        spec.source_file = Some(format!("{}.java", random_text(rng, 5)));
    }
    dedupe(&mut spec.method_names);
    dedupe(&mut spec.field_names);
    let ids = spec.identifier_strings();
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..rng.random_range(0..40) {
        let s = random_text(rng, 24);
        if !ids.contains(&s) && seen.insert(s.clone()) {
            spec.non_identifier_strings.push(s);
        }
    }
    spec
}

fn dedupe(v: &mut Vec<String>) {
    let mut seen = std::collections::BTreeSet::new();
    v.retain(|s| seen.insert(s.clone()));
}

pub fn chacha(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The frozen confounded corpus, built once per test binary.
pub fn confounded_corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| corpus_of(&SynthConfig::confounded(FROZEN_SEED)))
}

pub fn corpus_of(cfg: &SynthConfig) -> Corpus {
    let apps = generate(cfg).expect("generate");
    synth_to_corpus(&apps, LoadOptions::default()).expect("corpus")
}

/// Nearest family centroid on standardized features, fitted on one random half
/// and scored on the other half's samples from seen families.
pub fn family_probe_accuracy(corpus: &Corpus, seed: u64) -> f64 {
    let mut rng = chacha(seed);
    let n = corpus.len();
    let fit: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let rows: Vec<[f64; 8]> = corpus.samples.iter().map(|s| s.features.values()).collect();
    let fit_rows: Vec<&[f64; 8]> = rows.iter().zip(&fit).filter(|(_, &f)| f).map(|(r, _)| r).collect();
    let m = fit_rows.len() as f64;
    let mean: [f64; 8] = std::array::from_fn(|k| fit_rows.iter().map(|r| r[k]).sum::<f64>() / m);
    let sd: [f64; 8] = std::array::from_fn(|k| {
        (fit_rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / m).sqrt().max(1e-9)
    });
    let z = |r: &[f64; 8]| -> [f64; 8] { std::array::from_fn(|k| (r[k] - mean[k]) / sd[k]) };
    let mut centroids: std::collections::BTreeMap<&str, ([f64; 8], usize)> = Default::default();
    for (i, s) in corpus.samples.iter().enumerate() {
        if fit[i] {
            let e = centroids.entry(&s.family).or_insert(([0.0; 8], 0));
            for (c, v) in e.0.iter_mut().zip(z(&rows[i])) {
                *c += v;
            }
            e.1 += 1;
        }
    }
    let centroids: Vec<(&str, [f64; 8])> = centroids
        .into_iter()
        .map(|(f, (sum, k))| (f, sum.map(|v| v / k as f64)))
        .collect();
    let (mut hit, mut total) = (0usize, 0usize);
    for (i, s) in corpus.samples.iter().enumerate() {
        if fit[i] || !centroids.iter().any(|(f, _)| *f == s.family) {
            continue;
        }
        let x = z(&rows[i]);
        let best = centroids
            .iter()
            .map(|(f, c)| (f, c.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0;
        total += 1;
        hit += usize::from(*best == s.family);
    }
    hit as f64 / total as f64
}
