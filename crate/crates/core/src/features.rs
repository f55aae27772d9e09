//! The eight per-app string statistics used for string-encryption detection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::apk::AppStrings;

pub const FEATURE_COUNT: usize = 8;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "avg_entropy",
    "avg_wordsize",
    "avg_length",
    "avg_eq",
    "avg_dash",
    "avg_slash",
    "avg_plus",
    "avg_repeat",
];

/// Shannon entropy in bits over code-point frequencies.
pub fn shannon_entropy(s: &str) -> f64 {
    let mut counts: BTreeMap<char, usize> = BTreeMap::new();
    let mut n = 0usize;
    for c in s.chars() {
        *counts.entry(c).or_default() += 1;
        n += 1;
    }
    if n <= 1 {
        return 0.0;
    }
    let n = n as f64;
    let h: f64 = counts
        .values()
        .map(|&k| {
            let p = k as f64 / n;
            -p * p.log2()
        })
        .sum();
    // A single repeated symbol sums to -0.0.
    h.max(0.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerStringMetrics {
    pub entropy: f64,
    /// UTF-8 byte length.
    pub wordsize: usize,
    /// Code points.
    pub length: usize,
    pub eq_count: usize,
    pub dash_count: usize,
    pub slash_count: usize,
    pub plus_count: usize,
    /// `length - distinct characters`.
    pub repeat_count: usize,
}

pub fn per_string_metrics(s: &str) -> PerStringMetrics {
    let mut m = PerStringMetrics {
        entropy: shannon_entropy(s),
        wordsize: s.len(),
        ..PerStringMetrics::default()
    };
    let mut distinct = std::collections::HashSet::new();
    for c in s.chars() {
        m.length += 1;
        distinct.insert(c);
        match c {
            '=' => m.eq_count += 1,
            '-' => m.dash_count += 1,
            '/' => m.slash_count += 1,
            '+' => m.plus_count += 1,
            _ => {}
        }
    }
    m.repeat_count = m.length - distinct.len();
    m
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub avg_entropy: f64,
    pub avg_wordsize: f64,
    pub avg_length: f64,
    pub avg_eq: f64,
    pub avg_dash: f64,
    pub avg_slash: f64,
    pub avg_plus: f64,
    pub avg_repeat: f64,
    pub n_strings: usize,
}

impl FeatureVector {
    /// Averages in [`FEATURE_NAMES`] order.
    pub fn values(&self) -> [f64; FEATURE_COUNT] {
        [
            self.avg_entropy,
            self.avg_wordsize,
            self.avg_length,
            self.avg_eq,
            self.avg_dash,
            self.avg_slash,
            self.avg_plus,
            self.avg_repeat,
        ]
    }

    pub fn from_values(v: [f64; FEATURE_COUNT], n_strings: usize) -> Self {
        FeatureVector {
            avg_entropy: v[0],
            avg_wordsize: v[1],
            avg_length: v[2],
            avg_eq: v[3],
            avg_dash: v[4],
            avg_slash: v[5],
            avg_plus: v[6],
            avg_repeat: v[7],
            n_strings,
        }
    }

    /// Mean of each metric over `strings`; an empty list gives the all-zero vector.
    pub fn from_strings<S: AsRef<str>>(strings: &[S]) -> Self {
        if strings.is_empty() {
            return FeatureVector::default();
        }
        let mut sums = [0.0f64; FEATURE_COUNT];
        for s in strings {
            let m = per_string_metrics(s.as_ref());
            let row = [
                m.entropy,
                m.wordsize as f64,
                m.length as f64,
                m.eq_count as f64,
                m.dash_count as f64,
                m.slash_count as f64,
                m.plus_count as f64,
                m.repeat_count as f64,
            ];
            for (acc, v) in sums.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let n = strings.len();
        FeatureVector::from_values(sums.map(|s| s / n as f64), n)
    }
}

pub fn feature_vector(app: &AppStrings) -> FeatureVector {
    FeatureVector::from_strings(&app.non_identifier_strings)
}

/// `%.9g`-style formatting: nine significant digits, trailing zeros trimmed.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..9).contains(&exp) {
        format!("{}e{}{:02}", trim(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim(&format!("{:.*}", decimals, x))
    }
}

pub const FEATURE_CSV_HEADER: [&str; 13] = [
    "sample_id",
    "family",
    "label",
    "avg_entropy",
    "avg_wordsize",
    "avg_length",
    "avg_eq",
    "avg_dash",
    "avg_slash",
    "avg_plus",
    "avg_repeat",
    "n_strings",
    "decode_failures",
];

/// One feature CSV record, matching [`FEATURE_CSV_HEADER`].
pub fn feature_csv_record(
    sample_id: &str,
    family: &str,
    label: &str,
    fv: &FeatureVector,
    decode_failures: usize,
) -> Vec<String> {
    let mut row = vec![sample_id.to_string(), family.to_string(), label.to_string()];
    row.extend(fv.values().iter().map(|&v| format_sig9(v)));
    row.push(fv.n_strings.to_string());
    row.push(decode_failures.to_string());
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_units() {
        assert_eq!(shannon_entropy("aaaa"), 0.0);
        assert_eq!(shannon_entropy("ab"), 1.0);
        assert_eq!(shannon_entropy("abcd"), 2.0);
        assert_eq!(shannon_entropy(""), 0.0);
        assert_eq!(shannon_entropy("x"), 0.0);
    }

    #[test]
    fn metrics_direct_counts() {
        let m = per_string_metrics("a==b");
        assert_eq!((m.eq_count, m.length, m.repeat_count, m.wordsize), (2, 4, 1, 4));
        assert_eq!(per_string_metrics(""), PerStringMetrics::default());
        let m = per_string_metrics("Ω+");
        assert_eq!((m.wordsize, m.length, m.plus_count), (3, 2, 1));
        let m = per_string_metrics("a-b/c+d-");
        assert_eq!((m.dash_count, m.slash_count, m.plus_count), (2, 1, 1));
    }

    #[test]
    fn averages() {
        let fv = FeatureVector::from_strings(&["aa", "bb"]);
        assert_eq!(fv.avg_entropy, 0.0);
        assert_eq!(fv.avg_length, 2.0);
        assert_eq!(fv.avg_repeat, 1.0);
        assert_eq!(fv.n_strings, 2);
    }

    #[test]
    fn empty_is_all_zero() {
        let fv = FeatureVector::from_strings::<&str>(&[]);
        assert_eq!(fv, FeatureVector::default());
        assert!(fv.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sig9() {
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(1.0), "1");
        assert_eq!(format_sig9(2.5), "2.5");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(123456789.4), "123456789");
        assert_eq!(format_sig9(1234567890.0), "1.23456789e+09");
        assert_eq!(format_sig9(0.0001234), "0.0001234");
        assert_eq!(format_sig9(0.00001234), "1.234e-05");
        assert_eq!(format_sig9(3.9999999996), "4");
        assert_eq!(format_sig9(-2.25), "-2.25");
    }
}
