//! Flags apps whose string section has been emptied of non-identifier strings,
//! the footprint of obfuscators that move encrypted strings into code.

use serde::{Deserialize, Serialize};

use crate::apk::AppStrings;
use crate::dataset::Label;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeuristicConfig {
    /// Apps with at most this many non-identifier strings are flagged.
    pub max_strings: usize,
}

pub fn detect_by_count(n_strings: usize, cfg: &HeuristicConfig) -> Label {
    if n_strings <= cfg.max_strings {
        Label::Se
    } else {
        Label::NotSe
    }
}

pub fn detect_dexguard(app: &AppStrings, cfg: &HeuristicConfig) -> Label {
    detect_by_count(app.non_identifier_strings.len(), cfg)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StrippedSummary {
    pub apps: usize,
    pub zero_string_apps: usize,
    pub flagged: usize,
    /// `zero_string_apps / apps`, 0 for no apps.
    pub zero_string_fraction: f64,
}

impl StrippedSummary {
    pub fn from_counts<I: IntoIterator<Item = usize>>(counts: I, cfg: &HeuristicConfig) -> Self {
        let mut s = StrippedSummary::default();
        for n in counts {
            s.apps += 1;
            s.zero_string_apps += usize::from(n == 0);
            s.flagged += usize::from(detect_by_count(n, cfg) == Label::Se);
        }
        if s.apps > 0 {
            s.zero_string_fraction = s.zero_string_apps as f64 / s.apps as f64;
        }
        s
    }

    pub fn line(&self) -> String {
        format!(
            "apps={} zero_strings={} flagged={} zero_string_fraction={}",
            self.apps,
            self.zero_string_apps,
            self.flagged,
            crate::features::format_sig9(self.zero_string_fraction)
        )
    }
}
