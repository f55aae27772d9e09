//! Detection of string encryption in Android apps, with leakage-aware evaluation.
//!
//! The pipeline reads DEX string sections out of APKs, averages eight string
//! statistics per app, and trains batch or online classifiers on them under
//! random, family-disjoint or leave-one-family-out splits.

pub mod apk;
pub mod dataset;
pub mod dex;
pub mod evaluation;
pub mod features;
pub mod heuristic;
pub mod learners;
pub mod synth;

pub use apk::{extract_app_strings, AppStrings};
pub use dataset::{Corpus, Label, Sample, Split, Strategy};
pub use dex::{classify_strings, parse_dex, DexFile, StringPool};
pub use features::{feature_vector, FeatureVector};
