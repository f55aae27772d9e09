//! APK containers: locate the multi-dex payloads and gather the
//! non-identifier strings of every contained DEX file.

pub mod zip;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dex::{classify_strings, parse_dex, DexError};

#[derive(Debug, Error)]
pub enum ApkError {
    #[error("not a zip archive: no end-of-central-directory record")]
    NotAZip,
    #[error("corrupt entry {name}: {reason}")]
    CorruptEntry { name: String, reason: String },
    #[error("archive contains no classes*.dex entry")]
    NoDex,
    #[error("{name}: {source}")]
    Dex {
        name: String,
        #[source]
        source: DexError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Position of `name` in the multi-dex sequence: `classes.dex` is 1,
/// `classesN.dex` is N for N ≥ 2. Anything else, including nested paths, is not a dex.
pub fn multidex_index(name: &str) -> Option<u32> {
    let stem = name.strip_prefix("classes")?.strip_suffix(".dex")?;
    if stem.is_empty() {
        return Some(1);
    }
    if stem.starts_with('0') || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    stem.parse().ok().filter(|&n| n >= 2)
}

/// Returns every multi-dex payload in numeric order, decompressed and CRC-checked.
pub fn list_dex_entries(archive: &[u8]) -> Result<Vec<(String, Vec<u8>)>, ApkError> {
    let mut entries: Vec<_> = zip::read_central_directory(archive)?
        .into_iter()
        .filter_map(|e| multidex_index(&e.name).map(|n| (n, e)))
        .collect();
    if entries.is_empty() {
        return Err(ApkError::NoDex);
    }
    entries.sort_by_key(|(n, _)| *n);
    entries
        .into_iter()
        .map(|(_, e)| Ok((e.name.clone(), zip::read_entry(archive, &e)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppStrings {
    pub app_id: String,
    /// Concatenated across dex files in multi-dex order; no cross-file dedup.
    pub non_identifier_strings: Vec<String>,
    pub dex_count: usize,
    pub decode_failures: usize,
    /// Set in strict mode when any entry failed to decode; callers skip such apps.
    pub strict_excluded: bool,
}

pub fn extract_app_strings_from_bytes(
    app_id: &str,
    archive: &[u8],
    strict: bool,
) -> Result<AppStrings, ApkError> {
    let mut non_identifier_strings = Vec::new();
    let mut decode_failures = 0;
    let dexes = list_dex_entries(archive)?;
    for (name, bytes) in &dexes {
        let dex = parse_dex(bytes).map_err(|source| ApkError::Dex {
            name: name.clone(),
            source,
        })?;
        decode_failures += dex.decode_failures();
        if !dex.warnings.is_empty() {
            log::warn!("{app_id}/{name}: {:?}", dex.warnings);
        }
        let pool = classify_strings(&dex);
        non_identifier_strings.extend(pool.non_identifier_strings().map(String::from));
    }
    Ok(AppStrings {
        app_id: app_id.to_string(),
        non_identifier_strings,
        dex_count: dexes.len(),
        decode_failures,
        strict_excluded: strict && decode_failures > 0,
    })
}

/// Reads an APK from disk; the app id is the file stem.
pub fn extract_app_strings(path: &Path, strict: bool) -> Result<AppStrings, ApkError> {
    let bytes = std::fs::read(path)?;
    let app_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    extract_app_strings_from_bytes(&app_id, &bytes, strict)
}

#[cfg(test)]
mod tests {
    use super::zip::{write_zip, METHOD_DEFLATE, METHOD_STORED};
    use super::*;
    use crate::synth::{build_dex, DexSpec};

    fn dex_with(payload: &[&str]) -> Vec<u8> {
        build_dex(&DexSpec {
            type_descriptors: vec!["LApp;".into()],
            method_names: vec!["onCreate".into()],
            non_identifier_strings: payload.iter().map(|s| s.to_string()).collect(),
            ..DexSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn multidex_names() {
        assert_eq!(multidex_index("classes.dex"), Some(1));
        assert_eq!(multidex_index("classes2.dex"), Some(2));
        assert_eq!(multidex_index("classes10.dex"), Some(10));
        assert_eq!(multidex_index("classes1.dex"), None);
        assert_eq!(multidex_index("classes02.dex"), None);
        assert_eq!(multidex_index("lib/classes.dex"), None);
        assert_eq!(multidex_index("classes.dex.bak"), None);
        assert_eq!(multidex_index("classesX.dex"), None);
    }

    #[test]
    fn dex_entries_in_numeric_order() {
        let zip = write_zip(&[
            ("classes.dex", b"one".as_slice(), METHOD_STORED),
            ("classes3.dex", b"three".as_slice(), METHOD_DEFLATE),
            ("classes2.dex", b"two".as_slice(), METHOD_DEFLATE),
            ("res/x.png", b"png".as_slice(), METHOD_STORED),
        ]);
        let got = list_dex_entries(&zip).unwrap();
        let names: Vec<_> = got.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["classes.dex", "classes2.dex", "classes3.dex"]);
        assert_eq!(got[2].1, b"three");
    }

    #[test]
    fn no_dex() {
        let zip = write_zip(&[("AndroidManifest.xml", b"<x/>".as_slice(), METHOD_STORED)]);
        assert!(matches!(list_dex_entries(&zip), Err(ApkError::NoDex)));
        assert!(matches!(list_dex_entries(b"garbage"), Err(ApkError::NotAZip)));
    }

    #[test]
    fn concatenates_without_dedup() {
        let d1 = dex_with(&["x"]);
        let d2 = dex_with(&["x", "y"]);
        let zip = write_zip(&[
            ("classes2.dex", d2.as_slice(), METHOD_DEFLATE),
            ("classes.dex", d1.as_slice(), METHOD_DEFLATE),
        ]);
        let app = extract_app_strings_from_bytes("app", &zip, false).unwrap();
        assert_eq!(app.non_identifier_strings, ["x", "x", "y"]);
        assert_eq!(app.dex_count, 2);
        assert_eq!(app.decode_failures, 0);
        assert!(!app.strict_excluded);
    }

    #[test]
    fn stripped_app_has_no_strings() {
        let zip = write_zip(&[("classes.dex", dex_with(&[]).as_slice(), METHOD_DEFLATE)]);
        let app = extract_app_strings_from_bytes("stripped", &zip, true).unwrap();
        assert!(app.non_identifier_strings.is_empty());
    }

    #[test]
    fn bad_dex_payload_propagates() {
        let zip = write_zip(&[("classes.dex", b"nope".as_slice(), METHOD_STORED)]);
        assert!(matches!(
            extract_app_strings_from_bytes("a", &zip, false),
            Err(ApkError::Dex { source: DexError::BadMagic, .. })
        ));
    }
}
