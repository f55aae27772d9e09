//! Minimal DEX writer: enough structure to carry a string section whose
//! identifier/non-identifier split is wired through real id tables.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dex::{
    compute_checksum, compute_signature, encode_mutf8, utf16_len, write_uleb128, ENDIAN_CONSTANT,
    HEADER_SIZE, NO_INDEX,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DexSpecError {
    #[error("a dex needs at least one type descriptor")]
    EmptyIdentifiers,
    #[error("{what} count {count} exceeds the writer limit of {limit}")]
    SpecTooLarge {
        what: &'static str,
        count: usize,
        limit: usize,
    },
    #[error("string {0:?} appears more than once in the string section")]
    DuplicateString(String),
}

/// What goes into one synthetic DEX file.
///
/// `type_descriptors[0]` is the single defined class; every method and field
/// belongs to it. When any method exists, one prototype is emitted whose
/// return type is that class, so its shorty (`"L"` for reference types) also
/// becomes an identifier string.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DexSpec {
    pub type_descriptors: Vec<String>,
    pub method_names: Vec<String>,
    pub field_names: Vec<String>,
    pub source_file: Option<String>,
    pub non_identifier_strings: Vec<String>,
}

impl DexSpec {
    fn shorty(&self) -> Option<String> {
        if self.method_names.is_empty() {
            return None;
        }
        let first = self.type_descriptors.first()?;
        let c = match first.chars().next()? {
            '[' | 'L' => 'L',
            c => c,
        };
        Some(c.to_string())
    }

    /// Every string the writer will reference from an id table, shorty included.
    pub fn identifier_strings(&self) -> BTreeSet<String> {
        self.type_descriptors
            .iter()
            .chain(&self.method_names)
            .chain(&self.field_names)
            .chain(&self.source_file)
            .cloned()
            .chain(self.shorty())
            .collect()
    }

    pub fn validate(&self) -> Result<(), DexSpecError> {
        if self.type_descriptors.is_empty() {
            return Err(DexSpecError::EmptyIdentifiers);
        }
        let limit = u16::MAX as usize;
        for (what, count) in [
            ("type_ids", self.type_descriptors.len()),
            ("field_ids", self.field_names.len()),
            ("method_ids", self.method_names.len()),
            ("string_ids", self.identifier_strings().len() + self.non_identifier_strings.len()),
        ] {
            if count > limit {
                return Err(DexSpecError::SpecTooLarge { what, count, limit });
            }
        }
        for list in [&self.type_descriptors, &self.method_names, &self.field_names] {
            let mut seen = BTreeSet::new();
            if let Some(dup) = list.iter().find(|s| !seen.insert(*s)) {
                return Err(DexSpecError::DuplicateString(dup.clone()));
            }
        }
        let identifiers = self.identifier_strings();
        let mut seen = BTreeSet::new();
        for s in &self.non_identifier_strings {
            if identifiers.contains(s) || !seen.insert(s) {
                return Err(DexSpecError::DuplicateString(s.clone()));
            }
        }
        Ok(())
    }
}

fn align4(buf: &mut Vec<u8>) {
    while !buf.len().is_multiple_of(4) {
        buf.push(0);
    }
}

fn put_u32(buf: &mut [u8], at: usize, v: u32) {
    buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn push_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Serializes `spec` as a version-035 DEX image.
pub fn build_dex(spec: &DexSpec) -> Result<Vec<u8>, DexSpecError> {
    spec.validate()?;

    let mut strings: Vec<&str> = spec
        .type_descriptors
        .iter()
        .chain(&spec.method_names)
        .chain(&spec.field_names)
        .chain(&spec.source_file)
        .chain(&spec.non_identifier_strings)
        .map(String::as_str)
        .collect();
    let shorty = spec.shorty();
    strings.extend(shorty.as_deref());
    strings.sort_by(|a, b| a.encode_utf16().cmp(b.encode_utf16()));
    strings.dedup();
    let string_index = |s: &str| -> u32 {
        strings
            .binary_search_by(|p| p.encode_utf16().cmp(s.encode_utf16()))
            .expect("string was collected") as u32
    };

    // Types must be sorted by descriptor string index.
    let mut types: Vec<u32> = spec.type_descriptors.iter().map(|t| string_index(t)).collect();
    types.sort_unstable();
    let type_index = |s: &str| -> u16 {
        let si = string_index(s);
        types.binary_search(&si).expect("type was collected") as u16
    };
    let class_type = type_index(&spec.type_descriptors[0]);

    let n_strings = strings.len();
    let n_types = types.len();
    let n_protos = usize::from(shorty.is_some());
    let n_fields = spec.field_names.len();
    let n_methods = spec.method_names.len();
    let n_classes = 1;

    let string_ids_off = HEADER_SIZE;
    let type_ids_off = string_ids_off + 4 * n_strings;
    let proto_ids_off = type_ids_off + 4 * n_types;
    let field_ids_off = proto_ids_off + 12 * n_protos;
    let method_ids_off = field_ids_off + 8 * n_fields;
    let class_defs_off = method_ids_off + 8 * n_methods;
    let data_off = class_defs_off + 32 * n_classes;

    let mut out = vec![0u8; data_off];

    // String data first, so string_ids can be filled in.
    let mut string_offsets = Vec::with_capacity(n_strings);
    for s in &strings {
        string_offsets.push(out.len() as u32);
        write_uleb128(&mut out, utf16_len(s) as u32);
        out.extend_from_slice(&encode_mutf8(s));
        out.push(0);
    }
    align4(&mut out);
    let map_off = out.len();

    for (i, off) in string_offsets.iter().enumerate() {
        put_u32(&mut out, string_ids_off + 4 * i, *off);
    }
    for (i, si) in types.iter().enumerate() {
        put_u32(&mut out, type_ids_off + 4 * i, *si);
    }
    if let Some(shorty) = &shorty {
        put_u32(&mut out, proto_ids_off, string_index(shorty));
        put_u32(&mut out, proto_ids_off + 4, class_type as u32);
        put_u32(&mut out, proto_ids_off + 8, 0);
    }

    // field_ids and method_ids must be sorted by (class, name, type/proto);
    // class and type/proto are constant here, so sort by name index.
    let mut field_names: Vec<u32> = spec.field_names.iter().map(|n| string_index(n)).collect();
    field_names.sort_unstable();
    for (i, name) in field_names.iter().enumerate() {
        let at = field_ids_off + 8 * i;
        out[at..at + 2].copy_from_slice(&class_type.to_le_bytes());
        out[at + 2..at + 4].copy_from_slice(&class_type.to_le_bytes());
        put_u32(&mut out, at + 4, *name);
    }
    let mut method_names: Vec<u32> = spec.method_names.iter().map(|n| string_index(n)).collect();
    method_names.sort_unstable();
    for (i, name) in method_names.iter().enumerate() {
        let at = method_ids_off + 8 * i;
        out[at..at + 2].copy_from_slice(&class_type.to_le_bytes());
        out[at + 2..at + 4].copy_from_slice(&0u16.to_le_bytes());
        put_u32(&mut out, at + 4, *name);
    }
    {
        let at = class_defs_off;
        put_u32(&mut out, at, class_type as u32);
        put_u32(&mut out, at + 4, 0x0001); // ACC_PUBLIC
        put_u32(&mut out, at + 8, NO_INDEX); // superclass
        put_u32(&mut out, at + 12, 0); // interfaces_off
        let source = spec.source_file.as_deref().map_or(NO_INDEX, string_index);
        put_u32(&mut out, at + 16, source);
        // annotations, class_data and static_values offsets stay 0.
    }

    let mut map: Vec<(u16, usize, usize)> = vec![(0x0000, 1, 0)];
    for (kind, count, offset) in [
        (0x0001u16, n_strings, string_ids_off),
        (0x0002, n_types, type_ids_off),
        (0x0003, n_protos, proto_ids_off),
        (0x0004, n_fields, field_ids_off),
        (0x0005, n_methods, method_ids_off),
        (0x0006, n_classes, class_defs_off),
        (0x2002, n_strings, data_off),
    ] {
        if count > 0 {
            map.push((kind, count, offset));
        }
    }
    map.push((0x1000, 1, map_off));
    push_u32(&mut out, map.len() as u32);
    for (kind, count, offset) in map {
        push_u16(&mut out, kind);
        push_u16(&mut out, 0);
        push_u32(&mut out, count as u32);
        push_u32(&mut out, offset as u32);
    }

    let file_size = out.len();
    out[..8].copy_from_slice(b"dex\n035\0");
    let header: [(usize, usize); 20] = [
        (32, file_size),
        (36, HEADER_SIZE),
        (40, ENDIAN_CONSTANT as usize),
        (44, 0),
        (48, 0),
        (52, map_off),
        (56, n_strings),
        (60, if n_strings > 0 { string_ids_off } else { 0 }),
        (64, n_types),
        (68, type_ids_off),
        (72, n_protos),
        (76, if n_protos > 0 { proto_ids_off } else { 0 }),
        (80, n_fields),
        (84, if n_fields > 0 { field_ids_off } else { 0 }),
        (88, n_methods),
        (92, if n_methods > 0 { method_ids_off } else { 0 }),
        (96, n_classes),
        (100, class_defs_off),
        (104, file_size - data_off),
        (108, data_off),
    ];
    for (at, v) in header {
        put_u32(&mut out, at, v as u32);
    }
    let signature = compute_signature(&out);
    out[12..32].copy_from_slice(&signature);
    let checksum = compute_checksum(&out);
    put_u32(&mut out, 8, checksum);
    Ok(out)
}
