//! DEX parsing restricted to what string extraction needs: the header, the id
//! tables that reference strings, and the string data itself.

mod mutf8;

pub use mutf8::{decode_mutf8, encode_mutf8, utf16_len, Mutf8Error, Mutf8ErrorKind};

use std::cmp::Ordering;
use std::collections::BTreeSet;

use sha1::{Digest, Sha1};
use thiserror::Error;

pub const HEADER_SIZE: usize = 0x70;
pub const ENDIAN_CONSTANT: u32 = 0x1234_5678;
pub const NO_INDEX: u32 = 0xFFFF_FFFF;

const STRING_ID_SIZE: usize = 4;
const TYPE_ID_SIZE: usize = 4;
const PROTO_ID_SIZE: usize = 12;
const FIELD_ID_SIZE: usize = 8;
const METHOD_ID_SIZE: usize = 8;
const CLASS_DEF_SIZE: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DexError {
    #[error("not a dex file: bad magic")]
    BadMagic,
    #[error("truncated: header declares {declared} bytes, buffer holds {actual}")]
    Truncated { declared: usize, actual: usize },
    #[error("declared file size {declared} does not match buffer length {actual}")]
    SizeMismatch { declared: usize, actual: usize },
    #[error("{what} at offset {offset:#x} (+{len}) lies outside the {size}-byte buffer")]
    OffsetOutOfBounds {
        what: &'static str,
        offset: usize,
        len: usize,
        size: usize,
    },
    #[error("{what} references string index {index}, but only {count} strings exist")]
    BadStringIndex {
        what: &'static str,
        index: u32,
        count: u32,
    },
    #[error("{what} references type index {index}, but only {count} types exist")]
    BadTypeIndex {
        what: &'static str,
        index: u32,
        count: u32,
    },
    #[error("{failures} string entries could not be decoded (strict mode)")]
    Decode { failures: usize },
}

pub type Result<T> = std::result::Result<T, DexError>;

/// Count and offset of one id table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Section {
    pub count: u32,
    pub offset: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SectionTable {
    pub string_ids: Section,
    pub type_ids: Section,
    pub proto_ids: Section,
    pub field_ids: Section,
    pub method_ids: Section,
    pub class_defs: Section,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StringEntry {
    pub index: u32,
    pub data_offset: u32,
    /// Empty when `decode_ok` is false.
    pub text: String,
    pub decode_ok: bool,
}

/// Non-fatal irregularities found while parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DexWarning {
    /// String table is not strictly ascending in UTF-16 order; `index` is the
    /// first entry that sorts at or before its predecessor.
    UnsortedStrings { index: u32 },
    /// `utf16_size` prefix disagrees with the decoded payload.
    LengthMismatch { index: u32, declared: u32, actual: u32 },
}

/// The string-referencing parts of the id tables, reduced to string indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdRefs {
    /// `type_ids[i].descriptor_idx`
    pub type_descriptors: Vec<u32>,
    /// `proto_ids[i].shorty_idx`
    pub proto_shorties: Vec<u32>,
    /// `field_ids[i].name_idx`
    pub field_names: Vec<u32>,
    /// `method_ids[i].name_idx`
    pub method_names: Vec<u32>,
    /// `class_defs[i].source_file_idx`, excluding `NO_INDEX`.
    pub source_files: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DexFile {
    /// Three-digit version from the magic, e.g. 35 for `dex\n035\0`.
    pub version: u32,
    pub declared_file_size: u32,
    pub checksum: u32,
    pub signature: [u8; 20],
    pub sections: SectionTable,
    pub strings: Vec<StringEntry>,
    pub refs: IdRefs,
    pub warnings: Vec<DexWarning>,
}

impl DexFile {
    pub fn decode_failures(&self) -> usize {
        self.strings.iter().filter(|s| !s.decode_ok).count()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Fail the whole file with [`DexError::Decode`] if any string entry is undecodable.
    pub strict: bool,
}

struct Reader<'a> {
    data: &'a [u8],
}

impl<'a> Reader<'a> {
    fn slice(&self, what: &'static str, offset: usize, len: usize) -> Result<&'a [u8]> {
        offset
            .checked_add(len)
            .filter(|&end| end <= self.data.len())
            .map(|end| &self.data[offset..end])
            .ok_or(DexError::OffsetOutOfBounds {
                what,
                offset,
                len,
                size: self.data.len(),
            })
    }

    fn u32_at(&self, what: &'static str, offset: usize) -> Result<u32> {
        let b = self.slice(what, offset, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Bounds-check a table of `count` items of `item_size` bytes each.
    fn table(&self, what: &'static str, section: Section, item_size: usize) -> Result<&'a [u8]> {
        if section.count == 0 {
            return Ok(&[]);
        }
        let len = (section.count as usize)
            .checked_mul(item_size)
            .ok_or(DexError::OffsetOutOfBounds {
                what,
                offset: section.offset as usize,
                len: usize::MAX,
                size: self.data.len(),
            })?;
        self.slice(what, section.offset as usize, len)
    }
}

pub(crate) fn read_uleb128(data: &[u8], mut pos: usize) -> Option<(u32, usize)> {
    let mut result: u32 = 0;
    for shift in (0..35).step_by(7) {
        let byte = *data.get(pos)?;
        pos += 1;
        let bits = (byte & 0x7F) as u32;
        if shift == 28 && bits > 0x0F {
            return None;
        }
        result |= bits << shift;
        if byte & 0x80 == 0 {
            return Some((result, pos));
        }
    }
    None
}

pub(crate) fn write_uleb128(out: &mut Vec<u8>, mut value: u32) {
    loop {
        let byte = (value & 0x7F) as u8;
        value >>= 7;
        if value == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

fn parse_magic(data: &[u8]) -> Result<u32> {
    let magic = data.get(..8).ok_or(DexError::BadMagic)?;
    if &magic[..4] != b"dex\n" || magic[7] != 0 || !magic[4..7].iter().all(u8::is_ascii_digit) {
        return Err(DexError::BadMagic);
    }
    Ok(magic[4..7]
        .iter()
        .fold(0, |acc, d| acc * 10 + (d - b'0') as u32))
}

/// Decode the `string_data_item` at `offset`. `None` means undecodable; an
/// out-of-bounds offset is an error for the whole file.
fn read_string_data(
    data: &[u8],
    index: u32,
    offset: usize,
    warnings: &mut Vec<DexWarning>,
) -> Result<Option<String>> {
    if offset >= data.len() {
        return Err(DexError::OffsetOutOfBounds {
            what: "string_data_item",
            offset,
            len: 1,
            size: data.len(),
        });
    }
    let Some((declared, start)) = read_uleb128(data, offset) else {
        return Ok(None);
    };
    let Some(nul) = data[start..].iter().position(|&b| b == 0) else {
        return Ok(None);
    };
    let Ok(text) = decode_mutf8(&data[start..start + nul]) else {
        return Ok(None);
    };
    let actual = utf16_len(&text) as u32;
    if actual != declared {
        warnings.push(DexWarning::LengthMismatch {
            index,
            declared,
            actual,
        });
    }
    Ok(Some(text))
}

/// Parses a DEX image. Undecodable string entries are kept with `decode_ok = false`.
pub fn parse_dex(data: &[u8]) -> Result<DexFile> {
    parse_dex_with(data, ParseOptions::default())
}

pub fn parse_dex_with(data: &[u8], opts: ParseOptions) -> Result<DexFile> {
    let version = parse_magic(data)?;
    if data.len() < HEADER_SIZE {
        return Err(DexError::Truncated {
            declared: HEADER_SIZE,
            actual: data.len(),
        });
    }
    let r = Reader { data };
    let declared_file_size = r.u32_at("file_size", 32)?;
    match (declared_file_size as usize).cmp(&data.len()) {
        Ordering::Greater => {
            return Err(DexError::Truncated {
                declared: declared_file_size as usize,
                actual: data.len(),
            })
        }
        Ordering::Less => {
            return Err(DexError::SizeMismatch {
                declared: declared_file_size as usize,
                actual: data.len(),
            })
        }
        Ordering::Equal => {}
    }
    let checksum = r.u32_at("checksum", 8)?;
    let mut signature = [0u8; 20];
    signature.copy_from_slice(&data[12..32]);

    let section = |at: usize| -> Result<Section> {
        Ok(Section {
            count: r.u32_at("header", at)?,
            offset: r.u32_at("header", at + 4)?,
        })
    };
    let sections = SectionTable {
        string_ids: section(56)?,
        type_ids: section(64)?,
        proto_ids: section(72)?,
        field_ids: section(80)?,
        method_ids: section(88)?,
        class_defs: section(96)?,
    };

    let string_ids = r.table("string_ids", sections.string_ids, STRING_ID_SIZE)?;
    let type_ids = r.table("type_ids", sections.type_ids, TYPE_ID_SIZE)?;
    let proto_ids = r.table("proto_ids", sections.proto_ids, PROTO_ID_SIZE)?;
    let field_ids = r.table("field_ids", sections.field_ids, FIELD_ID_SIZE)?;
    let method_ids = r.table("method_ids", sections.method_ids, METHOD_ID_SIZE)?;
    let class_defs = r.table("class_defs", sections.class_defs, CLASS_DEF_SIZE)?;

    let mut warnings = Vec::new();
    let mut strings = Vec::with_capacity(sections.string_ids.count as usize);
    for (i, raw) in string_ids.chunks_exact(STRING_ID_SIZE).enumerate() {
        let index = i as u32;
        let data_offset = u32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]);
        let decoded = read_string_data(data, index, data_offset as usize, &mut warnings)?;
        strings.push(StringEntry {
            index,
            data_offset,
            decode_ok: decoded.is_some(),
            text: decoded.unwrap_or_default(),
        });
    }

    let mut prev: Option<&StringEntry> = None;
    for entry in strings.iter().filter(|s| s.decode_ok) {
        if let Some(p) = prev {
            if p.text.encode_utf16().cmp(entry.text.encode_utf16()) != Ordering::Less {
                warnings.push(DexWarning::UnsortedStrings { index: entry.index });
                break;
            }
        }
        prev = Some(entry);
    }

    let failures = strings.iter().filter(|s| !s.decode_ok).count();
    if opts.strict && failures > 0 {
        return Err(DexError::Decode { failures });
    }

    let n_strings = sections.string_ids.count;
    let n_types = sections.type_ids.count;
    let check_string = |what: &'static str, index: u32| -> Result<u32> {
        if index < n_strings {
            Ok(index)
        } else {
            Err(DexError::BadStringIndex {
                what,
                index,
                count: n_strings,
            })
        }
    };
    let check_type = |what: &'static str, index: u32| -> Result<()> {
        if index < n_types {
            Ok(())
        } else {
            Err(DexError::BadTypeIndex {
                what,
                index,
                count: n_types,
            })
        }
    };
    let word = |b: &[u8], at: usize| u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]]);
    let half = |b: &[u8], at: usize| u16::from_le_bytes([b[at], b[at + 1]]) as u32;

    let mut refs = IdRefs::default();
    for item in type_ids.chunks_exact(TYPE_ID_SIZE) {
        refs.type_descriptors
            .push(check_string("type_id", word(item, 0))?);
    }
    for item in proto_ids.chunks_exact(PROTO_ID_SIZE) {
        refs.proto_shorties
            .push(check_string("proto_id", word(item, 0))?);
        check_type("proto_id return type", word(item, 4))?;
    }
    for item in field_ids.chunks_exact(FIELD_ID_SIZE) {
        check_type("field_id class", half(item, 0))?;
        check_type("field_id type", half(item, 2))?;
        refs.field_names
            .push(check_string("field_id", word(item, 4))?);
    }
    for item in method_ids.chunks_exact(METHOD_ID_SIZE) {
        check_type("method_id class", half(item, 0))?;
        if half(item, 2) >= sections.proto_ids.count {
            return Err(DexError::OffsetOutOfBounds {
                what: "method_id proto index",
                offset: half(item, 2) as usize,
                len: PROTO_ID_SIZE,
                size: sections.proto_ids.count as usize,
            });
        }
        refs.method_names
            .push(check_string("method_id", word(item, 4))?);
    }
    for item in class_defs.chunks_exact(CLASS_DEF_SIZE) {
        check_type("class_def", word(item, 0))?;
        let source = word(item, 16);
        if source != NO_INDEX {
            refs.source_files
                .push(check_string("class_def source_file", source)?);
        }
    }

    Ok(DexFile {
        version,
        declared_file_size,
        checksum,
        signature,
        sections,
        strings,
        refs,
        warnings,
    })
}

/// Partition of the string section into identifier and non-identifier entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StringPool {
    pub entries: Vec<StringEntry>,
    pub identifier_indices: BTreeSet<u32>,
    pub non_identifier_indices: BTreeSet<u32>,
}

impl StringPool {
    /// Decoded non-identifier strings in string-table order. Undecodable entries are skipped.
    pub fn non_identifier_strings(&self) -> impl Iterator<Item = &str> + '_ {
        self.non_identifier_indices
            .iter()
            .map(|&i| &self.entries[i as usize])
            .filter(|e| e.decode_ok)
            .map(|e| e.text.as_str())
    }

    pub fn identifier_strings(&self) -> impl Iterator<Item = &str> + '_ {
        self.identifier_indices
            .iter()
            .map(|&i| &self.entries[i as usize])
            .filter(|e| e.decode_ok)
            .map(|e| e.text.as_str())
    }
}

/// Identifiers are every string reachable from a type descriptor, proto shorty,
/// field name, method name or class source-file name.
pub fn classify_strings(dex: &DexFile) -> StringPool {
    let refs = &dex.refs;
    let identifier_indices: BTreeSet<u32> = refs
        .type_descriptors
        .iter()
        .chain(&refs.proto_shorties)
        .chain(&refs.field_names)
        .chain(&refs.method_names)
        .chain(&refs.source_files)
        .copied()
        .collect();
    let non_identifier_indices = (0..dex.strings.len() as u32)
        .filter(|i| !identifier_indices.contains(i))
        .collect();
    StringPool {
        entries: dex.strings.clone(),
        identifier_indices,
        non_identifier_indices,
    }
}

/// Adler-32 as stored in the header `checksum` field.
pub fn adler32(data: &[u8]) -> u32 {
    const MOD: u32 = 65521;
    // 5552 is the largest block for which the sums cannot overflow u32.
    let (mut a, mut b) = (1u32, 0u32);
    for chunk in data.chunks(5552) {
        for &byte in chunk {
            a += byte as u32;
            b += a;
        }
        a %= MOD;
        b %= MOD;
    }
    (b << 16) | a
}

/// Checksum over bytes `[12..]`.
pub fn compute_checksum(data: &[u8]) -> u32 {
    adler32(data.get(12..).unwrap_or(&[]))
}

/// SHA-1 over bytes `[32..]`.
pub fn compute_signature(data: &[u8]) -> [u8; 20] {
    Sha1::digest(data.get(32..).unwrap_or(&[])).into()
}

/// True when both header integrity fields match the image.
pub fn verify_integrity(data: &[u8], dex: &DexFile) -> bool {
    compute_checksum(data) == dex.checksum && compute_signature(data) == dex.signature
}
