//! Just enough ZIP to read and write APK containers: central-directory
//! driven reading with stored/deflate entries, and a deterministic writer.

use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

use super::ApkError;

const EOCD_SIG: u32 = 0x0605_4b50;
const CDIR_SIG: u32 = 0x0201_4b50;
const LOCAL_SIG: u32 = 0x0403_4b50;
const EOCD_LEN: usize = 22;
const CDIR_LEN: usize = 46;
const LOCAL_LEN: usize = 30;
const MAX_COMMENT: usize = 65_535;

pub const METHOD_STORED: u16 = 0;
pub const METHOD_DEFLATE: u16 = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CentralEntry {
    pub name: String,
    pub method: u16,
    pub crc32: u32,
    pub compressed_size: u32,
    pub uncompressed_size: u32,
    pub local_header_offset: u32,
}

fn u16_at(data: &[u8], at: usize) -> Option<u16> {
    data.get(at..at + 2).map(|b| u16::from_le_bytes([b[0], b[1]]))
}

fn u32_at(data: &[u8], at: usize) -> Option<u32> {
    data.get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// Backward scan for the end-of-central-directory record.
fn find_eocd(data: &[u8]) -> Option<usize> {
    if data.len() < EOCD_LEN {
        return None;
    }
    let last = data.len() - EOCD_LEN;
    let first = last.saturating_sub(MAX_COMMENT);
    (first..=last).rev().find(|&pos| {
        u32_at(data, pos) == Some(EOCD_SIG)
            && u16_at(data, pos + 20).is_some_and(|c| pos + EOCD_LEN + c as usize == data.len())
    })
}

/// Lists central-directory entries. Offsets are shifted by the size of any
/// junk prepended to the archive.
pub fn read_central_directory(data: &[u8]) -> Result<Vec<CentralEntry>, ApkError> {
    let eocd = find_eocd(data).ok_or(ApkError::NotAZip)?;
    let total = u16_at(data, eocd + 10).ok_or(ApkError::NotAZip)? as usize;
    let cd_size = u32_at(data, eocd + 12).ok_or(ApkError::NotAZip)? as usize;
    let cd_offset = u32_at(data, eocd + 16).ok_or(ApkError::NotAZip)? as usize;
    let cd_start = eocd.checked_sub(cd_size).ok_or(ApkError::NotAZip)?;
    let prefix = cd_start.checked_sub(cd_offset).ok_or(ApkError::NotAZip)?;

    let corrupt = |reason: &str| ApkError::CorruptEntry {
        name: "<central directory>".into(),
        reason: reason.into(),
    };
    let mut entries = Vec::with_capacity(total);
    let mut pos = cd_start;
    for _ in 0..total {
        if u32_at(data, pos) != Some(CDIR_SIG) {
            return Err(corrupt("bad central directory signature"));
        }
        let field = |off| u16_at(data, pos + off).ok_or_else(|| corrupt("short central entry"));
        let word = |off| u32_at(data, pos + off).ok_or_else(|| corrupt("short central entry"));
        let method = field(10)?;
        let crc32 = word(16)?;
        let compressed_size = word(20)?;
        let uncompressed_size = word(24)?;
        let name_len = field(28)? as usize;
        let extra_len = field(30)? as usize;
        let comment_len = field(32)? as usize;
        let local = word(42)? as usize + prefix;
        let name_bytes = data
            .get(pos + CDIR_LEN..pos + CDIR_LEN + name_len)
            .ok_or_else(|| corrupt("short central entry name"))?;
        entries.push(CentralEntry {
            name: String::from_utf8_lossy(name_bytes).into_owned(),
            method,
            crc32,
            compressed_size,
            uncompressed_size,
            local_header_offset: u32::try_from(local).map_err(|_| corrupt("offset overflow"))?,
        });
        pos += CDIR_LEN + name_len + extra_len + comment_len;
    }
    Ok(entries)
}

/// Decompresses one entry and checks its CRC.
pub fn read_entry(data: &[u8], entry: &CentralEntry) -> Result<Vec<u8>, ApkError> {
    let corrupt = |reason: String| ApkError::CorruptEntry {
        name: entry.name.clone(),
        reason,
    };
    let local = entry.local_header_offset as usize;
    if u32_at(data, local) != Some(LOCAL_SIG) {
        return Err(corrupt("bad local header signature".into()));
    }
    let name_len = u16_at(data, local + 26).ok_or_else(|| corrupt("short local header".into()))?;
    let extra_len = u16_at(data, local + 28).ok_or_else(|| corrupt("short local header".into()))?;
    let start = local + LOCAL_LEN + name_len as usize + extra_len as usize;
    let raw = data
        .get(start..start + entry.compressed_size as usize)
        .ok_or_else(|| corrupt("payload runs past end of archive".into()))?;
    let payload = match entry.method {
        METHOD_STORED => raw.to_vec(),
        METHOD_DEFLATE => {
            let mut out = Vec::with_capacity(entry.uncompressed_size as usize);
            DeflateDecoder::new(raw)
                .read_to_end(&mut out)
                .map_err(|e| corrupt(format!("bad deflate stream: {e}")))?;
            out
        }
        m => return Err(corrupt(format!("unsupported compression method {m}"))),
    };
    if payload.len() != entry.uncompressed_size as usize {
        return Err(corrupt(format!(
            "size mismatch: expected {}, got {}",
            entry.uncompressed_size,
            payload.len()
        )));
    }
    let crc = crc32fast::hash(&payload);
    if crc != entry.crc32 {
        return Err(corrupt(format!(
            "crc mismatch: expected {:08x}, got {crc:08x}",
            entry.crc32
        )));
    }
    Ok(payload)
}

/// Writes a ZIP archive with fixed timestamps, so identical input yields identical bytes.
pub fn write_zip(entries: &[(&str, &[u8], u16)]) -> Vec<u8> {
    // 1980-01-01 00:00:00 in DOS format.
    const DOS_TIME: u16 = 0;
    const DOS_DATE: u16 = (1 << 5) | 1;

    let mut out = Vec::new();
    let mut central = Vec::new();
    for &(name, data, method) in entries {
        let compressed = match method {
            METHOD_DEFLATE => {
                let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
                enc.write_all(data).expect("writing to a Vec cannot fail");
                enc.finish().expect("writing to a Vec cannot fail")
            }
            _ => data.to_vec(),
        };
        let method = if method == METHOD_DEFLATE { METHOD_DEFLATE } else { METHOD_STORED };
        let crc = crc32fast::hash(data);
        let offset = out.len() as u32;

        let mut common = Vec::with_capacity(26);
        common.extend_from_slice(&20u16.to_le_bytes()); // version needed
        common.extend_from_slice(&0u16.to_le_bytes()); // flags
        common.extend_from_slice(&method.to_le_bytes());
        common.extend_from_slice(&DOS_TIME.to_le_bytes());
        common.extend_from_slice(&DOS_DATE.to_le_bytes());
        common.extend_from_slice(&crc.to_le_bytes());
        common.extend_from_slice(&(compressed.len() as u32).to_le_bytes());
        common.extend_from_slice(&(data.len() as u32).to_le_bytes());
        common.extend_from_slice(&(name.len() as u16).to_le_bytes());
        common.extend_from_slice(&0u16.to_le_bytes()); // extra len

        out.extend_from_slice(&LOCAL_SIG.to_le_bytes());
        out.extend_from_slice(&common);
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&compressed);

        central.extend_from_slice(&CDIR_SIG.to_le_bytes());
        central.extend_from_slice(&20u16.to_le_bytes()); // version made by
        central.extend_from_slice(&common);
        central.extend_from_slice(&0u16.to_le_bytes()); // comment len
        central.extend_from_slice(&0u16.to_le_bytes()); // disk
        central.extend_from_slice(&0u16.to_le_bytes()); // internal attrs
        central.extend_from_slice(&0u32.to_le_bytes()); // external attrs
        central.extend_from_slice(&offset.to_le_bytes());
        central.extend_from_slice(name.as_bytes());
    }
    let cd_offset = out.len() as u32;
    out.extend_from_slice(&central);
    out.extend_from_slice(&EOCD_SIG.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    out.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    out.extend_from_slice(&(central.len() as u32).to_le_bytes());
    out.extend_from_slice(&cd_offset.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out
}
