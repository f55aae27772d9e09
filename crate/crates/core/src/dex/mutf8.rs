//! Modified UTF-8 as used by DEX `string_data_item` payloads.
//!
//! Differences from standard UTF-8:
//! - U+0000 is encoded as the two-byte sequence `0xC0 0x80`; a raw `0x00` never
//!   appears inside a payload (it terminates the item).
//! - Supplementary characters are stored as a UTF-16 surrogate pair, each half
//!   encoded as its own three-byte sequence. Four-byte forms do not exist.

use std::fmt;

/// Why a payload failed to decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutf8ErrorKind {
    /// A raw zero byte inside the payload.
    EmbeddedNul,
    /// A lead byte that cannot start a sequence (continuation byte or 4-byte lead).
    InvalidLead,
    /// Sequence runs past the end of the payload.
    UnexpectedEnd,
    /// Expected `10xxxxxx`.
    BadContinuation,
    /// Overlong form other than `0xC0 0x80`.
    Overlong,
    /// High surrogate without a following low surrogate, or a lone low surrogate.
    DanglingSurrogate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mutf8Error {
    /// Byte offset into the payload where the bad sequence starts.
    pub offset: usize,
    pub kind: Mutf8ErrorKind,
}

impl fmt::Display for Mutf8Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid MUTF-8 at byte {}: {:?}", self.offset, self.kind)
    }
}

impl std::error::Error for Mutf8Error {}

/// Decodes one UTF-16 code unit starting at `pos`, returning it with its encoded length.
fn decode_unit(data: &[u8], pos: usize) -> Result<(u16, usize), Mutf8Error> {
    let err = |kind| Mutf8Error { offset: pos, kind };
    let b0 = data[pos];
    match b0 {
        0x00 => Err(err(Mutf8ErrorKind::EmbeddedNul)),
        0x01..=0x7F => Ok((b0 as u16, 1)),
        0xC0..=0xDF => {
            let b1 = *data.get(pos + 1).ok_or(err(Mutf8ErrorKind::UnexpectedEnd))?;
            if b1 & 0xC0 != 0x80 {
                return Err(err(Mutf8ErrorKind::BadContinuation));
            }
            let unit = ((b0 as u16 & 0x1F) << 6) | (b1 as u16 & 0x3F);
            if unit != 0 && unit < 0x80 {
                return Err(err(Mutf8ErrorKind::Overlong));
            }
            Ok((unit, 2))
        }
        0xE0..=0xEF => {
            let b1 = *data.get(pos + 1).ok_or(err(Mutf8ErrorKind::UnexpectedEnd))?;
            if b1 & 0xC0 != 0x80 {
                return Err(err(Mutf8ErrorKind::BadContinuation));
            }
            let b2 = *data.get(pos + 2).ok_or(err(Mutf8ErrorKind::UnexpectedEnd))?;
            if b2 & 0xC0 != 0x80 {
                return Err(err(Mutf8ErrorKind::BadContinuation));
            }
            let unit = ((b0 as u16 & 0x0F) << 12) | ((b1 as u16 & 0x3F) << 6) | (b2 as u16 & 0x3F);
            if unit < 0x800 {
                return Err(err(Mutf8ErrorKind::Overlong));
            }
            Ok((unit, 3))
        }
        _ => Err(err(Mutf8ErrorKind::InvalidLead)),
    }
}

/// Decodes a complete MUTF-8 payload (the bytes after the ULEB128 length prefix,
/// without the terminating zero).
pub fn decode_mutf8(data: &[u8]) -> Result<String, Mutf8Error> {
    let mut out = String::with_capacity(data.len());
    let mut pos = 0;
    while pos < data.len() {
        let (unit, len) = decode_unit(data, pos)?;
        match unit {
            0xD800..=0xDBFF => {
                let dangling = Mutf8Error {
                    offset: pos,
                    kind: Mutf8ErrorKind::DanglingSurrogate,
                };
                if pos + len >= data.len() {
                    return Err(dangling);
                }
                let (low, low_len) = decode_unit(data, pos + len)?;
                if !(0xDC00..=0xDFFF).contains(&low) {
                    return Err(dangling);
                }
                let cp = 0x10000 + (((unit as u32) - 0xD800) << 10) + ((low as u32) - 0xDC00);
                // Always a valid scalar value: the range is exactly U+10000..=U+10FFFF.
                out.push(char::from_u32(cp).expect("surrogate pair yields a scalar value"));
                pos += len + low_len;
            }
            0xDC00..=0xDFFF => {
                return Err(Mutf8Error {
                    offset: pos,
                    kind: Mutf8ErrorKind::DanglingSurrogate,
                })
            }
            _ => {
                out.push(char::from_u32(unit as u32).expect("non-surrogate BMP unit"));
                pos += len;
            }
        }
    }
    Ok(out)
}

/// Encodes text as MUTF-8 (without length prefix or terminator).
pub fn encode_mutf8(text: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(text.len());
    for unit in text.encode_utf16() {
        match unit {
            0x0001..=0x007F => out.push(unit as u8),
            0x0000 | 0x0080..=0x07FF => {
                out.push(0xC0 | (unit >> 6) as u8);
                out.push(0x80 | (unit & 0x3F) as u8);
            }
            _ => {
                out.push(0xE0 | (unit >> 12) as u8);
                out.push(0x80 | ((unit >> 6) & 0x3F) as u8);
                out.push(0x80 | (unit & 0x3F) as u8);
            }
        }
    }
    out
}

/// Number of UTF-16 code units, which is what `string_data_item.utf16_size` records.
pub fn utf16_len(text: &str) -> usize {
    text.encode_utf16().count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_identity() {
        assert_eq!(decode_mutf8(&[0x61]).unwrap(), "a");
        assert_eq!(decode_mutf8(b"hello").unwrap(), "hello");
        assert_eq!(decode_mutf8(&[]).unwrap(), "");
    }

    #[test]
    fn encoded_null() {
        assert_eq!(decode_mutf8(&[0xC0, 0x80]).unwrap(), "\u{0}");
    }

    #[test]
    fn malformed_continuation() {
        let err = decode_mutf8(&[0xE0, 0x20]).unwrap_err();
        assert_eq!(err.kind, Mutf8ErrorKind::BadContinuation);
        assert_eq!(err.offset, 0);
    }

    #[test]
    fn raw_nul_rejected() {
        let err = decode_mutf8(&[0x61, 0x00]).unwrap_err();
        assert_eq!(err, Mutf8Error { offset: 1, kind: Mutf8ErrorKind::EmbeddedNul });
    }

    #[test]
    fn overlong_forms() {
        assert_eq!(decode_mutf8(&[0xC1, 0xBF]).unwrap_err().kind, Mutf8ErrorKind::Overlong);
        assert_eq!(decode_mutf8(&[0xE0, 0x81, 0x81]).unwrap_err().kind, Mutf8ErrorKind::Overlong);
        // 0xE0 0x80 0x80 would be an overlong null, only the 2-byte form is sanctioned.
        assert_eq!(decode_mutf8(&[0xE0, 0x80, 0x80]).unwrap_err().kind, Mutf8ErrorKind::Overlong);
    }

    #[test]
    fn four_byte_lead_rejected() {
        let err = decode_mutf8(&[0xF0, 0x9F, 0x98, 0x80]).unwrap_err();
        assert_eq!(err.kind, Mutf8ErrorKind::InvalidLead);
    }

    #[test]
    fn surrogate_pairs() {
        let emoji = "\u{1F600}";
        let bytes = encode_mutf8(emoji);
        assert_eq!(bytes, [0xED, 0xA0, 0xBD, 0xED, 0xB8, 0x80]);
        assert_eq!(decode_mutf8(&bytes).unwrap(), emoji);

        assert_eq!(
            decode_mutf8(&bytes[..3]).unwrap_err().kind,
            Mutf8ErrorKind::DanglingSurrogate
        );
        assert_eq!(
            decode_mutf8(&bytes[3..]).unwrap_err().kind,
            Mutf8ErrorKind::DanglingSurrogate
        );
        let mut high_then_ascii = bytes[..3].to_vec();
        high_then_ascii.push(b'a');
        assert_eq!(
            decode_mutf8(&high_then_ascii).unwrap_err().kind,
            Mutf8ErrorKind::DanglingSurrogate
        );
    }

    #[test]
    fn encode_roundtrip_mixed() {
        let s = "a\u{0}Ω€\u{10FFFF}z";
        assert_eq!(decode_mutf8(&encode_mutf8(s)).unwrap(), s);
        assert_eq!(utf16_len(s), 7);
    }
}
