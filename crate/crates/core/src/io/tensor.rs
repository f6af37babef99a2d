//! LSCE embedding files.
//!
//! A file is a concatenation of records. Each record is
//!
//! ```text
//! magic      4 bytes   "LSCE"
//! version    u32 LE    1
//! dim        u32 LE
//! tokens     u32 LE
//! id_length  u32 LE
//! image_id   id_length bytes of UTF-8
//! payload    tokens × dim f32 LE, row-major
//! ```

use std::fmt;
use std::io::Write;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use thiserror::Error;

use crate::embedding::{EmbeddingRecord, Stage};

pub const MAGIC: [u8; 4] = *b"LSCE";
pub const VERSION: u32 = 1;
/// Bytes before the image id: magic plus four u32 fields.
pub const FIXED_HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseReason {
    BadMagic([u8; 4]),
    UnsupportedVersion(u32),
    TruncatedHeader { expected: usize, available: usize },
    ZeroDimension,
    ZeroTokens,
    TruncatedId { expected: usize, available: usize },
    InvalidId,
    TruncatedPayload { expected: usize, available: usize },
    NonFiniteValue { token: usize, component: usize },
    /// Bytes after the last complete record that do not start a new one.
    TrailingGarbage { len: usize },
}

impl fmt::Display for ParseReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadMagic(m) => write!(f, "bad magic {m:02x?}"),
            Self::UnsupportedVersion(v) => write!(f, "unsupported version {v}"),
            Self::TruncatedHeader { expected, available } => {
                write!(f, "truncated header: need {expected} bytes, have {available}")
            }
            Self::ZeroDimension => f.write_str("dimension is zero"),
            Self::ZeroTokens => f.write_str("token count is zero"),
            Self::TruncatedId { expected, available } => {
                write!(f, "truncated image id: need {expected} bytes, have {available}")
            }
            Self::InvalidId => f.write_str("image id is empty or not UTF-8"),
            Self::TruncatedPayload { expected, available } => {
                write!(f, "truncated payload: need {expected} bytes, have {available}")
            }
            Self::NonFiniteValue { token, component } => {
                write!(f, "non-finite value at token {token}, component {component}")
            }
            Self::TrailingGarbage { len } => write!(f, "{len} trailing bytes after last record"),
        }
    }
}

/// Offset is the byte position where the offending field starts.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("at byte {offset}: {reason}")]
pub struct ParseError {
    pub offset: usize,
    pub reason: ParseReason,
}

fn fail<T>(offset: usize, reason: ParseReason) -> Result<T, ParseError> {
    Err(ParseError { offset, reason })
}

/// Header fields of one record, as found in the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordHeader {
    pub offset: usize,
    pub dim: usize,
    pub tokens: usize,
    pub image_id: String,
}

fn parse_one(buf: &[u8], start: usize, stage: Stage) -> Result<(RecordHeader, EmbeddingRecord, usize), ParseError> {
    let rest = &buf[start..];
    if rest.len() < FIXED_HEADER_LEN {
        return fail(
            start,
            ParseReason::TruncatedHeader {
                expected: FIXED_HEADER_LEN,
                available: rest.len(),
            },
        );
    }
    let magic: [u8; 4] = rest[..4].try_into().expect("length checked");
    if magic != MAGIC {
        return fail(start, ParseReason::BadMagic(magic));
    }
    let field = |i: usize| LittleEndian::read_u32(&rest[4 + 4 * i..8 + 4 * i]) as usize;
    let version = field(0) as u32;
    if version != VERSION {
        return fail(start + 4, ParseReason::UnsupportedVersion(version));
    }
    let (dim, tokens, id_len) = (field(1), field(2), field(3));
    if dim == 0 {
        return fail(start + 8, ParseReason::ZeroDimension);
    }
    if tokens == 0 {
        return fail(start + 12, ParseReason::ZeroTokens);
    }

    let id_start = start + FIXED_HEADER_LEN;
    let available = buf.len() - id_start;
    if available < id_len {
        return fail(
            id_start,
            ParseReason::TruncatedId {
                expected: id_len,
                available,
            },
        );
    }
    let image_id = match std::str::from_utf8(&buf[id_start..id_start + id_len]) {
        Ok(s) if !s.is_empty() => s.to_owned(),
        _ => return fail(id_start, ParseReason::InvalidId),
    };

    let payload_start = id_start + id_len;
    let available = buf.len() - payload_start;
    let expected = tokens
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .unwrap_or(usize::MAX);
    if available < expected {
        return fail(payload_start, ParseReason::TruncatedPayload { expected, available });
    }
    let payload = &buf[payload_start..payload_start + expected];
    let mut values = Vec::with_capacity(tokens * dim);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = LittleEndian::read_f32(chunk);
        if !v.is_finite() {
            return fail(
                payload_start + 4 * i,
                ParseReason::NonFiniteValue {
                    token: i / dim,
                    component: i % dim,
                },
            );
        }
        values.push(v as f64);
    }
    let record = EmbeddingRecord::new(image_id.clone(), stage, tokens, dim, values)
        .expect("shape and finiteness checked while parsing");
    let header = RecordHeader {
        offset: start,
        dim,
        tokens,
        image_id,
    };
    Ok((header, record, payload_start + expected))
}

/// Parses every record in `buf`, tagging them with `stage`.
///
/// An empty buffer is a truncated header. After the first record, bytes that
/// do not begin with the magic are reported as trailing garbage.
pub fn read_records(buf: &[u8], stage: Stage) -> Result<Vec<(RecordHeader, EmbeddingRecord)>, ParseError> {
    let mut out = Vec::new();
    let mut pos = 0;
    loop {
        if pos > 0 && pos == buf.len() {
            return Ok(out);
        }
        let rest = &buf[pos..];
        if pos > 0 && !rest.starts_with(&MAGIC) {
            return fail(pos, ParseReason::TrailingGarbage { len: rest.len() });
        }
        let (header, record, next) = parse_one(buf, pos, stage)?;
        out.push((header, record));
        pos = next;
    }
}

#[derive(Debug, Error)]
pub enum WriteError {
    #[error("image id `{0}` is too long for the format")]
    IdTooLong(String),
    #[error("record `{0}` has a dimension or token count too large for the format")]
    TooLarge(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Writes records in order. Values are stored as `f32`.
pub fn write_records<'a, W: Write>(mut w: W, records: impl IntoIterator<Item = &'a EmbeddingRecord>) -> Result<(), WriteError> {
    for r in records {
        let id = r.image_id().as_bytes();
        let id_len = u32::try_from(id.len()).map_err(|_| WriteError::IdTooLong(r.image_id().to_owned()))?;
        let too_large = || WriteError::TooLarge(r.image_id().to_owned());
        let dim = u32::try_from(r.dim()).map_err(|_| too_large())?;
        let tokens = u32::try_from(r.num_tokens()).map_err(|_| too_large())?;
        w.write_all(&MAGIC)?;
        for field in [VERSION, dim, tokens, id_len] {
            w.write_u32::<LittleEndian>(field)?;
        }
        w.write_all(id)?;
        for &v in r.values() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    Ok(())
}

pub fn encode(records: &[EmbeddingRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_records(&mut buf, records).expect("in-memory writes succeed for in-range records");
    buf
}
