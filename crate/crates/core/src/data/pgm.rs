//! Binary PGM (P5) codec, maxval <= 255.
//!
//! The writer emits the canonical header `P5\n{w} {h}\n255\n`; the reader
//! additionally accepts arbitrary header whitespace and `#` comments.
//! Parse errors carry the byte offset they were detected at.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{DataError, GrayImage};

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("unsupported format {magic:?} at byte {offset} (only binary P5 is supported)")]
    UnsupportedFormat { magic: String, offset: usize },
    #[error("maxval {maxval} at byte {offset} exceeds 255")]
    MaxvalTooLarge { maxval: u32, offset: usize },
    #[error("truncated payload at byte {offset}: expected {expected} pixel bytes, got {actual}")]
    TruncatedPayload {
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("malformed header at byte {offset}: {detail}")]
    Malformed { detail: String, offset: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn read_uint(&mut self, what: &str) -> Result<u32, PgmError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        let mut value: u64 = 0;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            value = value * 10 + (self.bytes[self.pos] - b'0') as u64;
            if value > u32::MAX as u64 {
                return Err(PgmError::Malformed {
                    detail: format!("{what} overflows"),
                    offset: start,
                });
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Err(PgmError::Malformed {
                detail: format!("expected {what}"),
                offset: start,
            });
        }
        Ok(value as u32)
    }
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    if bytes.len() < 2 {
        return Err(PgmError::Malformed {
            detail: "file shorter than a magic number".into(),
            offset: 0,
        });
    }
    if &bytes[..2] != b"P5" {
        let magic = String::from_utf8_lossy(&bytes[..2]).into_owned();
        return Err(PgmError::UnsupportedFormat { magic, offset: 0 });
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.read_uint("width")? as usize;
    let height = cur.read_uint("height")? as usize;
    let maxval_offset = {
        cur.skip_whitespace_and_comments();
        cur.pos
    };
    let maxval = cur.read_uint("maxval")?;
    if maxval > 255 {
        return Err(PgmError::MaxvalTooLarge {
            maxval,
            offset: maxval_offset,
        });
    }
    if width == 0 || height == 0 {
        return Err(PgmError::Malformed {
            detail: format!("zero image extent {width}x{height}"),
            offset: 2,
        });
    }
    // Exactly one whitespace byte separates the header from the payload.
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(PgmError::Malformed {
            detail: "missing whitespace after maxval".into(),
            offset: cur.pos,
        });
    }
    cur.pos += 1;

    let expected = width * height;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(PgmError::TruncatedPayload {
            offset: cur.pos,
            expected,
            actual: payload.len(),
        });
    }
    GrayImage::new(width, height, payload[..expected].to_vec())
        .map_err(|e| PgmError::Malformed {
            detail: e.to_string(),
            offset: cur.pos,
        })
}

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", image.width(), image.height());
    let mut out = Vec::with_capacity(header.len() + image.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(image.pixels());
    out
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage, PgmError> {
    let bytes = fs::read(path)?;
    parse_pgm(&bytes)
}

pub fn write_pgm(path: impl AsRef<Path>, image: &GrayImage) -> Result<(), DataError> {
    fs::write(path, encode_pgm(image))?;
    Ok(())
}
