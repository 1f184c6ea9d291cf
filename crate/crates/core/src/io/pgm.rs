//! Binary PGM (P5) interchange for binary label masks.
//!
//! Readers accept only P5 with maxval 255. Pixel values decode by a strict
//! rule: 0 is label 0, anything at or above 128 is label 1, and the open
//! interval (0, 128) is rejected as ambiguous rather than silently
//! thresholded. The writer emits 0/255 only, so write-then-read is
//! identity. Header comments (`#` to end of line) are tolerated on read.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::tensor::LabelMask;

/// Pixel values at or above this decode to label 1.
pub const PGM_POSITIVE_THRESHOLD: u8 = 128;

const MAX_HEADER: usize = 4096;

struct PgmHeader {
    width: usize,
    height: usize,
    pixel_start: usize,
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        return;
    }
}

fn next_uint(bytes: &[u8], pos: &mut usize) -> std::result::Result<(u64, usize), FormatError> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    if start >= bytes.len() {
        return Err(FormatError::PgmHeader {
            offset: start,
            reason: "unexpected end of header".into(),
        });
    }
    if !bytes[start].is_ascii_digit() {
        return Err(FormatError::PgmHeader {
            offset: start,
            reason: format!(
                "expected unsigned integer, found byte {:#04x}",
                bytes[start]
            ),
        });
    }
    let mut value = 0u64;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add((bytes[*pos] - b'0') as u64))
            .ok_or(FormatError::PgmHeader {
                offset: start,
                reason: "number too large".into(),
            })?;
        *pos += 1;
    }
    Ok((value, start))
}

/// Parses the P5 header; `bytes` may be a prefix of the file as long as it
/// covers the header.
fn parse_header(bytes: &[u8]) -> std::result::Result<PgmHeader, FormatError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(FormatError::PgmBadMagic {
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned(),
        });
    }
    let mut pos = 2;
    if pos >= bytes.len() || !(bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
        return Err(FormatError::PgmHeader {
            offset: pos,
            reason: "expected whitespace after magic".into(),
        });
    }
    let (width, w_off) = next_uint(bytes, &mut pos)?;
    let (height, h_off) = next_uint(bytes, &mut pos)?;
    let (maxval, m_off) = next_uint(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(FormatError::PgmMaxval {
            maxval,
            offset: m_off,
        });
    }
    if width == 0 {
        return Err(FormatError::PgmHeader {
            offset: w_off,
            reason: "zero width".into(),
        });
    }
    if height == 0 {
        return Err(FormatError::PgmHeader {
            offset: h_off,
            reason: "zero height".into(),
        });
    }
    if width.checked_mul(height).is_none()
        || width > usize::MAX as u64
        || height > usize::MAX as u64
    {
        return Err(FormatError::PgmHeader {
            offset: w_off,
            reason: "dimensions overflow".into(),
        });
    }
    // Exactly one whitespace byte separates the header from pixel data.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(FormatError::PgmHeader {
            offset: pos,
            reason: "expected single whitespace before pixel data".into(),
        });
    }
    Ok(PgmHeader {
        width: width as usize,
        height: height as usize,
        pixel_start: pos + 1,
    })
}

/// Decodes a complete in-memory P5 file into a binary mask.
pub fn decode_pgm_mask(bytes: &[u8]) -> std::result::Result<LabelMask, FormatError> {
    let header = parse_header(bytes)?;
    let expected = header.width * header.height;
    let found = bytes.len().saturating_sub(header.pixel_start);
    if found < expected {
        return Err(FormatError::PgmTruncated {
            offset: bytes.len(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(FormatError::TrailingData {
            offset: header.pixel_start + expected,
            extra: found - expected,
        });
    }
    let mut labels = Vec::with_capacity(expected);
    for (i, &value) in bytes[header.pixel_start..].iter().enumerate() {
        labels.push(match value {
            0 => 0u8,
            v if v >= PGM_POSITIVE_THRESHOLD => 1,
            v => {
                return Err(FormatError::PgmAmbiguousValue {
                    value: v,
                    offset: header.pixel_start + i,
                })
            }
        });
    }
    Ok(LabelMask::new(header.height, header.width, 2, labels).expect("header-validated mask"))
}

/// Encodes a binary mask as P5 with 0/255 pixels.
pub fn encode_pgm_mask(mask: &LabelMask) -> Result<Vec<u8>> {
    if mask.labels() != 2 {
        return Err(Error::InvalidInput(format!(
            "PGM masks are binary; mask has a {}-label space",
            mask.labels()
        )));
    }
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.label().iter().map(|&l| if l == 0 { 0u8 } else { 255 }));
    Ok(out)
}

pub fn read_pgm_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_pgm_mask(&bytes)?)
}

pub fn write_pgm_mask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm_mask(mask)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Header-only peek: (height, width), with the file length checked against
/// the declared dimensions.
pub fn read_pgm_header(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(MAX_HEADER);
    (&mut file)
        .take(MAX_HEADER as u64)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    let header = parse_header(&buf)?;
    let total = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let expected = header.pixel_start as u64 + (header.width * header.height) as u64;
    if total < expected {
        return Err(FormatError::PgmTruncated {
            offset: total as usize,
            expected: header.width * header.height,
            found: total.saturating_sub(header.pixel_start as u64) as usize,
        }
        .into());
    }
    if total > expected {
        return Err(FormatError::TrailingData {
            offset: expected as usize,
            extra: (total - expected) as usize,
        }
        .into());
    }
    Ok((header.height, header.width))
}
