//! The DTEN v1 container: a minimal self-describing binary tensor file.
//!
//! Layout, with no padding anywhere:
//!
//! | offset        | size     | field                                    |
//! |---------------|----------|------------------------------------------|
//! | 0             | 4        | magic `"DTEN"`                           |
//! | 4             | 1        | version, `0x01`                          |
//! | 5             | 1        | dtype: `0x01` f32 LE, `0x02` u8, `0x03` u16 LE |
//! | 6             | 1        | ndim                                     |
//! | 7             | 4 * ndim | dims, u32 LE each, outermost first       |
//! | 7 + 4 * ndim  | rest     | payload, row-major, LE                   |
//!
//! The payload length must equal `product(dims) * size_of(dtype)` exactly;
//! both shortfall and trailing bytes are errors. Everything is
//! little-endian regardless of host.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::tensor::{DenseTensor, Dtype, TensorData};

pub const DTEN_MAGIC: [u8; 4] = *b"DTEN";
pub const DTEN_VERSION: u8 = 0x01;
/// Dimension-count sanity cap; everything in this toolkit is rank 2 or 3.
pub const DTEN_MAX_NDIM: usize = 8;

const HEADER_FIXED: usize = 7;
const MAX_HEADER: usize = HEADER_FIXED + 4 * DTEN_MAX_NDIM;

struct Header {
    dtype: Dtype,
    dims: Vec<usize>,
    header_len: usize,
    payload_len: u64,
}

/// Parses the header from the start of `bytes`. `bytes` may be a prefix of
/// the file; truncation errors report where the data ran out.
fn parse_header(bytes: &[u8]) -> std::result::Result<Header, FormatError> {
    if bytes.len() < 4 {
        // A strict prefix of the magic is a truncated file, anything else
        // is a foreign one.
        if DTEN_MAGIC.starts_with(bytes) {
            return Err(FormatError::Truncated {
                offset: bytes.len(),
                needed: (HEADER_FIXED - bytes.len()) as u64,
            });
        }
        return Err(FormatError::BadMagic {
            found: bytes.to_vec(),
        });
    }
    if bytes[..4] != DTEN_MAGIC {
        return Err(FormatError::BadMagic {
            found: bytes[..4].to_vec(),
        });
    }
    let byte_at = |offset: usize| -> std::result::Result<u8, FormatError> {
        bytes
            .get(offset)
            .copied()
            .ok_or_else(|| FormatError::Truncated {
                offset: bytes.len(),
                needed: HEADER_FIXED.saturating_sub(bytes.len()) as u64,
            })
    };
    let version = byte_at(4)?;
    if version != DTEN_VERSION {
        return Err(FormatError::UnsupportedVersion { version });
    }
    let dtype =
        Dtype::from_code(byte_at(5)?).ok_or(FormatError::UnknownDtype { code: bytes[5] })?;
    let ndim = byte_at(6)? as usize;
    if ndim == 0 || ndim > DTEN_MAX_NDIM {
        return Err(FormatError::InvalidNdim { ndim: ndim as u8 });
    }
    let header_len = HEADER_FIXED + 4 * ndim;
    if bytes.len() < header_len {
        return Err(FormatError::Truncated {
            offset: bytes.len(),
            needed: (header_len - bytes.len()) as u64,
        });
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut count = 1u64;
    for i in 0..ndim {
        let offset = HEADER_FIXED + 4 * i;
        let extent = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
        if extent == 0 {
            return Err(FormatError::ZeroExtent { index: i, offset });
        }
        count = count
            .checked_mul(extent as u64)
            .ok_or(FormatError::DimOverflow)?;
        dims.push(extent as usize);
    }
    let payload_len = count
        .checked_mul(dtype.size_bytes() as u64)
        .ok_or(FormatError::DimOverflow)?;
    // Keep total size addressable as usize arithmetic downstream.
    if payload_len > (usize::MAX - header_len) as u64 {
        return Err(FormatError::DimOverflow);
    }
    Ok(Header {
        dtype,
        dims,
        header_len,
        payload_len,
    })
}

/// Decodes a complete in-memory DTEN file.
pub fn decode_tensor(bytes: &[u8]) -> std::result::Result<DenseTensor, FormatError> {
    let header = parse_header(bytes)?;
    let available = (bytes.len() - header.header_len) as u64;
    if available < header.payload_len {
        return Err(FormatError::Truncated {
            offset: bytes.len(),
            needed: header.payload_len - available,
        });
    }
    if available > header.payload_len {
        return Err(FormatError::TrailingData {
            offset: header.header_len + header.payload_len as usize,
            extra: (available - header.payload_len) as usize,
        });
    }
    let payload = &bytes[header.header_len..];
    let data = match header.dtype {
        Dtype::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::U8 => TensorData::U8(payload.to_vec()),
        Dtype::U16 => TensorData::U16(
            payload
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    // The element count was matched to the dims above, and extents are
    // non-zero, so construction cannot fail.
    Ok(DenseTensor::new(header.dims, data).expect("header-validated tensor"))
}

/// Encodes a tensor into DTEN v1 bytes.
pub fn encode_tensor(tensor: &DenseTensor) -> Result<Vec<u8>> {
    let dims = tensor.dims();
    if dims.len() > DTEN_MAX_NDIM {
        return Err(Error::InvalidInput(format!(
            "tensor rank {} exceeds the container limit of {DTEN_MAX_NDIM}",
            dims.len()
        )));
    }
    for &d in dims {
        if d > u32::MAX as usize {
            return Err(Error::InvalidInput(format!(
                "dimension {d} exceeds the container's u32 extent limit"
            )));
        }
    }
    let dtype = tensor.dtype();
    let payload_len = tensor.len() * dtype.size_bytes();
    let mut out = Vec::with_capacity(HEADER_FIXED + 4 * dims.len() + payload_len);
    out.extend_from_slice(&DTEN_MAGIC);
    out.push(DTEN_VERSION);
    out.push(dtype.code());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match tensor.data() {
        TensorData::F32(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::U8(v) => out.extend_from_slice(v),
        TensorData::U16(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_tensor(&bytes)?)
}

pub fn write_tensor(tensor: &DenseTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(tensor)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads only the header plus the file length: cheap shape/dtype validation
/// without touching the payload. The file's total size is still checked
/// against the header, so truncation is caught here too.
pub fn read_tensor_header(path: impl AsRef<Path>) -> Result<(Dtype, Vec<usize>)> {
    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(MAX_HEADER);
    (&mut file)
        .take(MAX_HEADER as u64)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    let header = parse_header(&buf)?;
    let total = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let expected = header.header_len as u64 + header.payload_len;
    if total < expected {
        return Err(FormatError::Truncated {
            offset: total as usize,
            needed: expected - total,
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
    Ok((header.dtype, header.dims))
}
