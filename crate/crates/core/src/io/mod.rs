//! On-disk formats: the DTEN tensor container, PGM masks, PPM overlays,
//! and the JSON case manifest, plus conversions between stored tensors and
//! the domain types.
//!
//! All formats are little-endian regardless of host, reject rather than
//! panic on malformed input, and round-trip bit-exactly.

pub mod dten;
pub mod manifest;
pub mod pgm;
pub mod ppm;

pub use dten::{
    decode_tensor, encode_tensor, read_tensor, read_tensor_header, write_tensor, DTEN_MAGIC,
    DTEN_MAX_NDIM, DTEN_VERSION,
};
pub use manifest::{
    read_manifest, write_manifest, CaseEntry, CaseManifest, SliceRef, MANIFEST_SCHEMA_VERSION,
};
pub use pgm::{
    decode_pgm_mask, encode_pgm_mask, read_pgm_header, read_pgm_mask, write_pgm_mask,
    PGM_POSITIVE_THRESHOLD,
};
pub use ppm::{encode_overlay, write_overlay};

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, ProbabilityMap, SliceImage};

/// Stored image form: 2-D tensor, kept as f32.
pub fn image_to_tensor(image: &SliceImage) -> DenseTensor {
    DenseTensor::from_f32(
        vec![image.height(), image.width()],
        image.intensity().to_vec(),
    )
    .expect("image dims match its buffer")
}

/// Interprets a 2-D tensor as a slice image, widening integer dtypes.
pub fn image_from_tensor(tensor: &DenseTensor) -> Result<SliceImage> {
    let dims = tensor.dims();
    if dims.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "image tensor must be 2-D, got dims {dims:?}"
        )));
    }
    SliceImage::new(dims[0], dims[1], tensor.to_f32_vec())
}

/// Stored probability form: H x W x L float32, labels innermost.
pub fn prob_to_tensor(prob: &ProbabilityMap) -> DenseTensor {
    DenseTensor::from_f32(
        vec![prob.height(), prob.width(), prob.labels()],
        prob.prob().to_vec(),
    )
    .expect("probability dims match its buffer")
}

/// Interprets an H x W x L float32 tensor as a probability map; values are
/// validated and renormalized by [`ProbabilityMap::new`].
pub fn prob_from_tensor(tensor: &DenseTensor) -> Result<ProbabilityMap> {
    let dims = tensor.dims();
    if dims.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "probability tensor must be H x W x L, got dims {dims:?}"
        )));
    }
    let Some(data) = tensor.as_f32() else {
        return Err(Error::InvalidInput(
            "probability tensors must be float32".into(),
        ));
    };
    ProbabilityMap::new(dims[0], dims[1], dims[2], data.to_vec())
}
