//! Binary PPM (P6) overlay emission: prediction vs truth painted over the
//! slice.
//!
//! Color convention: true positives green, false positives red, false
//! negatives cyan, true negatives as the grayscale slice. Write-only;
//! overlays are a terminal artifact, nothing reads them back.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{rescale_to_byte_range, LabelMask, SliceImage};

const TRUE_POSITIVE: [u8; 3] = [0, 255, 0];
const FALSE_POSITIVE: [u8; 3] = [255, 0, 0];
const FALSE_NEGATIVE: [u8; 3] = [0, 255, 255];

/// Renders the overlay as P6 bytes.
pub fn encode_overlay(
    image: &SliceImage,
    pred: &LabelMask,
    truth: &LabelMask,
    positive_label: u8,
) -> Result<Vec<u8>> {
    let (h, w) = (image.height(), image.width());
    for (name, mh, mw) in [
        ("prediction", pred.height(), pred.width()),
        ("truth", truth.height(), truth.width()),
    ] {
        if (mh, mw) != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "{name} mask {mh}x{mw} does not match image {h}x{w}"
            )));
        }
    }
    let gray = rescale_to_byte_range(image.intensity());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for ((&p, &t), &g) in pred.label().iter().zip(truth.label()).zip(&gray) {
        let rgb = match (p == positive_label, t == positive_label) {
            (true, true) => TRUE_POSITIVE,
            (true, false) => FALSE_POSITIVE,
            (false, true) => FALSE_NEGATIVE,
            (false, false) => [g; 3],
        };
        out.extend_from_slice(&rgb);
    }
    Ok(out)
}

pub fn write_overlay(
    image: &SliceImage,
    pred: &LabelMask,
    truth: &LabelMask,
    positive_label: u8,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_overlay(image, pred, truth, positive_label)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
