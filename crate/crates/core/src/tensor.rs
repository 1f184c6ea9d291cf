//! Dense row-major grids and the image/probability/label views built on them.
//!
//! Everything downstream (filtering, inference, metrics, file formats)
//! exchanges these types. They are immutable value objects once constructed;
//! constructors enforce the invariants so the rest of the crate can index
//! without re-checking.

use crate::error::{Error, Result};

/// Element type of a [`DenseTensor`]. Codes match the on-disk container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    U8,
    U16,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0x01,
            Dtype::U8 => 0x02,
            Dtype::U16 => 0x03,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(Dtype::F32),
            0x02 => Some(Dtype::U8),
            0x03 => Some(Dtype::U16),
            _ => None,
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
            Dtype::U16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    U16(Vec<u16>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::U16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::U8(_) => Dtype::U8,
            TensorData::U16(_) => Dtype::U16,
        }
    }
}

/// Dense row-major numeric grid (outermost dimension first).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidInput("tensor dims must be non-empty".into()));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "tensor dims must all be >= 1, got {dims:?}"
            )));
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidInput(format!("tensor dims {dims:?} overflow")))?;
        if count != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "dims {dims:?} imply {count} elements but data holds {}",
                data.len()
            )));
        }
        Ok(DenseTensor { dims, data })
    }

    pub fn from_f32(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(dims, TensorData::F32(data))
    }

    pub fn from_u8(dims: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        Self::new(dims, TensorData::U8(data))
    }

    pub fn from_u16(dims: Vec<usize>, data: Vec<u16>) -> Result<Self> {
        Self::new(dims, TensorData::U16(data))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    /// Element values widened to f32 regardless of storage type.
    pub fn to_f32_vec(&self) -> Vec<f32> {
        match &self.data {
            TensorData::F32(v) => v.clone(),
            TensorData::U8(v) => v.iter().map(|&x| x as f32).collect(),
            TensorData::U16(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }
}

/// A single 2D intensity slice. Intensities are expected on the windowed
/// `[0, 255]` scale (see `experiment::hu_window`); only finiteness is
/// enforced here.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    height: usize,
    width: usize,
    intensity: Vec<f32>,
}

impl SliceImage {
    pub fn new(height: usize, width: usize, intensity: Vec<f32>) -> Result<Self> {
        check_dims_2d(height, width, intensity.len())?;
        if !intensity.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(
                "image intensities must all be finite".into(),
            ));
        }
        Ok(SliceImage {
            height,
            width,
            intensity,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn intensity(&self) -> &[f32] {
        &self.intensity
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.intensity[y * self.width + x]
    }
}

/// Per-pixel, per-label probability distribution, labels innermost.
/// Per-pixel sums are tolerated to 1e-5 on ingest and renormalized, so
/// downstream code may assume exact distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    labels: usize,
    prob: Vec<f32>,
}

/// Tolerance on ingested per-pixel probability sums.
pub const PROB_SUM_TOLERANCE: f32 = 1e-5;

impl ProbabilityMap {
    pub fn new(height: usize, width: usize, labels: usize, mut prob: Vec<f32>) -> Result<Self> {
        check_dims_2d(height, width, prob.len() / labels.max(1))?;
        if labels < 2 {
            return Err(Error::InvalidInput(format!(
                "probability map needs >= 2 labels, got {labels}"
            )));
        }
        if prob.len() != height * width * labels {
            return Err(Error::ShapeMismatch(format!(
                "probability buffer of {} does not match {height}x{width}x{labels}",
                prob.len()
            )));
        }
        for (i, chunk) in prob.chunks_exact_mut(labels).enumerate() {
            let mut sum = 0.0f32;
            for &v in chunk.iter() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidInput(format!(
                        "probability {v} at pixel {i} is outside [0, 1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(Error::InvalidInput(format!(
                    "probabilities at pixel {i} sum to {sum}, beyond the {PROB_SUM_TOLERANCE} tolerance"
                )));
            }
            for v in chunk.iter_mut() {
                *v /= sum;
            }
        }
        Ok(ProbabilityMap {
            height,
            width,
            labels,
            prob,
        })
    }

    /// Constructor for buffers produced by in-crate normalized computations
    /// (softmax output); skips the per-pixel validation pass.
    pub(crate) fn from_normalized(
        height: usize,
        width: usize,
        labels: usize,
        prob: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(prob.len(), height * width * labels);
        ProbabilityMap {
            height,
            width,
            labels,
            prob,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn prob(&self) -> &[f32] {
        &self.prob
    }

    pub fn at(&self, y: usize, x: usize, label: usize) -> f32 {
        self.prob[(y * self.width + x) * self.labels + label]
    }
}

/// Per-pixel label assignment. Every value is `< labels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: usize,
    label: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: usize, label: Vec<u8>) -> Result<Self> {
        check_dims_2d(height, width, label.len())?;
        if !(2..=256).contains(&labels) {
            return Err(Error::InvalidInput(format!(
                "label count must be in [2, 256], got {labels}"
            )));
        }
        if let Some(&bad) = label.iter().find(|&&v| (v as usize) >= labels) {
            return Err(Error::InvalidInput(format!(
                "mask value {bad} is not a valid label index (labels = {labels})"
            )));
        }
        Ok(LabelMask {
            height,
            width,
            labels,
            label,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn label(&self) -> &[u8] {
        &self.label
    }

    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.label[y * self.width + x]
    }
}

fn check_dims_2d(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidInput(format!(
            "grid dims must be >= 1, got {height}x{width}"
        )));
    }
    let pixels = height
        .checked_mul(width)
        .ok_or_else(|| Error::InvalidInput("grid dims overflow".into()))?;
    if pixels != len {
        return Err(Error::ShapeMismatch(format!(
            "{height}x{width} grid implies {pixels} elements but buffer holds {len}"
        )));
    }
    Ok(())
}

/// Numerically-stable per-row softmax: for each row of `labels` scores,
/// subtracts the row max before exponentiating. Shared by the public
/// normalizer and the mean-field update so both produce identical bits
/// for identical scores.
pub(crate) fn softmax_rows(scores: &[f32], labels: usize, out: &mut [f32]) {
    debug_assert_eq!(scores.len(), out.len());
    for (row, orow) in scores
        .chunks_exact(labels)
        .zip(out.chunks_exact_mut(labels))
    {
        softmax_row(row, orow);
    }
}

/// Single-row kernel behind [`softmax_rows`]; also called directly from the
/// parallel mean-field update.
pub(crate) fn softmax_row(row: &[f32], orow: &mut [f32]) {
    let mut max = row[0];
    for &s in &row[1..] {
        if s > max {
            max = s;
        }
    }
    let mut sum = 0.0f32;
    for (o, &s) in orow.iter_mut().zip(row) {
        let e = (s - max).exp();
        *o = e;
        sum += e;
    }
    let inv = 1.0 / sum;
    for o in orow.iter_mut() {
        *o *= inv;
    }
}

/// Per-pixel softmax over raw scores, labels innermost.
pub fn softmax_normalize(
    height: usize,
    width: usize,
    labels: usize,
    scores: &[f32],
) -> Result<ProbabilityMap> {
    if labels < 2 {
        return Err(Error::InvalidInput(format!(
            "softmax needs >= 2 labels, got {labels}"
        )));
    }
    check_dims_2d(height, width, scores.len() / labels)?;
    if scores.len() != height * width * labels {
        return Err(Error::ShapeMismatch(format!(
            "score buffer of {} does not match {height}x{width}x{labels}",
            scores.len()
        )));
    }
    if !scores.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("softmax scores must be finite".into()));
    }
    let mut out = vec![0.0f32; scores.len()];
    softmax_rows(scores, labels, &mut out);
    Ok(ProbabilityMap::from_normalized(height, width, labels, out))
}

/// Per-pixel argmax with ties broken to the lowest label index.
pub fn argmax_labels(prob: &ProbabilityMap) -> LabelMask {
    let labels = prob.labels();
    let mut out = Vec::with_capacity(prob.n_pixels());
    for row in prob.prob().chunks_exact(labels) {
        let mut best = 0usize;
        let mut best_v = row[0];
        for (l, &v) in row.iter().enumerate().skip(1) {
            if v > best_v {
                best_v = v;
                best = l;
            }
        }
        out.push(best as u8);
    }
    LabelMask {
        height: prob.height(),
        width: prob.width(),
        labels,
        label: out,
    }
}

/// Affine map of `[min, max]` onto `[0, 255]`, rounded half-up. A constant
/// field maps to all zeros. Inputs must be finite.
pub fn rescale_to_byte_range(field: &[f32]) -> Vec<u8> {
    debug_assert!(field.iter().all(|v| v.is_finite()));
    let Some(&first) = field.first() else {
        return Vec::new();
    };
    let (mut min, mut max) = (first, first);
    for &v in field {
        if v < min {
            min = v;
        }
        if v > max {
            max = v;
        }
    }
    if max <= min {
        return vec![0u8; field.len()];
    }
    let scale = 255.0 / (max - min);
    field
        .iter()
        .map(|&v| {
            let x = (v - min) * scale;
            (x + 0.5).floor().clamp(0.0, 255.0) as u8
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetry_and_forced_values() {
        let p = softmax_normalize(1, 1, 2, &[0.0, 0.0]).unwrap();
        assert_eq!(p.prob(), &[0.5, 0.5]);

        let p = softmax_normalize(1, 1, 2, &[2.0f32.ln(), 0.0]).unwrap();
        assert!((p.at(0, 0, 0) - 2.0 / 3.0).abs() < 1e-6);
        assert!((p.at(0, 0, 1) - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = crate::rng::SeededRng::new(3);
        let scores: Vec<f32> = (0..4 * 4 * 3)
            .map(|_| rng.range_f64(-10.0, 10.0) as f32)
            .collect();
        let p = softmax_normalize(4, 4, 3, &scores).unwrap();
        for px in p.prob().chunks_exact(3) {
            let sum: f32 = px.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-6, "sum {sum}");
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let err = softmax_normalize(1, 1, 2, &[f32::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn softmax_shift_invariance() {
        let scores = [1.0f32, -0.5, 2.5, 0.0, 0.25, -1.0];
        let shifted: Vec<f32> = scores.iter().map(|s| s + 7.25).collect();
        let a = softmax_normalize(1, 2, 3, &scores).unwrap();
        let b = softmax_normalize(1, 2, 3, &shifted).unwrap();
        for (x, y) in a.prob().iter().zip(b.prob()) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn argmax_examples_and_tie_break() {
        let p = ProbabilityMap::new(1, 1, 2, vec![0.9, 0.1]).unwrap();
        assert_eq!(argmax_labels(&p).label(), &[0]);

        let p = ProbabilityMap::new(1, 1, 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(argmax_labels(&p).label(), &[0]);

        let p = ProbabilityMap::new(1, 1, 3, vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(argmax_labels(&p).label(), &[1]);
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_to_byte_range(&[7.0, 7.0, 7.0]), vec![0, 0, 0]);
        assert_eq!(rescale_to_byte_range(&[0.0, 1.0]), vec![0, 255]);
        // round(0.5 * 255) = round(127.5) rounds half-up to 128
        assert_eq!(rescale_to_byte_range(&[0.0, 0.5, 1.0]), vec![0, 128, 255]);
    }

    #[test]
    fn probability_map_renormalizes_on_ingest() {
        // Off by slightly less than the 1e-5 tolerance.
        let p = ProbabilityMap::new(1, 1, 2, vec![0.499_998, 0.5]).unwrap();
        let sum: f32 = p.prob().iter().sum();
        assert!((sum - 1.0).abs() < 1e-7);

        let err = ProbabilityMap::new(1, 1, 2, vec![0.4, 0.5]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn label_mask_validates_indices() {
        assert!(LabelMask::new(1, 2, 2, vec![0, 1]).is_ok());
        let err = LabelMask::new(1, 2, 2, vec![0, 2]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn dense_tensor_shape_invariants() {
        assert!(DenseTensor::from_u8(vec![2, 3], vec![0; 6]).is_ok());
        assert!(DenseTensor::from_u8(vec![2, 3], vec![0; 5]).is_err());
        assert!(DenseTensor::from_u8(vec![], vec![]).is_err());
        assert!(DenseTensor::from_u8(vec![0, 3], vec![]).is_err());
    }
}
