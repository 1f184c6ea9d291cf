//! High-dimensional Gaussian filtering of per-pixel value vectors.
//!
//! Message passing in the fully connected CRF reduces to evaluating, for
//! every point, a Gaussian-weighted sum over all other points in a small
//! feature space. Bandwidths are folded into the features at build time, so
//! a single unit-bandwidth kernel `k(f_i, f_j) = exp(-||f_i - f_j||^2 / 2)`
//! serves both the appearance and smoothness kernels.
//!
//! [`brute_force_filter`] is the exact O(N^2) oracle; [`crate::lattice`]
//! provides the fast approximation validated against it.

use rayon::prelude::*;

use crate::crf::CrfParams;
use crate::error::{Error, Result};
use crate::tensor::SliceImage;

/// Which pairwise kernel a feature field encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// Position and intensity: `(x/sa, y/sa, I/sb)`.
    Appearance,
    /// Position only: `(x/sg, y/sg)`.
    Smoothness,
}

/// Per-point feature vectors, already divided by the kernel bandwidths.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    n_points: usize,
    dim: usize,
    feat: Vec<f32>,
}

impl FeatureField {
    pub fn new(n_points: usize, dim: usize, feat: Vec<f32>) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidInput(format!(
                "feature dimension must be 2 or 3, got {dim}"
            )));
        }
        if feat.len() != n_points * dim {
            return Err(Error::ShapeMismatch(format!(
                "feature buffer of {} does not match {n_points} points x {dim} dims",
                feat.len()
            )));
        }
        if !feat.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("features must all be finite".into()));
        }
        Ok(FeatureField {
            n_points,
            dim,
            feat,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feat(&self) -> &[f32] {
        &self.feat
    }

    pub fn point(&self, i: usize) -> &[f32] {
        &self.feat[i * self.dim..(i + 1) * self.dim]
    }

    /// `exp(-||f_i - f_j||^2 / 2)` for two points of this field.
    pub fn kernel(&self, i: usize, j: usize) -> f64 {
        let a = self.point(i);
        let b = self.point(j);
        let mut d2 = 0.0f64;
        for (x, y) in a.iter().zip(b) {
            let d = (*x as f64) - (*y as f64);
            d2 += d * d;
        }
        (-0.5 * d2).exp()
    }
}

/// Builds the bandwidth-scaled feature field of `kind` for one slice.
pub fn build_features(
    image: &SliceImage,
    kind: KernelKind,
    params: &CrfParams,
) -> Result<FeatureField> {
    params.validate()?;
    let (h, w) = (image.height(), image.width());
    let n = h * w;
    match kind {
        KernelKind::Appearance => {
            let inv_sa = 1.0 / params.sigma_alpha;
            let inv_sb = 1.0 / params.sigma_beta;
            let mut feat = Vec::with_capacity(n * 3);
            for y in 0..h {
                for x in 0..w {
                    feat.push(x as f32 * inv_sa);
                    feat.push(y as f32 * inv_sa);
                    feat.push(image.at(y, x) * inv_sb);
                }
            }
            FeatureField::new(n, 3, feat)
        }
        KernelKind::Smoothness => {
            let inv_sg = 1.0 / params.sigma_gamma;
            let mut feat = Vec::with_capacity(n * 2);
            for y in 0..h {
                for x in 0..w {
                    feat.push(x as f32 * inv_sg);
                    feat.push(y as f32 * inv_sg);
                }
            }
            FeatureField::new(n, 2, feat)
        }
    }
}

/// Exact Gaussian transform: `out_i = sum_j exp(-||f_i - f_j||^2 / 2) v_j`,
/// including the `j = i` term. `values` holds `width` channels per point,
/// channel-innermost; accumulation is in f64 per output element.
///
/// Quadratic cost; this is the correctness oracle for the fast filter, not a
/// production path for large grids.
pub fn brute_force_filter(
    features: &FeatureField,
    values: &[f32],
    width: usize,
) -> Result<Vec<f32>> {
    let n = features.n_points();
    if width == 0 || values.len() != n * width {
        return Err(Error::ShapeMismatch(format!(
            "value buffer of {} does not match {n} points x {width} channels",
            values.len()
        )));
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("filter values must be finite".into()));
    }
    let mut out = vec![0.0f32; n * width];
    out.par_chunks_exact_mut(width)
        .enumerate()
        .for_each(|(i, orow)| {
            let mut acc = vec![0.0f64; width];
            for j in 0..n {
                let k = features.kernel(i, j);
                let vrow = &values[j * width..(j + 1) * width];
                for (a, &v) in acc.iter_mut().zip(vrow) {
                    *a += k * v as f64;
                }
            }
            for (o, a) in orow.iter_mut().zip(&acc) {
                *o = *a as f32;
            }
        });
    Ok(out)
}
