//! Fully connected CRF over one slice: energy model, unary construction,
//! and parallel mean-field inference.
//!
//! The model couples every pixel pair through two Gaussian kernels, an
//! appearance kernel over position and intensity and a smoothness kernel
//! over position alone, with Potts label compatibility. Inference follows
//! the standard efficient scheme: initialize `Q = softmax(-u)`, then iterate
//! message passing (one Gaussian filter pass per kernel, self-term
//! subtracted), the compatibility transform, and a per-pixel renormalized
//! update. All pixels update in parallel from the previous iterate, so each
//! iteration is a sequential barrier and results are independent of thread
//! count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{brute_force_filter, build_features, FeatureField, KernelKind};
use crate::lattice::LatticeFilter;
use crate::tensor::{argmax_labels, softmax_row, LabelMask, ProbabilityMap, SliceImage};

/// Pairwise weights and bandwidths plus the iteration budget.
///
/// Defaults are the published operating point for lung-field refinement:
/// appearance kernel only (`w2 = 0`), `w1 = 3`, `sigma_alpha = 5` px,
/// `sigma_beta = 26` intensity units on the byte scale, 10 iterations.
/// `sigma_gamma` only matters when the smoothness kernel is enabled.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CrfParams {
    pub w1: f32,
    pub w2: f32,
    pub sigma_alpha: f32,
    pub sigma_beta: f32,
    pub sigma_gamma: f32,
    pub iterations: u32,
}

impl Default for CrfParams {
    fn default() -> Self {
        CrfParams {
            w1: 3.0,
            w2: 0.0,
            sigma_alpha: 5.0,
            sigma_beta: 26.0,
            sigma_gamma: 3.0,
            iterations: 10,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_alpha", self.sigma_alpha),
            ("sigma_beta", self.sigma_beta),
            ("sigma_gamma", self.sigma_gamma),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        for (name, v) in [("w1", self.w1), ("w2", self.w2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-pixel, per-label unary potentials, labels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryField {
    height: usize,
    width: usize,
    labels: usize,
    u: Vec<f32>,
}

impl UnaryField {
    pub fn new(height: usize, width: usize, labels: usize, u: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("unary grid must be non-empty".into()));
        }
        if !(2..=256).contains(&labels) {
            return Err(Error::InvalidInput(format!(
                "unary field needs 2..=256 labels, got {labels}"
            )));
        }
        let expect = height
            .checked_mul(width)
            .and_then(|p| p.checked_mul(labels));
        if expect != Some(u.len()) {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{labels} unary implies {expect:?} values, buffer holds {}",
                u.len()
            )));
        }
        if !u.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidInput(
                "unary potentials must be finite and >= 0".into(),
            ));
        }
        Ok(UnaryField {
            height,
            width,
            labels,
            u,
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

    pub fn values(&self) -> &[f32] {
        &self.u
    }
}

/// `u[i][l] = -ln(max(p[i][l], floor))`. The floor keeps the log finite
/// where the upstream model emitted an exact zero.
pub fn unary_from_probabilities(prob: &ProbabilityMap, floor: f32) -> Result<UnaryField> {
    if !(floor > 0.0 && floor < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "probability floor must lie in (0, 1), got {floor}"
        )));
    }
    let u: Vec<f32> = prob.prob().iter().map(|&p| -p.max(floor).ln()).collect();
    UnaryField::new(prob.height(), prob.width(), prob.labels(), u)
}

/// Which Gaussian-filter backend message passing runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// Permutohedral-lattice approximation; linear cost, the production path.
    Lattice,
    /// Exact quadratic filtering; oracle and small-grid path.
    BruteForce,
}

/// Knobs for [`mean_field_infer_with`] beyond the plain mode choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceOptions {
    pub mode: FilterMode,
    /// Stop once max |dQ| over an iteration falls below this. Off by
    /// default: the published protocol runs a fixed iteration budget.
    pub early_stop: Option<f32>,
    /// Check every iterate for per-pixel sums within 1e-6 of 1 and entries
    /// in [0, 1]; a violation is reported as an error.
    pub validate_iterates: bool,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            mode: FilterMode::Lattice,
            early_stop: None,
            validate_iterates: false,
        }
    }
}

/// Outcome of one inference call.
#[derive(Debug, Clone)]
pub struct InferenceRun {
    pub q: ProbabilityMap,
    /// Iterations actually executed (smaller than the budget only when
    /// early stopping fired).
    pub iterations_run: u32,
    /// Max |dQ| of the last executed iteration; tracked only when
    /// `early_stop` is set.
    pub last_delta: Option<f32>,
}

const ITERATE_SUM_TOL: f32 = 1e-6;

enum KernelFilter {
    Lattice(LatticeFilter),
    Brute(FeatureField),
}

impl KernelFilter {
    fn apply(&self, values: &[f32], width: usize) -> Result<Vec<f32>> {
        match self {
            KernelFilter::Lattice(lat) => lat.filter(values, width),
            KernelFilter::Brute(feats) => brute_force_filter(feats, values, width),
        }
    }
}

fn check_iterate(q: &[f32], labels: usize, iteration: u32) -> Result<()> {
    let bad = q
        .par_chunks_exact(labels)
        .enumerate()
        .find_map_first(|(i, row)| {
            let mut sum = 0.0f32;
            for &v in row {
                if !(0.0..=1.0).contains(&v) {
                    return Some((i, v, f32::NAN));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ITERATE_SUM_TOL {
                return Some((i, f32::NAN, sum));
            }
            None
        });
    match bad {
        None => Ok(()),
        Some((i, v, sum)) if sum.is_nan() => Err(Error::InvalidInput(format!(
            "iterate {iteration}: Q entry {v} at pixel {i} is outside [0, 1]"
        ))),
        Some((i, _, sum)) => Err(Error::InvalidInput(format!(
            "iterate {iteration}: Q at pixel {i} sums to {sum}, beyond {ITERATE_SUM_TOL}"
        ))),
    }
}

/// Mean-field inference with the default options for `mode`.
pub fn mean_field_infer(
    unary: &UnaryField,
    image: &SliceImage,
    params: &CrfParams,
    mode: FilterMode,
) -> Result<ProbabilityMap> {
    let opts = InferenceOptions {
        mode,
        ..InferenceOptions::default()
    };
    Ok(mean_field_infer_with(unary, image, params, &opts)?.q)
}

/// Full-control mean-field inference.
///
/// With a zero iteration budget or all pairwise weights zero, the result is
/// exactly `softmax(-u)`: the update path reuses the same softmax kernel as
/// the initializer, so zero messages reproduce it bit-for-bit.
pub fn mean_field_infer_with(
    unary: &UnaryField,
    image: &SliceImage,
    params: &CrfParams,
    opts: &InferenceOptions,
) -> Result<InferenceRun> {
    params.validate()?;
    if unary.height() != image.height() || unary.width() != image.width() {
        return Err(Error::ShapeMismatch(format!(
            "unary {}x{} does not match image {}x{}",
            unary.height(),
            unary.width(),
            image.height(),
            image.width()
        )));
    }
    if let Some(eps) = opts.early_stop {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "early-stop threshold must be finite and > 0, got {eps}"
            )));
        }
    }
    let (h, w, labels) = (unary.height(), unary.width(), unary.labels());
    let n = h * w;
    let u = unary.values();

    let mut kernels: Vec<(f32, KernelFilter)> = Vec::new();
    for (weight, kind) in [
        (params.w1, KernelKind::Appearance),
        (params.w2, KernelKind::Smoothness),
    ] {
        if weight > 0.0 {
            let feats = build_features(image, kind, params)?;
            let filter = match opts.mode {
                FilterMode::Lattice => KernelFilter::Lattice(LatticeFilter::build(&feats)?),
                FilterMode::BruteForce => KernelFilter::Brute(feats),
            };
            kernels.push((weight, filter));
        }
    }

    let neg_u: Vec<f32> = u.iter().map(|&x| -x).collect();
    let mut q_cur = vec![0.0f32; n * labels];
    let mut q_next = vec![0.0f32; n * labels];
    crate::tensor::softmax_rows(&neg_u, labels, &mut q_cur);
    if opts.validate_iterates {
        check_iterate(&q_cur, labels, 0)?;
    }

    let mut iterations_run = 0u32;
    let mut last_delta = None;
    for it in 0..params.iterations {
        let filtered: Vec<Vec<f32>> = kernels
            .iter()
            .map(|(_, f)| f.apply(&q_cur, labels))
            .collect::<Result<_>>()?;

        {
            let q_prev = &q_cur;
            q_next.par_chunks_mut(labels).enumerate().for_each_init(
                || vec![0.0f32; labels],
                |scratch, (i, row)| {
                    let base = i * labels;
                    let prev = &q_prev[base..base + labels];
                    // Message passing: filters include the self term;
                    // subtract Q_i so a pixel never talks to itself.
                    let mut total = 0.0f32;
                    for l in 0..labels {
                        let mut m = 0.0f32;
                        for (k, (weight, _)) in kernels.iter().enumerate() {
                            m += weight * (filtered[k][base + l] - prev[l]);
                        }
                        scratch[l] = m;
                        total += m;
                    }
                    // Potts compatibility: cost of label l is the
                    // message mass of all other labels.
                    for l in 0..labels {
                        let psi_hat = total - scratch[l];
                        scratch[l] = -u[base + l] - psi_hat;
                    }
                    softmax_row(scratch, row);
                },
            );
        }
        iterations_run = it + 1;

        if opts.early_stop.is_some() {
            let delta = q_next
                .par_iter()
                .zip(q_cur.par_iter())
                .map(|(&a, &b)| (a - b).abs())
                .reduce(|| 0.0f32, f32::max);
            last_delta = Some(delta);
        }
        std::mem::swap(&mut q_cur, &mut q_next);
        if opts.validate_iterates {
            check_iterate(&q_cur, labels, iterations_run)?;
        }
        if let (Some(eps), Some(delta)) = (opts.early_stop, last_delta) {
            if delta < eps {
                break;
            }
        }
    }

    Ok(InferenceRun {
        q: ProbabilityMap::from_normalized(h, w, labels, q_cur),
        iterations_run,
        last_delta,
    })
}

/// Pixel cap for the exact energy evaluation (64x64); the pairwise sum is
/// quadratic in pixels.
pub const DEFAULT_ENERGY_CAP: usize = 4096;

/// Exact Gibbs energy of a labeling under [`DEFAULT_ENERGY_CAP`].
pub fn energy(
    labels: &LabelMask,
    unary: &UnaryField,
    image: &SliceImage,
    params: &CrfParams,
) -> Result<f64> {
    energy_with_cap(labels, unary, image, params, DEFAULT_ENERGY_CAP)
}

/// `E = sum_i u[i][x_i] + sum_{i<j, x_i != x_j} (w1 k_app(i,j) + w2 k_sm(i,j))`.
///
/// Each unordered pair counts once, and only pairs with differing labels
/// contribute (Potts compatibility). Quadratic cost, hence the cap.
pub fn energy_with_cap(
    labels: &LabelMask,
    unary: &UnaryField,
    image: &SliceImage,
    params: &CrfParams,
    cap: usize,
) -> Result<f64> {
    params.validate()?;
    let (h, w) = (labels.height(), labels.width());
    if h != unary.height()
        || w != unary.width()
        || h != image.height()
        || w != image.width()
        || labels.labels() != unary.labels()
    {
        return Err(Error::ShapeMismatch(format!(
            "labels {h}x{w}/{} vs unary {}x{}/{} vs image {}x{}",
            labels.labels(),
            unary.height(),
            unary.width(),
            unary.labels(),
            image.height(),
            image.width()
        )));
    }
    let n = h * w;
    if n > cap {
        return Err(Error::GridTooLarge { pixels: n, cap });
    }

    let l = unary.labels();
    let u = unary.values();
    let x = labels.label();
    let mut total: f64 = x
        .iter()
        .enumerate()
        .map(|(i, &xi)| u[i * l + xi as usize] as f64)
        .sum();

    let mut kernel_fields: Vec<(f32, FeatureField)> = Vec::new();
    for (weight, kind) in [
        (params.w1, KernelKind::Appearance),
        (params.w2, KernelKind::Smoothness),
    ] {
        if weight > 0.0 {
            kernel_fields.push((weight, build_features(image, kind, params)?));
        }
    }
    if !kernel_fields.is_empty() {
        // Per-i partial sums are collected first and reduced sequentially so
        // the result does not depend on the rayon split.
        let partials: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0f64;
                for j in (i + 1)..n {
                    if x[i] != x[j] {
                        for (weight, feats) in &kernel_fields {
                            acc += *weight as f64 * feats.kernel(i, j);
                        }
                    }
                }
                acc
            })
            .collect();
        total += partials.iter().sum::<f64>();
    }
    Ok(total)
}

/// Options for [`refine_segmentation_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    /// Probability floor applied before the log; keeps unaries finite.
    pub floor: f32,
    pub mode: FilterMode,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            floor: 1e-8,
            mode: FilterMode::Lattice,
        }
    }
}

/// Refines a probability map into a label mask with the default floor and
/// the lattice backend.
pub fn refine_segmentation(
    prob: &ProbabilityMap,
    image: &SliceImage,
    params: &CrfParams,
) -> Result<LabelMask> {
    refine_segmentation_with(prob, image, params, &RefineOptions::default())
}

/// `argmax(mean_field_infer(unary_from_probabilities(prob, floor)))`.
pub fn refine_segmentation_with(
    prob: &ProbabilityMap,
    image: &SliceImage,
    params: &CrfParams,
    opts: &RefineOptions,
) -> Result<LabelMask> {
    if prob.height() != image.height() || prob.width() != image.width() {
        return Err(Error::ShapeMismatch(format!(
            "probability map {}x{} does not match image {}x{}",
            prob.height(),
            prob.width(),
            image.height(),
            image.width()
        )));
    }
    let unary = unary_from_probabilities(prob, opts.floor)?;
    let q = mean_field_infer(&unary, image, params, opts.mode)?;
    Ok(argmax_labels(&q))
}
