//! Measurement protocol: case-level fold assignment, HU windowing,
//! synthetic fixture generation, and the hyperparameter sweep.
//!
//! Everything here is driven by the fixed generator in [`crate::rng`], so
//! fold splits and fixture corpora reproduce bit-identically across runs,
//! platforms, and thread counts.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crf::{refine_segmentation_with, CrfParams, RefineOptions};
use crate::error::{Error, Result};
use crate::metrics::case_dice;
use crate::rng::{stream_seed, SeededRng};
use crate::tensor::{LabelMask, ProbabilityMap, SliceImage};

/// Case-id to fold-index map for k-fold cross validation.
///
/// Folds are balanced: sizes differ by at most one, and every case appears
/// exactly once. Construct via [`assign_folds`] or [`FoldAssignment::new`];
/// deserialization re-validates the invariants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldAssignment {
    k: usize,
    mapping: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn new(k: usize, mapping: BTreeMap<String, usize>) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidParameter(format!(
                "fold count must be at least 2, got {k}"
            )));
        }
        if mapping.len() < k {
            return Err(Error::InvalidInput(format!(
                "{} cases cannot fill {k} folds",
                mapping.len()
            )));
        }
        let mut sizes = vec![0usize; k];
        for (case, &fold) in &mapping {
            if fold >= k {
                return Err(Error::InvalidInput(format!(
                    "case {case} assigned to fold {fold}, but k = {k}"
                )));
            }
            sizes[fold] += 1;
        }
        let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        if max - min > 1 {
            return Err(Error::InvalidInput(format!(
                "fold sizes {sizes:?} differ by more than 1"
            )));
        }
        Ok(FoldAssignment { k, mapping })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mapping(&self) -> &BTreeMap<String, usize> {
        &self.mapping
    }

    pub fn fold_of(&self, case_id: &str) -> Option<usize> {
        self.mapping.get(case_id).copied()
    }

    /// Number of cases in each fold, indexed by fold.
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &fold in self.mapping.values() {
            sizes[fold] += 1;
        }
        sizes
    }
}

impl<'de> Deserialize<'de> for FoldAssignment {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            k: usize,
            mapping: BTreeMap<String, usize>,
        }
        let raw = Raw::deserialize(deserializer)?;
        FoldAssignment::new(raw.k, raw.mapping).map_err(serde::de::Error::custom)
    }
}

/// Shuffles the case ids with the seeded generator and deals them
/// round-robin into `k` folds (`fold = position % k`), which keeps sizes
/// within one of each other.
///
/// Ids are sorted (and checked for duplicates) before the shuffle, so the
/// assignment depends only on the id set, `k`, and `seed`, never on input
/// order.
pub fn assign_folds(case_ids: &[String], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "fold count must be at least 2, got {k}"
        )));
    }
    if case_ids.len() < k {
        return Err(Error::InvalidInput(format!(
            "{} cases cannot fill {k} folds",
            case_ids.len()
        )));
    }
    let mut ids: Vec<&str> = case_ids.iter().map(String::as_str).collect();
    ids.sort_unstable();
    for pair in ids.windows(2) {
        if pair[0] == pair[1] {
            return Err(Error::InvalidInput(format!(
                "duplicate case id {}",
                pair[0]
            )));
        }
    }
    let mut rng = SeededRng::new(seed);
    rng.shuffle(&mut ids);
    let mapping = ids
        .iter()
        .enumerate()
        .map(|(position, id)| (id.to_string(), position % k))
        .collect();
    Ok(FoldAssignment { k, mapping })
}

/// Candidate values for every swept parameter. Each list must be non-empty;
/// a one-element list pins that parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub w1: Vec<f32>,
    pub w2: Vec<f32>,
    pub sigma_alpha: Vec<f32>,
    pub sigma_beta: Vec<f32>,
    pub sigma_gamma: Vec<f32>,
    pub iterations: Vec<u32>,
}

impl Default for SweepGrid {
    /// Single-point grid at the default operating point.
    fn default() -> Self {
        let p = CrfParams::default();
        SweepGrid {
            w1: vec![p.w1],
            w2: vec![p.w2],
            sigma_alpha: vec![p.sigma_alpha],
            sigma_beta: vec![p.sigma_beta],
            sigma_gamma: vec![p.sigma_gamma],
            iterations: vec![p.iterations],
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, len) in [
            ("w1", self.w1.len()),
            ("w2", self.w2.len()),
            ("sigma_alpha", self.sigma_alpha.len()),
            ("sigma_beta", self.sigma_beta.len()),
            ("sigma_gamma", self.sigma_gamma.len()),
            ("iterations", self.iterations.len()),
        ] {
            if len == 0 {
                return Err(Error::InvalidParameter(format!(
                    "sweep grid list {name} is empty"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.w1.len()
            * self.w2.len()
            * self.sigma_alpha.len()
            * self.sigma_beta.len()
            * self.sigma_gamma.len()
            * self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cartesian product in a fixed lexicographic order: `w1` varies
    /// slowest, then `w2`, `sigma_alpha`, `sigma_beta`, `sigma_gamma`, and
    /// `iterations` fastest. Sweep ties are broken by this order.
    pub fn points(&self) -> Vec<CrfParams> {
        let mut out = Vec::with_capacity(self.len());
        for &w1 in &self.w1 {
            for &w2 in &self.w2 {
                for &sigma_alpha in &self.sigma_alpha {
                    for &sigma_beta in &self.sigma_beta {
                        for &sigma_gamma in &self.sigma_gamma {
                            for &iterations in &self.iterations {
                                out.push(CrfParams {
                                    w1,
                                    w2,
                                    sigma_alpha,
                                    sigma_beta,
                                    sigma_gamma,
                                    iterations,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

pub const DEFAULT_HU_CENTER: f32 = -500.0;
pub const DEFAULT_HU_WIDTH: f32 = 1500.0;

/// Clamps raw HU values to `[center - width/2, center + width/2]` and maps
/// the window affinely onto the byte scale `[0, 255]`. The defaults are a
/// lung window; they define the intensity scale `sigma_beta` is quoted on.
pub fn hu_window(
    height: usize,
    width: usize,
    raw: &[f32],
    hu_center: f32,
    hu_width: f32,
) -> Result<SliceImage> {
    if !hu_width.is_finite() || hu_width <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "HU window width must be finite and > 0, got {hu_width}"
        )));
    }
    if !hu_center.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "HU window center must be finite, got {hu_center}"
        )));
    }
    if !raw.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("raw HU values must be finite".into()));
    }
    let lo = hu_center - hu_width / 2.0;
    let scale = 255.0 / hu_width;
    let mapped = raw
        .iter()
        .map(|&v| (v.clamp(lo, lo + hu_width) - lo) * scale)
        .collect();
    SliceImage::new(height, width, mapped)
}

/// [`hu_window`] with the default lung window (center -500 HU, width 1500).
pub fn hu_window_default(height: usize, width: usize, raw: &[f32]) -> Result<SliceImage> {
    hu_window(height, width, raw, DEFAULT_HU_CENTER, DEFAULT_HU_WIDTH)
}

/// One synthetic slice: windowed image, classifier-like probability map,
/// and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub image: SliceImage,
    pub prob: ProbabilityMap,
    pub truth: LabelMask,
    pub case_id: String,
    pub slice_index: usize,
}

/// Intensity model and probability-smoothing kernel for fixtures. The
/// region means are chosen so the appearance kernel separates them at its
/// default bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureConfig {
    /// Mean intensity inside blobs, byte scale.
    pub lung_mean: f32,
    /// Mean intensity outside blobs, byte scale.
    pub body_mean: f32,
    /// Std of the Gaussian intensity noise.
    pub noise_sigma: f32,
    /// 3x3 smoothing weights for the probability map: center, edge, corner.
    /// The center must outweigh all neighbors combined so smoothing alone
    /// never flips an argmax.
    pub blur_center: f32,
    pub blur_edge: f32,
    pub blur_corner: f32,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            lung_mean: 30.0,
            body_mean: 180.0,
            noise_sigma: 10.0,
            blur_center: 0.7,
            blur_edge: 0.05,
            blur_corner: 0.025,
        }
    }
}

impl FixtureConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lung_mean", self.lung_mean), ("body_mean", self.body_mean)] {
            if !v.is_finite() || !(0.0..=255.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 255], got {v}"
                )));
            }
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        for (name, v) in [
            ("blur_center", self.blur_center),
            ("blur_edge", self.blur_edge),
            ("blur_corner", self.blur_corner),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        if self.blur_center <= 4.0 * (self.blur_edge + self.blur_corner) {
            return Err(Error::InvalidParameter(
                "blur_center must exceed the combined neighbor weight".into(),
            ));
        }
        Ok(())
    }
}

fn check_fixture_args(height: usize, width: usize, noise_level: f64) -> Result<()> {
    if height < 16 || width < 16 {
        return Err(Error::InvalidParameter(format!(
            "fixture dimensions must be at least 16x16, got {height}x{width}"
        )));
    }
    if !noise_level.is_finite() || !(0.0..=1.0).contains(&noise_level) {
        return Err(Error::InvalidParameter(format!(
            "noise_level must lie in [0, 1], got {noise_level}"
        )));
    }
    Ok(())
}

/// Generates fixture `index` of a corpus. The generator is seeded with
/// `stream_seed(seed, index)`, so any fixture can be regenerated without
/// producing the rest of its corpus.
///
/// Draw order is fixed: blob count, then per-blob geometry, then one
/// flip-noise draw per pixel (row-major), then one intensity draw per pixel
/// (row-major). Changing it would silently invalidate every recorded
/// corpus.
pub fn synth_fixture(
    seed: u64,
    index: usize,
    height: usize,
    width: usize,
    noise_level: f64,
    config: &FixtureConfig,
) -> Result<Fixture> {
    check_fixture_args(height, width, noise_level)?;
    config.validate()?;
    let mut rng = SeededRng::new(stream_seed(seed, index as u64));
    let (h, w) = (height as f64, width as f64);

    // 1-2 elliptical blobs, centered away from the border.
    let n_blobs = 1 + rng.bounded(2) as usize;
    let blobs: Vec<[f64; 4]> = (0..n_blobs)
        .map(|_| {
            let cx = rng.range_f64(0.25 * w, 0.75 * w);
            let cy = rng.range_f64(0.25 * h, 0.75 * h);
            let rx = rng.range_f64(0.12 * w, 0.28 * w);
            let ry = rng.range_f64(0.12 * h, 0.28 * h);
            [cx, cy, rx, ry]
        })
        .collect();
    let truth_vals: Vec<u8> = (0..height * width)
        .map(|i| {
            let (x, y) = ((i % width) as f64, (i / width) as f64);
            let inside = blobs.iter().any(|&[cx, cy, rx, ry]| {
                let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
                dx * dx + dy * dy <= 1.0
            });
            u8::from(inside)
        })
        .collect();

    // Probability map: blurred truth (zero padding outside the grid) keeps
    // the argmax while softening edges; flip noise then swaps the two
    // channels at random pixels.
    let kernel_total = config.blur_center + 4.0 * config.blur_edge + 4.0 * config.blur_corner;
    let mut prob = Vec::with_capacity(height * width * 2);
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut p1 = 0.0f32;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= height as isize || nx >= width as isize {
                        continue;
                    }
                    if truth_vals[ny as usize * width + nx as usize] == 0 {
                        continue;
                    }
                    p1 += match (dx.abs(), dy.abs()) {
                        (0, 0) => config.blur_center,
                        (1, 1) => config.blur_corner,
                        _ => config.blur_edge,
                    };
                }
            }
            p1 /= kernel_total;
            prob.push(1.0 - p1);
            prob.push(p1);
        }
    }
    for i in 0..height * width {
        if rng.next_f64() < noise_level {
            prob.swap(2 * i, 2 * i + 1);
        }
    }

    let intensity: Vec<f32> = truth_vals
        .iter()
        .map(|&t| {
            let mean = if t == 1 {
                config.lung_mean
            } else {
                config.body_mean
            };
            (mean + config.noise_sigma * rng.normal() as f32).clamp(0.0, 255.0)
        })
        .collect();

    Ok(Fixture {
        image: SliceImage::new(height, width, intensity)?,
        prob: ProbabilityMap::new(height, width, 2, prob)?,
        truth: LabelMask::new(height, width, 2, truth_vals)?,
        case_id: format!("case{index:04}"),
        slice_index: 0,
    })
}

/// Generates a corpus of `count` fixtures with the default config, one case
/// per fixture.
pub fn synth_fixtures(
    seed: u64,
    count: usize,
    height: usize,
    width: usize,
    noise_level: f64,
) -> Result<Vec<Fixture>> {
    synth_fixtures_with(
        seed,
        count,
        height,
        width,
        noise_level,
        &FixtureConfig::default(),
    )
}

pub fn synth_fixtures_with(
    seed: u64,
    count: usize,
    height: usize,
    width: usize,
    noise_level: f64,
    config: &FixtureConfig,
) -> Result<Vec<Fixture>> {
    if count == 0 {
        return Err(Error::InvalidParameter(
            "fixture count must be at least 1".into(),
        ));
    }
    (0..count)
        .map(|index| synth_fixture(seed, index, height, width, noise_level, config))
        .collect()
}

/// One ranked sweep result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub params: CrfParams,
    pub mean_dice: f64,
}

/// Evaluates [`refine_segmentation_with`] at every grid point over the
/// corpus and ranks points by mean case Dice, descending. Ties keep grid
/// order (first listed wins). The mean matches `fold_report`'s overall mean
/// over the same scored corpus exactly.
pub fn sweep_with(
    grid: &SweepGrid,
    fixtures: &[Fixture],
    positive_label: u8,
    opts: &RefineOptions,
) -> Result<Vec<SweepEntry>> {
    grid.validate()?;
    if fixtures.is_empty() {
        return Err(Error::InvalidInput("sweep corpus is empty".into()));
    }
    let mut by_case: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, fixture) in fixtures.iter().enumerate() {
        by_case.entry(&fixture.case_id).or_default().push(i);
    }
    let points = grid.points();
    let mut entries: Vec<SweepEntry> = points
        .par_iter()
        .map(|params| {
            let masks = fixtures
                .par_iter()
                .map(|f| refine_segmentation_with(&f.prob, &f.image, params, opts))
                .collect::<Result<Vec<LabelMask>>>()?;
            // Case-id order, matching fold_report's aggregation order.
            let mut sum = 0.0f64;
            for (case_id, indices) in &by_case {
                let slices: Vec<(&LabelMask, &LabelMask)> = indices
                    .iter()
                    .map(|&i| (&masks[i], &fixtures[i].truth))
                    .collect();
                sum += case_dice(case_id, &slices, positive_label)?.dsc;
            }
            Ok(SweepEntry {
                params: *params,
                mean_dice: sum / by_case.len() as f64,
            })
        })
        .collect::<Result<Vec<SweepEntry>>>()?;
    entries.sort_by(|a, b| b.mean_dice.total_cmp(&a.mean_dice));
    Ok(entries)
}

/// [`sweep_with`] under default refinement options.
pub fn sweep(
    grid: &SweepGrid,
    fixtures: &[Fixture],
    positive_label: u8,
) -> Result<Vec<SweepEntry>> {
    sweep_with(grid, fixtures, positive_label, &RefineOptions::default())
}
