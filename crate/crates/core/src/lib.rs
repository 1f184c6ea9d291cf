//! Dense-CRF refinement of probabilistic segmentations, with the evaluation
//! harness around it: Gaussian filtering (exact and lattice-accelerated),
//! mean-field inference, overlap metrics, case-level cross-validation,
//! synthetic fixtures, and the on-disk formats the CLI speaks.
//!
//! The crate is organized as a pipeline:
//!
//! 1. [`tensor`]: dense containers (images, probability maps, label masks)
//!    and the softmax/argmax plumbing between them.
//! 2. [`filter`] / [`lattice`]: high-dimensional Gaussian filtering, the
//!    computational kernel of message passing. `filter` holds the exact
//!    quadratic oracle; `lattice` the linear-time approximation pinned to it
//!    by [`lattice::LATTICE_REL_L2_TOL`].
//! 3. [`crf`]: the energy model and parallel mean-field inference.
//! 4. [`metrics`] / [`experiment`]: Dice-based scoring, paired comparison,
//!    fold assignment, parameter sweeps, and synthetic fixtures.
//! 5. [`io`]: tensor, mask, and manifest formats.
//!
//! Everything downstream of a seed is deterministic, including under rayon
//! parallelism: identical inputs give bit-identical outputs at any thread
//! count.

pub mod crf;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod io;
pub mod lattice;
pub mod metrics;
pub mod rng;
pub mod tensor;

pub use crf::{
    energy, energy_with_cap, mean_field_infer, mean_field_infer_with, refine_segmentation,
    refine_segmentation_with, CrfParams, FilterMode, InferenceOptions, InferenceRun, RefineOptions,
    UnaryField, DEFAULT_ENERGY_CAP,
};
pub use error::{Error, FormatError, Result};
pub use experiment::{
    assign_folds, hu_window, hu_window_default, sweep, sweep_with, synth_fixture, synth_fixtures,
    synth_fixtures_with, Fixture, FixtureConfig, FoldAssignment, SweepEntry, SweepGrid,
    DEFAULT_HU_CENTER, DEFAULT_HU_WIDTH,
};
pub use filter::{brute_force_filter, build_features, FeatureField, KernelKind};
pub use io::{
    image_from_tensor, image_to_tensor, prob_from_tensor, prob_to_tensor, read_manifest,
    read_pgm_mask, read_tensor, write_manifest, write_overlay, write_pgm_mask, write_tensor,
    CaseEntry, CaseManifest, SliceRef,
};
pub use lattice::{relative_l2, LatticeFilter, LATTICE_REL_L2_TOL};
pub use metrics::{
    case_dice, confusion, dice, fold_report, iou, paired_t_test, score_stats, CaseScore,
    ConfusionCounts, FoldReport, GroupStats, PairedTTest,
};
pub use tensor::{
    argmax_labels, rescale_to_byte_range, softmax_normalize, DenseTensor, Dtype, LabelMask,
    ProbabilityMap, SliceImage, TensorData,
};
