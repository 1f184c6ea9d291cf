//! Sub-command implementations. Each `run` returns the process exit code
//! or a [`CliError`] that maps to one.
//!
//! Shared here: manifest loading split by failure class (a manifest that
//! cannot be read or fails structural validation is a usage error; a
//! referenced data file that cannot be read is a data error) and slice
//! loading with optional HU windowing.

pub mod eval;
pub mod folds;
pub mod overlay;
pub mod refine;
pub mod report;
pub mod sweep;
pub mod synth;

use std::fs;
use std::path::Path;

use crf_refine_core::io::{read_pgm_mask, read_tensor};
use crf_refine_core::{
    hu_window, image_from_tensor, prob_from_tensor, CaseManifest, Error, LabelMask, ProbabilityMap,
    SliceImage,
};

use crate::config::{CliError, RunConfig};
use crate::CommonArgs;

/// Data error with the offending path prepended, unless the error already
/// names it (IO errors do).
pub(crate) fn data_err(path: &Path, e: Error) -> CliError {
    match &e {
        Error::Io { .. } => CliError::data(e),
        _ => CliError::data(format!("{}: {e}", path.display())),
    }
}

/// Loads and structurally validates the manifest without touching the
/// files it references, so commands can fail per slice and continue.
pub(crate) fn load_manifest(common: &CommonArgs) -> Result<CaseManifest, CliError> {
    let path = common
        .manifest
        .as_ref()
        .ok_or_else(|| CliError::usage("--manifest is required"))?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("manifest {}: {e}", path.display())))?;
    let mut manifest = CaseManifest::from_json(&text)
        .map_err(|e| CliError::usage(format!("manifest {}: {e}", path.display())))?;
    manifest.set_root(
        path.parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new(".")),
    );
    Ok(manifest)
}

/// Requires a truth mask on every slice; evaluation-style commands cannot
/// run without one.
pub(crate) fn require_truths(manifest: &CaseManifest) -> Result<(), CliError> {
    for case in &manifest.cases {
        for (index, slice) in case.slices.iter().enumerate() {
            if slice.truth_path.is_none() {
                return Err(CliError::usage(format!(
                    "case {} slice {index} has no truth_path",
                    case.case_id
                )));
            }
        }
    }
    Ok(())
}

/// Loads one image slice: a 2-D tensor, HU-windowed when the config asks
/// for it, otherwise taken as already byte-scale.
pub(crate) fn load_image(
    manifest: &CaseManifest,
    rel: &str,
    cfg: &RunConfig,
) -> Result<SliceImage, CliError> {
    let path = manifest.resolve(rel);
    let tensor = read_tensor(&path).map_err(|e| data_err(&path, e))?;
    if tensor.dims().len() != 2 {
        return Err(CliError::data(format!(
            "{}: image tensor must be 2-D, got {}-D",
            path.display(),
            tensor.dims().len()
        )));
    }
    let result = match &cfg.hu_window {
        Some(hw) => hu_window(
            tensor.dims()[0],
            tensor.dims()[1],
            &tensor.to_f32_vec(),
            hw.center,
            hw.width,
        ),
        None => image_from_tensor(&tensor),
    };
    result.map_err(|e| data_err(&path, e))
}

pub(crate) fn load_prob(manifest: &CaseManifest, rel: &str) -> Result<ProbabilityMap, CliError> {
    let path = manifest.resolve(rel);
    let tensor = read_tensor(&path).map_err(|e| data_err(&path, e))?;
    prob_from_tensor(&tensor).map_err(|e| data_err(&path, e))
}

pub(crate) fn load_truth(manifest: &CaseManifest, rel: &str) -> Result<LabelMask, CliError> {
    let path = manifest.resolve(rel);
    read_pgm_mask(&path).map_err(|e| data_err(&path, e))
}

/// The mask file name refine writes for slice `index` of a case.
pub(crate) fn mask_file_name(index: usize) -> String {
    format!("{index:04}.pgm")
}
