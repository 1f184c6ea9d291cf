//! `folds`: assign manifest cases to k cross-validation folds and emit
//! the manifest with the assignment attached. Assignment is by case, so
//! no case's slices straddle folds, and is a pure function of the sorted
//! case ids, k, and --seed. With --out the manifest is written there;
//! otherwise it prints to stdout.

use clap::Args;

use crf_refine_core::{assign_folds, write_manifest, CaseManifest};

use super::load_manifest;
use crate::config::{CliError, RunConfig};
use crate::CommonArgs;

#[derive(Args, Debug)]
pub struct FoldsArgs {
    /// Number of folds.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
}

pub fn run(common: &CommonArgs, cfg: &RunConfig, args: &FoldsArgs) -> Result<u8, CliError> {
    let manifest = load_manifest(common)?;
    let assignment =
        assign_folds(&manifest.case_ids(), args.k, cfg.seed).map_err(CliError::usage)?;
    let with_folds = CaseManifest::new(manifest.cases.clone(), Some(assignment))
        .map_err(|e| CliError::data(e.to_string()))?;
    if cfg.out_set {
        write_manifest(&with_folds, &cfg.out)
            .map_err(|e| CliError::data(format!("{}: {e}", cfg.out.display())))?;
    } else {
        print!("{}", with_folds.to_json());
    }
    Ok(0)
}
