//! `refine`: run dense-CRF refinement over every manifest slice, writing
//! one PGM mask per slice as `<out>/<case_id>/<index>.pgm`. Slices fail
//! independently: a bad file is reported on stderr and the rest still
//! run, with exit code 1 at the end.

use std::fs;
use std::path::Path;

use clap::Args;

use crf_refine_core::crf::unary_from_probabilities;
use crf_refine_core::io::{write_pgm_mask, write_tensor};
use crf_refine_core::{
    argmax_labels, mean_field_infer, prob_to_tensor, refine_segmentation_with, CaseManifest,
    RefineOptions, SliceRef,
};

use super::{load_image, load_manifest, load_prob, mask_file_name};
use crate::config::{CliError, RunConfig};
use crate::CommonArgs;

#[derive(Args, Debug)]
pub struct RefineArgs {
    /// Also write each slice's refined distribution as `<index>_q.dten`.
    #[arg(long)]
    pub dump_q: bool,
}

fn refine_slice(
    manifest: &CaseManifest,
    slice: &SliceRef,
    cfg: &RunConfig,
    args: &RefineArgs,
    case_dir: &Path,
    index: usize,
) -> Result<(), CliError> {
    let image = load_image(manifest, &slice.image_path, cfg)?;
    let prob = load_prob(manifest, &slice.prob_path)?;
    let opts = RefineOptions {
        floor: cfg.floor,
        mode: cfg.mode,
    };
    // With --dump-q the distribution is materialized once and the mask is
    // its argmax, the same composition refine_segmentation_with performs.
    let mask = if args.dump_q {
        let unary = unary_from_probabilities(&prob, cfg.floor)
            .map_err(|e| CliError::data(e.to_string()))?;
        let q = mean_field_infer(&unary, &image, &cfg.params, cfg.mode)
            .map_err(|e| CliError::data(e.to_string()))?;
        let q_path = case_dir.join(format!("{index:04}_q.dten"));
        write_tensor(&prob_to_tensor(&q), &q_path).map_err(|e| CliError::data(e.to_string()))?;
        argmax_labels(&q)
    } else {
        refine_segmentation_with(&prob, &image, &cfg.params, &opts)
            .map_err(|e| CliError::data(e.to_string()))?
    };
    let mask_path = case_dir.join(mask_file_name(index));
    write_pgm_mask(&mask, &mask_path).map_err(|e| CliError::data(e.to_string()))
}

pub fn run(common: &CommonArgs, cfg: &RunConfig, args: &RefineArgs) -> Result<u8, CliError> {
    let manifest = load_manifest(common)?;
    let mut failed = 0usize;
    let mut total = 0usize;
    for case in &manifest.cases {
        let case_dir = cfg.out.join(&case.case_id);
        fs::create_dir_all(&case_dir)
            .map_err(|e| CliError::data(format!("{}: {e}", case_dir.display())))?;
        for (index, slice) in case.slices.iter().enumerate() {
            total += 1;
            if let Err(e) = refine_slice(&manifest, slice, cfg, args, &case_dir, index) {
                eprintln!("error: case {} slice {index}: {e}", case.case_id);
                failed += 1;
            }
        }
    }
    if failed > 0 {
        eprintln!("refine: {failed} of {total} slices failed");
        Ok(1)
    } else {
        Ok(0)
    }
}
