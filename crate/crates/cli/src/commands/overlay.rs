//! `overlay`: render a prediction against truth over the image as a PPM:
//! green true positives, red false positives, cyan false negatives, and
//! grayscale elsewhere. Takes explicit file paths rather than a manifest;
//! --out names the output file and is required.

use clap::Args;

use crf_refine_core::io::{read_pgm_mask, read_tensor};
use crf_refine_core::{image_from_tensor, write_overlay};

use crate::config::{CliError, RunConfig};

#[derive(Args, Debug)]
pub struct OverlayArgs {
    /// Image tensor (2-D .dten).
    #[arg(long)]
    pub image: std::path::PathBuf,

    /// Predicted mask (.pgm).
    #[arg(long)]
    pub pred: std::path::PathBuf,

    /// Truth mask (.pgm).
    #[arg(long)]
    pub truth: std::path::PathBuf,
}

pub fn run(cfg: &RunConfig, args: &OverlayArgs) -> Result<u8, CliError> {
    if !cfg.out_set {
        return Err(CliError::usage("overlay requires --out <file.ppm>"));
    }
    let tensor = read_tensor(&args.image).map_err(|e| super::data_err(&args.image, e))?;
    let image = image_from_tensor(&tensor).map_err(|e| super::data_err(&args.image, e))?;
    let pred = read_pgm_mask(&args.pred).map_err(|e| super::data_err(&args.pred, e))?;
    let truth = read_pgm_mask(&args.truth).map_err(|e| super::data_err(&args.truth, e))?;
    write_overlay(&image, &pred, &truth, cfg.positive_label, &cfg.out)
        .map_err(|e| CliError::data(e.to_string()))?;
    Ok(0)
}
