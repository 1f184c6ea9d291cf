//! `sweep`: evaluate a CRF parameter grid over a manifest corpus and rank
//! the points by mean case Dice. The grid comes from the config file's
//! `sweep` table; without one the sweep has a single point, the resolved
//! parameters. Every slice must load, otherwise the ranking would silently
//! reflect a different corpus.

use std::fmt::Write as _;
use std::fs;

use clap::Args;

use crf_refine_core::{sweep_with, Fixture, RefineOptions, SweepEntry};

use super::{load_image, load_manifest, load_prob, load_truth, require_truths};
use crate::config::{CliError, RunConfig};
use crate::CommonArgs;

#[derive(Args, Debug)]
pub struct SweepArgs {}

fn render_entries(entries: &[SweepEntry]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4}  {:>8}  {:>8}  {:>11}  {:>10}  {:>11}  {:>10}  {:>9}",
        "rank", "w1", "w2", "sigma_alpha", "sigma_beta", "sigma_gamma", "iterations", "mean_dice"
    );
    for (rank, entry) in entries.iter().enumerate() {
        let p = &entry.params;
        let _ = writeln!(
            out,
            "{:>4}  {:>8}  {:>8}  {:>11}  {:>10}  {:>11}  {:>10}  {:>9.4}",
            rank + 1,
            p.w1,
            p.w2,
            p.sigma_alpha,
            p.sigma_beta,
            p.sigma_gamma,
            p.iterations,
            entry.mean_dice
        );
    }
    out
}

pub fn run(common: &CommonArgs, cfg: &RunConfig, _args: &SweepArgs) -> Result<u8, CliError> {
    let manifest = load_manifest(common)?;
    require_truths(&manifest)?;

    let mut fixtures = Vec::new();
    for case in &manifest.cases {
        for (index, slice) in case.slices.iter().enumerate() {
            let truth_rel = slice
                .truth_path
                .as_ref()
                .expect("truth presence is validated before the sweep");
            fixtures.push(Fixture {
                image: load_image(&manifest, &slice.image_path, cfg)?,
                prob: load_prob(&manifest, &slice.prob_path)?,
                truth: load_truth(&manifest, truth_rel)?,
                case_id: case.case_id.clone(),
                slice_index: index,
            });
        }
    }

    let opts = RefineOptions {
        floor: cfg.floor,
        mode: cfg.mode,
    };
    let entries = sweep_with(&cfg.sweep, &fixtures, cfg.positive_label, &opts)
        .map_err(|e| CliError::data(e.to_string()))?;

    print!("{}", render_entries(&entries));
    if cfg.out_set {
        let mut text =
            serde_json::to_string_pretty(&entries).map_err(|e| CliError::data(e.to_string()))?;
        text.push('\n');
        fs::write(&cfg.out, text)
            .map_err(|e| CliError::data(format!("{}: {e}", cfg.out.display())))?;
    }
    Ok(0)
}
