//! `synth`: generate a synthetic fixture corpus on disk, one case per
//! fixture, plus a manifest indexing it. The layout matches what refine
//! and eval expect:
//!
//! ```text
//! <out>/manifest.json
//! <out>/case0000/0000_img.dten
//! <out>/case0000/0000_prob.dten
//! <out>/case0000/0000_truth.pgm
//! ```
//!
//! The corpus is a pure function of --seed, --count, --size, and --noise.

use std::fs;

use clap::Args;

use crf_refine_core::io::{write_pgm_mask, write_tensor};
use crf_refine_core::{
    image_to_tensor, prob_to_tensor, synth_fixtures, write_manifest, CaseEntry, CaseManifest,
    SliceRef,
};

use crate::config::{CliError, RunConfig};

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of fixtures (cases) to generate.
    #[arg(long, default_value_t = 10)]
    pub count: usize,

    /// Side length of each square slice, pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,

    /// Label-flip probability applied to the probability maps.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
}

pub fn run(cfg: &RunConfig, args: &SynthArgs) -> Result<u8, CliError> {
    let fixtures = synth_fixtures(cfg.seed, args.count, args.size, args.size, args.noise)
        .map_err(CliError::usage)?;

    let mut cases = Vec::with_capacity(fixtures.len());
    for fixture in &fixtures {
        let case_dir = cfg.out.join(&fixture.case_id);
        fs::create_dir_all(&case_dir)
            .map_err(|e| CliError::data(format!("{}: {e}", case_dir.display())))?;
        let index = fixture.slice_index;
        let image_rel = format!("{}/{index:04}_img.dten", fixture.case_id);
        let prob_rel = format!("{}/{index:04}_prob.dten", fixture.case_id);
        let truth_rel = format!("{}/{index:04}_truth.pgm", fixture.case_id);
        write_tensor(&image_to_tensor(&fixture.image), cfg.out.join(&image_rel))
            .map_err(|e| CliError::data(e.to_string()))?;
        write_tensor(&prob_to_tensor(&fixture.prob), cfg.out.join(&prob_rel))
            .map_err(|e| CliError::data(e.to_string()))?;
        write_pgm_mask(&fixture.truth, cfg.out.join(&truth_rel))
            .map_err(|e| CliError::data(e.to_string()))?;
        cases.push(CaseEntry {
            case_id: fixture.case_id.clone(),
            slices: vec![SliceRef {
                image_path: image_rel,
                prob_path: prob_rel,
                truth_path: Some(truth_rel),
            }],
        });
    }

    let manifest = CaseManifest::new(cases, None).map_err(|e| CliError::data(e.to_string()))?;
    let manifest_path = cfg.out.join("manifest.json");
    write_manifest(&manifest, &manifest_path)
        .map_err(|e| CliError::data(format!("{}: {e}", manifest_path.display())))?;
    println!(
        "synth: wrote {} cases under {}",
        fixtures.len(),
        cfg.out.display()
    );
    Ok(0)
}
