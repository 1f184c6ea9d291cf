//! `report`: re-render an eval JSON report as the same text table eval
//! prints, so saved reports can be read without re-scoring anything.

use std::fs;

use clap::Args;

use super::eval::{render_report, EvalReport};
use crate::config::CliError;

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Eval JSON report to render.
    #[arg(long)]
    pub input: std::path::PathBuf,
}

pub fn run(args: &ReportArgs) -> Result<u8, CliError> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.input.display())))?;
    let report: EvalReport = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.input.display())))?;
    print!("{}", render_report(&report));
    Ok(0)
}
