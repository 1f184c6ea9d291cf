//! `eval`: score a prediction directory against manifest truths.
//!
//! Predictions are read from refine's output layout,
//! `<pred>/<case_id>/<index>.pgm`. Counts pool across each case's slices
//! before Dice; per-fold statistics appear when the manifest carries a
//! fold assignment. `--compare` adds a paired two-tailed t-test of the
//! primary predictions against a second directory over the same cases. A
//! degenerate comparison (fewer than two cases, or identical score
//! vectors) is reported as a warning, not a failure.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use clap::Args;
use serde::{Deserialize, Serialize};

use crf_refine_core::io::read_pgm_mask;
use crf_refine_core::{
    case_dice, fold_report, paired_t_test, score_stats, CaseManifest, CaseScore, Error, FoldReport,
    GroupStats, LabelMask, PairedTTest,
};

use super::{load_manifest, load_truth, mask_file_name, require_truths};
use crate::config::{CliError, RunConfig};
use crate::CommonArgs;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of predicted masks in refine's output layout.
    #[arg(long)]
    pub pred: std::path::PathBuf,

    /// Second prediction directory; adds a paired t-test of pred against
    /// it over the same cases.
    #[arg(long)]
    pub compare: Option<std::path::PathBuf>,

    /// Also write the report as JSON to this path.
    #[arg(long)]
    pub json: Option<std::path::PathBuf>,
}

/// Paired comparison of the primary predictions against a baseline set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// The baseline prediction directory, as given.
    pub baseline: String,
    pub test: PairedTTest,
    /// Mean per-case score difference, primary minus baseline.
    pub mean_delta: f64,
}

/// Everything eval computes; `--json` serializes it verbatim and `report`
/// re-renders it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub positive_label: u8,
    /// Case scores in case-id order.
    pub per_case: Vec<CaseScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<FoldReport>,
    pub overall: GroupStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonReport>,
}

/// Scores every manifest case against masks under `dir`, returning scores
/// in case-id order.
pub(crate) fn score_predictions(
    manifest: &CaseManifest,
    dir: &Path,
    positive_label: u8,
) -> Result<Vec<CaseScore>, CliError> {
    let mut scores = Vec::with_capacity(manifest.cases.len());
    for case in &manifest.cases {
        let mut pairs: Vec<(LabelMask, LabelMask)> = Vec::with_capacity(case.slices.len());
        for (index, slice) in case.slices.iter().enumerate() {
            let truth_rel = slice
                .truth_path
                .as_ref()
                .expect("truth presence is validated before scoring");
            let truth = load_truth(manifest, truth_rel)?;
            let pred_path = dir.join(&case.case_id).join(mask_file_name(index));
            let pred = read_pgm_mask(&pred_path).map_err(|e| super::data_err(&pred_path, e))?;
            pairs.push((pred, truth));
        }
        let refs: Vec<(&LabelMask, &LabelMask)> = pairs.iter().map(|(p, t)| (p, t)).collect();
        let score = case_dice(&case.case_id, &refs, positive_label)
            .map_err(|e| CliError::data(format!("case {}: {e}", case.case_id)))?;
        scores.push(score);
    }
    scores.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok(scores)
}

/// Renders the report as the aligned text table eval prints.
pub(crate) fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    let id_width = report
        .per_case
        .iter()
        .map(|s| s.case_id.len())
        .max()
        .unwrap_or(4)
        .max(4);
    let _ = writeln!(
        out,
        "{:<id_width$}  {:>8}  {:>10}  {:>10}  {:>10}",
        "case", "dice", "tp", "fp", "fn"
    );
    for score in &report.per_case {
        let _ = writeln!(
            out,
            "{:<id_width$}  {:>8.4}  {:>10}  {:>10}  {:>10}",
            score.case_id,
            score.dsc,
            score.counts.true_positives,
            score.counts.false_positives,
            score.counts.false_negatives
        );
    }
    if let Some(folds) = &report.folds {
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:>4}  {:>5}  {:>8}  {:>8}",
            "fold", "cases", "mean", "std"
        );
        for (fold, stats) in &folds.folds {
            let _ = writeln!(
                out,
                "{:>4}  {:>5}  {:>8.4}  {:>8.4}",
                fold, stats.cases, stats.mean, stats.std
            );
        }
    }
    let _ = writeln!(
        out,
        "\noverall: {} cases, mean dice {:.4}, std {:.4}",
        report.overall.cases, report.overall.mean, report.overall.std
    );
    if let Some(cmp) = &report.comparison {
        let _ = writeln!(
            out,
            "compared with {}: mean delta {:+.4}, t {:.4}, p {:.6}, n {}",
            cmp.baseline, cmp.mean_delta, cmp.test.t, cmp.test.p, cmp.test.n
        );
    }
    out
}

pub fn run(common: &CommonArgs, cfg: &RunConfig, args: &EvalArgs) -> Result<u8, CliError> {
    let manifest = load_manifest(common)?;
    require_truths(&manifest)?;

    let per_case = score_predictions(&manifest, &args.pred, cfg.positive_label)?;
    let folds = match &manifest.folds {
        Some(assignment) => {
            Some(fold_report(&per_case, assignment).map_err(|e| CliError::data(e.to_string()))?)
        }
        None => None,
    };
    let overall = score_stats(&per_case).map_err(|e| CliError::data(e.to_string()))?;

    let comparison = match &args.compare {
        Some(dir) => {
            let baseline = score_predictions(&manifest, dir, cfg.positive_label)?;
            // Both score lists are case-id sorted over the same manifest,
            // so they pair up index by index.
            let a: Vec<f64> = per_case.iter().map(|s| s.dsc).collect();
            let b: Vec<f64> = baseline.iter().map(|s| s.dsc).collect();
            let mean_delta = a.iter().zip(&b).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64;
            match paired_t_test(&a, &b) {
                Ok(test) => Some(ComparisonReport {
                    baseline: dir.display().to_string(),
                    test,
                    mean_delta,
                }),
                Err(Error::UndefinedTest(reason)) => {
                    eprintln!("warning: comparison skipped: {reason}");
                    None
                }
                Err(e) => return Err(CliError::data(e.to_string())),
            }
        }
        None => None,
    };

    let report = EvalReport {
        positive_label: cfg.positive_label,
        per_case,
        folds,
        overall,
        comparison,
    };
    print!("{}", render_report(&report));
    if let Some(path) = &args.json {
        let mut text =
            serde_json::to_string_pretty(&report).map_err(|e| CliError::data(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    }
    Ok(0)
}
