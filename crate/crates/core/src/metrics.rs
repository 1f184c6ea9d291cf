//! Overlap scoring and the statistics reported per fold: confusion counts,
//! Dice, per-case (volumetric) aggregation, fold mean/std tables, and a
//! paired significance test.
//!
//! Case scores pool confusion counts over all slices of a case before
//! applying Dice once (a volumetric overlap), which is not the mean of the
//! per-slice scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::experiment::FoldAssignment;
use crate::tensor::LabelMask;

/// Pixel tallies against a binary positive class.
///
/// Field names spell out tp/tn/fp/fn; serialized forms keep the short
/// conventional keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    #[serde(rename = "tp")]
    pub true_positives: u64,
    #[serde(rename = "tn")]
    pub true_negatives: u64,
    #[serde(rename = "fp")]
    pub false_positives: u64,
    #[serde(rename = "fn")]
    pub false_negatives: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_positives + self.true_negatives + self.false_positives + self.false_negatives
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.true_positives += other.true_positives;
        self.true_negatives += other.true_negatives;
        self.false_positives += other.false_positives;
        self.false_negatives += other.false_negatives;
    }
}

/// Tallies `pred` against `truth`, treating `positive_label` as the
/// positive class and every other label as negative.
pub fn confusion(
    pred: &LabelMask,
    truth: &LabelMask,
    positive_label: u8,
) -> Result<ConfusionCounts> {
    if pred.height() != truth.height() || pred.width() != truth.width() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} does not match truth {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.label().iter().zip(truth.label()) {
        match (p == positive_label, t == positive_label) {
            (true, true) => c.true_positives += 1,
            (true, false) => c.false_positives += 1,
            (false, true) => c.false_negatives += 1,
            (false, false) => c.true_negatives += 1,
        }
    }
    Ok(c)
}

/// Dice similarity: `2tp / (2tp + fp + fn)`. Two empty masks agree
/// perfectly, so `tp = fp = fn = 0` scores 1.0 (this also makes removed
/// blank slices harmless in pooled counts).
pub fn dice(counts: &ConfusionCounts) -> f64 {
    let denom = 2 * counts.true_positives + counts.false_positives + counts.false_negatives;
    if denom == 0 {
        return 1.0;
    }
    2.0 * counts.true_positives as f64 / denom as f64
}

/// Intersection over union from the same counts; empty-empty is 1.0 by the
/// same convention as [`dice`].
pub fn iou(counts: &ConfusionCounts) -> f64 {
    let denom = counts.true_positives + counts.false_positives + counts.false_negatives;
    if denom == 0 {
        return 1.0;
    }
    counts.true_positives as f64 / denom as f64
}

/// One case's volumetric score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    pub dsc: f64,
    pub counts: ConfusionCounts,
}

/// Scores one case from its (pred, truth) slice pairs: counts are pooled
/// across slices, then Dice is applied once.
pub fn case_dice(
    case_id: &str,
    slices: &[(&LabelMask, &LabelMask)],
    positive_label: u8,
) -> Result<CaseScore> {
    if slices.is_empty() {
        return Err(Error::InvalidInput(format!(
            "case {case_id} has no slices to score"
        )));
    }
    let mut counts = ConfusionCounts::default();
    for (pred, truth) in slices {
        counts.add(&confusion(pred, truth, positive_label)?);
    }
    Ok(CaseScore {
        case_id: case_id.to_string(),
        dsc: dice(&counts),
        counts,
    })
}

/// Mean and sample std of one group of case scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub cases: usize,
    pub mean: f64,
    /// Sample (n-1) standard deviation; 0 for a single-case group.
    pub std: f64,
}

fn group_stats(dscs: &[f64]) -> GroupStats {
    let n = dscs.len();
    let mean = dscs.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        let var = dscs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
        var.sqrt()
    };
    GroupStats {
        cases: n,
        mean,
        std,
    }
}

/// Per-fold and overall statistics for one scored corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    /// Fold index -> stats; folds with no scored cases are omitted.
    pub folds: BTreeMap<usize, GroupStats>,
    /// Over all cases, not a mean of fold means.
    pub overall: GroupStats,
}

/// Aggregates case scores by fold. Every score's case must be present in
/// the assignment, and a case may be scored only once.
pub fn fold_report(scores: &[CaseScore], assignment: &FoldAssignment) -> Result<FoldReport> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("no case scores to report".into()));
    }
    // Case-id order makes the aggregation independent of input order.
    let mut sorted: Vec<&CaseScore> = scores.iter().collect();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    for pair in sorted.windows(2) {
        if pair[0].case_id == pair[1].case_id {
            return Err(Error::InvalidInput(format!(
                "case {} is scored more than once",
                pair[0].case_id
            )));
        }
    }

    let mut by_fold: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut all = Vec::with_capacity(sorted.len());
    for score in &sorted {
        let fold = assignment.fold_of(&score.case_id).ok_or_else(|| {
            Error::InvalidInput(format!(
                "case {} is not in the fold assignment",
                score.case_id
            ))
        })?;
        by_fold.entry(fold).or_default().push(score.dsc);
        all.push(score.dsc);
    }
    Ok(FoldReport {
        folds: by_fold
            .into_iter()
            .map(|(fold, dscs)| (fold, group_stats(&dscs)))
            .collect(),
        overall: group_stats(&all),
    })
}

/// Overall statistics for a scored corpus without fold structure. Cases
/// are summed in case-id order, so with the same scores the mean equals
/// [`fold_report`]'s overall mean exactly.
pub fn score_stats(scores: &[CaseScore]) -> Result<GroupStats> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("no case scores to report".into()));
    }
    let mut sorted: Vec<&CaseScore> = scores.iter().collect();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    for pair in sorted.windows(2) {
        if pair[0].case_id == pair[1].case_id {
            return Err(Error::InvalidInput(format!(
                "case {} is scored more than once",
                pair[0].case_id
            )));
        }
    }
    let dscs: Vec<f64> = sorted.iter().map(|s| s.dsc).collect();
    Ok(group_stats(&dscs))
}

/// Paired two-tailed t-test result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t: f64,
    pub p: f64,
    pub n: usize,
}

/// Two-tailed paired t-test over per-case score pairs. The t statistic is
/// `mean(d) / (sd(d)/sqrt(n))` on the differences `d = a - b`; p comes from
/// Student's t with `n-1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::UndefinedTest(format!(
            "paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    if !a.iter().chain(b).all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("scores must be finite".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(Error::UndefinedTest(
            "all paired differences are equal; the t statistic is undefined".into(),
        ));
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::UndefinedTest(format!("t distribution: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(PairedTTest { t, p, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::assign_folds;
    use crate::rng::SeededRng;

    fn mask(h: usize, w: usize, vals: &[u8]) -> LabelMask {
        LabelMask::new(h, w, 2, vals.to_vec()).unwrap()
    }

    #[test]
    fn confusion_on_identical_masks() {
        // 10 positive and 6 negative pixels, prediction equals truth.
        let vals: Vec<u8> = (0..16).map(|i| u8::from(i < 10)).collect();
        let m = mask(4, 4, &vals);
        let c = confusion(&m, &m, 1).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                true_positives: 10,
                true_negatives: 6,
                false_positives: 0,
                false_negatives: 0
            }
        );
        assert_eq!(c.total(), 16);
    }

    #[test]
    fn confusion_all_wrong() {
        let pred = mask(2, 4, &[1; 8]);
        let truth = mask(2, 4, &[0; 8]);
        let c = confusion(&pred, &truth, 1).unwrap();
        assert_eq!(c.false_positives, 8);
        assert_eq!(c.true_positives + c.true_negatives + c.false_negatives, 0);
    }

    #[test]
    fn confusion_partial_overlap_on_2x2() {
        // Cells A,B,C,D row-major; pred positives {A,B,C}, truth {B,C,D}.
        let pred = mask(2, 2, &[1, 1, 1, 0]);
        let truth = mask(2, 2, &[0, 1, 1, 1]);
        let c = confusion(&pred, &truth, 1).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                true_positives: 2,
                true_negatives: 0,
                false_positives: 1,
                false_negatives: 1
            }
        );
    }

    #[test]
    fn confusion_rejects_shape_mismatch() {
        let a = mask(2, 2, &[0; 4]);
        let b = mask(1, 4, &[0; 4]);
        assert!(confusion(&a, &b, 1).is_err());
    }

    #[test]
    fn dice_examples() {
        let c = |tp, fp, fnn| ConfusionCounts {
            true_positives: tp,
            true_negatives: 0,
            false_positives: fp,
            false_negatives: fnn,
        };
        assert_eq!(dice(&c(10, 0, 0)), 1.0);
        assert_eq!(dice(&c(0, 3, 2)), 0.0);
        assert_eq!(dice(&c(8, 2, 2)), 0.8);
        assert_eq!(dice(&c(0, 0, 0)), 1.0, "empty-empty is perfect agreement");
    }

    #[test]
    fn dice_swaps_symmetrically() {
        let pred = mask(2, 3, &[1, 1, 0, 0, 1, 0]);
        let truth = mask(2, 3, &[1, 0, 1, 0, 1, 1]);
        let a = confusion(&pred, &truth, 1).unwrap();
        let b = confusion(&truth, &pred, 1).unwrap();
        assert_eq!(a.false_positives, b.false_negatives);
        assert_eq!(a.false_negatives, b.false_positives);
        assert_eq!(dice(&a), dice(&b));
    }

    #[test]
    fn iou_relates_to_dice() {
        let c = ConfusionCounts {
            true_positives: 3,
            true_negatives: 4,
            false_positives: 1,
            false_negatives: 2,
        };
        assert_eq!(iou(&c), 0.5);
        let d = dice(&c);
        let j = iou(&c);
        assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
        assert_eq!(iou(&ConfusionCounts::default()), 1.0);
    }

    #[test]
    fn single_slice_case_matches_plain_dice() {
        let pred = mask(2, 2, &[1, 1, 0, 0]);
        let truth = mask(2, 2, &[1, 0, 1, 0]);
        let score = case_dice("c1", &[(&pred, &truth)], 1).unwrap();
        let direct = dice(&confusion(&pred, &truth, 1).unwrap());
        assert_eq!(score.dsc, direct);
        assert_eq!(score.case_id, "c1");
    }

    #[test]
    fn case_dice_pools_counts_not_slice_means() {
        // Slice 1: tp=4, fp=0, fn=4. Slice 2: tp=4, fp=4, fn=0.
        let t1 = mask(1, 8, &[1; 8]);
        let p1 = mask(1, 8, &[1, 1, 1, 1, 0, 0, 0, 0]);
        let t2 = mask(1, 8, &[1, 1, 1, 1, 0, 0, 0, 0]);
        let p2 = mask(1, 8, &[1; 8]);
        let score = case_dice("c", &[(&p1, &t1), (&p2, &t2)], 1).unwrap();
        assert_eq!(score.counts.true_positives, 8);
        assert_eq!(score.counts.false_positives, 4);
        assert_eq!(score.counts.false_negatives, 4);
        assert!((score.dsc - 16.0 / 24.0).abs() < 1e-12);

        // Asymmetric slice qualities: pooled differs from the slice mean.
        let t1 = mask(1, 10, &[1, 1, 1, 1, 1, 1, 1, 1, 1, 0]);
        let p1 = mask(1, 10, &[1; 10]); // tp=9 fp=1 fn=0
        let t2 = mask(1, 10, &[1; 10]);
        let p2 = mask(1, 10, &[1, 0, 0, 0, 0, 0, 0, 0, 0, 0]); // tp=1 fn=9
        let pooled = case_dice("c", &[(&p1, &t1), (&p2, &t2)], 1).unwrap();
        assert!((pooled.dsc - 20.0 / 30.0).abs() < 1e-12);
        let s1 = dice(&confusion(&p1, &t1, 1).unwrap()); // 18/19
        let s2 = dice(&confusion(&p2, &t2, 1).unwrap()); // 2/11
        assert!((s1 - 18.0 / 19.0).abs() < 1e-12);
        assert!((s2 - 2.0 / 11.0).abs() < 1e-12);
        let slice_mean = (s1 + s2) / 2.0;
        assert!(
            (pooled.dsc - slice_mean).abs() > 0.05,
            "pooled {} vs slice mean {slice_mean} must differ",
            pooled.dsc
        );
    }

    #[test]
    fn all_empty_case_scores_one() {
        let empty = mask(2, 2, &[0; 4]);
        let score = case_dice("c", &[(&empty, &empty); 3], 1).unwrap();
        assert_eq!(score.dsc, 1.0);
        assert_eq!(score.counts.true_negatives, 12);
    }

    #[test]
    fn empty_case_is_rejected() {
        assert!(case_dice("c", &[], 1).is_err());
    }

    #[test]
    fn case_dice_equals_concatenated_volume_dice() {
        let mut rng = SeededRng::new(404);
        let (h, w) = (6, 5);
        let mut slices = Vec::new();
        for _ in 0..4 {
            let p: Vec<u8> = (0..h * w).map(|_| rng.bounded(2) as u8).collect();
            let t: Vec<u8> = (0..h * w).map(|_| rng.bounded(2) as u8).collect();
            slices.push((mask(h, w, &p), mask(h, w, &t)));
        }
        let refs: Vec<(&LabelMask, &LabelMask)> = slices.iter().map(|(p, t)| (p, t)).collect();
        let pooled = case_dice("c", &refs, 1).unwrap();

        let cat_pred: Vec<u8> = slices
            .iter()
            .flat_map(|(p, _)| p.label().to_vec())
            .collect();
        let cat_truth: Vec<u8> = slices
            .iter()
            .flat_map(|(_, t)| t.label().to_vec())
            .collect();
        let volume =
            dice(&confusion(&mask(4 * h, w, &cat_pred), &mask(4 * h, w, &cat_truth), 1).unwrap());
        assert_eq!(pooled.dsc, volume);
    }

    fn scores_from(pairs: &[(&str, f64)]) -> Vec<CaseScore> {
        pairs
            .iter()
            .map(|(id, dsc)| CaseScore {
                case_id: id.to_string(),
                dsc: *dsc,
                counts: ConfusionCounts::default(),
            })
            .collect()
    }

    #[test]
    fn fold_report_single_fold_stats() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let assignment = assign_folds(&ids, 2, 1).unwrap();
        // Put both cases in one logical report regardless of their folds:
        // check the overall stats, which pool all cases.
        let report = fold_report(&scores_from(&[("a", 0.98), ("b", 0.96)]), &assignment).unwrap();
        assert!((report.overall.mean - 0.97).abs() < 1e-12);
        // Sample std of {0.96, 0.98}: sqrt(2 * 0.01^2 / 1).
        assert!((report.overall.std - 0.0002f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fold_report_zero_std_when_scores_equal() {
        let ids: Vec<String> = (0..6).map(|i| format!("c{i}")).collect();
        let assignment = assign_folds(&ids, 3, 7).unwrap();
        let scores: Vec<CaseScore> =
            scores_from(&ids.iter().map(|i| (i.as_str(), 0.9)).collect::<Vec<_>>());
        let report = fold_report(&scores, &assignment).unwrap();
        assert_eq!(report.overall.std, 0.0);
        for stats in report.folds.values() {
            assert_eq!(stats.std, 0.0);
            assert!((stats.mean - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn fold_report_overall_pools_cases_not_folds() {
        let ids: Vec<String> = (0..5).map(|i| format!("c{i}")).collect();
        let assignment = assign_folds(&ids, 5, 3).unwrap();
        // One case per fold; four perfect, one zero.
        let scores = scores_from(&[
            ("c0", 1.0),
            ("c1", 1.0),
            ("c2", 1.0),
            ("c3", 1.0),
            ("c4", 0.0),
        ]);
        let report = fold_report(&scores, &assignment).unwrap();
        assert!((report.overall.mean - 0.8).abs() < 1e-12);
        assert_eq!(report.folds.len(), 5);
        let mut fold_means: Vec<f64> = report.folds.values().map(|s| s.mean).collect();
        fold_means.sort_by(f64::total_cmp);
        assert_eq!(fold_means, vec![0.0, 1.0, 1.0, 1.0, 1.0]);
        // Each fold holds exactly one case here, so every fold std is 0.
        assert!(report.folds.values().all(|s| s.std == 0.0));
    }

    #[test]
    fn fold_report_rejects_unknown_and_duplicate_cases() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let assignment = assign_folds(&ids, 2, 1).unwrap();
        let unknown = scores_from(&[("a", 0.9), ("zz", 0.8)]);
        assert!(fold_report(&unknown, &assignment).is_err());
        let dup = scores_from(&[("a", 0.9), ("a", 0.8)]);
        assert!(fold_report(&dup, &assignment).is_err());
        assert!(fold_report(&[], &assignment).is_err());
    }

    #[test]
    fn score_stats_matches_fold_report_overall_exactly() {
        let ids: Vec<String> = (0..7).map(|i| format!("c{i}")).collect();
        let assignment = assign_folds(&ids, 3, 11).unwrap();
        let mut rng = SeededRng::new(42);
        // Shuffled input order; both paths must sort by case id first.
        let mut pairs: Vec<(String, f64)> = ids
            .iter()
            .map(|id| (id.clone(), rng.range_f64(0.3, 1.0)))
            .collect();
        rng.shuffle(&mut pairs);
        let scores: Vec<CaseScore> = pairs
            .iter()
            .map(|(id, dsc)| CaseScore {
                case_id: id.clone(),
                dsc: *dsc,
                counts: ConfusionCounts::default(),
            })
            .collect();
        let stats = score_stats(&scores).unwrap();
        let report = fold_report(&scores, &assignment).unwrap();
        assert_eq!(stats, report.overall);
        assert!(score_stats(&[]).is_err());
        assert!(score_stats(&scores_from(&[("a", 0.9), ("a", 0.8)])).is_err());
    }

    #[test]
    fn t_test_matches_hand_computed_example() {
        let a = [0.5, 0.6, 0.7];
        let b = [0.4, 0.5, 0.65];
        let r = paired_t_test(&a, &b).unwrap();
        assert_eq!(r.n, 3);
        assert!((r.t - 5.0).abs() < 1e-9, "t = {}", r.t);
        // Exact for df=2: p = 2(1 - (1 + t/sqrt(2+t^2))/2) with t=5.
        let expect = 2.0 * (1.0 - 0.5 * (1.0 + 5.0 / (27.0f64).sqrt()));
        assert!((r.p - expect).abs() < 1e-9, "p = {}", r.p);
        assert!((r.p - 0.037749).abs() < 1e-5);
    }

    #[test]
    fn t_test_is_antisymmetric() {
        let a = [0.9, 0.8, 0.85, 0.95];
        let b = [0.88, 0.82, 0.8, 0.9];
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        assert!((ab.t + ba.t).abs() < 1e-12);
        assert!((ab.p - ba.p).abs() < 1e-12);
    }

    #[test]
    fn t_test_rejects_degenerate_inputs() {
        // Identical samples: zero-variance differences.
        assert!(matches!(
            paired_t_test(&[0.5, 0.6], &[0.5, 0.6]),
            Err(Error::UndefinedTest(_))
        ));
        // Constant nonzero difference is still zero variance (exactly
        // representable values keep the differences bit-identical).
        let a = [1.5, 2.5, 3.5, 4.5];
        let b = [1.0, 2.0, 3.0, 4.0];
        assert!(matches!(
            paired_t_test(&a, &b),
            Err(Error::UndefinedTest(_))
        ));
        // Too few pairs, mismatched lengths.
        assert!(paired_t_test(&[0.5], &[0.4]).is_err());
        assert!(paired_t_test(&[0.5, 0.6], &[0.4]).is_err());
    }
}
