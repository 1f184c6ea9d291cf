//! Acceptance gate: ten criteria covering filter accuracy, inference
//! correctness, refinement quality, metric exactness, fold balance, format
//! robustness, and performance. One test per criterion; each prints a
//! single `PASS: criterion N` line with its measured values (visible with
//! `--nocapture`), and the harness line itself is the pass/fail record.
//!
//! Tolerances and budgets are pinned as constants here so a change to any
//! of them is a visible diff.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crf_refine_core::crf::unary_from_probabilities;
use crf_refine_core::io::{decode_pgm_mask, decode_tensor, encode_pgm_mask, encode_tensor};
use crf_refine_core::rng::SeededRng;
use crf_refine_core::{
    argmax_labels, assign_folds, brute_force_filter, build_features, case_dice, confusion, dice,
    mean_field_infer, mean_field_infer_with, paired_t_test, refine_segmentation,
    refine_segmentation_with, relative_l2, synth_fixtures, CaseManifest, CrfParams, DenseTensor,
    FilterMode, InferenceOptions, KernelKind, LabelMask, LatticeFilter, RefineOptions,
    LATTICE_REL_L2_TOL,
};

/// Max relative L2 error of the lattice filter against the exact filter.
const FILTER_TOL: f64 = LATTICE_REL_L2_TOL; // 0.05
/// Max per-entry |dQ| between lattice and brute-force inference.
const Q_ABS_TOL: f32 = 0.05;
/// Max fraction of pixels whose argmax differs between the two backends.
const ARGMAX_DISAGREE_TOL: f64 = 0.01;
/// Per-pixel distribution sum tolerance on inference iterates.
const SUM_TOL: f32 = 1e-6;
/// Significance level for the refinement-improves-Dice test.
const P_THRESHOLD: f64 = 0.05;
/// Wall-clock budgets.
const FILTER_BUDGET: Duration = Duration::from_secs(10);
const IMPROVEMENT_BUDGET: Duration = Duration::from_secs(60);
const SINGLE_SLICE_BUDGET: Duration = Duration::from_secs(1);
const PER_SLICE_AMORTIZED_BUDGET: Duration = Duration::from_millis(300);
/// Fuzz corpus size across the three parsers.
const FUZZ_INPUTS: usize = 1000;

#[test]
fn criterion_01_lattice_filter_matches_brute_force() {
    let start = Instant::now();
    let params = CrfParams::default();
    let mut worst = 0.0f64;
    // 25 seeded random fields: uniform random intensities and random
    // per-point values, the distribution the filter tolerance is
    // calibrated on. Clustered (bimodal) images are exercised at the
    // inference level by criteria 2 and 5.
    for seed in 0..25u64 {
        let mut rng = SeededRng::new(1000 + seed);
        let intensity: Vec<f32> = (0..32 * 32)
            .map(|_| rng.range_f64(0.0, 255.0) as f32)
            .collect();
        let image = crf_refine_core::SliceImage::new(32, 32, intensity).unwrap();
        // Value fields are non-negative like the Q distributions the
        // filter smooths in production.
        let values: Vec<f32> = (0..32 * 32 * 2)
            .map(|_| rng.range_f64(0.0, 1.0) as f32)
            .collect();
        for kind in [KernelKind::Appearance, KernelKind::Smoothness] {
            let feats = build_features(&image, kind, &params).unwrap();
            let exact = brute_force_filter(&feats, &values, 2).unwrap();
            let fast = LatticeFilter::build(&feats)
                .unwrap()
                .filter(&values, 2)
                .unwrap();
            let err = relative_l2(&fast, &exact);
            assert!(
                err <= FILTER_TOL,
                "seed {seed} {kind:?}: rel L2 {err} > {FILTER_TOL}"
            );
            worst = worst.max(err);
        }
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed < FILTER_BUDGET,
        "filter comparison took {elapsed:?}, budget {FILTER_BUDGET:?}"
    );
    println!(
        "PASS: criterion 1: lattice vs brute force on 25 seeded 32x32 random fields, both \
         kernels, worst rel L2 {worst:.5} <= {FILTER_TOL}, {elapsed:.2?} < {FILTER_BUDGET:?}"
    );
}

#[test]
fn criterion_02_lattice_inference_tracks_brute_force() {
    // The problem family is load-bearing. Ten Potts iterations drive any
    // pixel with a decisive unary to a saturated, backend-independent
    // fixed point; a pixel whose unary sits at 0.5 is bistable, and there
    // approximate and exact message passing bifurcate to |dQ| ~ 0.3.
    // Fixtures carry confident unaries everywhere (noise flips labels
    // rather than softening them), which is the regime the bound is
    // attainable in and the regime production probability maps live in.
    let fixtures = synth_fixtures(202, 25, 16, 16, 0.08).unwrap();
    let params = CrfParams::default();
    let mut worst_dq = 0.0f32;
    let mut worst_rate = 0.0f64;
    for f in &fixtures {
        let unary = unary_from_probabilities(&f.prob, 1e-8).unwrap();
        let q_lat = mean_field_infer(&unary, &f.image, &params, FilterMode::Lattice).unwrap();
        let q_bru = mean_field_infer(&unary, &f.image, &params, FilterMode::BruteForce).unwrap();
        for (a, b) in q_lat.prob().iter().zip(q_bru.prob()) {
            let dq = (a - b).abs();
            assert!(
                dq <= Q_ABS_TOL,
                "case {}: |dQ| {dq} > {Q_ABS_TOL}",
                f.case_id
            );
            worst_dq = worst_dq.max(dq);
        }
        let m_lat = argmax_labels(&q_lat);
        let m_bru = argmax_labels(&q_bru);
        let disagreements = m_lat
            .label()
            .iter()
            .zip(m_bru.label())
            .filter(|(a, b)| a != b)
            .count();
        let rate = disagreements as f64 / m_lat.label().len() as f64;
        assert!(
            rate <= ARGMAX_DISAGREE_TOL,
            "case {}: argmax disagreement {rate} > {ARGMAX_DISAGREE_TOL}",
            f.case_id
        );
        worst_rate = worst_rate.max(rate);
    }
    println!(
        "PASS: criterion 2: 25 seeded 16x16 two-label problems, max |dQ| {worst_dq:.2e} <= \
         {Q_ABS_TOL}, worst per-problem argmax disagreement {:.4}% <= 1%",
        worst_rate * 100.0
    );
}

#[test]
fn criterion_03_zero_weights_reduce_to_raw_argmax() {
    let fixtures = synth_fixtures(303, 100, 16, 16, 0.1).unwrap();
    let params = CrfParams {
        w1: 0.0,
        w2: 0.0,
        ..CrfParams::default()
    };
    for f in &fixtures {
        let refined =
            refine_segmentation_with(&f.prob, &f.image, &params, &RefineOptions::default())
                .unwrap();
        let raw = argmax_labels(&f.prob);
        assert_eq!(
            refined.label(),
            raw.label(),
            "case {}: zero-weight refinement differs from the raw argmax",
            f.case_id
        );
    }
    println!(
        "PASS: criterion 3: w1=w2=0 refinement equals the raw argmax bit-exactly on 100 fixtures"
    );
}

#[test]
fn criterion_04_iterates_stay_normalized() {
    let fixtures = synth_fixtures(404, 10, 24, 24, 0.08).unwrap();
    let params = CrfParams::default();
    let opts = InferenceOptions {
        mode: FilterMode::Lattice,
        early_stop: None,
        validate_iterates: true,
    };
    for f in &fixtures {
        let unary = unary_from_probabilities(&f.prob, 1e-8).unwrap();
        // validate_iterates checks every iterate internally; a violation
        // surfaces as Err here.
        let run = mean_field_infer_with(&unary, &f.image, &params, &opts).unwrap();
        assert_eq!(run.iterations_run, params.iterations);
        // Re-check the final iterate independently of the internal guard.
        let labels = run.q.labels();
        for row in run.q.prob().chunks(labels) {
            let sum: f32 = row.iter().sum();
            assert!(
                (sum - 1.0).abs() <= SUM_TOL,
                "case {}: final Q row sums to {sum}",
                f.case_id
            );
            assert!(row.iter().all(|&q| (0.0..=1.0).contains(&q)));
        }
    }
    println!(
        "PASS: criterion 4: instrumented inference keeps every iterate's pixel sums within \
         {SUM_TOL} of 1 with entries in [0, 1] on 10 fixtures x {} iterations",
        params.iterations
    );
}

#[test]
fn criterion_05_refinement_improves_dice_significantly() {
    let start = Instant::now();
    let fixtures = synth_fixtures(505, 50, 64, 64, 0.05).unwrap();
    let params = CrfParams::default();
    let mut raw = Vec::with_capacity(fixtures.len());
    let mut refined = Vec::with_capacity(fixtures.len());
    for f in &fixtures {
        let raw_mask = argmax_labels(&f.prob);
        let ref_mask = refine_segmentation(&f.prob, &f.image, &params).unwrap();
        raw.push(
            case_dice(&f.case_id, &[(&raw_mask, &f.truth)], 1)
                .unwrap()
                .dsc,
        );
        refined.push(
            case_dice(&f.case_id, &[(&ref_mask, &f.truth)], 1)
                .unwrap()
                .dsc,
        );
    }
    let mean_raw = raw.iter().sum::<f64>() / raw.len() as f64;
    let mean_refined = refined.iter().sum::<f64>() / refined.len() as f64;
    assert!(
        mean_refined > mean_raw,
        "refinement did not improve mean Dice: {mean_refined} vs {mean_raw}"
    );
    let test = paired_t_test(&refined, &raw).unwrap();
    assert!(
        test.p < P_THRESHOLD,
        "improvement is not significant: p = {} >= {P_THRESHOLD}",
        test.p
    );
    assert!(
        test.t > 0.0,
        "t statistic should favor refinement, got {}",
        test.t
    );
    let elapsed = start.elapsed();
    assert!(
        elapsed < IMPROVEMENT_BUDGET,
        "took {elapsed:?}, budget {IMPROVEMENT_BUDGET:?}"
    );
    println!(
        "PASS: criterion 5: 50 64x64 fixtures at noise 0.05, mean Dice {mean_raw:.4} -> \
         {mean_refined:.4}, paired t {:.2}, p {:.2e} < {P_THRESHOLD}, {elapsed:.2?} < \
         {IMPROVEMENT_BUDGET:?}",
        test.t, test.p
    );
}

#[test]
fn criterion_06_metric_identities_hold_exactly() {
    // Hand-checkable confusion counts and Dice values.
    let full: Vec<u8> = (0..16).map(|i| u8::from(i < 10)).collect();
    let m_full = LabelMask::new(4, 4, 2, full).unwrap();
    let c = confusion(&m_full, &m_full, 1).unwrap();
    assert_eq!(
        (
            c.true_positives,
            c.true_negatives,
            c.false_positives,
            c.false_negatives
        ),
        (10, 6, 0, 0)
    );
    assert_eq!(dice(&c), 1.0);

    // Pred positives {0,1,2}, truth positives {1,2,3}: TP 2, FP 1, FN 1.
    let pred = LabelMask::new(2, 2, 2, vec![1, 1, 1, 0]).unwrap();
    let truth = LabelMask::new(2, 2, 2, vec![0, 1, 1, 1]).unwrap();
    let c = confusion(&pred, &truth, 1).unwrap();
    assert_eq!(
        (c.true_positives, c.false_positives, c.false_negatives),
        (2, 1, 1)
    );
    assert_eq!(dice(&c), 2.0 * 2.0 / (2.0 * 2.0 + 1.0 + 2.0 - 1.0));
    assert_eq!(dice(&c), 4.0 / 6.0);

    // Empty-empty convention.
    let empty = LabelMask::new(2, 2, 2, vec![0; 4]).unwrap();
    assert_eq!(dice(&confusion(&empty, &empty, 1).unwrap()), 1.0);

    // Paired t-test against the closed form for df = 2.
    let a = [0.5, 0.6, 0.7];
    let b = [0.4, 0.5, 0.65];
    let t_test = paired_t_test(&a, &b).unwrap();
    assert!((t_test.t - 5.0).abs() < 1e-9);
    let p_exact = 2.0 * (1.0 - 0.5 * (1.0 + 5.0 / 27.0f64.sqrt()));
    assert!((t_test.p - p_exact).abs() < 1e-9);

    // Case pooling equals scoring the concatenated volume, on 10 random
    // multi-slice cases.
    let mut rng = SeededRng::new(606);
    for case in 0..10 {
        let slices = 2 + rng.bounded(4) as usize;
        let (h, w) = (16, 16);
        let mut preds = Vec::new();
        let mut truths = Vec::new();
        for _ in 0..slices {
            let p: Vec<u8> = (0..h * w).map(|_| (rng.bounded(2)) as u8).collect();
            let t: Vec<u8> = (0..h * w).map(|_| (rng.bounded(2)) as u8).collect();
            preds.push(LabelMask::new(h, w, 2, p).unwrap());
            truths.push(LabelMask::new(h, w, 2, t).unwrap());
        }
        let pairs: Vec<(&LabelMask, &LabelMask)> = preds.iter().zip(&truths).collect();
        let pooled = case_dice(&format!("case{case}"), &pairs, 1).unwrap().dsc;

        let cat = |masks: &[LabelMask]| {
            let all: Vec<u8> = masks.iter().flat_map(|m| m.label().to_vec()).collect();
            LabelMask::new(h * slices, w, 2, all).unwrap()
        };
        let volume = dice(&confusion(&cat(&preds), &cat(&truths), 1).unwrap());
        assert_eq!(
            pooled, volume,
            "case {case}: pooled != concatenated-volume Dice"
        );
    }
    println!(
        "PASS: criterion 6: confusion/Dice/t-test identities exact; case pooling equals \
         concatenated-volume scoring on 10 random multi-slice cases"
    );
}

#[test]
fn criterion_07_folds_balance_108_cases() {
    let ids: Vec<String> = (0..108).map(|i| format!("series{i:04}")).collect();
    let first = assign_folds(&ids, 5, 7).unwrap();
    let second = assign_folds(&ids, 5, 7).unwrap();
    assert_eq!(first, second, "fold assignment is not deterministic");
    let mut sizes = first.fold_sizes();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    assert_eq!(sizes, vec![22, 22, 22, 21, 21]);
    // Balance is a property of the count, not the seed.
    for seed in [0u64, 1, 99] {
        let mut s = assign_folds(&ids, 5, seed).unwrap().fold_sizes();
        s.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(s, vec![22, 22, 22, 21, 21], "seed {seed} unbalanced");
    }
    println!("PASS: criterion 7: 108 cases at k=5 split 22/22/22/21/21, deterministic across runs");
}

fn random_tensor(rng: &mut SeededRng) -> DenseTensor {
    let ndim = 1 + rng.bounded(3) as usize;
    let dims: Vec<usize> = (0..ndim).map(|_| 1 + rng.bounded(4) as usize).collect();
    let len: usize = dims.iter().product();
    match rng.bounded(3) {
        0 => DenseTensor::from_u8(
            dims.clone(),
            (0..len).map(|_| rng.bounded(256) as u8).collect(),
        ),
        1 => DenseTensor::from_u16(
            dims.clone(),
            (0..len).map(|_| rng.bounded(65536) as u16).collect(),
        ),
        _ => DenseTensor::from_f32(
            dims.clone(),
            (0..len)
                .map(|_| rng.range_f64(-100.0, 100.0) as f32)
                .collect(),
        ),
    }
    .unwrap()
}

fn random_mask(rng: &mut SeededRng) -> LabelMask {
    let h = 1 + rng.bounded(6) as usize;
    let w = 1 + rng.bounded(6) as usize;
    LabelMask::new(h, w, 2, (0..h * w).map(|_| rng.bounded(2) as u8).collect()).unwrap()
}

fn random_bytes(rng: &mut SeededRng) -> Vec<u8> {
    let len = rng.bounded(200) as usize;
    (0..len).map(|_| rng.bounded(256) as u8).collect()
}

fn mutate(rng: &mut SeededRng, mut bytes: Vec<u8>) -> Vec<u8> {
    if bytes.is_empty() {
        return bytes;
    }
    for _ in 0..(1 + rng.bounded(3)) {
        let i = rng.bounded(bytes.len() as u64) as usize;
        bytes[i] ^= (1 + rng.bounded(255)) as u8;
    }
    bytes
}

fn random_jsonish(rng: &mut SeededRng) -> String {
    const POOL: &[u8] = br#"{}[]":,0123456789abcdefXYZ \n"#;
    let len = rng.bounded(300) as usize;
    (0..len)
        .map(|_| POOL[rng.bounded(POOL.len() as u64) as usize] as char)
        .collect()
}

#[test]
fn criterion_08_parsers_survive_fuzzing_and_round_trip() {
    let mut rng = SeededRng::new(808);
    let mut parsed_ok = 0usize;
    for i in 0..FUZZ_INPUTS {
        match i % 3 {
            0 => {
                // DTEN: hostile input must error, never panic; anything
                // accepted must re-encode to the identical bytes (the
                // format is canonical); fresh valid tensors round-trip.
                let bytes = if i % 2 == 0 {
                    random_bytes(&mut rng)
                } else {
                    let valid = encode_tensor(&random_tensor(&mut rng)).unwrap();
                    mutate(&mut rng, valid)
                };
                if let Ok(tensor) = decode_tensor(&bytes) {
                    parsed_ok += 1;
                    assert_eq!(encode_tensor(&tensor).unwrap(), bytes);
                }
                let fresh = random_tensor(&mut rng);
                let encoded = encode_tensor(&fresh).unwrap();
                let decoded = decode_tensor(&encoded).unwrap();
                assert_eq!(decoded, fresh);
                assert_eq!(encode_tensor(&decoded).unwrap(), encoded);
            }
            1 => {
                // PGM: same discipline; the writer emits one canonical
                // form, so accepted bytes re-encode stably after one
                // normalization pass.
                let bytes = if i % 2 == 0 {
                    random_bytes(&mut rng)
                } else {
                    let valid = encode_pgm_mask(&random_mask(&mut rng)).unwrap();
                    mutate(&mut rng, valid)
                };
                if let Ok(mask) = decode_pgm_mask(&bytes) {
                    parsed_ok += 1;
                    let canonical = encode_pgm_mask(&mask).unwrap();
                    let reread = decode_pgm_mask(&canonical).unwrap();
                    assert_eq!(reread, mask);
                    assert_eq!(encode_pgm_mask(&reread).unwrap(), canonical);
                }
                let fresh = random_mask(&mut rng);
                let encoded = encode_pgm_mask(&fresh).unwrap();
                assert_eq!(decode_pgm_mask(&encoded).unwrap(), fresh);
            }
            _ => {
                // Manifest: JSON-shaped garbage must error cleanly; valid
                // manifests re-serialize to identical text.
                let text = random_jsonish(&mut rng);
                if let Ok(manifest) = CaseManifest::from_json(&text) {
                    parsed_ok += 1;
                    let json = manifest.to_json();
                    assert_eq!(CaseManifest::from_json(&json).unwrap().to_json(), json);
                }
                let n_cases = 1 + rng.bounded(3) as usize;
                let cases = (0..n_cases)
                    .map(|c| crf_refine_core::CaseEntry {
                        case_id: format!("case{c:03}"),
                        slices: vec![crf_refine_core::SliceRef {
                            image_path: format!("case{c:03}/img.dten"),
                            prob_path: format!("case{c:03}/prob.dten"),
                            truth_path: (rng.bounded(2) == 0)
                                .then(|| format!("case{c:03}/truth.pgm")),
                        }],
                    })
                    .collect();
                let manifest = CaseManifest::new(cases, None).unwrap();
                let json = manifest.to_json();
                let reread = CaseManifest::from_json(&json).unwrap();
                assert_eq!(reread.to_json(), json);
            }
        }
    }
    println!(
        "PASS: criterion 8: {FUZZ_INPUTS} fuzzed inputs across DTEN/PGM/manifest parsers, \
         no panics, {parsed_ok} hostile inputs accepted and all round-trips bit-identical"
    );
}

#[test]
fn criterion_09_refinement_meets_latency_budgets() {
    let fixtures = synth_fixtures(909, 16, 512, 512, 0.05).unwrap();
    let params = CrfParams::default();

    let single_pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let t0 = Instant::now();
    let mask = single_pool
        .install(|| refine_segmentation(&fixtures[0].prob, &fixtures[0].image, &params))
        .unwrap();
    let single = t0.elapsed();
    assert_eq!(mask.label().len(), 512 * 512);
    assert!(
        single < SINGLE_SLICE_BUDGET,
        "512x512 single-thread refinement took {single:?}, budget {SINGLE_SLICE_BUDGET:?}"
    );

    let batch_pool = rayon::ThreadPoolBuilder::new()
        .num_threads(8)
        .build()
        .unwrap();
    let t1 = Instant::now();
    let masks: Vec<LabelMask> = batch_pool
        .install(|| {
            fixtures
                .par_iter()
                .map(|f| refine_segmentation(&f.prob, &f.image, &params))
                .collect::<crf_refine_core::Result<_>>()
        })
        .unwrap();
    let batch = t1.elapsed();
    assert_eq!(masks.len(), 16);
    let per_slice = batch / 16;
    assert!(
        per_slice < PER_SLICE_AMORTIZED_BUDGET,
        "16-slice batch on 8 threads took {batch:?} ({per_slice:?}/slice), \
         budget {PER_SLICE_AMORTIZED_BUDGET:?}/slice"
    );
    println!(
        "PASS: criterion 9: 512x512 refinement {single:.0?} single-thread < \
         {SINGLE_SLICE_BUDGET:?}; 16-slice batch on 8 threads {per_slice:.0?}/slice < \
         {PER_SLICE_AMORTIZED_BUDGET:?}/slice"
    );
}

/// Collects every file under `root` as relative path -> bytes.
fn read_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn criterion_10_cli_output_is_thread_count_invariant() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    let bin = env!("CARGO_BIN_EXE_crf-refine");
    let status = Command::new(bin)
        .args([
            "synth",
            "--out",
            corpus.to_str().unwrap(),
            "--count",
            "4",
            "--size",
            "64",
            "--noise",
            "0.05",
            "--seed",
            "77",
        ])
        .status()
        .unwrap();
    assert!(status.success());

    let manifest = corpus.join("manifest.json");
    let mut outputs = Vec::new();
    for threads in ["1", "8"] {
        let out_dir = tmp.path().join(format!("pred_t{threads}"));
        let status = Command::new(bin)
            .args([
                "refine",
                "--manifest",
                manifest.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
                "--threads",
                threads,
                "--dump-q",
            ])
            .status()
            .unwrap();
        assert!(status.success(), "refine --threads {threads} failed");
        outputs.push(read_tree(&out_dir));
    }
    assert_eq!(outputs[0].len(), 8, "4 cases x (mask + Q) files");
    assert_eq!(
        outputs[0], outputs[1],
        "refine output differs between --threads 1 and --threads 8"
    );
    println!(
        "PASS: criterion 10: refine --threads 1 and --threads 8 produce byte-identical \
         masks and Q dumps over a 4-case corpus"
    );
}
