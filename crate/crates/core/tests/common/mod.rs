//! Shared test support: naive reference implementations, random fixtures and
//! the checks run by both the regular test targets and the acceptance harness.
#![allow(dead_code)]

pub mod reference;

use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestCaseError, TestRunner};
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use scaleood::alignment::{entropy, predict, AlignmentConfig, PredictionSet};
use scaleood::detector::{auroc, evaluate, fpr95};
use scaleood::embedding_store::rng::{gaussian_vec, stream, uniform};
use scaleood::embedding_store::{generate_synthetic, SyntheticSpec};
use scaleood::gradcheck::{check_seed, GradCheckConfig};
use scaleood::hierarchy::{build_hierarchy, fuse};
use scaleood::objective::{evaluate_batch, Decisions, ObjectiveConfig};
use scaleood::pseudo_ood::{build_pseudo_ood, entropy_gain, propagate, select_top_k};
use scaleood::trainer::{train, Checkpoint, TrainConfig, Trainer};
use scaleood::{Bundle, ImageEmbeddings, Mat, ModelParams, TextBank};

/// Result of one acceptance check.
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

// ---------------------------------------------------------------- fixtures

/// A random labeled image with parameters, text bank and alignment settings.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub item: ImageEmbeddings<f64>,
    pub params: ModelParams<f64>,
    pub text: TextBank<f64>,
    pub align: AlignmentConfig,
    pub k: usize,
}

fn rows(rng: &mut ChaCha8Rng, count: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..count).map(|_| gaussian_vec(rng, d, scale)).collect()
}

/// Occasionally zero, to exercise the zero-norm cosine convention.
fn patch(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    if uniform(rng) < 0.05 {
        vec![0.0; d]
    } else {
        gaussian_vec(rng, d, 1.0)
    }
}

pub fn fixture(seed: u64) -> Fixture {
    let mut rng = stream(seed, 99);
    let d = rng.gen_range(2..=8);
    let c = rng.gen_range(2..=5);
    let n = rng.gen_range(1..=3);
    let taus = [0.01, 0.05, 0.1, 0.5, 1.0];
    let tau = taus[rng.gen_range(0..taus.len())];
    let pscale = [0.0, 0.1, 0.5][rng.gen_range(0..3)];
    let item = ImageEmbeddings {
        id: format!("fx-{seed}"),
        label: rng.gen_range(0..c) as i64,
        global: gaussian_vec(&mut rng, d, 1.0),
        mid: (0..n * n).map(|_| patch(&mut rng, d)).collect(),
        high: (0..4 * n * n).map(|_| patch(&mut rng, d)).collect(),
    };
    let params = ModelParams {
        adapter: Mat::from_rows(&rows(&mut rng, d, d, pscale)),
        bias_global: Mat::from_rows(&rows(&mut rng, c, d, pscale)),
        bias_high: Mat::from_rows(&rows(&mut rng, c, d, pscale)),
    };
    let text = TextBank::new(Mat::from_rows(&rows(&mut rng, c, d, 1.0)));
    let k = rng.gen_range(1..=4 * n * n);
    Fixture {
        item,
        params,
        text,
        align: AlignmentConfig {
            tau,
            renormalize_aggregates: rng.gen_bool(0.3),
        },
        k,
    }
}

pub fn fixture_strategy() -> impl Strategy<Value = Fixture> {
    any::<u64>().prop_map(fixture)
}

pub fn objective_for(f: &Fixture, lambda_ood: f64) -> ObjectiveConfig {
    ObjectiveConfig {
        alignment: f.align,
        k: f.k,
        lambda_ood,
        ..ObjectiveConfig::default()
    }
}

pub fn prediction(f: &Fixture) -> PredictionSet<f64> {
    let state = build_hierarchy(&f.item, &f.params, true);
    predict(&state, &f.text, &f.params, &f.align)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs_diff_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| max_abs_diff(x, y)).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- P1

pub const GRADCHECK_SEEDS: u64 = 24;

pub fn check_gradients(seeds: u64) -> Outcome {
    let cfg = GradCheckConfig::default();
    let start = Instant::now();
    let mut worst = (0.0f64, 0u64);
    for seed in 0..seeds {
        let r = check_seed(&cfg, seed, false).expect("gradcheck runs");
        if r.max_rel_error > worst.0 {
            worst = (r.max_rel_error, seed);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: worst.0 <= 1e-5 && secs < 60.0,
        detail: format!(
            "max rel error {:.2e} (seed {}) over {seeds} seeds, step 1e-6, tol 1e-5; {secs:.1}s",
            worst.0, worst.1
        ),
    }
}

// ---------------------------------------------------------------- P2

pub struct OracleDiffs {
    pub fusion: f64,
    pub propagation: f64,
    pub filtering: f64,
    pub prediction: f64,
    pub gains: f64,
    pub discrete_mismatches: usize,
}

impl OracleDiffs {
    pub fn max(&self) -> f64 {
        [self.fusion, self.propagation, self.filtering, self.prediction, self.gains]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

fn top_k_fixture(rng: &mut ChaCha8Rng) -> (Vec<f64>, usize) {
    let len = rng.gen_range(1..=36);
    // Draw from a small value set so ties are common.
    let levels = rng.gen_range(1..=6);
    let gains: Vec<f64> = (0..len)
        .map(|_| rng.gen_range(0..levels) as f64 * 0.25 - 0.5)
        .collect();
    let k = rng.gen_range(1..=len);
    (gains, k)
}

pub fn oracle_diffs(fixtures: u64) -> OracleDiffs {
    let mut out = OracleDiffs {
        fusion: 0.0,
        propagation: 0.0,
        filtering: 0.0,
        prediction: 0.0,
        gains: 0.0,
        discrete_mismatches: 0,
    };
    for seed in 0..fixtures {
        let f = fixture(seed);
        let n = f.item.partition();
        let reference = reference::prediction_set(&f.item, &f.params, &f.text, &f.align);

        // Fusion on raw vectors and through the adapter.
        let state = build_hierarchy(&f.item, &f.params, true);
        out.fusion = out.fusion.max(max_abs_diff(&state.u0, &reference.u0));
        out.fusion = out.fusion.max(max_abs_diff_rows(&state.u1_hat, &reference.u1_hat));
        out.fusion = out.fusion.max(max_abs_diff_rows(&state.u2_hat, &reference.u2_hat));
        let direct = fuse(f.item.global.clone(), f.item.mid.clone(), f.item.high.clone(), n);
        let (r1, r2) = reference::fuse(&f.item.global, &f.item.mid, &f.item.high, n);
        out.fusion = out.fusion.max(max_abs_diff_rows(&direct.u1_hat, &r1));
        out.fusion = out.fusion.max(max_abs_diff_rows(&direct.u2_hat, &r2));

        // Filtering on random probability sets, and the full prediction set.
        let mut rng = stream(seed, 7);
        let probs: Vec<Vec<f64>> = (0..rng.gen_range(1..=16))
            .map(|_| {
                let raw: Vec<f64> = (0..f.text.num_classes()).map(|_| uniform(&mut rng) + 1e-3).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|x| x / s).collect()
            })
            .collect();
        let agg = scaleood::alignment::aggregate_scale(&probs, f.align.renormalize_aggregates);
        let (ref_mask, ref_agg) = reference::entropy_filter(&probs, f.align.renormalize_aggregates);
        out.discrete_mismatches += (agg.mask != ref_mask) as usize;
        out.filtering = out.filtering.max(max_abs_diff(&agg.aggregated, &ref_agg));

        let pred = predict(&state, &f.text, &f.params, &f.align);
        out.discrete_mismatches += (pred.mask_mid != reference.mask_mid) as usize;
        out.discrete_mismatches += (pred.mask_high != reference.mask_high) as usize;
        let pairs: [(&[f64], &[f64]); 3] = [
            (&pred.p0, &reference.p0),
            (&pred.p1, &reference.p1),
            (&pred.p2, &reference.p2),
        ];
        for (a, b) in pairs {
            out.prediction = out.prediction.max(max_abs_diff(a, b));
        }
        out.prediction = out.prediction.max(max_abs_diff_rows(&pred.p_mid, &reference.p_mid));
        out.prediction = out.prediction.max(max_abs_diff_rows(&pred.p_high, &reference.p_high));
        out.prediction = out.prediction.max(max_abs_diff(&pred.h_mid, &reference.h_mid));
        out.prediction = out.prediction.max(max_abs_diff(&pred.h_high, &reference.h_high));
        out.prediction = out
            .prediction
            .max((pred.h_bar_mid - reference.h_bar_mid).abs())
            .max((pred.h_bar_high - reference.h_bar_high).abs());

        // Entropy gain, top-K selection and propagation of the selected patches.
        let gains = entropy_gain(&pred);
        let ref_gains = reference::entropy_gains(&reference.h_mid, &reference.h_high, n);
        out.gains = out.gains.max(max_abs_diff(&gains, &ref_gains));
        let picked = select_top_k(&gains, f.k).unwrap();
        out.discrete_mismatches += (picked != reference::top_k(&gains, f.k)) as usize;
        let (g, k) = top_k_fixture(&mut rng);
        out.discrete_mismatches += (select_top_k(&g, k).unwrap() != reference::top_k(&g, k)) as usize;

        let pseudo = build_pseudo_ood(&state, &gains, picked.clone(), true);
        for (i, &j) in picked.iter().enumerate() {
            let (q1, q0) = reference::propagate(&reference.u2_hat[j], &reference.u1_hat, &reference.u0);
            out.propagation = out.propagation.max(max_abs_diff(&pseudo.q1[i], &q1));
            out.propagation = out.propagation.max(max_abs_diff(&pseudo.q0[i], &q0));
        }
        let q2 = gaussian_vec(&mut rng, f.item.global.len(), 1.0);
        let (q1, q0) = propagate(&q2, &state.u1_hat, &state.u0);
        let (r1, r0) = reference::propagate(&q2, &state.u1_hat, &state.u0);
        out.propagation = out.propagation.max(max_abs_diff(&q1, &r1)).max(max_abs_diff(&q0, &r0));
    }
    out
}

pub const ORACLE_FIXTURES: u64 = 200;

pub fn check_oracles(fixtures: u64) -> Outcome {
    let d = oracle_diffs(fixtures);
    Outcome {
        pass: d.max() <= 1e-12 && d.discrete_mismatches == 0,
        detail: format!(
            "{fixtures} fixtures; max |diff| fusion {:.1e}, propagation {:.1e}, filtering {:.1e}, prediction set {:.1e}, gains {:.1e}; mask/top-K mismatches {}",
            d.fusion, d.propagation, d.filtering, d.prediction, d.gains, d.discrete_mismatches
        ),
    }
}

// ---------------------------------------------------------------- P3

/// Random score sets; even seeds draw from a coarse grid to force ties.
pub fn score_sets(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = stream(seed, 5);
    let tied = seed % 2 == 0;
    let mut draw = |len: usize, shift: f64| -> Vec<f64> {
        (0..len)
            .map(|_| {
                let x = uniform(&mut rng) + shift;
                if tied {
                    (x * 20.0).floor() / 1000.0
                } else {
                    x / 50.0
                }
            })
            .collect()
    };
    let n_id = rng_len(seed, 0);
    let n_ood = rng_len(seed, 1);
    let shift = (seed % 7) as f64 * 0.1;
    let id = draw(n_id, shift);
    let ood = draw(n_ood, 0.0);
    (id, ood)
}

fn rng_len(seed: u64, which: u64) -> usize {
    let mut r = stream(seed, 50 + which);
    1 + (r.next_u64() % 120) as usize
}

/// Monotone maps applied to scores in [0, 1]; all strictly increasing there
/// and far from collapsing neighbouring grid values in f64.
pub fn monotone_map(idx: u64) -> impl Fn(f64) -> f64 {
    let mut rng = stream(idx, 6);
    let a = 0.5 + 4.5 * uniform(&mut rng);
    let b = uniform(&mut rng) * 10.0 - 5.0;
    let kind = idx % 5;
    move |x: f64| match kind {
        0 => a * x + b,
        1 => x * x * x + a * x,
        2 => (a * x).exp() + b,
        3 => (1.0 + a * x).ln(),
        _ => (a * (x - 0.5)).tanh() + b,
    }
}

pub struct MetricCounts {
    pub auroc_max_diff: f64,
    pub fpr_mismatches: usize,
    pub monotone_auroc_max_diff: f64,
    pub monotone_fpr_mismatches: usize,
}

pub fn metric_counts(sets: u64, maps: u64) -> MetricCounts {
    let mut out = MetricCounts {
        auroc_max_diff: 0.0,
        fpr_mismatches: 0,
        monotone_auroc_max_diff: 0.0,
        monotone_fpr_mismatches: 0,
    };
    for s in 0..sets {
        let (id, ood) = score_sets(s);
        let fast = auroc(&id, &ood).unwrap();
        out.auroc_max_diff = out.auroc_max_diff.max((fast - reference::auroc_pairwise(&id, &ood)).abs());
        let (fpr, thr) = fpr95(&id, &ood).unwrap();
        let (rfpr, rthr) = reference::fpr95_scan(&id, &ood);
        out.fpr_mismatches += (fpr != rfpr || thr != rthr) as usize;
    }
    for m in 0..maps {
        let (id, ood) = score_sets(m);
        let f = monotone_map(m);
        let id_t: Vec<f64> = id.iter().map(|&x| f(x)).collect();
        let ood_t: Vec<f64> = ood.iter().map(|&x| f(x)).collect();
        let before = auroc(&id, &ood).unwrap();
        let after = auroc(&id_t, &ood_t).unwrap();
        out.monotone_auroc_max_diff = out.monotone_auroc_max_diff.max((before - after).abs());
        let (fa, ta) = fpr95(&id, &ood).unwrap();
        let (fb, tb) = fpr95(&id_t, &ood_t).unwrap();
        out.monotone_fpr_mismatches += (fa != fb || f(ta) != tb) as usize;
    }
    out
}

pub fn check_metrics() -> Outcome {
    let m = metric_counts(1000, 100);
    Outcome {
        pass: m.auroc_max_diff <= 1e-12
            && m.fpr_mismatches == 0
            && m.monotone_auroc_max_diff <= 1e-12
            && m.monotone_fpr_mismatches == 0,
        detail: format!(
            "1000 score sets: AUROC vs pairwise max diff {:.1e}, FPR95 vs scan mismatches {}; 100 monotone maps: AUROC diff {:.1e}, FPR95 mismatches {}",
            m.auroc_max_diff, m.fpr_mismatches, m.monotone_auroc_max_diff, m.monotone_fpr_mismatches
        ),
    }
}

// ---------------------------------------------------------------- P4

pub const INVARIANT_CASES: u32 = 500;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

pub fn inv_bias_midpoint(f: &Fixture) -> Result<(), TestCaseError> {
    let mid = f.params.bias_mid();
    let texts = f.params.scale_texts(&f.text);
    for i in 0..mid.as_slice().len() {
        let b0 = f.params.bias_global.as_slice()[i];
        let b2 = f.params.bias_high.as_slice()[i];
        ensure(mid.as_slice()[i] == (b0 + b2) * 0.5, || format!("b1[{i}] is not the midpoint"))?;
        let t = [
            texts.global.as_slice()[i],
            texts.mid.as_slice()[i],
            texts.high.as_slice()[i],
        ];
        ensure((t[1] - 0.5 * (t[0] + t[2])).abs() <= 1e-12, || format!("t1[{i}] is not the midpoint"))?;
    }
    Ok(())
}

pub fn inv_probabilities(f: &Fixture) -> Result<(), TestCaseError> {
    let p = prediction(f);
    let all = std::iter::once(&p.p0).chain(&p.p_mid).chain(&p.p_high);
    for v in all {
        let s: f64 = v.iter().sum();
        ensure((s - 1.0).abs() <= 1e-12, || format!("probability vector sums to {s}"))?;
        ensure(v.iter().all(|&x| (0.0..=1.0).contains(&x)), || "entry outside [0, 1]".into())?;
    }
    for agg in [&p.p1, &p.p2] {
        let s: f64 = agg.iter().sum();
        ensure(agg.iter().all(|&x| x >= 0.0), || "negative aggregate entry".into())?;
        if f.align.renormalize_aggregates {
            ensure((s - 1.0).abs() <= 1e-12, || format!("renormalized aggregate sums to {s}"))?;
        } else {
            ensure(s > 0.0 && s <= 1.0 + 1e-12, || format!("aggregate sums to {s}"))?;
        }
    }
    let pid = p.p_id();
    ensure(pid.iter().sum::<f64>() <= 1.0 + 1e-12, || "p_id mass above 1".into())
}

pub fn inv_entropy_bounds(f: &Fixture) -> Result<(), TestCaseError> {
    let p = prediction(f);
    let ln_c = (f.text.num_classes() as f64).ln();
    let hs = std::iter::once(entropy(&p.p0)).chain(p.h_mid.iter().copied()).chain(p.h_high.iter().copied());
    for h in hs {
        ensure((0.0..=ln_c).contains(&h), || format!("entropy {h} outside [0, {ln_c}]"))?;
    }
    Ok(())
}

pub fn inv_gain_bounds(f: &Fixture) -> Result<(), TestCaseError> {
    let p = prediction(f);
    let ln_c = (f.text.num_classes() as f64).ln();
    for g in entropy_gain(&p) {
        ensure(g.abs() <= ln_c, || format!("entropy gain {g} outside [-ln C, ln C]"))?;
    }
    Ok(())
}

pub fn inv_masks_nonempty(f: &Fixture) -> Result<(), TestCaseError> {
    let p = prediction(f);
    ensure(p.mask_mid.iter().any(|&k| k), || "empty mid keep-mask".into())?;
    ensure(p.mask_high.iter().any(|&k| k), || "empty high keep-mask".into())
}

pub fn inv_loss_decomposition(f: &Fixture) -> Result<(), TestCaseError> {
    let lambda = [0.0, 0.5, 1.0, 2.0][(f.item.global.len() + f.k) % 4];
    let cfg = objective_for(f, lambda);
    let out = evaluate_batch(&[&f.item], &f.params, &f.text, &cfg, Decisions::Fresh { seed: 1 }, false)
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    let l = out.loss;
    ensure(l.total == l.l_id + lambda * l.l_ood, || "total != l_id + lambda l_ood".into())?;
    let ce: f64 = l.per_scale_ce.iter().sum();
    let ne: f64 = l.per_scale_neg_entropy.iter().sum();
    ensure((ce - l.l_id).abs() <= 1e-12, || format!("CE terms sum to {ce}, l_id {}", l.l_id))?;
    ensure((ne - l.l_ood).abs() <= 1e-12, || format!("entropy terms sum to {ne}, l_ood {}", l.l_ood))?;
    ensure(l.per_scale_ce.iter().all(|&c| c >= 0.0), || "negative cross-entropy".into())?;
    ensure(l.l_ood <= 0.0, || "positive l_ood".into())
}

pub fn inv_argmax_scale_invariance(f: &Fixture) -> Result<(), TestCaseError> {
    let base = prediction(f);
    let alpha = 0.25 + (f.item.id.len() % 7) as f64;
    let scaled = Fixture {
        item: f.item.scaled(alpha),
        ..f.clone()
    };
    let p = prediction(&scaled);
    let am = |v: &[f64]| scaleood::detector::argmax(v);
    ensure(am(&base.p0) == am(&p.p0), || "p0 argmax changed under scaling".into())?;
    // Compare with a margin: near-ties may legitimately swap under rounding.
    let pid_a = base.p_id();
    let pid_b = p.p_id();
    let mut sorted = pid_a.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted.len() < 2 || sorted[0] - sorted[1] > 1e-9 {
        ensure(am(&pid_a) == am(&pid_b), || "p_id argmax changed under scaling".into())?;
    }
    Ok(())
}

pub type Invariant = fn(&Fixture) -> Result<(), TestCaseError>;

pub const INVARIANTS: [(&str, Invariant); 7] = [
    ("b1 midpoint identity", inv_bias_midpoint),
    ("probability normalization", inv_probabilities),
    ("entropy bounds", inv_entropy_bounds),
    ("entropy-gain bounds", inv_gain_bounds),
    ("nonempty keep-masks", inv_masks_nonempty),
    ("loss decomposition", inv_loss_decomposition),
    ("argmax scale invariance", inv_argmax_scale_invariance),
];

pub fn run_invariant(inv: Invariant, cases: u32) -> Result<(), String> {
    let mut runner = TestRunner::new(PropConfig {
        cases,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner
        .run(&fixture_strategy(), |f| inv(&f))
        .map_err(|e| e.to_string())
}

pub fn check_invariants(cases: u32) -> Outcome {
    let mut failed = Vec::new();
    for (name, inv) in INVARIANTS {
        if let Err(e) = run_invariant(inv, cases) {
            failed.push(format!("{name}: {e}"));
        }
    }
    Outcome {
        pass: failed.is_empty(),
        detail: if failed.is_empty() {
            format!("{} invariants x {cases} cases", INVARIANTS.len())
        } else {
            failed.join("; ")
        },
    }
}

// ---------------------------------------------------------------- P5 / P6

pub const BENCHMARK_SEED: u64 = 0;
pub const BENCHMARK_EPOCHS: usize = 20;
pub const TRAIN_PER_CLASS: usize = 50;

pub fn benchmark_split(seed: u64) -> (Bundle<f64>, Bundle<f64>) {
    let out = generate_synthetic(&SyntheticSpec::benchmark(), seed).expect("benchmark spec is valid");
    out.bundle.split_per_class(TRAIN_PER_CLASS)
}

pub fn benchmark_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: BENCHMARK_EPOCHS,
        seed,
        ..TrainConfig::default()
    }
}

pub struct EndToEnd {
    pub first_loss: f64,
    pub final_loss: f64,
    pub acc: f64,
    pub auroc_zero: f64,
    pub auroc_trained: f64,
    pub secs: f64,
}

pub fn end_to_end(seed: u64) -> EndToEnd {
    let start = Instant::now();
    let (train_set, test_set) = benchmark_split(seed);
    let cfg = benchmark_config(seed);
    let obj = cfg.objective();
    let zero = ModelParams::zeros(train_set.d, train_set.num_classes());
    let (r0, _) = evaluate(&test_set.items, &zero, &test_set.text, &obj).unwrap();
    let outcome = train(&train_set, cfg).unwrap();
    let (r1, _) = evaluate(&test_set.items, &outcome.checkpoint.params, &test_set.text, &obj).unwrap();
    EndToEnd {
        first_loss: outcome.log[0].total,
        final_loss: outcome.log.last().unwrap().total,
        acc: r1.acc,
        auroc_zero: r0.auroc.unwrap(),
        auroc_trained: r1.auroc.unwrap(),
        secs: start.elapsed().as_secs_f64(),
    }
}

pub fn check_end_to_end() -> Outcome {
    let e = end_to_end(BENCHMARK_SEED);
    let gain = e.auroc_trained - e.auroc_zero;
    Outcome {
        pass: e.final_loss < e.first_loss && e.acc >= 0.95 && gain >= 0.05 && e.secs < 300.0,
        detail: format!(
            "loss {:.4} -> {:.4}; ID acc {:.4}; AUROC {:.4} -> {:.4} (gain {gain:+.4}); {:.1}s",
            e.first_loss, e.final_loss, e.acc, e.auroc_zero, e.auroc_trained, e.secs
        ),
    }
}

pub const ABLATION_SEEDS: u64 = 5;

/// Mean test AUROC over seeds for the full method and the three ablations
/// (no OOD loss, random selection, no lower-scale propagation).
pub fn ablation_means(seeds: u64) -> [f64; 4] {
    let mut sums = [0.0; 4];
    for seed in 0..seeds {
        let (train_set, test_set) = benchmark_split(seed);
        for (v, sum) in sums.iter_mut().enumerate() {
            let mut cfg = benchmark_config(seed);
            match v {
                1 => cfg.ablations.disable_ood_loss = true,
                2 => cfg.ablations.disable_entropy_gain_selection = true,
                3 => cfg.ablations.disable_lower_scale_propagation = true,
                _ => {}
            }
            let obj = cfg.objective();
            let o = train(&train_set, cfg).unwrap();
            let (r, _) = evaluate(&test_set.items, &o.checkpoint.params, &test_set.text, &obj).unwrap();
            *sum += r.auroc.unwrap();
        }
    }
    sums.map(|s| s / seeds as f64)
}

pub fn check_ablations() -> Outcome {
    let [full, no_ood, random, no_prop] = ablation_means(ABLATION_SEEDS);
    let ok = |a: f64| a <= full + 0.01;
    Outcome {
        pass: ok(no_ood) && ok(random) && ok(no_prop),
        detail: format!(
            "mean AUROC over {ABLATION_SEEDS} seeds: full {full:.4}, no L_OOD {no_ood:.4}, random selection {random:.4}, no propagation {no_prop:.4}"
        ),
    }
}

// ---------------------------------------------------------------- P7

pub fn small_bundle(seed: u64) -> Bundle<f64> {
    let spec = SyntheticSpec {
        id_per_class: 12,
        ood_count: 0,
        ..SyntheticSpec::benchmark()
    };
    generate_synthetic(&spec, seed).unwrap().bundle
}

pub fn determinism_and_resume() -> (bool, bool) {
    let bundle = small_bundle(3);
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 10,
        seed: 11,
        ..TrainConfig::default()
    };
    let a = train(&bundle, cfg.clone()).unwrap().checkpoint.to_bytes();
    let b = train(&bundle, cfg.clone()).unwrap().checkpoint.to_bytes();
    let identical = a == b;

    let mut first = Trainer::new(&bundle, cfg).unwrap();
    first.run(Some(2)).unwrap();
    let saved = first.checkpoint().to_bytes();
    let restored = Checkpoint::from_bytes(&saved).unwrap();
    let mut second = Trainer::resume(&bundle, restored).unwrap();
    second.run(None).unwrap();
    (identical, second.checkpoint().to_bytes() == a)
}

pub fn check_determinism() -> Outcome {
    let (identical, resumed) = determinism_and_resume();
    Outcome {
        pass: identical && resumed,
        detail: format!("same-seed checkpoints bitwise identical: {identical}; resume after 2 of 6 epochs equals straight run: {resumed}"),
    }
}

/// Random bytes helper for corruption tests.
pub fn random_bytes(seed: u64, len: usize) -> Vec<u8> {
    let mut rng = stream(seed, 8);
    let mut v = vec![0u8; len];
    rng.fill_bytes(&mut v);
    v
}
