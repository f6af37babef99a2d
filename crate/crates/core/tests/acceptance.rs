//! One PASS/FAIL line per acceptance criterion; run with `--nocapture` to see
//! them. The test fails if any criterion fails.

use std::fs;
use std::time::{Duration, Instant};

use lsc::decompose::decompose;
use lsc::embedding::{EmbeddingRecord, EmbeddingStore, Stage};
use lsc::io::{self, load_dataset, write_dataset, DatasetContents, IoError, ParseReason};
use lsc::objective::{gradcheck, sim_loss, LossTerms, ScheduleConfig, ScheduleKind};
use lsc::probe::{probe_accuracy, BongardSample, Context, Label, ProbeSpec};
use lsc::rng;
use lsc::stats::{
    chi2_sf_1dof, chi2_statistic, classify_taxonomy, compare, margin_of_error, AccuracyEstimate, BottleneckClass,
    ComparisonOutcome, ContingencyTable, DependenceResult, Direction, Mechanism, RowLabels,
};
use lsc::synth::{generate, oracle_predictions, SynthConfig};
use lsc::embedding::Pooling;
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    o.detail = format!("{} [{:.2?}]", o.detail, took);
    if let Some(limit) = limit {
        if took > limit {
            o.pass = false;
            o.detail = format!("{} exceeds {:?}", o.detail, limit);
        }
    }
    o
}

fn margin_reproduction() -> Outcome {
    let cases = [(84.0, 500, 3.2), (59.0, 500, 4.3), (52.1, 800, 3.5), (76.0, 500, 3.7), (93.6, 500, 2.1)];
    let mut bad = Vec::new();
    for (p, n, expected) in cases {
        let me = 100.0 * margin_of_error(p / 100.0, n).unwrap();
        if ((me * 10.0).round() / 10.0 - expected).abs() > 1e-9 {
            bad.push(format!("({p}, {n}) -> {me:.3}"));
        }
    }
    outcome(bad.is_empty(), format!("5 published (p, n) pairs; mismatches: {bad:?}"))
}

fn taxonomy_reproduction() -> Outcome {
    let rep = |p: f64, me: f64| AccuracyEstimate::from_reported("x", p / 100.0, me / 100.0, 500).unwrap();
    let pixtral = classify_taxonomy(&rep(84.2, 3.2), &rep(76.0, 3.7), &rep(88.0, 2.8)).unwrap();
    let qwen = classify_taxonomy(&rep(93.6, 2.1), &rep(86.8, 3.0), &rep(74.8, 3.8)).unwrap();
    let gemma_final = AccuracyEstimate::from_proportion("x", 0.5, 500).unwrap();
    let gemma_vs_lsc = compare(&rep(93.2, 2.2), &rep(88.6, 2.8));
    let gemma = classify_taxonomy(&rep(93.2, 2.2), &rep(88.6, 2.8), &gemma_final).unwrap();
    let pass = pixtral.mechanism() == Some(Mechanism::RepresentationRefinement)
        && qwen.mechanism() == Some(Mechanism::PostRepresentationReasoning)
        && gemma_vs_lsc == ComparisonOutcome::Indistinguishable
        && gemma.bottleneck_class() == BottleneckClass::LinearReasoningBottleneck;
    outcome(
        pass,
        format!("Pixtral CoT: {pixtral}; Qwen2.5-VL 72B: {qwen}; Gemma3 27B direct vs LSC: {} ({gemma})", gemma_vs_lsc.as_str()),
    )
}

fn probe_oracle_equivalence() -> Outcome {
    let mut mismatched = 0usize;
    let mut datasets = 0;
    let mut samples = 0;
    for seed in 1..=20u64 {
        for dim in [8usize, 64] {
            let ds = generate(&SynthConfig::new(seed, dim, 500, 2.0)).unwrap();
            for stage in Stage::ALL {
                let run = probe_accuracy(&ds.store, &ds.samples, ProbeSpec::new(stage, Context::Batched, Pooling::Mean))
                    .unwrap();
                let oracle = oracle_predictions(&ds.store, &ds.samples, stage);
                let mut sorted = oracle.clone();
                sorted.sort_by(|a, b| a.0.cmp(&b.0));
                mismatched += run
                    .results
                    .iter()
                    .zip(&sorted)
                    .filter(|(r, (id, o))| r.sample_id != *id || Some(r.predicted) != *o)
                    .count();
                let oracle_acc = ds.oracle_accuracy(stage);
                if run.estimate.p_hat != oracle_acc {
                    mismatched += 1;
                }
                samples += ds.samples.len();
            }
            datasets += 1;
        }
    }
    outcome(
        mismatched == 0,
        format!("{datasets} datasets (seeds 1-20 x dims 8, 64), {samples} stage-sample decisions, {mismatched} mismatched"),
    )
}

fn gradient_correctness() -> Outcome {
    let report = gradcheck::run(100, 2024, 1e-5, 1e-5, 0.07).unwrap();
    outcome(
        report.passed() && report.max_relative_error < 1e-5,
        format!(
            "100 instances, max relative error {:.3e} (trial {})",
            report.max_relative_error, report.worst_trial
        ),
    )
}

fn chi_squared_correctness() -> Outcome {
    let mut r = rng::stream(99, &[]);
    let mut worst = 0.0f64;
    let mut flip_failures = 0;
    let mut directional = 0;
    for i in 0..1000 {
        // half the tables carry planted dependence so that most have a direction
        let n = 20 + (rng::uniform(&mut r) * 480.0) as u64;
        let agree = if i % 2 == 0 { 0.5 } else { 0.1 + 0.8 * rng::uniform(&mut r) };
        let mut cells = [0u64; 4];
        for _ in 0..n {
            let p = rng::uniform(&mut r) < 0.5;
            let g = if rng::uniform(&mut r) < agree { p } else { !p };
            cells[(!p as usize) * 2 + (!g as usize)] += 1;
        }
        let t = ContingencyTable::new(cells[0], cells[1], cells[2], cells[3]);
        let base = DependenceResult::from_table(t, false);
        if !t.is_degenerate() {
            let [[a, b], [c, d]] = t.0.map(|row| row.map(|v| v as f64));
            let nn = a + b + c + d;
            let closed = nn * (a * d - b * c).powi(2) / ((a + b) * (c + d) * (a + c) * (b + d));
            let err = (chi2_statistic(&t, false) - closed).abs() / closed.max(1.0);
            worst = worst.max(err);
        }
        for swapped in [t.swap_rows(), t.swap_cols()] {
            let s = DependenceResult::from_table(swapped, false);
            let expected = match base.direction {
                Direction::Positive => Direction::Inverse,
                Direction::Inverse => Direction::Positive,
                Direction::None => Direction::None,
            };
            if s.direction != expected || s.p_value != base.p_value {
                flip_failures += 1;
            }
        }
        directional += (base.direction != Direction::None) as usize;
    }
    let p = chi2_sf_1dof(3.841);
    outcome(
        worst <= 1e-9 && (p - 0.05).abs() <= 1e-4 && flip_failures == 0,
        format!(
            "1000 tables: max statistic error {worst:.1e}; p(3.841) = {p:.6}; {directional} significant tables, {flip_failures} swap failures"
        ),
    )
}

fn schedule_curves() -> Outcome {
    let cosine = ScheduleConfig::new(ScheduleKind::Cosine, 1.6, 10_000).unwrap().curve().unwrap();
    let last = cosine.last().unwrap();
    let monotone = cosine.windows(2).all(|w| w[1].w_n >= w[0].w_n);
    let mut linear_exact = true;
    for (c, steps) in [(0.4, 7u64), (1.6, 10_000), (0.3, 3), (0.7, 1)] {
        let cfg = ScheduleConfig::new(ScheduleKind::Linear, c, steps).unwrap();
        linear_exact &= cfg.weights(steps - 1).unwrap() == (1.0, c);
    }
    outcome(
        last.w_n == 1.0 && last.w_c == 0.0 && monotone && linear_exact,
        format!(
            "cosine end (w_n, w_c) = ({}, {}), w_n monotone over 10000 steps: {monotone}; linear ends at target: {linear_exact}",
            last.w_n, last.w_c
        ),
    )
}

fn sim_loss_fixed_points() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let mut tie_err = 0.0f64;
    for s in [-1.0, -0.3, 0.0, 0.5, 1.0] {
        for y in [Label::Positive, Label::Negative] {
            tie_err = tie_err.max((sim_loss(&LossTerms::new(s, s, y)).unwrap() - ln2).abs());
        }
    }
    let saturated = sim_loss(&LossTerms::new(0.9, 0.1, Label::Positive))
        .unwrap()
        .max(sim_loss(&LossTerms::new(1.0, -1.0, Label::Positive)).unwrap());
    let wrong = sim_loss(&LossTerms::new(0.9, 0.1, Label::Negative)).unwrap();
    outcome(
        tie_err <= 1e-12 && saturated < 1e-4 && (wrong - 11.42858).abs() < 1e-4,
        format!("tie error {tie_err:.1e}; saturated {saturated:.4e}; wrong class {wrong:.6}"),
    )
}

/// Exhaustive on purpose: a new variant must get a fixture here.
fn reason_index(r: &ParseReason) -> usize {
    match r {
        ParseReason::BadMagic(_) => 0,
        ParseReason::UnsupportedVersion(_) => 1,
        ParseReason::TruncatedHeader { .. } => 2,
        ParseReason::ZeroDimension => 3,
        ParseReason::ZeroTokens => 4,
        ParseReason::TruncatedId { .. } => 5,
        ParseReason::InvalidId => 6,
        ParseReason::TruncatedPayload { .. } => 7,
        ParseReason::NonFiniteValue { .. } => 8,
        ParseReason::TrailingGarbage { .. } => 9,
    }
}
const REASONS: usize = 10;

fn determinism_and_round_trip() -> Outcome {
    let cfg = SynthConfig {
        gen_agreement: 0.5,
        gen_skill: 0.9,
        ..SynthConfig::new(8, 16, 200, 2.0)
    };
    let run = || {
        let ds = generate(&cfg).unwrap();
        let dir = TempDir::new().unwrap();
        let m = write_dataset(
            dir.path(),
            &ds.store,
            &ds.samples,
            &DatasetContents {
                dataset_name: &cfg.dataset_name,
                predictions: vec![&ds.gen_predictions],
                ..Default::default()
            },
        )
        .unwrap();
        let loaded = load_dataset(&m).unwrap();
        let exact = loaded.store == ds.store && loaded.samples == ds.samples;
        let gens: Vec<_> = loaded.predictions.values().collect();
        let labels = RowLabels {
            model: None,
            dataset: cfg.dataset_name.clone(),
            prompt: None,
        };
        let report = io::to_json(&decompose(&loaded.store, &loaded.samples, &gens, labels, false).unwrap());
        (exact, report)
    };
    let (exact_a, a) = run();
    let (exact_b, b) = run();

    // corrupt fixtures, one per parse failure
    let dir = TempDir::new().unwrap();
    let mut store = EmbeddingStore::new();
    for (id, v) in [("n", [0.0, 1.0]), ("p", [1.0, 0.0]), ("q", [1.0, 0.5])] {
        store.insert(EmbeddingRecord::from_rows(id, Stage::Vision, &[v.to_vec()]).unwrap()).unwrap();
    }
    let sample = BongardSample {
        sample_id: "s".into(),
        positives: vec!["p".into()],
        negatives: vec!["n".into()],
        query: "q".into(),
        truth: Label::Positive,
        split_tag: None,
    };
    let m = write_dataset(dir.path(), &store, &[sample], &DatasetContents { dataset_name: "toy", ..Default::default() }).unwrap();
    let file = dir.path().join("vision.lsce");
    let good = fs::read(&file).unwrap();
    let patch = |at: usize, bytes: &[u8]| {
        let mut b = good.clone();
        b[at..at + bytes.len()].copy_from_slice(bytes);
        b
    };
    let mut trailing = good.clone();
    trailing.extend(b"LSC");
    let fixtures = [
        patch(0, b"LSCF"),
        patch(4, &9u32.to_le_bytes()),
        good[..19].to_vec(),
        patch(8, &0u32.to_le_bytes()),
        patch(12, &0u32.to_le_bytes()),
        good[..20].to_vec(),
        patch(20, &[0x80]),
        good[..good.len() - 4].to_vec(),
        patch(21, &f32::NAN.to_le_bytes()),
        trailing,
    ];
    let mut hit = [false; REASONS];
    for bytes in fixtures {
        fs::write(&file, bytes).unwrap();
        if let Err(IoError::Parse { source, .. }) = load_dataset(&m) {
            hit[reason_index(&source.reason)] = true;
        }
    }
    let covered = hit.iter().filter(|h| **h).count();
    outcome(
        exact_a && exact_b && a == b && covered == REASONS,
        format!(
            "round trip bit-exact: {}; reports identical: {} ({} bytes); parse variants triggered {covered}/{REASONS}",
            exact_a && exact_b,
            a == b,
            a.len()
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: Vec<(&str, Outcome)> = vec![
        ("1 margin of error", timed(Some(Duration::from_secs(1)), margin_reproduction)),
        ("2 taxonomy", timed(None, taxonomy_reproduction)),
        ("3 probe-oracle equivalence", timed(Some(Duration::from_secs(30)), probe_oracle_equivalence)),
        ("4 gradient correctness", timed(Some(Duration::from_secs(10)), gradient_correctness)),
        ("5 chi-squared", timed(None, chi_squared_correctness)),
        ("6 schedule curves", timed(None, schedule_curves)),
        ("7 sim_loss fixed points", timed(None, sim_loss_fixed_points)),
        ("8 determinism and round trip", timed(None, determinism_and_round_trip)),
    ];
    let mut failed = Vec::new();
    for (name, o) in &criteria {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(*name);
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
