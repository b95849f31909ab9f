//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines reach stdout; exits nonzero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=3,7` runs a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use staytsc::data::preprocess::robust_range;
use staytsc::data::{
    build_dataset, detect_sensor_failure, prepare, segment_day, CableId, DaySeries, PreprocessConfig, Scenario,
    SensorStatus, Split, SplitConfig,
};
use staytsc::diagnosis::{replay_published_tables, Thresholds, Verdict};
use staytsc::math::{conv1d_forward, finite_diff_check, softmax, softmax_cross_entropy, GradCheckOptions, Mode, Tensor2};
use staytsc::model::{LstmFcn, ModelConfig};
use staytsc::pipeline::{run_pipeline, Profile, RunConfig};
use staytsc::synth::{generate, BridgeSpec, FaultKind, FaultSpec};
use staytsc::train::{score, train, LrMode, LrScheduler, TrainConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within(elapsed: Duration, budget: Duration, what: Outcome) -> Outcome {
    let t = format!("{:.1}s of {:.0}s", elapsed.as_secs_f64(), budget.as_secs_f64());
    match what {
        Ok(m) if elapsed <= budget => Ok(format!("{m}; {t}")),
        Ok(m) => Err(format!("{m}; over budget: {t}")),
        Err(m) => Err(format!("{m}; {t}")),
    }
}

fn decision_replay() -> Outcome {
    let start = Instant::now();
    let r = replay_published_tables(&Thresholds::default()).map_err(|e| e.to_string())?;
    let ids = |s: Scenario| {
        let mut v: Vec<String> = r.scenario(s).unwrap().suspects.ids().iter().map(|i| i.to_string()).collect();
        v.sort();
        v
    };
    let (f, q) = (ids(Scenario::Forces), ids(Scenario::Ratios));
    let verdict = match &r.verdict {
        Verdict::Conclusive { cable, .. } => cable.to_string(),
        v => format!("{v:?}"),
    };
    let ok = f == ["SJS11", "SJX10"] && q == ["SJ11"] && verdict == "SJS11";
    within(
        start.elapsed(),
        Duration::from_secs(1),
        check(ok, format!("forces suspects {f:?}, ratio suspects {q:?}, verdict {verdict}")),
    )
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig {
        num_classes: 3,
        conv_filters: [4, 8, 4],
        conv_kernel_widths: [8, 5, 3],
        lstm_cells: 4,
        dropout_rate: 0.8,
        input_length: 32,
        use_batch_norm: false,
        normalize_input: false,
    };
    let mut model = LstmFcn::build(cfg, 21).map_err(|e| e.to_string())?;
    // Freshly built biases are zero, which leaves whole ReLU stretches
    // exactly on the kink; move them to a generic point first.
    let mut brng = ChaCha8Rng::seed_from_u64(2);
    for b in model.blocks_mut() {
        b.bias.iter_mut().for_each(|v| *v += brng.random_range(-0.1..0.1));
    }
    let xs: Vec<Vec<f64>> = (0..6)
        .map(|i| (0..32).map(|t| (t as f64 * 0.3 + i as f64 * 0.7).sin()).collect())
        .collect();
    let batch: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
    let labels = [0, 1, 2, 0, 1, 2];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    model
        .loss_and_grads(&batch, &labels, Mode::Eval, &mut rng)
        .map_err(|e| e.to_string())?;
    let probe = model.clone();
    let mut blocks = model.blocks().to_vec();
    let report = finite_diff_check(
        &mut blocks,
        |bs| {
            let mut p = probe.clone();
            p.blocks_mut().clone_from_slice(bs);
            p.loss(&batch, &labels, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
        },
        GradCheckOptions::default(),
    );
    let err = report.max_rel_error();
    let coords: Vec<String> = report
        .blocks
        .iter()
        .map(|b| format!("{}:{}@{:.1e}", b.name, b.checked, b.max_rel_error))
        .collect();
    let enough = report.blocks.iter().zip(model.blocks()).all(|(c, b)| c.checked >= 200.min(b.num_values()));
    within(
        start.elapsed(),
        Duration::from_secs(120),
        check(
            err < 1e-4 && enough,
            format!("max relative error {err:.2e} (< 1e-4), coordinates {}", coords.join(" ")),
        ),
    )
}

fn naive_conv(x: &[Vec<f64>], w: &[Vec<Vec<f64>>], b: &[f64], k: usize) -> Vec<Vec<f64>> {
    let len = x[0].len();
    let pad = (k - 1) / 2;
    let mut out = vec![vec![0.0; len]; w.len()];
    for c in 0..w.len() {
        for t in 0..len {
            let mut s = b[c];
            for (i, xi) in x.iter().enumerate() {
                for j in 0..k {
                    let p = t as isize + j as isize - pad as isize;
                    if p >= 0 && (p as usize) < len {
                        s += w[c][i][j] * xi[p as usize];
                    }
                }
            }
            out[c][t] = s;
        }
    }
    out
}

fn convolution_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (cin, cout) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let len = rng.random_range(1..=32);
        let k = [1, 3, 5, 8][rng.random_range(0..4)];
        let x: Vec<Vec<f64>> = (0..cin).map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let w: Vec<Vec<Vec<f64>>> = (0..cout)
            .map(|_| (0..cin).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
            .collect();
        let b: Vec<f64> = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let input = Tensor2::from_vec(cin, len, x.concat()).unwrap();
        let kernels = Tensor2::from_vec(cout, cin * k, w.iter().flat_map(|r| r.concat()).collect()).unwrap();
        let got = conv1d_forward(&input, &kernels, &b, k).map_err(|e| e.to_string())?;
        let want = naive_conv(&x, &w, &b, k);
        for (g, e) in got.as_slice().iter().zip(want.concat()) {
            worst = worst.max((g - e).abs());
        }
    }
    within(
        start.elapsed(),
        Duration::from_secs(60),
        check(worst <= 1e-12, format!("1000 instances, max abs difference {worst:.2e} (<= 1e-12)")),
    )
}

fn normalization_stability() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        let n = rng.random_range(2..=20);
        let scale = 10f64.powf(rng.random_range(-3.0..=3.0));
        let mut logits: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        if i % 10 == 0 {
            logits[0] = 1e3;
            logits[n - 1] = -1e3;
        }
        let p = softmax(&logits);
        if p.iter().any(|v| !v.is_finite()) {
            return Err(format!("non-finite softmax at vector {i}"));
        }
        worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    let mut perfect = vec![-1e3; 14];
    perfect[5] = 1e3;
    let ce = softmax_cross_entropy(&perfect, 5).map_err(|e| e.to_string())?.loss;
    check(
        worst <= 1e-12 && ce < 1e-6,
        format!("max |sum - 1| {worst:.1e} over 10^4 rows (<= 1e-12), perfect-prediction loss {ce:.1e} (< 1e-6)"),
    )
}

/// One trial: rupture 0.3 on a uniformly drawn cable and a sensor failure
/// on a cable of another pair, both on the tenth day.
struct Trial {
    target: CableId,
    failed: CableId,
    verdict: Option<CableId>,
    failed_excluded: bool,
}

fn detection_trial(seed: u64) -> staytsc::Result<Trial> {
    let rate = 0.05;
    let mut spec = BridgeSpec::seven_pairs(seed, rate);
    let cables = spec.cables();
    let mut pick = ChaCha8Rng::seed_from_u64(1000 + seed);
    let target = cables[pick.random_range(0..cables.len())].clone();
    let others: Vec<CableId> = cables.iter().filter(|c| c.pair() != target.pair()).cloned().collect();
    let failed = others[pick.random_range(0..others.len())].clone();
    let onset = *spec.days.last().unwrap();
    spec.faults = vec![
        FaultSpec {
            kind: FaultKind::WireRupture { severity: 0.3 },
            target: target.clone(),
            onset,
        },
        FaultSpec {
            kind: FaultKind::SensorFailure { residual: 2.0, level: None },
            target: failed.clone(),
            onset,
        },
    ];
    let mut cfg = RunConfig::for_profile(Profile::Desk);
    cfg.sample_rate = rate;
    cfg.damage_from = Some(onset);
    cfg.preprocess.outliers.fixed = spec.force_bounds(0.5, 1.5);
    cfg.set_seed(seed);
    let res = run_pipeline(generate(&spec, &[])?, &cfg)?;
    let verdict = match &res.report.verdict {
        Verdict::Conclusive { cable, .. } => Some(cable.clone()),
        _ => None,
    };
    let excluded_in = |s: Scenario, id: String| {
        res.report
            .scenario(s)
            .is_some_and(|r| r.suspects.excluded.iter().any(|e| e.source.to_string() == id))
    };
    let failed_excluded =
        excluded_in(Scenario::Forces, failed.to_string()) && excluded_in(Scenario::Ratios, failed.pair().to_string());
    Ok(Trial {
        target,
        failed,
        verdict,
        failed_excluded,
    })
}

fn end_to_end_detection() -> Outcome {
    let start = Instant::now();
    let (mut hits, mut clean) = (0, 0);
    let mut lines = Vec::new();
    for seed in 0..10 {
        let t = detection_trial(seed).map_err(|e| format!("seed {seed}: {e}"))?;
        let v = t.verdict.as_ref().map_or("inconclusive".to_string(), |c| c.to_string());
        hits += (t.verdict.as_ref() == Some(&t.target)) as usize;
        clean += (t.failed_excluded && t.verdict.as_ref() != Some(&t.failed)) as usize;
        lines.push(format!("{seed}:{}->{v}", t.target));
        println!(
            "    seed {seed}: rupture {} failure {} verdict {v} ({:.0}s)",
            t.target,
            t.failed,
            start.elapsed().as_secs_f64()
        );
    }
    within(
        start.elapsed(),
        Duration::from_secs(3600),
        check(
            hits >= 9 && clean == 10,
            format!("correct verdict {hits}/10 (>= 9), failed cable excluded {clean}/10 (= 10)"),
        ),
    )
}

fn screening_bridge(seed: u64, days: usize) -> BridgeSpec {
    let mut s = BridgeSpec::seven_pairs(seed, 0.5);
    s.pairs.truncate(1);
    s.pairs[0].baseline = [3000.0, 3000.0];
    s.pairs[0].amplitude = 32.0;
    s.noise_std = 3.0;
    let start = NaiveDate::from_ymd_opt(2007, 1, 1).unwrap();
    s.days = (0..days as u64).map(|i| start + chrono::Days::new(i)).collect();
    s
}

fn sensor_screening() -> Outcome {
    let cable: CableId = "SJS08".parse().unwrap();
    let of_cable = |v: Vec<DaySeries>| -> Vec<DaySeries> { v.into_iter().filter(|d| d.source == cable.clone().into()).collect() };
    let history: Vec<f64> = of_cable(generate(&screening_bridge(1, 10), &[]).map_err(|e| e.to_string())?)
        .iter()
        .map(|d| robust_range(d).unwrap())
        .collect();
    let mut spec = screening_bridge(2, 120);
    spec.faults.push(FaultSpec {
        kind: FaultKind::SensorFailure { residual: 2.0, level: None },
        target: cable.clone(),
        onset: spec.days[100],
    });
    let days = of_cable(generate(&spec, &[]).map_err(|e| e.to_string())?);
    let flagged = |d: &DaySeries| detect_sensor_failure(d, &history, 0.05).status == SensorStatus::Failed;
    let false_pos = days[..100].iter().filter(|d| flagged(d)).count();
    let detected = days[100..].iter().filter(|d| flagged(d)).count();
    let mean_range = days[..100].iter().map(|d| robust_range(d).unwrap()).sum::<f64>() / 100.0;
    let failed_range = days[100..].iter().map(|d| robust_range(d).unwrap()).fold(0.0, f64::max);
    check(
        false_pos == 0 && detected == 20 && (80.0..=120.0).contains(&mean_range),
        format!(
            "intact range {mean_range:.0} kN: {false_pos}/100 false positives (0); failed range <= {failed_range:.2} kN: {detected}/20 detected (20)"
        ),
    )
}

fn schedule_arithmetic() -> Outcome {
    let mut s = LrScheduler::new(1e-3, 1e-4, 2f64.powf(-1.0 / 3.0), 1, LrMode::Plateau, 0.5);
    let mut lrs = vec![s.lr()];
    for epoch in 1..=15 {
        lrs.push(s.end_epoch(epoch, 0.1));
    }
    let mut worst: f64 = 0.0;
    for (k, &lr) in lrs.iter().enumerate().take(10) {
        let want = 1e-3 * 2f64.powf(-(k as f64) / 3.0);
        worst = worst.max((lr - want).abs() / want);
    }
    let clamped = lrs[10..].iter().all(|&lr| lr == 1e-4);
    check(
        worst <= 1e-15 && clamped,
        format!(
            "k=0..9 max relative error {worst:.1e} (<= 1e-15), k>=10 exactly 1e-4: {clamped}, lr[9]={:.6e}",
            lrs[9]
        ),
    )
}

fn segmentation_arithmetic() -> Outcome {
    let mut spec = BridgeSpec::seven_pairs(5, 2.0);
    spec.days.truncate(9);
    let days = generate(&spec, &[]).map_err(|e| e.to_string())?;
    let one = segment_day(&days[0], 1600, 0, Scenario::Forces).map_err(|e| e.to_string())?;
    let day_len = days[0].len();
    let prepared = prepare(days, &PreprocessConfig::default(), None).map_err(|e| e.to_string())?;
    let forces = build_dataset(&prepared.cables, Scenario::Forces, &SplitConfig::default(), 1600).map_err(|e| e.to_string())?;
    let per_class: Vec<usize> = (0..forces.num_classes())
        .map(|c| forces.segments.iter().filter(|s| s.label == c).count())
        .collect();
    let n_forces = forces.num_classes();
    drop(forces);
    let ratios = build_dataset(&prepared.ratios, Scenario::Ratios, &SplitConfig::default(), 1600).map_err(|e| e.to_string())?;
    let ratio_per_class = ratios.class_counts(Split::Train).len();
    let ok = day_len == 172_800
        && one.len() == 108
        && one.iter().all(|s| s.values.len() == 1600)
        && per_class.iter().all(|&n| n == 972)
        && n_forces == 14
        && ratios.num_classes() == 7
        && ratio_per_class == 7
        && ratios.segments.len() == 7 * 972;
    check(
        ok,
        format!(
            "day {day_len} samples -> {} segments; per-class {:?}; {} force classes, {} ratio classes",
            one.len(),
            per_class.iter().collect::<std::collections::BTreeSet<_>>(),
            n_forces,
            ratios.num_classes()
        ),
    )
}

fn three_class_days(seed: u64, n_days: u64) -> Vec<DaySeries> {
    let mut spec = BridgeSpec::seven_pairs(seed, 0.05);
    let start = NaiveDate::from_ymd_opt(2008, 3, 1).unwrap();
    spec.days = (0..n_days).map(|i| start + chrono::Days::new(i)).collect();
    let keep = ["SJS08", "SJS10", "SJS12"];
    generate(&spec, &[])
        .unwrap()
        .into_iter()
        .filter(|d| keep.contains(&d.source.to_string().as_str()))
        .collect()
}

fn sanity_learning() -> Outcome {
    let desk = RunConfig::for_profile(Profile::Desk);
    let ds = build_dataset(&three_class_days(6, 10), Scenario::Forces, &SplitConfig::default(), 200)
        .map_err(|e| e.to_string())?;
    let model_cfg = ModelConfig {
        num_classes: 3,
        ..desk.model.clone()
    };
    let train_cfg = TrainConfig {
        epochs: 50,
        early_stop: None,
        seed: 6,
        ..desk.train.clone()
    };
    let model = LstmFcn::build(model_cfg.clone(), 6).map_err(|e| e.to_string())?;
    let out = train(model, &ds, &train_cfg).map_err(|e| e.to_string())?;
    let (xs, ys) = ds.view(Split::Train);
    let (train_acc, _, _) = score(&out.model, &xs, &ys).map_err(|e| e.to_string())?;

    let big = build_dataset(&three_class_days(7, 80), Scenario::Forces, &SplitConfig::default(), 200)
        .map_err(|e| e.to_string())?;
    let xs: Vec<&[f64]> = big.segments.iter().map(|s| s.values.as_slice()).collect();
    let ys: Vec<usize> = big.segments.iter().map(|s| s.label).collect();
    let untrained = LstmFcn::build(model_cfg, 7).map_err(|e| e.to_string())?;
    let (chance, _, _) = score(&untrained, &xs, &ys).map_err(|e| e.to_string())?;
    check(
        train_acc >= 0.95 && xs.len() >= 5000 && (chance - 1.0 / 3.0).abs() <= 0.02,
        format!(
            "training accuracy {train_acc:.3} after 50 epochs (>= 0.95); untrained {chance:.4} over {} segments (1/3 +- 0.02)",
            xs.len()
        ),
    )
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "decision replay", decision_replay),
        (2, "gradient fidelity", gradient_fidelity),
        (3, "convolution oracle", convolution_oracle),
        (4, "normalization and stability", normalization_stability),
        (5, "end-to-end detection", end_to_end_detection),
        (6, "sensor-failure screening", sensor_screening),
        (7, "schedule arithmetic", schedule_arithmetic),
        (8, "segmentation arithmetic", segmentation_arithmetic),
        (9, "sanity learning", sanity_learning),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    // libtest flags such as --nocapture are accepted and ignored
    let listing = std::env::args().any(|a| a == "--list");
    if listing {
        return;
    }
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(format!(
                "panicked: {}",
                p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
            ))
        });
        let secs = start.elapsed().as_secs_f64();
        match res {
            Ok(m) => println!("PASS criterion {n} ({name}): {m} [{secs:.1}s]"),
            Err(m) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {m} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
