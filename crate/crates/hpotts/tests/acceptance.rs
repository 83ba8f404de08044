//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use hpotts::experiment::{run_experiment, BetaSource, ExperimentConfig, ExperimentOutput, Method};
use hpotts::phantom::{generate_phantom, PhantomConfig, PhantomSpec};
use hpotts::tensor::{read_grid, write_grid, GridTensor};
use hpotts_core::eval::{classification_error, match_clusters};
use hpotts_core::init::{kmeans_init, knn_init, sample_labels};
use hpotts_core::potts::{fit_beta, potts_gradient, potts_log_prob};
use hpotts_core::vb::{fit, fit_observed, ClampSet};
use hpotts_core::{
    BetaFitConfig, ImageGrid, LabelField, Mask, PriorHyperparams, ResponsibilityField, SmoothnessParams, VbConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_labels(rng: &mut ChaCha8Rng, h: usize, w: usize, k: usize) -> LabelField {
    let labels = (0..h * w).map(|_| rng.random_range(0..k)).collect();
    LabelField::new(h, w, k, labels).unwrap()
}

fn total(labels: &LabelField, beta: &[f64]) -> f64 {
    potts_log_prob(labels, &SmoothnessParams::new(beta.to_vec(), 10.0).unwrap()).unwrap().total
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let k = if case % 2 == 0 { 2 } else { 4 };
        let labels = random_labels(&mut rng, 8, 8, k);
        let beta: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..2.0)).collect();
        let g = potts_gradient(&labels, &SmoothnessParams::new(beta.clone(), 10.0).unwrap()).unwrap();
        for c in 0..k {
            let mut up = beta.clone();
            let mut down = beta.clone();
            up[c] += h;
            down[c] -= h;
            let fd = (total(&labels, &up) - total(&labels, &down)) / (2.0 * h);
            worst = worst.max((fd - g[c]).abs() / g[c].abs().max(1.0));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-6 && elapsed < Duration::from_secs(5),
        format!("max relative error {worst:.2e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn convexity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..50 {
        let labels = random_labels(&mut rng, 16, 16, 4);
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..10.0)).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..10.0)).collect();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let gap = -total(&labels, &mid) - 0.5 * (-total(&labels, &a) - total(&labels, &b));
        worst = worst.max(gap);
    }
    outcome(worst <= 1e-9, format!("largest midpoint excess {worst:.3e}"))
}

fn checkerboard(h: usize, w: usize) -> LabelField {
    LabelField::new(h, w, 2, (0..h * w).map(|i| (i / w + i % w) % 2).collect()).unwrap()
}

fn beta_degenerate_cases() -> Outcome {
    let config = BetaFitConfig::default();
    let board = fit_beta(&[checkerboard(16, 16)], &config).unwrap();
    let board_again = fit_beta(&[checkerboard(16, 16)], &config).unwrap();
    let uniform = LabelField::uniform(16, 16, 4, 2).unwrap();
    let flat = fit_beta(std::slice::from_ref(&uniform), &config).unwrap();
    let flat_again = fit_beta(&[uniform], &config).unwrap();
    let zero_ok = board.params.beta() == [0.0, 0.0];
    let cap_ok = flat.params.beta()[2] == config.beta_max;
    let deterministic = board == board_again && flat == flat_again;
    outcome(
        zero_ok && cap_ok && deterministic,
        format!("checkerboard {:?}, uniform {:?}, repeatable {deterministic}", board.params.beta(), flat.params.beta()),
    )
}

fn vb_sanity() -> Outcome {
    let start = Instant::now();
    let mut recovered = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let low = Normal::new(0.2, 0.02).unwrap();
        let high = Normal::new(0.8, 0.02).unwrap();
        let data: Vec<f64> =
            (0..1000).map(|i| if i < 500 { low.sample(&mut rng) } else { high.sample(&mut rng) }).collect();
        let image = ImageGrid::from_scalar(25, 40, data).unwrap();
        let priors = PriorHyperparams::weak_default(&image, 2).unwrap();
        let start_resp = kmeans_init(&image, 2, seed).unwrap().responsibilities;
        let result = fit(
            &image,
            &priors,
            &SmoothnessParams::zeros(2),
            &start_resp,
            &ClampSet::empty(),
            &VbConfig::default(),
        )
        .unwrap();
        let mut means: Vec<f64> = result.posterior.means().map(|m| m[0]).collect();
        means.sort_by(f64::total_cmp);
        let err = (means[0] - 0.2).abs().max((means[1] - 0.8).abs());
        worst = worst.max(err);
        if err < 0.01 {
            recovered += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        recovered == 10 && elapsed < Duration::from_secs(10),
        format!("{recovered}/10 seeds, worst hypermean error {worst:.2e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn normalization_and_clamping() -> Outcome {
    let spec = PhantomSpec::default().with_noise(0.15);
    let sources: Vec<LabelField> = (0..3).map(|s| generate_phantom(&spec, 100 + s).unwrap().truth).collect();
    let beta = fit_beta(&sources, &BetaFitConfig::default()).unwrap().params;
    let mut checked = 0usize;
    let mut bad_sums = 0usize;
    let mut bad_clamps = 0usize;
    for seed in 0..3 {
        let p = generate_phantom(&spec, seed).unwrap();
        let priors = PriorHyperparams::weak_default(&p.image, 4).unwrap();
        let labeled = sample_labels(&p.truth, 3, seed).unwrap();
        let clamps = labeled.clamps(4, p.image.len()).unwrap();
        let runs: [(ResponsibilityField, ClampSet); 2] = [
            (knn_init(&p.image, &labeled, 4).unwrap(), clamps.clone()),
            (kmeans_init(&p.image, 4, seed).unwrap().responsibilities, ClampSet::empty()),
        ];
        for (start, clamps) in runs {
            fit_observed(&p.image, &priors, &beta, &start, &clamps, &VbConfig::default(), |state| {
                checked += 1;
                for row in state.responsibilities.rows() {
                    if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                        bad_sums += 1;
                    }
                }
                for (voxel, class) in clamps.iter() {
                    let row = state.responsibilities.row(voxel);
                    if row.iter().enumerate().any(|(k, &v)| v != if k == class { 1.0 } else { 0.0 }) {
                        bad_clamps += 1;
                    }
                }
            })
            .unwrap();
        }
    }
    outcome(
        checked > 0 && bad_sums == 0 && bad_clamps == 0,
        format!("{checked} E-steps checked, {bad_sums} rows off, {bad_clamps} clamps broken"),
    )
}

fn suite(methods: Vec<Method>, beta: BetaSource) -> ExperimentConfig {
    let phantom = PhantomConfig { noise: Some(0.15), ..Default::default() };
    let mut config = ExperimentConfig::phantom(phantom, methods);
    config.beta = beta;
    config.repetitions = 10;
    config
}

fn smoothing(full: &ExperimentOutput) -> Outcome {
    let length = |m: Method| {
        let lengths = &full.table.row(m).unwrap().boundary_lengths;
        lengths.iter().sum::<usize>() as f64 / lengths.len() as f64
    };
    let (ugm, uhp) = (length(Method::Ugm), length(Method::Uhp));
    outcome(uhp < ugm, format!("mean boundary length UHP {uhp:.1} vs UGM {ugm:.1}"))
}

fn ordering(full: &ExperimentOutput, elapsed: Duration) -> Vec<(String, Outcome)> {
    let err = |m: Method| full.table.row(m).unwrap().summary.mean;
    let (ugm, sgm, uhp, shp) = (err(Method::Ugm), err(Method::Sgm), err(Method::Uhp), err(Method::Shp));
    let fast = elapsed < Duration::from_secs(300);
    vec![
        ("7a. SHP <= SGM + 0.01".into(), outcome(shp <= sgm + 0.01, format!("SHP {shp:.4}, SGM {sgm:.4}"))),
        ("7b. SGM <= UGM + 0.01".into(), outcome(sgm <= ugm + 0.01, format!("SGM {sgm:.4}, UGM {ugm:.4}"))),
        ("7c. UHP <= UGM + 0.01".into(), outcome(uhp <= ugm + 0.01, format!("UHP {uhp:.4}, UGM {ugm:.4}"))),
        ("7d. full experiment under 5 min".into(), outcome(fast, format!("{:.1} s", elapsed.as_secs_f64()))),
    ]
}

fn beta_transfer(full: &ExperimentOutput) -> Outcome {
    let fixed = run_experiment(&suite(vec![Method::Uhp], BetaSource::Fixed(0.1)), None).unwrap();
    let fitted_err = full.table.row(Method::Uhp).unwrap().summary.mean;
    let fixed_err = fixed.table.row(Method::Uhp).unwrap().summary.mean;
    outcome(
        fitted_err <= fixed_err + 0.01,
        format!("fitted beta {fitted_err:.4} vs fixed 0.1 {fixed_err:.4}"),
    )
}

fn matching_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mask = Mask::full(6, 6).unwrap();
    let mut disagreements = 0;
    for _ in 0..100 {
        let pred = random_labels(&mut rng, 6, 6, 3);
        let truth = random_labels(&mut rng, 6, 6, 3);
        let mut best = usize::MAX;
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    if a == b || b == c || a == c {
                        continue;
                    }
                    let map = [a, b, c];
                    let wrong =
                        pred.labels().iter().zip(truth.labels()).filter(|(&p, &t)| map[p] != t).count();
                    best = best.min(wrong);
                }
            }
        }
        let perm = match_clusters(&pred, &truth, &mask).unwrap();
        let got = classification_error(&perm.apply(&pred).unwrap(), &truth, &mask).unwrap();
        if got != best as f64 / 36.0 {
            disagreements += 1;
        }
    }
    outcome(disagreements == 0, format!("{disagreements}/100 disagreements"))
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let text = serde_json::json!({
        "source": {"phantom": {"noise": 0.15}, "count": 5, "seed": 1000},
        "target": {"phantom": {"noise": 0.15}},
        "methods": ["UGM", "SGM", "UHP", "SHP", "1NN"],
        "beta": "fitted",
        "repetitions": 10,
        "seed": 0
    });
    std::fs::write(&config, text.to_string()).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_hpotts"))
            .args(["experiment", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        let results = std::fs::read(out.join("results.csv")).unwrap();
        let summary = std::fs::read(out.join("summary.csv")).unwrap();
        (results, summary)
    };
    let first = run("a");
    let second = run("b");
    let rows = first.1.iter().filter(|&&b| b == b'\n').count() - 1;
    outcome(first == second && rows == 5, format!("identical {}, {rows} summary rows", first == second))
}

fn iteration_cap(full: &ExperimentOutput) -> Outcome {
    let most = full.table.rows.iter().flat_map(|r| r.iterations.iter().copied()).max().unwrap_or(0);
    outcome(most <= 30, format!("longest trace {most} iterations"))
}

fn bits(t: &GridTensor) -> Vec<u64> {
    match t {
        GridTensor::Image(x) => x.data().iter().map(|v| v.to_bits()).collect(),
        GridTensor::Resp(x) => x.values().iter().map(|v| v.to_bits()).collect(),
        GridTensor::Labels(x) => x.labels().iter().map(|&v| v as u64).chain([x.classes() as u64]).collect(),
        GridTensor::Mask(x) => x.values().iter().map(|&v| u64::from(v)).collect(),
    }
}

fn file_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut failures = 0;
    for i in 0..1000 {
        let (h, w) = (rng.random_range(1..20), rng.random_range(1..20));
        let n = h * w;
        let tensor: GridTensor = match i % 4 {
            0 => {
                let c = rng.random_range(1..4);
                let data = (0..n * c).map(|_| rng.random_range(-1e3..1e3) * 10f64.powi(rng.random_range(-300..300))).collect();
                ImageGrid::new(h, w, c, data).unwrap().into()
            }
            1 => {
                let k = rng.random_range(1..=256);
                LabelField::new(h, w, k, (0..n).map(|_| rng.random_range(0..k)).collect()).unwrap().into()
            }
            2 => {
                let k = rng.random_range(1..6);
                let mut values = Vec::with_capacity(n * k);
                for _ in 0..n {
                    let row: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
                    let s: f64 = row.iter().sum();
                    values.extend(row.iter().map(|v| v / s));
                }
                ResponsibilityField::new(h, w, k, values).unwrap().into()
            }
            _ => Mask::new(h, w, (0..n).map(|_| rng.random_bool(0.5)).collect()).unwrap().into(),
        };
        let mut buf = Vec::new();
        write_grid(&mut buf, &tensor).unwrap();
        let back = read_grid(buf.as_slice()).unwrap();
        if back.kind_name() != tensor.kind_name() || bits(&back) != bits(&tensor) || back != tensor {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("{failures}/1000 mismatches"))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        }
    }
}

fn main() -> ExitCode {
    let mut results: Vec<(String, Outcome)> = Vec::new();
    results.push(("1. gradient matches finite differences".into(), guarded(gradient_correctness)));
    results.push(("2. negative log-likelihood convex in beta".into(), guarded(convexity)));
    results.push(("3. beta fit degenerate cases".into(), guarded(beta_degenerate_cases)));
    results.push(("4. zero-beta VB recovers two Gaussians".into(), guarded(vb_sanity)));
    results.push(("5. E-step normalization and clamping".into(), guarded(normalization_and_clamping)));

    let start = Instant::now();
    let full = panic::catch_unwind(|| run_experiment(&suite(Method::ALL.to_vec(), BetaSource::Fitted), None).unwrap());
    let elapsed = start.elapsed();
    match &full {
        Ok(full) => {
            results.push(("6. Potts segmentations are smoother".into(), guarded(|| smoothing(full))));
            results.extend(ordering(full, elapsed));
            results.push(("8. fitted beta no worse than fixed 0.1".into(), guarded(|| beta_transfer(full))));
        }
        Err(_) => {
            for name in ["6. Potts segmentations are smoother", "7. method ordering", "8. fitted beta no worse than fixed 0.1"] {
                results.push((name.into(), outcome(false, "phantom experiment failed to run")));
            }
        }
    }
    results.push(("9. cluster matching agrees with brute force".into(), guarded(matching_oracle)));
    results.push(("10. experiment CLI is deterministic".into(), guarded(cli_determinism)));
    let cap = match &full {
        Ok(full) => guarded(|| iteration_cap(full)),
        Err(_) => outcome(false, "phantom experiment failed to run"),
    };
    results.push(("11. iteration cap honored".into(), cap));
    results.push(("12. grid tensor round trips".into(), guarded(file_round_trips)));

    let mut failed = 0;
    for (name, o) in &results {
        if !o.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of {} checks passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
