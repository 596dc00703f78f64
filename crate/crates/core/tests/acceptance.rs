//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test --release --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use thoughtcal::agreement::{run_suite, CLOSED_FORM_TOLERANCE, TAPE_FD_TOLERANCE};
use thoughtcal::energy::{logits_to_energies, residual_reweight};
use thoughtcal::eval::{consistency_rate, EvalReport};
use thoughtcal::langevin::calibrate;
use thoughtcal::losses::{consistency_loss, ebm_loss_batch, hinge_loss, total_loss, EbmPair};
use thoughtcal::pipeline::{evaluate, init_head, pretrain_base, train, Dataset, EvalOptions, FrozenModels, StepRecord};
use thoughtcal::rng::{stream_rng, Stream};
use thoughtcal::{Context, HingeOrientation, LangevinConfig, LossConfig, QuadraticEnergy, RunConfig, Tensor, ThoughtBlock};

struct Outcome {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn outcome(id: usize, name: &'static str, passed: bool, detail: String) -> Outcome {
    Outcome {
        id,
        name,
        passed,
        detail,
    }
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let report = run_suite(0, 32).expect("agreement suite");
    let elapsed = start.elapsed();
    let in_range = report
        .cases
        .iter()
        .all(|c| c.latent_dim <= 6 && c.hidden.iter().all(|&h| h <= 8) && (1..=3).contains(&c.steps));
    let passed = report.passed && in_range && report.cases.len() >= 32 && elapsed < Duration::from_secs(120);
    outcome(
        1,
        "gradient fidelity",
        passed,
        format!(
            "{} cases, closed-vs-tape {:.2e}, closed-vs-fd {:.2e} (tol {CLOSED_FORM_TOLERANCE:.0e}), tape-vs-fd {:.2e} (tol {TAPE_FD_TOLERANCE:.0e}), {:.2}s",
            report.cases.len(),
            report.max_closed_vs_tape,
            report.max_closed_vs_fd,
            report.max_tape_vs_fd,
            elapsed.as_secs_f64()
        ),
    )
}

fn langevin_stationarity() -> Outcome {
    let eta = 0.05;
    let (burn_in, steps) = (2_000, 20_000);
    let (rows, cols) = (16, 16);
    let e = QuadraticEnergy::new(1.0);
    let cfg = LangevinConfig::new(eta, burn_in + steps, true);
    let init = ThoughtBlock::new(Tensor::zeros(&[rows, cols])).unwrap();
    let mut rng = stream_rng(0, Stream::Langevin, 0);
    let traj = calibrate(&e, &Context::empty(), &init, &cfg, &mut rng).expect("chain");
    let n = (rows * cols) as f64;
    let kept = &traj.states()[burn_in + 1..];
    let mut sum = vec![0.0; rows * cols];
    let mut sq = vec![0.0; rows * cols];
    for s in kept {
        for (i, &x) in s.tensor().data().iter().enumerate() {
            sum[i] += x;
            sq[i] += x * x;
        }
    }
    let m = kept.len() as f64;
    let per_coord: Vec<f64> = sum.iter().zip(&sq).map(|(s, q)| q / m - (s / m).powi(2)).collect();
    let var = per_coord.iter().sum::<f64>() / n;
    let target = 1.0 / (1.0 - eta / 2.0);
    let rel = (var - target).abs() / target;
    outcome(
        2,
        "Langevin stationarity",
        rel <= 0.03,
        format!(
            "mean per-coordinate variance {var:.5} over {} coordinates x {} steps, target {target:.5}, rel dev {:.3}%",
            rows * cols,
            kept.len(),
            rel * 100.0
        ),
    )
}

fn deterministic_contraction() -> Outcome {
    let e = QuadraticEnergy::new(1.0);
    let cfg = LangevinConfig::new(0.1, 3, false);
    let init = ThoughtBlock::new(Tensor::new(vec![1, 1], vec![4.0]).unwrap()).unwrap();
    let mut rng = stream_rng(0, Stream::Langevin, 0);
    let traj = calibrate(&e, &Context::empty(), &init, &cfg, &mut rng).expect("chain");
    let last = traj.last().tensor().data()[0];
    let decreasing = traj.energies().windows(2).all(|w| w[1] < w[0]);
    outcome(
        3,
        "deterministic contraction",
        (last - 2.916).abs() <= 1e-12 && decreasing,
        format!("final {last:.15}, energies {:?}", traj.energies()),
    )
}

fn loss_unit_values() -> Outcome {
    let bits = |a: f64, b: f64| a.to_bits() == b.to_bits();
    let zero = Tensor::zeros(&[2]);
    let diff = Tensor::vector(vec![3.0, 4.0]);
    let one = Tensor::zeros(&[1]);
    let cfg0 = LossConfig {
        margin: 0.0,
        lambda: 0.0,
        ..LossConfig::default()
    };
    let pair = |e_raw: f64| EbmPair {
        e_raw,
        e_cal: 0.0,
        l_raw: &one,
        l_cal: &one,
    };
    let single = EbmPair {
        e_raw: 0.5,
        e_cal: 0.2,
        l_raw: &zero,
        l_cal: &diff,
    };
    let cfg = LossConfig::default();
    let checks = [
        ("hinge 0.5,0.2,m=0", bits(hinge_loss(0.5, 0.2, 0.0, HingeOrientation::Paper), 0.3)),
        ("hinge inactive", bits(hinge_loss(0.2, 0.9, 0.5, HingeOrientation::Paper), 0.0)),
        ("hinge at equality", bits(hinge_loss(0.4, 0.4, 1.0, HingeOrientation::Paper), 1.0)),
        ("consistency [3,4]", bits(consistency_loss(&diff, &zero, 0.1).unwrap(), 2.5)),
        ("consistency identical", bits(consistency_loss(&diff, &diff, 0.1).unwrap(), 0.0)),
        ("consistency lambda 0", bits(consistency_loss(&diff, &zero, 0.0).unwrap(), 0.0)),
        (
            "batch singleton",
            bits(
                ebm_loss_batch(&[single.clone()], &cfg).unwrap(),
                hinge_loss(0.5, 0.2, cfg.margin, cfg.hinge_orientation) + consistency_loss(&diff, &zero, cfg.lambda).unwrap(),
            ),
        ),
        ("batch mean", bits(ebm_loss_batch(&[pair(1.0), pair(3.0)], &cfg0).unwrap(), 2.0)),
        ("batch permuted", bits(ebm_loss_batch(&[pair(3.0), pair(1.0)], &cfg0).unwrap(), 2.0)),
        ("total", bits(total_loss(2.0, 0.5, 0.1), 2.05)),
        ("total alpha 0", bits(total_loss(2.0, 0.5, 0.0), 2.0)),
        ("total ebm 0", bits(total_loss(2.0, 0.0, 0.7), 2.0)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        4,
        "loss unit values",
        failed.is_empty(),
        format!("{} examples bitwise, failed: {failed:?}", checks.len()),
    )
}

fn metric_reproduction() -> Outcome {
    let a = consistency_rate(85.26, 90.48).unwrap();
    let b = consistency_rate(81.03, 90.63).unwrap();
    outcome(
        5,
        "metric reproduction",
        (a - 94.23).abs() <= 0.01 && (b - 89.41).abs() <= 0.01,
        format!("consistency_rate(85.26, 90.48) = {a:.4}, consistency_rate(81.03, 90.63) = {b:.4}"),
    )
}

fn residual_properties() -> Outcome {
    let mut rng = stream_rng(0, Stream::Data, 1 << 40);
    let mut worst_sum = 0.0f64;
    let mut worst_identity = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=16);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-3..1.0)).collect();
        let total: f64 = w.iter().sum();
        let base: Vec<f64> = w.iter().map(|x| x / total).collect();
        let energies: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let t = rng.gen_range(0.1..10.0);
        let p = residual_reweight(&base, &energies, t).unwrap();
        worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());

        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let uniform = vec![1.0 / n as f64; n];
        let boltzmann = residual_reweight(&uniform, &logits_to_energies(&logits).unwrap(), 1.0).unwrap();
        let softmax = Tensor::vector(logits).softmax_last();
        for (a, b) in boltzmann.iter().zip(softmax.data()) {
            worst_identity = worst_identity.max((a - b).abs());
        }
    }
    let hot = residual_reweight(&[0.5, 0.5], &[0.0, 1.0], 1e6).unwrap();
    let tv = 0.5 * hot.iter().map(|q| (q - 0.5).abs()).sum::<f64>();
    outcome(
        9,
        "residual-model properties",
        worst_sum <= 1e-12 && worst_identity <= 1e-12 && tv < 1e-4,
        format!("max |sum-1| {worst_sum:.1e}, T=1e6 TV {tv:.1e}, max softmax/Boltzmann gap {worst_identity:.1e}"),
    )
}

struct FullRun {
    seed: u64,
    target_met: bool,
    pretrain_epochs: usize,
    probe_accuracy: f64,
    frozen_before: (String, String),
    frozen_after: (String, String),
    steps: Vec<StepRecord>,
    calibrated: EvalReport,
    ablation: EvalReport,
    elapsed: Duration,
    models: FrozenModels,
    data: Dataset,
    cfg: RunConfig,
}

fn train_and_eval(cfg: &RunConfig, models: &FrozenModels, data: &Dataset) -> (Vec<StepRecord>, EvalReport, EvalReport) {
    let mut head = init_head(cfg, models).expect("head");
    let steps = train(models, &mut head, &data.train, cfg, |_| {}).expect("training");
    let opts = EvalOptions::from_config(cfg);
    let calibrated = evaluate(&data.heldout, models, &head, cfg, &opts).expect("eval");
    let ablation = evaluate(
        &data.heldout,
        models,
        &head,
        cfg,
        &EvalOptions {
            calibration_steps: 0,
            ..opts
        },
    )
    .expect("ablation eval");
    (steps, calibrated, ablation)
}

fn full_run(seed: u64) -> FullRun {
    let start = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.task.seed = seed;
    let data = Dataset::generate(&cfg.task).expect("dataset");
    let pre = pretrain_base(&cfg, &data.train, &data.probe, |_| {}).expect("pretraining");
    let models = pre.models;
    let frozen_before = models.digests().unwrap();
    let (steps, calibrated, ablation) = train_and_eval(&cfg, &models, &data);
    FullRun {
        seed,
        target_met: pre.target_met,
        pretrain_epochs: pre.curve.len(),
        probe_accuracy: pre.curve.last().map_or(0.0, |r| r.probe_accuracy),
        frozen_after: models.digests().unwrap(),
        frozen_before,
        steps,
        calibrated,
        ablation,
        elapsed: start.elapsed(),
        models,
        data,
        cfg,
    }
}

impl FullRun {
    fn gain(&self) -> f64 {
        self.calibrated.summary.pass1_accuracy - self.ablation.summary.pass1_accuracy
    }

    fn consistency_higher(&self) -> bool {
        match (self.calibrated.summary.consistency_rate, self.ablation.summary.consistency_rate) {
            (Some(a), Some(b)) => a > b,
            _ => false,
        }
    }

    fn margin_met(&self) -> bool {
        self.gain() >= 2.0 && self.consistency_higher()
    }

    fn describe(&self) -> String {
        let (c, a) = (&self.calibrated.summary, &self.ablation.summary);
        let first_epoch: Vec<f64> = self.steps.iter().filter(|r| r.epoch == 0).map(|r| r.l_lm).collect();
        let running = first_epoch.iter().sum::<f64>() / first_epoch.len().max(1) as f64;
        format!(
            "seed {}: pass@1 {:.2} vs {:.2} (gain {:+.2}), pass@{} {:.2} vs {:.2}, consistency {} vs {}, E(l0)>E(lS) on {:.1}% of questions, pretrain {} epochs (probe {:.3}, target met {}), first-epoch L_LM mean {:.4} vs first batch {:.4}, {:.0}s",
            self.seed,
            c.pass1_accuracy,
            a.pass1_accuracy,
            self.gain(),
            c.n_chains,
            c.pass_n_accuracy,
            a.pass_n_accuracy,
            c.consistency_rate.map_or("n/a".into(), |v| format!("{v:.2}")),
            a.consistency_rate.map_or("n/a".into(), |v| format!("{v:.2}")),
            100.0 * c.energy_gap.fraction_positive,
            self.pretrain_epochs,
            self.probe_accuracy,
            self.target_met,
            running,
            first_epoch.first().copied().unwrap_or(f64::NAN),
            self.elapsed.as_secs_f64()
        )
    }
}

fn frozen_invariance(run: &FullRun) -> Outcome {
    outcome(
        6,
        "frozen invariance",
        run.frozen_before == run.frozen_after,
        format!(
            "base {} -> {}, assistant {} -> {} after {} steps",
            &run.frozen_before.0[..16],
            &run.frozen_after.0[..16],
            &run.frozen_before.1[..16],
            &run.frozen_after.1[..16],
            run.steps.len()
        ),
    )
}

fn calibration_gain(first: &FullRun) -> (Outcome, Vec<String>) {
    let mut lines = vec![first.describe()];
    let within_budget = first.elapsed < Duration::from_secs(15 * 60);
    if first.margin_met() {
        return (
            outcome(7, "calibration gain", within_budget, format!("met on seed 0; {}", lines[0])),
            lines,
        );
    }
    let mut met = 0;
    for seed in 1..5 {
        let run = full_run(seed);
        met += usize::from(run.margin_met());
        lines.push(run.describe());
    }
    (
        outcome(
            7,
            "calibration gain",
            within_budget && met >= 3,
            format!("not met on seed 0; met on {met} of 5 seeds (need 3)"),
        ),
        lines,
    )
}

fn determinism(run: &FullRun) -> Outcome {
    let (steps, calibrated, ablation) = train_and_eval(&run.cfg, &run.models, &run.data);
    let same_reports = calibrated.to_jsonl().unwrap() == run.calibrated.to_jsonl().unwrap()
        && ablation.to_jsonl().unwrap() == run.ablation.to_jsonl().unwrap();
    let same_steps = steps == run.steps;
    outcome(
        8,
        "determinism",
        same_reports && same_steps,
        format!("metric reports identical: {same_reports}, step records identical: {same_steps}"),
    )
}

fn report(o: Outcome, results: &mut Vec<Outcome>) {
    println!(
        "[{}] criterion {}: {} | {}",
        if o.passed { "PASS" } else { "FAIL" },
        o.id,
        o.name,
        o.detail
    );
    results.push(o);
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    report(gradient_fidelity(), &mut results);
    report(langevin_stationarity(), &mut results);
    report(deterministic_contraction(), &mut results);
    report(loss_unit_values(), &mut results);
    report(metric_reproduction(), &mut results);
    let run = full_run(0);
    report(frozen_invariance(&run), &mut results);
    let (gain, lines) = calibration_gain(&run);
    for l in &lines {
        println!("    {l}");
    }
    report(gain, &mut results);
    report(determinism(&run), &mut results);
    report(residual_properties(), &mut results);

    let failed = results.iter().filter(|o| !o.passed).count();
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
