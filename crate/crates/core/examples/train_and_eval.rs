//! Small end-to-end run: pretrain the base, train the projection and energy
//! head, then evaluate with and without Langevin calibration.
//!
//! Pass a seed as the first argument. The default config takes a few
//! minutes in release mode; this example shrinks the dataset.

use thoughtcal::pipeline::{evaluate, init_head, pretrain_base, train, Dataset, EvalOptions};
use thoughtcal::{Result, RunConfig};

fn main() -> Result<()> {
    let mut cfg = RunConfig::default();
    cfg.task.seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    cfg.task.count = 600;
    cfg.task.holdout = 200;
    cfg.task.probe = 100;

    let data = Dataset::generate(&cfg.task)?;
    let pre = pretrain_base(&cfg, &data.train, &data.probe, |r| {
        println!("pretrain epoch {}: loss {:.4}, probe accuracy {:.3}", r.epoch, r.mean_loss, r.probe_accuracy)
    })?;
    let models = pre.models;

    let mut head = init_head(&cfg, &models)?;
    let steps = train(&models, &mut head, &data.train, &cfg, |_| {})?;
    let last = steps.last().expect("at least one step");
    println!("{} steps, last L_total {:.4} (L_LM {:.4}, L_EBM {:.4})", steps.len(), last.l_total, last.l_lm, last.l_ebm);

    let opts = EvalOptions::from_config(&cfg);
    let calibrated = evaluate(&data.heldout, &models, &head, &cfg, &opts)?.summary;
    let ablation = evaluate(&data.heldout, &models, &head, &cfg, &EvalOptions { calibration_steps: 0, ..opts })?.summary;
    for (name, s) in [("calibrated", &calibrated), ("projection only", &ablation)] {
        println!(
            "{name:<16} pass@1 {:.2}  pass@{} {:.2}  consistency {:?}",
            s.pass1_accuracy, s.n_chains, s.pass_n_accuracy, s.consistency_rate
        );
    }
    Ok(())
}
