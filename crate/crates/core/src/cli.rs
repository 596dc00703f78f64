//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error or missing/unreadable file,
//! 2 malformed configuration, 3 numeric check failed (gradient tolerance,
//! accuracy target, divergence or non-finite values).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::agreement;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::pipeline::evaluate::{evaluate, EvalOptions};
use crate::pipeline::infer::{inference_langevin, infer};
use crate::pipeline::pretrain::{pretrain_base, FrozenModels};
use crate::pipeline::task::{parse_question, Dataset};
use crate::pipeline::train::{init_head, train};
use crate::pipeline::TrainableHead;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Number of random cases run by `gradcheck`.
pub const GRADCHECK_CASES: usize = 32;

#[derive(Parser, Debug)]
#[command(name = "thoughtcal", version, about = "Energy-based calibration of latent thoughts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the default configuration.
    InitConfig {
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the train, held-out and probe questions.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain and freeze the base; the assistant is written next to it.
    PretrainBase {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the projection and energy network; streams one JSON record per step.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate on the held-out questions and write a line-delimited report.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_chains: Option<usize>,
        #[arg(long)]
        decode_temperature: Option<f64>,
        /// Skip Langevin calibration (projection-only ablation).
        #[arg(long)]
        no_ebm: bool,
    },
    /// Check closed-form, reverse-mode and finite-difference chain gradients.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Answer one question, printing the calibration energy trace.
    Demo {
        #[arg(long)]
        question: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        head: PathBuf,
    },
}

/// Path of the assistant checkpoint stored alongside a base checkpoint.
pub fn assistant_path(base: &Path) -> PathBuf {
    base.with_extension("assistant.ckpt")
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::NumericCheck(_) | Error::NonFinite { .. } | Error::NonFiniteStep { .. } | Error::Divergence { .. } => {
            EXIT_NUMERIC
        }
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    match run(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            RunConfig::from_json(&text)
        }
        None => Ok(RunConfig::default()),
    }
}

fn load_models(cfg: &RunConfig, base: &Path) -> Result<FrozenModels> {
    FrozenModels::from_params(cfg, ParamSet::load(base)?, ParamSet::load(assistant_path(base))?)
}

fn load_head(cfg: &RunConfig, path: &Path) -> Result<TrainableHead> {
    TrainableHead::from_params(cfg.energy_config(), cfg.model.d_asst, ParamSet::load(path)?)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn line(out: &mut dyn Write, text: &str) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

pub fn run(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match command {
        Command::InitConfig { out: path } => {
            let text = RunConfig::default().to_json()?;
            match path {
                Some(p) => write_file(&p, &text)?,
                None => out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))?,
            }
            Ok(EXIT_OK)
        }
        Command::GenData { config, out: path } => {
            let cfg = load_config(Some(&config))?;
            let ds = Dataset::generate(&cfg.task)?;
            ds.save(&path)?;
            line(
                out,
                &serde_json::json!({
                    "train": ds.train.len(),
                    "heldout": ds.heldout.len(),
                    "probe": ds.probe.len(),
                })
                .to_string(),
            )?;
            Ok(EXIT_OK)
        }
        Command::PretrainBase { config, data, out: path } => {
            let cfg = load_config(Some(&config))?;
            let ds = Dataset::load(&data)?;
            let mut sink = Ok(());
            let outcome = pretrain_base(&cfg, &ds.train, &ds.probe, |r| {
                if sink.is_ok() {
                    sink = serde_json::to_string(r).map_err(Error::from).and_then(|s| line(out, &s));
                }
            })?;
            sink?;
            outcome.models.base.params().save(&path)?;
            outcome.models.assistant.params().save(assistant_path(&path))?;
            if !outcome.target_met {
                let last = outcome.curve.last().map_or(0.0, |r| r.probe_accuracy);
                let _ = writeln!(
                    err,
                    "probe accuracy {last:.3} below target {} after {} epochs",
                    cfg.train.pretrain_target_accuracy,
                    outcome.curve.len()
                );
                return Ok(EXIT_NUMERIC);
            }
            Ok(EXIT_OK)
        }
        Command::Train {
            config,
            data,
            base,
            out: path,
        } => {
            let cfg = load_config(Some(&config))?;
            let ds = Dataset::load(&data)?;
            let models = load_models(&cfg, &base)?;
            let before = models.digests()?;
            let mut head = init_head(&cfg, &models)?;
            let mut sink = Ok(());
            train(&models, &mut head, &ds.train, &cfg, |r| {
                if sink.is_ok() {
                    sink = serde_json::to_string(r).map_err(Error::from).and_then(|s| line(out, &s));
                }
            })?;
            sink?;
            if models.digests()? != before {
                return Err(Error::NumericCheck("frozen models changed during training".into()));
            }
            head.to_params()?.save(&path)?;
            Ok(EXIT_OK)
        }
        Command::Eval {
            config,
            data,
            base,
            head,
            out: path,
            n_chains,
            decode_temperature,
            no_ebm,
        } => {
            let cfg = load_config(Some(&config))?;
            let ds = Dataset::load(&data)?;
            if ds.heldout.is_empty() {
                return Err(Error::invalid("dataset has no held-out questions"));
            }
            let models = load_models(&cfg, &base)?;
            let head = load_head(&cfg, &head)?;
            let mut opts = EvalOptions::from_config(&cfg);
            if let Some(n) = n_chains {
                if n == 0 {
                    return Err(Error::invalid("--n-chains must be at least 1"));
                }
                opts.n_chains = n;
            }
            if let Some(t) = decode_temperature {
                if !(t >= 0.0) || !t.is_finite() {
                    return Err(Error::invalid("--decode-temperature must be nonnegative"));
                }
                opts.decode_temperature = t;
            }
            if no_ebm {
                opts.calibration_steps = 0;
            }
            let report = evaluate(&ds.heldout, &models, &head, &cfg, &opts)?;
            write_file(&path, &report.to_jsonl()?)?;
            line(out, &serde_json::to_string(&report.summary)?)?;
            Ok(EXIT_OK)
        }
        Command::Gradcheck { config } => {
            let cfg = load_config(config.as_deref())?;
            let report = agreement::run_suite(cfg.seed(), GRADCHECK_CASES)?;
            for c in &report.cases {
                line(out, &serde_json::to_string(c)?)?;
            }
            line(
                out,
                &serde_json::json!({
                    "cases": report.cases.len(),
                    "max_closed_vs_tape": report.max_closed_vs_tape,
                    "max_closed_vs_fd": report.max_closed_vs_fd,
                    "max_tape_vs_fd": report.max_tape_vs_fd,
                    "closed_form_tolerance": agreement::CLOSED_FORM_TOLERANCE,
                    "tape_fd_tolerance": agreement::TAPE_FD_TOLERANCE,
                    "passed": report.passed,
                })
                .to_string(),
            )?;
            Ok(if report.passed { EXIT_OK } else { EXIT_NUMERIC })
        }
        Command::Demo {
            question,
            config,
            base,
            head,
        } => {
            let cfg = load_config(config.as_deref())?;
            let q = parse_question(&question, cfg.task.modulus)?;
            let models = load_models(&cfg, &base)?;
            let head = load_head(&cfg, &head)?;
            let langevin = inference_langevin(&cfg.langevin, cfg.langevin.steps, cfg.eval.inference_noise);
            let set = infer(&q.question_tokens, 0, &models, &head, &langevin, 0.0, cfg.seed())?;
            let chain = &set.chains[0];
            for (s, e) in set.energy_trace.iter().enumerate() {
                line(out, &format!("step {s}: energy {e:.6}"))?;
            }
            line(
                out,
                &serde_json::json!({
                    "question": q.question_text(),
                    "reasoning": chain.decoded.reasoning,
                    "answer": chain.decoded.answer,
                    "expected_reasoning": q.reasoning_tokens,
                    "expected_answer": q.answer_token,
                    "energy_trace": set.energy_trace,
                })
                .to_string(),
            )?;
            Ok(EXIT_OK)
        }
    }
}
