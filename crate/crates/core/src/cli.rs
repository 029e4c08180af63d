//! `qhead` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentConfig, SweepSpec};
use crate::energy::EnergyConstants;
use crate::error::{Error, Result};
use crate::experiment::{self, Ablation};

#[derive(Debug, Parser)]
#[command(name = "qhead", version, about = "Hybrid quantum classification heads on sentence embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Root seed (overrides `seed` in the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; for sweeps, concurrent grid points.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Print per-epoch metrics to stderr.
    #[arg(short, long)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write report.json, metrics.csv and checkpoint.qhd.
    Train(Common),
    /// Evaluate a checkpoint on all splits.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by `train`
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every point of a grid given with `key = [a, b]` lists.
    Sweep(Common),
    /// Train an ablated variant: nn-encoder, nn-head or no-final-linear.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// nn-encoder, nn-head or no-final-linear
        #[arg(long)]
        mode: String,
    },
    /// Compare analytic gradients of the head with central differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Training samples in the checked batch
        #[arg(long, default_value_t = 2)]
        samples: usize,
    },
    /// QPU vs GPU inference energy curve and crossover.
    Energy {
        /// Directory for energy.csv and energy.json [runs/energy]
        #[arg(long)]
        out: Option<PathBuf>,
        /// QPU power in watts [300]
        #[arg(long)]
        p_qpu: Option<f64>,
        /// Single-qubit gate time in seconds [1e-4]
        #[arg(long)]
        t_1q: Option<f64>,
        /// Two-qubit gate time in seconds [1e-5]
        #[arg(long)]
        t_2q: Option<f64>,
        /// Shots per inference [8000]
        #[arg(long)]
        shots: Option<f64>,
        /// GPU power in watts [700]
        #[arg(long)]
        p_gpu: Option<f64>,
        /// GPU throughput in FLOP/s [3.4e13]
        #[arg(long)]
        f_gpu: Option<f64>,
    },
}

/// Exit status for an error: 2 for bad configuration or input, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Format { .. } | Error::Data(_) | Error::Io { .. } | Error::Json(_) => 2,
        Error::DegenerateInput(_) | Error::UnsupportedMode(_) => 1,
    }
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output = o.clone();
    }
    Ok(cfg)
}

fn set_threads(jobs: Option<usize>) {
    if let Some(j) = jobs {
        // only the first call configures the global pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global();
    }
}

fn progress(verbose: bool) -> impl FnMut(&crate::trainer::EpochMetrics) {
    move |m| {
        if verbose {
            eprintln!("epoch {:>4}  loss {:.6}  val_acc {:.4}", m.epoch, m.loss, m.val_acc);
        }
    }
}

fn train(common: &Common) -> Result<i32> {
    let cfg = resolve(common)?;
    set_threads(common.jobs);
    let run = experiment::run_training(&cfg, progress(common.verbose))?;
    experiment::write_run(&cfg.output, &run)?;
    println!(
        "{}: {} params, best epoch {}, val_acc {:.4}, test_acc {:.4} -> {}",
        run.report.model,
        run.report.num_params,
        run.report.best_epoch,
        run.report.best_val_acc,
        run.report.test_acc,
        cfg.output.display()
    );
    Ok(0)
}

fn eval(common: &Common, checkpoint: &Path) -> Result<i32> {
    let cfg = resolve(common)?;
    set_threads(common.jobs);
    let report = experiment::run_eval(&cfg, checkpoint)?;
    experiment::write_json(&cfg.output.join("eval.json"), &report)?;
    println!(
        "train_acc {:.4}  val_acc {:.4}  test_acc {:.4}",
        report.train_acc, report.val_acc, report.test_acc
    );
    Ok(0)
}

fn sweep(common: &Common) -> Result<i32> {
    let path = common.config.as_ref().ok_or_else(|| Error::config("sweep requires --config"))?;
    let spec = SweepSpec::load(path)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("runs/sweep"));
    let points = experiment::run_sweep(&spec, &out, common.jobs.unwrap_or(1), common.seed)?;
    let failed = points.iter().filter(|p| p.error.is_some()).count();
    for p in &points {
        match &p.error {
            Some(e) => eprintln!("{}: failed: {e}", p.directory),
            None => println!(
                "{}: qubits {} lr {} val_acc {:.4} test_acc {:.4}",
                p.directory,
                p.qubits,
                p.learning_rate,
                p.best_val_acc.unwrap_or(f64::NAN),
                p.test_acc.unwrap_or(f64::NAN)
            ),
        }
    }
    println!("{} points, {failed} failed -> {}", points.len(), out.join(experiment::SUMMARY_FILE).display());
    Ok(if failed == points.len() { 1 } else { 0 })
}

fn ablate(common: &Common, mode: &str) -> Result<i32> {
    let mode: Ablation = mode.parse()?;
    let cfg = resolve(common)?;
    set_threads(common.jobs);
    let (report, run) = experiment::run_ablation(&cfg, mode)?;
    experiment::write_run(&cfg.output, &run)?;
    experiment::write_json(&cfg.output.join("ablation.json"), &report)?;
    println!(
        "{:?}: params {} -> {} ({:+}), val_acc {:.4}, test_acc {:.4}",
        mode,
        report.base_params,
        report.ablated_params,
        report.ablated_params as i64 - report.base_params as i64,
        report.run.best_val_acc,
        report.run.test_acc
    );
    Ok(0)
}

fn gradcheck(common: &Common, samples: usize) -> Result<i32> {
    let cfg = resolve(common)?;
    set_threads(common.jobs);
    let report = experiment::run_gradcheck(&cfg, samples)?;
    if common.out.is_some() {
        experiment::write_json(&cfg.output.join("gradcheck.json"), &report)?;
    }
    println!(
        "{}: max deviation {:.3e} over {} params (tolerance {:.0e}){}",
        if report.passed { "PASS" } else { "FAIL" },
        report.max_deviation,
        report.num_params,
        report.tolerance,
        report.shift_vs_adjoint.map_or(String::new(), |d| format!(", parameter-shift vs adjoint {d:.3e}"))
    );
    Ok(if report.passed { 0 } else { 1 })
}

#[allow(clippy::too_many_arguments)]
fn energy(
    out: Option<&Path>,
    p_qpu: Option<f64>,
    t_1q: Option<f64>,
    t_2q: Option<f64>,
    shots: Option<f64>,
    p_gpu: Option<f64>,
    f_gpu: Option<f64>,
) -> Result<i32> {
    let d = EnergyConstants::default();
    let c = EnergyConstants {
        p_qpu: p_qpu.unwrap_or(d.p_qpu),
        t_1q: t_1q.unwrap_or(d.t_1q),
        t_2q: t_2q.unwrap_or(d.t_2q),
        shots: shots.unwrap_or(d.shots),
        p_gpu: p_gpu.unwrap_or(d.p_gpu),
        f_gpu: f_gpu.unwrap_or(d.f_gpu),
    };
    let report = experiment::run_energy(&c)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("runs/energy"));
    experiment::write_energy(&out, &report)?;
    let show = |c: Option<usize>| c.map_or("none in 2..=60".to_string(), |q| q.to_string());
    println!("crossover: {} qubits", show(report.crossover));
    println!("crossover with P_qpu in the GPU term: {} qubits", show(report.crossover_qpu_power));
    println!("curve -> {}", out.join(experiment::ENERGY_FILE).display());
    Ok(0)
}

pub fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Train(c) => train(c),
        Command::Eval { common, checkpoint } => eval(common, checkpoint),
        Command::Sweep(c) => sweep(c),
        Command::Ablate { common, mode } => ablate(common, mode),
        Command::Gradcheck { common, samples } => gradcheck(common, *samples),
        Command::Energy { out, p_qpu, t_1q, t_2q, shots, p_gpu, f_gpu } => {
            energy(out.as_deref(), *p_qpu, *t_1q, *t_2q, *shots, *p_gpu, *f_gpu)
        }
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
