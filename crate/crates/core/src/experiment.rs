//! Experiment runs driven by an [`ExperimentConfig`]: dataset loading, model
//! construction, training, artifacts and the sweep/ablation/gradcheck/energy
//! commands. The CLI is a thin layer over this module.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::DenseClassifier;
use crate::checkpoint::Checkpoint;
use crate::config::{DatasetSource, EncoderType, ExperimentConfig, ModelKind, SweepSpec};
use crate::datasets::{load_embeddings, make_splits, synthetic_clusters, EmbeddingDataset, EmbeddingFormat, Split};
use crate::energy::{curve_csv, energy_curve, find_crossover, sign_changes, EnergyConstants, EnergyPoint};
use crate::error::{Error, Result};
use crate::grad::{adjoint_gradient, parameter_shift_gradient};
use crate::head::{GradientMethod, HybridHead, ParamCounts};
use crate::noise::{NoiseModel, Shots};
use crate::rng::{self, TAG_GRADCHECK, TAG_SYNTHETIC};
use crate::trainer::{self, Classifier, EpochMetrics, Mode, TrainReport};

pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.qhd";
pub const CONFIG_FILE: &str = "config.txt";
pub const TIMING_FILE: &str = "timing.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const ENERGY_FILE: &str = "energy.csv";
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Loads and splits the dataset. Synthetic configs are fully validated
/// first; file configs are validated once the embedding width is known.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<EmbeddingDataset> {
    if cfg.dataset == DatasetSource::Synthetic {
        cfg.validate()?;
    }
    let raw = match &cfg.dataset {
        DatasetSource::Synthetic => synthetic_clusters(
            cfg.synthetic_dim,
            cfg.synthetic_per_class,
            cfg.synthetic_separation,
            rng::derive_seed(cfg.seed, &[TAG_SYNTHETIC]),
        )?,
        DatasetSource::File(path) => {
            let format = cfg.dataset_format.unwrap_or_else(|| EmbeddingFormat::from_path(path));
            load_embeddings(path, format, cfg.classes)?
        }
    };
    make_splits(raw, cfg.samples_per_class, cfg.seed)
}

pub fn build_model(cfg: &ExperimentConfig, input_dim: usize) -> Result<Box<dyn Classifier>> {
    Ok(match cfg.model {
        ModelKind::Hybrid => Box::new(HybridHead::new(cfg.head_config(input_dim), cfg.seed)?),
        ModelKind::Logistic => Box::new(DenseClassifier::logistic(input_dim)?),
        ModelKind::Mlp => Box::new(DenseClassifier::mlp(input_dim, cfg.classes, cfg.mlp_config(), cfg.seed)?),
    })
}

/// Contents of `report.json`. Deterministic for a given config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub model: String,
    pub num_params: usize,
    pub param_counts: Option<ParamCounts>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub test_acc: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub epochs: Vec<EpochMetrics>,
}

pub struct Run {
    pub report: RunReport,
    pub model: Box<dyn Classifier>,
    pub wall_seconds: f64,
}

pub fn run_training(cfg: &ExperimentConfig, mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<Run> {
    let start = std::time::Instant::now();
    let data = load_dataset(cfg)?;
    cfg.validate_with_dim(data.dim)?;
    let mut model = build_model(cfg, data.dim)?;
    let noise = match cfg.model {
        ModelKind::Hybrid => cfg.noise_model(),
        _ => NoiseModel { seed: cfg.seed, ..NoiseModel::noiseless() },
    };
    let TrainReport { model: kind, num_params, epochs, best_epoch, best_val_acc, test_acc, .. } =
        trainer::train_with_progress(model.as_mut(), &data, &cfg.train_config(), &noise, &mut on_epoch)?;
    let report = RunReport {
        config: cfg.clone(),
        seed: cfg.seed,
        model: kind,
        num_params,
        param_counts: (cfg.model == ModelKind::Hybrid).then(|| cfg.head_config(data.dim).param_counts()),
        best_epoch,
        best_val_acc,
        test_acc,
        train_size: data.split_indices(Split::Train).len(),
        val_size: data.split_indices(Split::Val).len(),
        test_size: data.split_indices(Split::Test).len(),
        epochs,
    };
    Ok(Run { report, model, wall_seconds: start.elapsed().as_secs_f64() })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn metrics_csv(epochs: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,loss,val_acc\n");
    for m in epochs {
        out.push_str(&format!("{},{:?},{:?}\n", m.epoch, m.loss, m.val_acc));
    }
    out
}

/// Writes report.json, metrics.csv, checkpoint.qhd, config.txt and
/// timing.json (wall time is kept out of the reproducible report).
pub fn write_run(dir: &Path, run: &Run) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(REPORT_FILE), serde_json::to_string_pretty(&run.report)?)?;
    write(&dir.join(METRICS_FILE), metrics_csv(&run.report.epochs))?;
    write(&dir.join(CONFIG_FILE), run.report.config.to_text())?;
    run.model.to_checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
    let timing = serde_json::json!({ "wall_seconds": run.wall_seconds, "seed": run.report.seed });
    write(&dir.join(TIMING_FILE), serde_json::to_string_pretty(&timing)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

/// Accuracy of a saved checkpoint on every split.
pub fn run_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<EvalReport> {
    let data = load_dataset(cfg)?;
    cfg.validate_with_dim(data.dim)?;
    let mut model = build_model(cfg, data.dim)?;
    model.load_checkpoint(&Checkpoint::load(checkpoint)?)?;
    model.set_mode(Mode::Eval);
    let noise = cfg.noise_model();
    let acc = |s| trainer::evaluate(model.as_ref(), &data, s, &noise, u64::MAX);
    Ok(EvalReport {
        config: cfg.clone(),
        seed: cfg.seed,
        checkpoint: checkpoint.to_path_buf(),
        train_acc: acc(Split::Train)?,
        val_acc: acc(Split::Val)?,
        test_acc: acc(Split::Test)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub directory: String,
    pub qubits: usize,
    pub learning_rate: f64,
    pub best_val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub num_params: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub qubits: usize,
    pub best_point: usize,
    pub best_val_acc: f64,
    pub test_acc: f64,
}

/// Best point per qubit count by validation accuracy (earliest on ties).
pub fn summarize(points: &[SweepPoint]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = Vec::new();
    for p in points {
        let (Some(val), Some(test)) = (p.best_val_acc, p.test_acc) else { continue };
        match rows.iter_mut().find(|r| r.qubits == p.qubits) {
            Some(r) if val > r.best_val_acc => {
                *r = SummaryRow { qubits: p.qubits, best_point: p.index, best_val_acc: val, test_acc: test }
            }
            Some(_) => {}
            None => rows.push(SummaryRow { qubits: p.qubits, best_point: p.index, best_val_acc: val, test_acc: test }),
        }
    }
    rows.sort_by_key(|r| r.qubits);
    rows
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("qubits,best_point,best_val_acc,test_acc\n");
    for r in rows {
        out.push_str(&format!("{},{},{:?},{:?}\n", r.qubits, r.best_point, r.best_val_acc, r.test_acc));
    }
    out
}

/// Runs every grid point into `out/point-NNN`. Failures are recorded and
/// the sweep continues. `jobs` bounds concurrent grid points.
pub fn run_sweep(spec: &SweepSpec, out: &Path, jobs: usize, seed: Option<u64>) -> Result<Vec<SweepPoint>> {
    let mut configs = spec.expand()?;
    if configs.is_empty() {
        return Err(Error::config("sweep grid is empty"));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (i, c) in configs.iter_mut().enumerate() {
        if let Some(s) = seed {
            c.seed = s;
        }
        c.output = out.join(format!("point-{i:03}"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let points: Vec<SweepPoint> = pool.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let mut point = SweepPoint {
                    index: i,
                    directory: format!("point-{i:03}"),
                    qubits: c.qubits,
                    learning_rate: c.learning_rate,
                    best_val_acc: None,
                    test_acc: None,
                    num_params: None,
                    error: None,
                };
                match c.validate().and_then(|_| run_training(c, |_| {})).and_then(|run| {
                    write_run(&c.output, &run)?;
                    Ok(run)
                }) {
                    Ok(run) => {
                        point.best_val_acc = Some(run.report.best_val_acc);
                        point.test_acc = Some(run.report.test_acc);
                        point.num_params = Some(run.report.num_params);
                    }
                    Err(e) => point.error = Some(e.to_string()),
                }
                point
            })
            .collect()
    });
    write(&out.join(SUMMARY_FILE), summary_csv(&summarize(&points)))?;
    let sweep = serde_json::json!({ "grid": spec.to_text(), "seed": seed, "points": points });
    write(&out.join("sweep.json"), serde_json::to_string_pretty(&sweep)?)?;
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Quantum encoder replaced by a tanh MLP with the same latent width.
    NnEncoder,
    /// Whole hybrid head replaced by an MLP over the embedding.
    NnHead,
    NoFinalLinear,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nn-encoder" => Ok(Ablation::NnEncoder),
            "nn-head" => Ok(Ablation::NnHead),
            "no-final-linear" => Ok(Ablation::NoFinalLinear),
            _ => Err(Error::Config(format!("unknown ablation '{s}' (nn-encoder, nn-head, no-final-linear)"))),
        }
    }
}

pub fn ablated_config(cfg: &ExperimentConfig, mode: Ablation) -> ExperimentConfig {
    let mut c = cfg.clone();
    match mode {
        Ablation::NnEncoder => {
            c.model = ModelKind::Hybrid;
            c.encoder = EncoderType::Neural;
        }
        Ablation::NnHead => c.model = ModelKind::Mlp,
        Ablation::NoFinalLinear => {
            c.model = ModelKind::Hybrid;
            c.final_linear = false;
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub mode: Ablation,
    pub base_params: usize,
    pub ablated_params: usize,
    pub run: RunReport,
}

pub fn run_ablation(cfg: &ExperimentConfig, mode: Ablation) -> Result<(AblationReport, Run)> {
    let ablated = ablated_config(cfg, mode);
    let dim = load_dataset(cfg)?.dim;
    let base_params = build_model(cfg, dim)?.num_params();
    let run = run_training(&ablated, |_| {})?;
    let report = AblationReport {
        mode,
        base_params,
        ablated_params: run.report.num_params,
        run: run.report.clone(),
    };
    Ok((report, run))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub num_params: usize,
    pub samples: usize,
    /// Shot noise enters the estimate with unit derivative and a frozen
    /// variance term, so the check runs at infinite shots; gate-noise
    /// trajectories are kept.
    pub shots_checked: Shots,
    /// Max |analytic - central difference| over all parameters.
    pub max_deviation: f64,
    /// Max |parameter-shift - adjoint| on the PQC, when noiseless.
    pub shift_vs_adjoint: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

/// End-to-end gradient check of the hybrid head on a few training rows.
pub fn run_gradcheck(cfg: &ExperimentConfig, samples: usize) -> Result<GradcheckReport> {
    if cfg.model != ModelKind::Hybrid {
        return Err(Error::config("field `model`: gradcheck applies to the hybrid head"));
    }
    let data = load_dataset(cfg)?;
    cfg.validate_with_dim(data.dim)?;
    let mut head = HybridHead::new(cfg.head_config(data.dim), cfg.seed)?;
    let noise = NoiseModel { shots: Shots::Infinite, ..cfg.noise_model() };
    let idx: Vec<usize> = data.split_indices(Split::Train).iter().take(samples.max(1)).copied().collect();
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| data.row(i)).collect();
    let xs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i] as usize).collect();
    let seeds: Vec<u64> = (0..idx.len() as u64).map(|s| rng::derive_seed(cfg.seed, &[TAG_GRADCHECK, s])).collect();

    let (_, grad) = head.head_gradient(&xs, &labels, &noise, &seeds)?;
    let h = 1e-5;
    let mut max_deviation: f64 = 0.0;
    for j in 0..grad.len() {
        let orig = head.params()[j];
        head.params_mut()[j] = orig + h;
        let up = head.mean_loss(&xs, &labels, &noise, &seeds)?;
        head.params_mut()[j] = orig - h;
        let dn = head.mean_loss(&xs, &labels, &noise, &seeds)?;
        head.params_mut()[j] = orig;
        max_deviation = max_deviation.max(((up - dn) / (2.0 * h) - grad[j]).abs());
    }

    let shift_vs_adjoint = if noise.has_gate_noise() {
        None
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(rng::derive_seed(cfg.seed, &[TAG_GRADCHECK, u64::MAX]));
        let latent: Vec<f64> = (0..head.circuit().latent_len()).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let ps = parameter_shift_gradient(head.circuit(), head.theta_q(), &latent, 0)?;
        let adj = adjoint_gradient(head.circuit(), head.theta_q(), &latent, 0)?;
        Some(
            ps.params
                .iter()
                .chain(&ps.latent)
                .zip(adj.params.iter().chain(&adj.latent))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    };
    let passed = max_deviation < GRADCHECK_TOLERANCE && shift_vs_adjoint.is_none_or(|d| d < 1e-8);
    Ok(GradcheckReport {
        config: cfg.clone(),
        seed: cfg.seed,
        num_params: grad.len(),
        samples: idx.len(),
        shots_checked: Shots::Infinite,
        max_deviation,
        shift_vs_adjoint,
        tolerance: GRADCHECK_TOLERANCE,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub constants: EnergyConstants,
    pub crossover: Option<usize>,
    /// Crossover if the GPU term is charged at the QPU per-qubit power.
    pub crossover_qpu_power: Option<usize>,
    pub sign_changes: usize,
    pub curve: Vec<EnergyPoint>,
}

pub fn run_energy(constants: &EnergyConstants) -> Result<EnergyReport> {
    constants.validate()?;
    let curve = energy_curve(constants);
    Ok(EnergyReport {
        constants: *constants,
        crossover: find_crossover(constants),
        crossover_qpu_power: find_crossover(&constants.with_qpu_power_on_gpu()),
        sign_changes: sign_changes(&curve),
        curve,
    })
}

pub fn write_energy(dir: &Path, report: &EnergyReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(ENERGY_FILE), curve_csv(&report.curve))?;
    write(&dir.join("energy.json"), serde_json::to_string_pretty(report)?)
}

/// Gradient method actually used for the PQC under `noise`.
pub fn effective_gradient(method: GradientMethod, noise: &NoiseModel) -> GradientMethod {
    match method {
        GradientMethod::Auto if noise.has_gate_noise() => GradientMethod::ParameterShift,
        GradientMethod::Auto => GradientMethod::Adjoint,
        m => m,
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write(path, serde_json::to_string_pretty(value)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            qubits: 3,
            encoder_qubits: 3,
            encoder_layers: 2,
            synthetic_dim: 8,
            synthetic_per_class: 40,
            samples_per_class: 20,
            epochs: 2,
            batch_size: 8,
            ..Default::default()
        }
    }

    #[test]
    fn summary_max_matches_points() {
        let p = |index, qubits, val: f64, test| SweepPoint {
            index,
            directory: String::new(),
            qubits,
            learning_rate: 0.0,
            best_val_acc: Some(val),
            test_acc: Some(test),
            num_params: None,
            error: None,
        };
        let mut failed = p(4, 4, 0.0, 0.0);
        failed.best_val_acc = None;
        let pts = vec![p(0, 4, 0.7, 0.6), p(1, 4, 0.8, 0.5), p(2, 6, 0.9, 0.9), p(3, 6, 0.9, 0.1), failed];
        let rows = summarize(&pts);
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].best_point, rows[1].best_point), (1, 2));
    }

    #[test]
    fn small_run_and_gradcheck() {
        let run = run_training(&small(), |_| {}).unwrap();
        assert_eq!(run.report.epochs.len(), 2);
        assert_eq!((run.report.train_size, run.report.val_size, run.report.test_size), (34, 6, 40));
        let g = run_gradcheck(&small(), 2).unwrap();
        assert!(g.passed, "{g:?}");
        let noisy = ExperimentConfig { error_rate_1q: 0.01, error_rate_2q: 0.05, ..small() };
        assert!(run_gradcheck(&noisy, 2).unwrap().passed);
    }

    #[test]
    fn missing_dataset_names_path() {
        let cfg = ExperimentConfig { dataset: DatasetSource::File("/nonexistent/emb.bin".into()), ..small() };
        let Err(e) = run_training(&cfg, |_| {}) else { panic!("expected failure") };
        assert!(matches!(e, Error::Io { .. }));
        assert!(e.to_string().contains("/nonexistent/emb.bin"));
    }

    #[test]
    fn ablation_parse() {
        assert_eq!("no-final-linear".parse::<Ablation>().unwrap(), Ablation::NoFinalLinear);
        assert!("none".parse::<Ablation>().is_err());
    }
}
