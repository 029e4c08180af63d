//! Flat `key = value` experiment configuration.
//!
//! One entry per line, `#` starts a comment. A value may be a list
//! `[a, b, c]`, optionally followed by `/ d` or `* m` to scale every
//! element (so `learning_rate = [1, 1.5, 2.5, 3, 5] / 1e3`); lists are only
//! accepted by [`SweepSpec`] and expand to the Cartesian product.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ansatz::CircuitSpec;
use crate::baselines::MlpConfig;
use crate::datasets::EmbeddingFormat;
use crate::error::{Error, Result};
use crate::head::{EncoderKind, GradientMethod, HeadConfig, QuantumEncoderConfig, DEFAULT_ENCODER_LAYERS};
use crate::noise::{NoiseModel, Shots};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hybrid,
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderType {
    Quantum,
    Neural,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub encoder: EncoderType,
    pub qubits: usize,
    pub encoders: usize,
    pub encoder_qubits: usize,
    pub encoder_layers: usize,
    pub encoder_connectivity: usize,
    pub encoding_scale: bool,
    pub reuploads: usize,
    pub main_layers: usize,
    pub reupload_layers: usize,
    pub connectivity: usize,
    pub batch_size: usize,
    pub shots: Shots,
    pub final_linear: bool,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub classes: usize,
    pub epochs: usize,
    pub seed: u64,
    pub error_rate_1q: f64,
    pub error_rate_2q: f64,
    pub gradient: GradientMethod,
    pub dataset: DatasetSource,
    /// `None` picks the format from the file extension.
    pub dataset_format: Option<EmbeddingFormat>,
    pub synthetic_dim: usize,
    pub synthetic_per_class: usize,
    pub synthetic_separation: f64,
    /// Train + validation samples drawn per class; the rest is test.
    pub samples_per_class: usize,
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    pub batch_norm: bool,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Hybrid,
            encoder: EncoderType::Quantum,
            qubits: 10,
            encoders: 1,
            encoder_qubits: 10,
            encoder_layers: DEFAULT_ENCODER_LAYERS,
            encoder_connectivity: 1,
            encoding_scale: true,
            reuploads: 4,
            main_layers: 2,
            reupload_layers: 1,
            connectivity: 1,
            batch_size: 16,
            shots: Shots::Finite(8192),
            final_linear: true,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            weight_decay: 0.0,
            classes: 2,
            epochs: 800,
            seed: 0,
            error_rate_1q: 0.0,
            error_rate_2q: 0.0,
            gradient: GradientMethod::Auto,
            dataset: DatasetSource::Synthetic,
            dataset_format: None,
            synthetic_dim: 768,
            synthetic_per_class: 400,
            synthetic_separation: 10.0,
            samples_per_class: 256,
            hidden_layers: 0,
            hidden_dim: 48,
            batch_norm: false,
            output: PathBuf::from("runs"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "model",
    "encoder",
    "qubits",
    "encoders",
    "encoder_qubits",
    "encoder_layers",
    "encoder_connectivity",
    "encoding_scale",
    "reuploads",
    "main_layers",
    "reupload_layers",
    "connectivity",
    "batch_size",
    "shots",
    "final_linear",
    "learning_rate",
    "lr_decay",
    "weight_decay",
    "classes",
    "epochs",
    "seed",
    "error_rate_1q",
    "error_rate_2q",
    "gradient",
    "dataset",
    "dataset_format",
    "synthetic_dim",
    "synthetic_per_class",
    "synthetic_separation",
    "samples_per_class",
    "hidden_layers",
    "hidden_dim",
    "batch_norm",
    "output",
];

fn field_err(key: &str, value: &str, why: impl std::fmt::Display) -> Error {
    Error::Config(format!("field `{key}`: invalid value '{value}': {why}"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| field_err(key, value, e))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(field_err(key, value, "expected true/false")),
    }
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model" => {
                self.model = match value {
                    "hybrid" => ModelKind::Hybrid,
                    "logistic" => ModelKind::Logistic,
                    "mlp" => ModelKind::Mlp,
                    _ => return Err(field_err(key, value, "expected hybrid, logistic or mlp")),
                }
            }
            "encoder" => {
                self.encoder = match value {
                    "quantum" => EncoderType::Quantum,
                    "neural" => EncoderType::Neural,
                    _ => return Err(field_err(key, value, "expected quantum or neural")),
                }
            }
            "qubits" => self.qubits = num(key, value)?,
            "encoders" => self.encoders = num(key, value)?,
            "encoder_qubits" => self.encoder_qubits = num(key, value)?,
            "encoder_layers" => self.encoder_layers = num(key, value)?,
            "encoder_connectivity" => self.encoder_connectivity = num(key, value)?,
            "encoding_scale" => self.encoding_scale = boolean(key, value)?,
            "reuploads" => self.reuploads = num(key, value)?,
            "main_layers" => self.main_layers = num(key, value)?,
            "reupload_layers" => self.reupload_layers = num(key, value)?,
            "connectivity" => self.connectivity = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "shots" => self.shots = num(key, value)?,
            "final_linear" => self.final_linear = boolean(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "lr_decay" => self.lr_decay = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "classes" => self.classes = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "error_rate_1q" => self.error_rate_1q = num(key, value)?,
            "error_rate_2q" => self.error_rate_2q = num(key, value)?,
            "gradient" => {
                self.gradient = match value {
                    "auto" => GradientMethod::Auto,
                    "parameter-shift" => GradientMethod::ParameterShift,
                    "adjoint" => GradientMethod::Adjoint,
                    _ => return Err(field_err(key, value, "expected auto, parameter-shift or adjoint")),
                }
            }
            "dataset" => {
                self.dataset = match value {
                    "synthetic" => DatasetSource::Synthetic,
                    "" => return Err(field_err(key, value, "empty path")),
                    p => DatasetSource::File(PathBuf::from(p)),
                }
            }
            "dataset_format" => {
                self.dataset_format = match value {
                    "auto" => None,
                    "emb1" => Some(EmbeddingFormat::Binary),
                    "csv" => Some(EmbeddingFormat::Csv),
                    _ => return Err(field_err(key, value, "expected auto, emb1 or csv")),
                }
            }
            "synthetic_dim" => self.synthetic_dim = num(key, value)?,
            "synthetic_per_class" => self.synthetic_per_class = num(key, value)?,
            "synthetic_separation" => self.synthetic_separation = num(key, value)?,
            "samples_per_class" => self.samples_per_class = num(key, value)?,
            "hidden_layers" => self.hidden_layers = num(key, value)?,
            "hidden_dim" => self.hidden_dim = num(key, value)?,
            "batch_norm" => self.batch_norm = boolean(key, value)?,
            "output" => self.output = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown field `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "model" => match self.model {
                ModelKind::Hybrid => "hybrid",
                ModelKind::Logistic => "logistic",
                ModelKind::Mlp => "mlp",
            }
            .to_string(),
            "encoder" => match self.encoder {
                EncoderType::Quantum => "quantum",
                EncoderType::Neural => "neural",
            }
            .to_string(),
            "qubits" => self.qubits.to_string(),
            "encoders" => self.encoders.to_string(),
            "encoder_qubits" => self.encoder_qubits.to_string(),
            "encoder_layers" => self.encoder_layers.to_string(),
            "encoder_connectivity" => self.encoder_connectivity.to_string(),
            "encoding_scale" => self.encoding_scale.to_string(),
            "reuploads" => self.reuploads.to_string(),
            "main_layers" => self.main_layers.to_string(),
            "reupload_layers" => self.reupload_layers.to_string(),
            "connectivity" => self.connectivity.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "shots" => self.shots.to_string(),
            "final_linear" => self.final_linear.to_string(),
            "learning_rate" => format!("{:?}", self.learning_rate),
            "lr_decay" => format!("{:?}", self.lr_decay),
            "weight_decay" => format!("{:?}", self.weight_decay),
            "classes" => self.classes.to_string(),
            "epochs" => self.epochs.to_string(),
            "seed" => self.seed.to_string(),
            "error_rate_1q" => format!("{:?}", self.error_rate_1q),
            "error_rate_2q" => format!("{:?}", self.error_rate_2q),
            "gradient" => match self.gradient {
                GradientMethod::Auto => "auto",
                GradientMethod::ParameterShift => "parameter-shift",
                GradientMethod::Adjoint => "adjoint",
            }
            .to_string(),
            "dataset" => match &self.dataset {
                DatasetSource::Synthetic => "synthetic".to_string(),
                DatasetSource::File(p) => p.display().to_string(),
            },
            "dataset_format" => match self.dataset_format {
                None => "auto",
                Some(EmbeddingFormat::Binary) => "emb1",
                Some(EmbeddingFormat::Csv) => "csv",
            }
            .to_string(),
            "synthetic_dim" => self.synthetic_dim.to_string(),
            "synthetic_per_class" => self.synthetic_per_class.to_string(),
            "synthetic_separation" => format!("{:?}", self.synthetic_separation),
            "samples_per_class" => self.samples_per_class.to_string(),
            "hidden_layers" => self.hidden_layers.to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "batch_norm" => self.batch_norm.to_string(),
            "output" => self.output.display().to_string(),
            _ => return None,
        })
    }

    /// Parse a config with scalar values only. Unset keys keep defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let spec = SweepSpec::parse(text)?;
        if let Some((k, _)) = spec.axes.iter().find(|(_, v)| v.len() != 1) {
            return Err(Error::Config(format!("field `{k}`: lists are only allowed for sweeps")));
        }
        let mut cfg = Self::default();
        for (k, v) in &spec.axes {
            cfg.set(k, &v[0])?;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn input_dim(&self) -> usize {
        self.synthetic_dim
    }

    pub fn circuit_spec(&self) -> CircuitSpec {
        CircuitSpec {
            qubits: self.qubits,
            connectivity: self.connectivity,
            main_layers: self.main_layers,
            reupload_layers: self.reupload_layers,
            reuploads: self.reuploads,
            encode_rounds: 1,
        }
    }

    pub fn mlp_config(&self) -> MlpConfig {
        // hidden_dim is only read when there is a hidden layer
        let hidden_dim = if self.hidden_layers == 0 { 0 } else { self.hidden_dim };
        MlpConfig { hidden_layers: self.hidden_layers, hidden_dim, batch_norm: self.batch_norm }
    }

    pub fn head_config(&self, input_dim: usize) -> HeadConfig {
        let encoder = match self.encoder {
            EncoderType::Quantum => EncoderKind::Quantum(QuantumEncoderConfig {
                num_encoders: self.encoders,
                qubits: self.encoder_qubits,
                layers: self.encoder_layers,
                connectivity: self.encoder_connectivity,
                encoding_scale: self.encoding_scale,
            }),
            EncoderType::Neural => EncoderKind::Neural {
                mlp: self.mlp_config(),
                latent_dim: self.encoders * self.encoder_qubits,
            },
        };
        HeadConfig {
            input_dim,
            encoder,
            pqc: self.circuit_spec(),
            classes: self.classes,
            final_linear: self.final_linear,
            gradient: self.gradient,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            lr_decay: self.lr_decay,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel { p1q: self.error_rate_1q, p2q: self.error_rate_2q, shots: self.shots, seed: self.seed }
    }

    /// Checks every downstream constraint. `input_dim` is the embedding
    /// width when known (file datasets); synthetic runs use `synthetic_dim`.
    pub fn validate_with_dim(&self, input_dim: usize) -> Result<()> {
        if self.classes < 2 || self.classes > 256 {
            return Err(Error::Config(format!("field `classes`: {} outside 2..=256", self.classes)));
        }
        if self.samples_per_class == 0 {
            return Err(Error::config("field `samples_per_class`: must be >= 1"));
        }
        if self.dataset == DatasetSource::Synthetic {
            if self.classes != 2 {
                return Err(Error::config("field `classes`: synthetic clusters have 2 classes"));
            }
            if self.synthetic_dim == 0 {
                return Err(Error::config("field `synthetic_dim`: must be >= 1"));
            }
            if self.synthetic_per_class <= self.samples_per_class {
                return Err(Error::Config(format!(
                    "field `synthetic_per_class`: {} leaves no test samples beyond samples_per_class {}",
                    self.synthetic_per_class, self.samples_per_class
                )));
            }
            if !(self.synthetic_separation >= 0.0 && self.synthetic_separation.is_finite()) {
                return Err(Error::config("field `synthetic_separation`: must be finite and >= 0"));
            }
        }
        self.train_config().validate().map_err(tag("training"))?;
        self.noise_model().validate().map_err(tag("noise"))?;
        match self.model {
            ModelKind::Hybrid => self.head_config(input_dim).validate().map_err(tag("head")),
            ModelKind::Logistic if self.classes != 2 => {
                Err(Error::config("field `classes`: logistic regression is binary"))
            }
            ModelKind::Logistic => Ok(()),
            ModelKind::Mlp => self.mlp_config().validate().map_err(tag("hidden_layers")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_dim(self.input_dim())
    }
}

fn tag(field: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Config(m) => Error::Config(format!("{field}: {m}")),
        other => other,
    }
}

/// Parsed config where every key maps to one or more values.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axes: Vec<(String, Vec<String>)>,
}

fn parse_list(key: &str, value: &str) -> Result<Vec<String>> {
    let close = value.rfind(']').ok_or_else(|| field_err(key, value, "unterminated list"))?;
    let items: Vec<String> = value[1..close]
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(field_err(key, value, "empty list"));
    }
    let tail = value[close + 1..].trim();
    if tail.is_empty() {
        return Ok(items);
    }
    let (op, rest) = tail.split_at(1);
    let factor: f64 = rest.trim().parse().map_err(|e| field_err(key, value, e))?;
    items
        .iter()
        .map(|s| {
            let v: f64 = s.parse().map_err(|e| field_err(key, value, e))?;
            match op {
                "/" => Ok(format!("{:?}", v / factor)),
                "*" => Ok(format!("{:?}", v * factor)),
                _ => Err(field_err(key, value, "expected '/' or '*' after list")),
            }
        })
        .collect()
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut axes: Vec<(String, Vec<String>)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown field `{k}`", n + 1)));
            }
            if axes.iter().any(|(a, _)| a == k) {
                return Err(Error::Config(format!("line {}: field `{k}` given twice", n + 1)));
            }
            let values = if v.starts_with('[') { parse_list(k, v)? } else { vec![v.to_string()] };
            axes.push((k.to_string(), values));
        }
        Ok(Self { axes })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.axes {
            if v.len() == 1 {
                let _ = writeln!(out, "{k} = {}", v[0]);
            } else {
                let _ = writeln!(out, "{k} = [{}]", v.join(", "));
            }
        }
        out
    }

    pub fn num_points(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    /// Grid points in row-major order (first key varies slowest).
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>> {
        let total = self.num_points();
        let mut out = Vec::with_capacity(total);
        for point in 0..total {
            let mut cfg = ExperimentConfig::default();
            let mut rem = point;
            let mut stride = total;
            for (k, values) in &self.axes {
                stride /= values.len();
                cfg.set(k, &values[rem / stride])?;
                rem %= stride;
            }
            out.push(cfg);
        }
        Ok(out)
    }
}
