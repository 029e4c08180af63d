//! Hybrid classification head.
//!
//! Stage 1 (exact, classical): each of `E` encoders amplitude-encodes the
//! embedding on `Q_c` qubits, runs an sPQC block of `D_enc` layers and
//! reads `<Z>` on every qubit. The `E * Q_c` expectations form the latent.
//!
//! Stage 2 (QPU, noisy): the latent is angle-encoded at every ENCODE step of
//! the re-uploading PQC; encoder `e`'s slice is the `e`-th stacked RY round
//! and is multiplied by a trainable per-encoder scale. Qubit 0 is measured,
//! with optional depolarizing trajectories and shot sampling.
//!
//! Stage 3: `logits = W [latent, z_meas]` with `W` of shape
//! `k x (latent_len + 1)` and no bias. Without the final linear layer the
//! logits are `(z_meas, -z_meas)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{assemble_head_circuit, block_circuit, count_parameters, CircuitSpec, GateList};
use crate::baselines::{dense_params, Mlp, MlpConfig, OutputActivation};
use crate::checkpoint::{Checkpoint, Tensor};
use crate::error::{Error, Result};
use crate::grad::{
    adjoint_gradient, adjoint_multi, evaluate_expectation, parameter_shift_gradient, parameter_shift_multi,
    run_circuit_from, CircuitGradient,
};
use crate::noise::{sample_trajectory, shot_sample_expectation, NoiseModel};
use crate::rng::{self, TAG_INIT};
use crate::simcore::{amplitude_encode, StateVector, MAX_QUBITS};
use crate::trainer::{cross_entropy_loss, Classifier, Mode};

pub const EMBEDDING_DIM: usize = 768;
/// Encoder depth that, with the encoding scale, reproduces the reference
/// single-encoder parameter totals.
pub const DEFAULT_ENCODER_LAYERS: usize = 27;
const INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GradientMethod {
    /// Adjoint where the circuit is noiseless, parameter-shift otherwise.
    #[default]
    Auto,
    ParameterShift,
    Adjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantumEncoderConfig {
    pub num_encoders: usize,
    pub qubits: usize,
    pub layers: usize,
    pub connectivity: usize,
    /// One trainable scale per encoder applied to its latent slice at the
    /// angle-encoding steps.
    pub encoding_scale: bool,
}

impl QuantumEncoderConfig {
    pub fn new(qubits: usize) -> Self {
        Self {
            num_encoders: 1,
            qubits,
            layers: DEFAULT_ENCODER_LAYERS,
            connectivity: 1,
            encoding_scale: true,
        }
    }

    pub fn params_per_encoder(&self) -> usize {
        self.layers * self.qubits
    }

    fn validate(&self, input_dim: usize) -> Result<()> {
        if self.num_encoders == 0 {
            return Err(Error::config("num_encoders must be >= 1"));
        }
        if self.qubits == 0 || self.qubits > MAX_QUBITS {
            return Err(Error::config(format!("encoder_qubits {} outside 1..={MAX_QUBITS}", self.qubits)));
        }
        if (1usize << self.qubits) < input_dim {
            return Err(Error::config(format!(
                "encoder_qubits {} hold {} amplitudes, fewer than the input dimension {input_dim}",
                self.qubits,
                1usize << self.qubits
            )));
        }
        if self.layers > 0 && (self.connectivity == 0 || self.connectivity >= self.qubits) {
            return Err(Error::config(format!(
                "encoder connectivity {} must satisfy 1 <= c < {}",
                self.connectivity, self.qubits
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderKind {
    Quantum(QuantumEncoderConfig),
    /// MLP `input -> [hidden] -> latent_dim` with tanh output.
    Neural { mlp: MlpConfig, latent_dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub input_dim: usize,
    pub encoder: EncoderKind,
    /// PQC layout; `encode_rounds` is derived from the latent length.
    pub pqc: CircuitSpec,
    pub classes: usize,
    pub final_linear: bool,
    pub gradient: GradientMethod,
}

impl HeadConfig {
    /// Single quantum encoder with `Q_c = Q = qubits` and the scaling-sweep
    /// ansatz (M = 2, R = 4, N = 1, C = 1), two classes.
    pub fn single_encoder(input_dim: usize, qubits: usize) -> Self {
        Self {
            input_dim,
            encoder: EncoderKind::Quantum(QuantumEncoderConfig::new(qubits)),
            pqc: CircuitSpec::standard(qubits),
            classes: 2,
            final_linear: true,
            gradient: GradientMethod::Auto,
        }
    }

    pub fn latent_len(&self) -> usize {
        match self.encoder {
            EncoderKind::Quantum(q) => q.num_encoders * q.qubits,
            EncoderKind::Neural { latent_dim, .. } => latent_dim,
        }
    }

    pub fn effective_pqc(&self) -> CircuitSpec {
        CircuitSpec {
            encode_rounds: (self.latent_len() / self.pqc.qubits).max(1),
            ..self.pqc
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be >= 1"));
        }
        if self.classes < 2 {
            return Err(Error::config(format!("classes {} must be >= 2", self.classes)));
        }
        match self.encoder {
            EncoderKind::Quantum(q) => q.validate(self.input_dim)?,
            EncoderKind::Neural { mlp, latent_dim } => {
                mlp.validate()?;
                if latent_dim == 0 {
                    return Err(Error::config("neural encoder latent_dim must be >= 1"));
                }
            }
        }
        self.pqc.validate()?;
        let l = self.latent_len();
        if !l.is_multiple_of(self.pqc.qubits) {
            return Err(Error::config(format!(
                "latent length {l} is not a multiple of the PQC width {}",
                self.pqc.qubits
            )));
        }
        if !self.final_linear && self.classes != 2 {
            return Err(Error::config("removing the final linear layer requires exactly 2 classes"));
        }
        Ok(())
    }

    pub fn param_counts(&self) -> ParamCounts {
        let (encoder, scale) = match self.encoder {
            EncoderKind::Quantum(q) => (
                q.num_encoders * q.params_per_encoder(),
                if q.encoding_scale { q.num_encoders } else { 0 },
            ),
            EncoderKind::Neural { mlp, latent_dim } => {
                let hidden = mlp.hidden_layers == 1;
                let fan_in = if hidden { mlp.hidden_dim } else { self.input_dim };
                let bn = if mlp.batch_norm { 2 * fan_in } else { 0 };
                let first = if hidden { dense_params(self.input_dim, mlp.hidden_dim, true) } else { 0 };
                (first + bn + dense_params(fan_in, latent_dim, true), 0)
            }
        };
        let pqc = count_parameters(&self.effective_pqc());
        let linear = if self.final_linear {
            dense_params(self.latent_len() + 1, self.classes, false)
        } else {
            0
        };
        ParamCounts { encoder, encoding_scale: scale, pqc, linear }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub encoder: usize,
    pub encoding_scale: usize,
    pub pqc: usize,
    pub linear: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.encoder + self.encoding_scale + self.pqc + self.linear
    }
}

/// Latent `<Z_q>` for every qubit after amplitude encoding `x` and running
/// the encoder block with `theta_c`. Exact: no shots, no gate noise.
pub fn encoder_forward(x: &[f64], theta_c: &[f64], config: &QuantumEncoderConfig) -> Result<Vec<f64>> {
    let block = block_circuit_for(config)?;
    Ok(encoder_state(x, theta_c, config, &block)?.z_expectations())
}

fn block_circuit_for(config: &QuantumEncoderConfig) -> Result<GateList> {
    if config.layers == 0 {
        return Ok(GateList::new(config.qubits));
    }
    block_circuit(config.qubits, config.connectivity, config.layers)
}

fn encoder_state(x: &[f64], theta_c: &[f64], config: &QuantumEncoderConfig, block: &GateList) -> Result<StateVector> {
    if theta_c.len() != config.params_per_encoder() {
        return Err(Error::config(format!(
            "encoder expects {} parameters, got {}",
            config.params_per_encoder(),
            theta_c.len()
        )));
    }
    let initial = amplitude_encode(x, config.qubits)?;
    run_circuit_from(block, &initial, theta_c, &[])
}

/// Concatenated latents of independent encoders, one parameter vector each.
pub fn multi_encoder_forward(x: &[f64], thetas: &[&[f64]], config: &QuantumEncoderConfig) -> Result<Vec<f64>> {
    Ok(multi_encoder_forward_accounted(x, thetas, config)?.0)
}

/// As [`multi_encoder_forward`], also returning the number of complex
/// amplitudes allocated for statevectors during the call.
pub fn multi_encoder_forward_accounted(
    x: &[f64],
    thetas: &[&[f64]],
    config: &QuantumEncoderConfig,
) -> Result<(Vec<f64>, usize)> {
    if thetas.len() != config.num_encoders {
        return Err(Error::config(format!(
            "{} encoder parameter vectors for {} encoders",
            thetas.len(),
            config.num_encoders
        )));
    }
    let block = block_circuit_for(config)?;
    let mut latent = Vec::with_capacity(config.num_encoders * config.qubits);
    let mut allocated = 0;
    for theta in thetas {
        let state = encoder_state(x, theta, config, &block)?;
        // amplitude-encoded input plus the evolved copy
        allocated += 2 * state.amplitudes().len();
        latent.extend(state.z_expectations());
    }
    Ok((latent, allocated))
}

/// Noisy measurement of qubit 0 of the head circuit. Returns the shot
/// estimate and the trajectory that produced it (for gradient reuse).
pub fn pqc_forward_traced<R: Rng + ?Sized>(
    circuit: &GateList,
    latent: &[f64],
    theta_q: &[f64],
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<(f64, Option<GateList>)> {
    if noise.has_gate_noise() {
        let (trajectory, _) = sample_trajectory(circuit, noise, rng);
        let z = evaluate_expectation(&trajectory, theta_q, latent, CircuitSpec::MEASURED_QUBIT)?;
        Ok((shot_sample_expectation(z, noise.shots, rng).estimate, Some(trajectory)))
    } else {
        let z = evaluate_expectation(circuit, theta_q, latent, CircuitSpec::MEASURED_QUBIT)?;
        Ok((shot_sample_expectation(z, noise.shots, rng).estimate, None))
    }
}

pub fn pqc_forward<R: Rng + ?Sized>(
    latent: &[f64],
    theta_q: &[f64],
    spec: &CircuitSpec,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<f64> {
    let circuit = assemble_head_circuit(spec)?;
    Ok(pqc_forward_traced(&circuit, latent, theta_q, noise, rng)?.0)
}

/// `W [latent, z_meas]`, `W` row-major `k x (len(latent) + 1)`.
pub fn linear_logits(latent: &[f64], z_meas: f64, w: &[f64], classes: usize) -> Result<Vec<f64>> {
    let width = latent.len() + 1;
    if w.len() != classes * width {
        return Err(Error::config(format!(
            "linear weights have {} values, expected {classes} x {width}",
            w.len()
        )));
    }
    Ok((0..classes)
        .map(|c| {
            let row = &w[c * width..(c + 1) * width];
            row[..width - 1].iter().zip(latent).map(|(a, b)| a * b).sum::<f64>() + row[width - 1] * z_meas
        })
        .collect())
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    encoder: (usize, usize),
    scale: (usize, usize),
    theta_q: (usize, usize),
    w: (usize, usize),
}

impl Layout {
    fn new(counts: &ParamCounts) -> Self {
        let e = counts.encoder;
        let s = e + counts.encoding_scale;
        let q = s + counts.pqc;
        Self { encoder: (0, e), scale: (e, s), theta_q: (s, q), w: (q, q + counts.linear) }
    }
}

type LossGrad = (f64, Vec<f64>);

/// Trainable hybrid head; implements [`Classifier`].
#[derive(Debug, Clone)]
pub struct HybridHead {
    config: HeadConfig,
    layout: Layout,
    circuit: GateList,
    encoder_block: GateList,
    mlp: Option<Mlp>,
    params: Vec<f64>,
    mode: Mode,
}

/// Per-sample intermediates of a forward pass.
struct SampleForward {
    latent: Vec<f64>,
    scaled: Vec<f64>,
    z_meas: f64,
    trajectory: Option<GateList>,
    logits: Vec<f64>,
}

/// Gradient contributions of one sample (everything but the encoder).
struct SampleBackward {
    loss: f64,
    scale: Vec<f64>,
    theta_q: Vec<f64>,
    w: Vec<f64>,
    d_latent: Vec<f64>,
}

impl HybridHead {
    pub fn new(config: HeadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let counts = config.param_counts();
        let layout = Layout::new(&counts);
        let circuit = assemble_head_circuit(&config.effective_pqc())?;
        let (encoder_block, mlp) = match config.encoder {
            EncoderKind::Quantum(q) => (block_circuit_for(&q)?, None),
            EncoderKind::Neural { mlp, latent_dim } => (
                GateList::new(1),
                Some(Mlp::new(config.input_dim, latent_dim, mlp, OutputActivation::Tanh)?),
            ),
        };
        let mut params = vec![0.0; counts.total()];
        let mut rng = rng::stream(seed, &[TAG_INIT]);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        match &mlp {
            Some(m) => {
                let p = m.init_params(&mut rng);
                params[layout.encoder.0..layout.encoder.1].copy_from_slice(&p);
            }
            None => params[layout.encoder.0..layout.encoder.1]
                .iter_mut()
                .for_each(|v| *v = normal.sample(&mut rng)),
        }
        params[layout.scale.0..layout.scale.1].iter_mut().for_each(|v| *v = 1.0);
        params[layout.theta_q.0..layout.theta_q.1]
            .iter_mut()
            .for_each(|v| *v = normal.sample(&mut rng));
        let bound = 1.0 / ((config.latent_len() + 1) as f64).sqrt();
        params[layout.w.0..layout.w.1]
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-bound..bound));
        Ok(Self { config, layout, circuit, encoder_block, mlp, params, mode: Mode::Train })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn param_counts(&self) -> ParamCounts {
        self.config.param_counts()
    }

    pub fn circuit(&self) -> &GateList {
        &self.circuit
    }

    fn slice(&self, r: (usize, usize)) -> &[f64] {
        &self.params[r.0..r.1]
    }

    pub fn theta_q(&self) -> &[f64] {
        self.slice(self.layout.theta_q)
    }

    pub fn linear_weights(&self) -> &[f64] {
        self.slice(self.layout.w)
    }

    pub fn encoding_scales(&self) -> &[f64] {
        self.slice(self.layout.scale)
    }

    /// Parameters of quantum encoder `e`.
    pub fn theta_c(&self, e: usize) -> &[f64] {
        match self.config.encoder {
            EncoderKind::Quantum(q) => {
                let n = q.params_per_encoder();
                &self.params[self.layout.encoder.0 + e * n..self.layout.encoder.0 + (e + 1) * n]
            }
            EncoderKind::Neural { .. } => &[],
        }
    }

    fn quantum_latent(&self, x: &[f64]) -> Result<Vec<f64>> {
        let EncoderKind::Quantum(q) = self.config.encoder else { unreachable!() };
        let mut latent = Vec::with_capacity(self.config.latent_len());
        for e in 0..q.num_encoders {
            latent.extend(encoder_state(x, self.theta_c(e), &q, &self.encoder_block)?.z_expectations());
        }
        Ok(latent)
    }

    /// Latents for a batch. Neural encoders use batch statistics when `train`.
    fn batch_latents(&self, xs: &[&[f64]], train: bool) -> Result<(Vec<Vec<f64>>, Option<crate::baselines::MlpCache>)> {
        match &self.mlp {
            Some(m) => {
                let cache = m.forward(self.slice(self.layout.encoder), xs, train)?;
                Ok((cache.outputs.clone(), Some(cache)))
            }
            None => Ok((xs.par_iter().map(|x| self.quantum_latent(x)).collect::<Result<Vec<_>>>()?, None)),
        }
    }

    fn scaled(&self, latent: &[f64]) -> Vec<f64> {
        match self.config.encoder {
            EncoderKind::Quantum(q) if q.encoding_scale => {
                let scales = self.encoding_scales();
                latent
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v * scales[k / q.qubits])
                    .collect()
            }
            _ => latent.to_vec(),
        }
    }

    fn sample_forward(&self, latent: Vec<f64>, noise: &NoiseModel, seed: u64) -> Result<SampleForward> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scaled = self.scaled(&latent);
        let (z_meas, trajectory) = pqc_forward_traced(&self.circuit, &scaled, self.theta_q(), noise, &mut rng)?;
        let logits = if self.config.final_linear {
            linear_logits(&latent, z_meas, self.linear_weights(), self.config.classes)?
        } else {
            vec![z_meas, -z_meas]
        };
        Ok(SampleForward { latent, scaled, z_meas, trajectory, logits })
    }

    fn pqc_gradient(&self, fwd: &SampleForward, noise: &NoiseModel) -> Result<CircuitGradient> {
        let q0 = CircuitSpec::MEASURED_QUBIT;
        match (&fwd.trajectory, self.config.gradient) {
            (Some(_), GradientMethod::Adjoint) => Err(Error::UnsupportedMode(format!(
                "adjoint gradients are noiseless only (gate error rates {}/{})",
                noise.p1q, noise.p2q
            ))),
            (Some(t), _) => parameter_shift_gradient(t, self.theta_q(), &fwd.scaled, q0),
            (None, GradientMethod::ParameterShift) => {
                parameter_shift_gradient(&self.circuit, self.theta_q(), &fwd.scaled, q0)
            }
            (None, _) => adjoint_gradient(&self.circuit, self.theta_q(), &fwd.scaled, q0),
        }
    }

    /// Backward through linear layer, shot model and PQC for one sample.
    /// `dlogits` already carries any batch averaging.
    fn sample_backward(&self, fwd: &SampleForward, dlogits: &[f64], noise: &NoiseModel) -> Result<SampleBackward> {
        let l = fwd.latent.len();
        let k = self.config.classes;
        let mut d_latent = vec![0.0; l];
        let mut w_grad = vec![0.0; self.layout.w.1 - self.layout.w.0];
        let dz = if self.config.final_linear {
            let w = self.linear_weights();
            let mut dz = 0.0;
            for c in 0..k {
                let row = c * (l + 1);
                for j in 0..l {
                    w_grad[row + j] = dlogits[c] * fwd.latent[j];
                    d_latent[j] += dlogits[c] * w[row + j];
                }
                w_grad[row + l] = dlogits[c] * fwd.z_meas;
                dz += dlogits[c] * w[row + l];
            }
            dz
        } else {
            dlogits[0] - dlogits[1]
        };
        // shot noise: d estimate / d z = 1
        let g = self.pqc_gradient(fwd, noise)?;
        let theta_q: Vec<f64> = g.params.iter().map(|v| v * dz).collect();
        let mut scale = vec![0.0; self.layout.scale.1 - self.layout.scale.0];
        match self.config.encoder {
            EncoderKind::Quantum(q) if q.encoding_scale => {
                let scales = self.encoding_scales();
                for j in 0..l {
                    let e = j / q.qubits;
                    d_latent[j] += dz * g.latent[j] * scales[e];
                    scale[e] += dz * g.latent[j] * fwd.latent[j];
                }
            }
            _ => {
                for j in 0..l {
                    d_latent[j] += dz * g.latent[j];
                }
            }
        }
        Ok(SampleBackward { loss: 0.0, scale, theta_q, w: w_grad, d_latent })
    }

    fn quantum_encoder_gradient(&self, x: &[f64], d_latent: &[f64]) -> Result<Vec<f64>> {
        let EncoderKind::Quantum(q) = self.config.encoder else { unreachable!() };
        let mut out = Vec::with_capacity(q.num_encoders * q.params_per_encoder());
        if q.params_per_encoder() == 0 {
            return Ok(out);
        }
        let initial = amplitude_encode(x, q.qubits)?;
        for e in 0..q.num_encoders {
            let obs: Vec<(usize, f64)> = (0..q.qubits).map(|i| (i, d_latent[e * q.qubits + i])).collect();
            let g = match self.config.gradient {
                GradientMethod::ParameterShift => {
                    parameter_shift_multi(&self.encoder_block, Some(&initial), self.theta_c(e), &[], &obs)?
                }
                _ => adjoint_multi(&self.encoder_block, Some(&initial), self.theta_c(e), &[], &obs)?.1,
            };
            out.extend(g.params);
        }
        Ok(out)
    }

    /// Logits for one sample.
    pub fn forward(&self, x: &[f64], noise: &NoiseModel, seed: u64) -> Result<Vec<f64>> {
        Ok(self.predict(&[x], noise, &[seed])?.remove(0))
    }

    /// Loss of one sample with the encoder in evaluation behaviour.
    pub fn sample_loss(&self, x: &[f64], label: usize, noise: &NoiseModel, seed: u64) -> Result<f64> {
        Ok(cross_entropy_loss(&self.forward(x, noise, seed)?, label)?.0)
    }

    /// Mean loss over a batch, evaluated like [`HybridHead::head_gradient`].
    pub fn mean_loss(&self, xs: &[&[f64]], labels: &[usize], noise: &NoiseModel, seeds: &[u64]) -> Result<f64> {
        let logits = self.predict(xs, noise, seeds)?;
        let mut total = 0.0;
        for (l, &y) in logits.iter().zip(labels) {
            total += cross_entropy_loss(l, y)?.0;
        }
        Ok(total / xs.len() as f64)
    }

    /// Mean loss and gradient over the batch without touching batch-norm
    /// running statistics or the mode.
    pub fn head_gradient(
        &self,
        xs: &[&[f64]],
        labels: &[usize],
        noise: &NoiseModel,
        seeds: &[u64],
    ) -> Result<(f64, Vec<f64>)> {
        Ok(self.gradient_impl(xs, labels, noise, seeds, false)?.0)
    }

    fn gradient_impl(
        &self,
        xs: &[&[f64]],
        labels: &[usize],
        noise: &NoiseModel,
        seeds: &[u64],
        train: bool,
    ) -> Result<(LossGrad, Option<crate::baselines::MlpCache>)> {
        if xs.len() != labels.len() || xs.len() != seeds.len() || xs.is_empty() {
            return Err(Error::config("batch inputs, labels and seeds must have equal nonzero length"));
        }
        if noise.has_gate_noise() && self.config.gradient == GradientMethod::Adjoint {
            return Err(Error::UnsupportedMode("adjoint gradients are noiseless only".into()));
        }
        let n = xs.len() as f64;
        let (latents, cache) = self.batch_latents(xs, train)?;
        let per_sample: Vec<SampleBackward> = latents
            .into_par_iter()
            .zip(labels.par_iter())
            .zip(seeds.par_iter())
            .map(|((latent, &label), &seed)| -> Result<SampleBackward> {
                let fwd = self.sample_forward(latent, noise, seed)?;
                let (loss, g) = cross_entropy_loss(&fwd.logits, label)?;
                let g: Vec<f64> = g.iter().map(|v| v / n).collect();
                let mut back = self.sample_backward(&fwd, &g, noise)?;
                back.loss = loss;
                Ok(back)
            })
            .collect::<Result<_>>()?;

        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for s in &per_sample {
            loss += s.loss;
            for (dst, v) in grad[self.layout.scale.0..self.layout.scale.1].iter_mut().zip(&s.scale) {
                *dst += v;
            }
            for (dst, v) in grad[self.layout.theta_q.0..self.layout.theta_q.1].iter_mut().zip(&s.theta_q) {
                *dst += v;
            }
            for (dst, v) in grad[self.layout.w.0..self.layout.w.1].iter_mut().zip(&s.w) {
                *dst += v;
            }
        }
        let d_latents: Vec<Vec<f64>> = per_sample.into_iter().map(|s| s.d_latent).collect();
        let enc = &mut grad[self.layout.encoder.0..self.layout.encoder.1];
        match (&self.mlp, &cache) {
            (Some(m), Some(c)) => {
                let (g, _) = m.backward(self.slice(self.layout.encoder), xs, c, &d_latents);
                enc.copy_from_slice(&g);
            }
            _ => {
                let per: Vec<Vec<f64>> = xs
                    .par_iter()
                    .zip(d_latents.par_iter())
                    .map(|(x, d)| self.quantum_encoder_gradient(x, d))
                    .collect::<Result<_>>()?;
                for g in per {
                    for (dst, v) in enc.iter_mut().zip(&g) {
                        *dst += v;
                    }
                }
            }
        }
        Ok(((loss / n, grad), cache))
    }
}

impl Classifier for HybridHead {
    fn kind(&self) -> &'static str {
        match (self.config.encoder, self.config.final_linear) {
            (EncoderKind::Neural { .. }, _) => "hybrid-nn-encoder",
            (_, false) => "hybrid-no-final-linear",
            _ => "hybrid",
        }
    }

    fn num_classes(&self) -> usize {
        self.config.classes
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn loss_and_gradient(
        &mut self,
        xs: &[&[f64]],
        labels: &[usize],
        noise: &NoiseModel,
        seeds: &[u64],
    ) -> Result<(f64, Vec<f64>)> {
        if self.mode != Mode::Train {
            return Err(Error::UnsupportedMode("gradient requested in evaluation mode".into()));
        }
        let (out, cache) = self.gradient_impl(xs, labels, noise, seeds, true)?;
        if let (Some(m), Some(c)) = (self.mlp.as_mut(), cache.as_ref()) {
            m.update_running_stats(c);
        }
        Ok(out)
    }

    fn predict(&self, xs: &[&[f64]], noise: &NoiseModel, seeds: &[u64]) -> Result<Vec<Vec<f64>>> {
        if xs.len() != seeds.len() {
            return Err(Error::config("one seed per sample required"));
        }
        let (latents, _) = self.batch_latents(xs, false)?;
        latents
            .into_par_iter()
            .zip(seeds.par_iter())
            .map(|(latent, &seed)| Ok(self.sample_forward(latent, noise, seed)?.logits))
            .collect()
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        let enc = self.slice(self.layout.encoder).to_vec();
        match (self.config.encoder, &self.mlp) {
            (EncoderKind::Quantum(q), _) => {
                tensors.push(Tensor::new("theta_c", vec![q.num_encoders, q.params_per_encoder()], enc));
                if q.encoding_scale {
                    tensors.push(Tensor::new("encoding_scale", vec![q.num_encoders], self.encoding_scales().to_vec()));
                }
            }
            (_, Some(m)) => {
                tensors.push(Tensor::new("encoder.params", vec![enc.len()], enc));
                if m.config.batch_norm {
                    let w = m.running_mean.len();
                    tensors.push(Tensor::new("encoder.bn.running_mean", vec![w], m.running_mean.clone()));
                    tensors.push(Tensor::new("encoder.bn.running_var", vec![w], m.running_var.clone()));
                }
            }
            _ => unreachable!(),
        }
        tensors.push(Tensor::new("theta_q", vec![self.theta_q().len()], self.theta_q().to_vec()));
        if self.config.final_linear {
            tensors.push(Tensor::new(
                "w",
                vec![self.config.classes, self.config.latent_len() + 1],
                self.linear_weights().to_vec(),
            ));
        }
        Checkpoint { tensors }
    }

    fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let copy = |name: &str, r: (usize, usize), params: &mut Vec<f64>| -> Result<()> {
            let t = ckpt.get(name).ok_or_else(|| Error::Data(format!("checkpoint lacks '{name}'")))?;
            if t.data.len() != r.1 - r.0 {
                return Err(Error::Data(format!(
                    "checkpoint tensor '{name}' has {} values, model expects {}",
                    t.data.len(),
                    r.1 - r.0
                )));
            }
            params[r.0..r.1].copy_from_slice(&t.data);
            Ok(())
        };
        let mut params = self.params.clone();
        match self.config.encoder {
            EncoderKind::Quantum(q) => {
                copy("theta_c", self.layout.encoder, &mut params)?;
                if q.encoding_scale {
                    copy("encoding_scale", self.layout.scale, &mut params)?;
                }
            }
            EncoderKind::Neural { .. } => copy("encoder.params", self.layout.encoder, &mut params)?,
        }
        copy("theta_q", self.layout.theta_q, &mut params)?;
        if self.config.final_linear {
            copy("w", self.layout.w, &mut params)?;
        }
        if let Some(m) = self.mlp.as_mut() {
            if m.config.batch_norm {
                for (name, dst) in [
                    ("encoder.bn.running_mean", &mut m.running_mean),
                    ("encoder.bn.running_var", &mut m.running_var),
                ] {
                    let t = ckpt.get(name).ok_or_else(|| Error::Data(format!("checkpoint lacks '{name}'")))?;
                    if t.data.len() != dst.len() {
                        return Err(Error::Data(format!("'{name}' has wrong length")));
                    }
                    dst.copy_from_slice(&t.data);
                }
            }
        }
        self.params = params;
        Ok(())
    }
}
