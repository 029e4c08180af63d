//! Classical heads: logistic regression, a 0/1-hidden-layer MLP with
//! optional batch normalization, and the MLP encoder used when the
//! simulated quantum encoder is ablated.
//!
//! Layer order with a hidden layer is `Linear -> [BatchNorm] -> ReLU ->
//! Linear`; without one it is `[BatchNorm] -> Linear`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Tensor};
use crate::datasets::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::rng::{self, TAG_INIT};
use crate::trainer::{self, cross_entropy_loss, Classifier, Mode, TrainConfig, TrainReport};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Parameters of a dense layer `inputs -> outputs`.
pub fn dense_params(inputs: usize, outputs: usize, bias: bool) -> usize {
    inputs * outputs + if bias { outputs } else { 0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    pub batch_norm: bool,
}

impl MlpConfig {
    pub fn linear() -> Self {
        Self { hidden_layers: 0, hidden_dim: 0, batch_norm: false }
    }

    pub fn hidden(dim: usize) -> Self {
        Self { hidden_layers: 1, hidden_dim: dim, batch_norm: false }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.hidden_layers, self.hidden_dim) {
            (0, 0) => Ok(()),
            (1, d) if d > 0 => Ok(()),
            (l, d) => Err(Error::config(format!(
                "hidden_layers {l} with hidden_dim {d}: need 0/0 or 1/d with d > 0"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Identity,
    Tanh,
}

/// Network shape and batch-norm running statistics. Trainable parameters are
/// held by the caller as a flat slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub inputs: usize,
    pub outputs: usize,
    pub config: MlpConfig,
    pub activation: OutputActivation,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

struct Offsets {
    w1: usize,
    b1: usize,
    gamma: usize,
    beta: usize,
    w2: usize,
    b2: usize,
    end: usize,
}

/// Per-batch intermediates kept for the backward pass.
pub struct MlpCache {
    /// BatchNorm input (hidden pre-activation, or the raw input).
    pre: Vec<Vec<f64>>,
    normed: Vec<Vec<f64>>,
    /// Input of the output layer.
    act: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    inv_std: Vec<f64>,
    batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

impl Mlp {
    pub fn new(inputs: usize, outputs: usize, config: MlpConfig, activation: OutputActivation) -> Result<Self> {
        config.validate()?;
        let bn_width = if config.hidden_layers == 1 { config.hidden_dim } else { inputs };
        let width = if config.batch_norm { bn_width } else { 0 };
        Ok(Self {
            inputs,
            outputs,
            config,
            activation,
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        })
    }

    fn bn_width(&self) -> usize {
        if self.config.hidden_layers == 1 { self.config.hidden_dim } else { self.inputs }
    }

    fn offsets(&self) -> Offsets {
        let (i, h, o) = (self.inputs, self.config.hidden_dim, self.outputs);
        let hidden = self.config.hidden_layers == 1;
        let w1 = 0;
        let b1 = if hidden { i * h } else { 0 };
        let gamma = if hidden { b1 + h } else { 0 };
        let beta = gamma + if self.config.batch_norm { self.bn_width() } else { 0 };
        let w2 = beta + if self.config.batch_norm { self.bn_width() } else { 0 };
        let fan_in = if hidden { h } else { i };
        let b2 = w2 + fan_in * o;
        Offsets { w1, b1, gamma, beta, w2, b2, end: b2 + o }
    }

    /// Trainable parameter count, batch-norm affine terms included.
    pub fn num_params(&self) -> usize {
        self.offsets().end
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights and biases, unit
    /// batch-norm scale, zero shift.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let off = self.offsets();
        let mut p = vec![0.0; off.end];
        let hidden = self.config.hidden_layers == 1;
        if hidden {
            let b = 1.0 / (self.inputs as f64).sqrt();
            for v in &mut p[off.w1..off.gamma] {
                *v = rng.gen_range(-b..b);
            }
        }
        if self.config.batch_norm {
            p[off.gamma..off.beta].iter_mut().for_each(|v| *v = 1.0);
        }
        let fan_in = if hidden { self.config.hidden_dim } else { self.inputs };
        let b = 1.0 / (fan_in as f64).sqrt();
        for v in &mut p[off.w2..off.end] {
            *v = rng.gen_range(-b..b);
        }
        p
    }

    /// With `train` set, batch norm uses batch statistics (needs >= 2 rows);
    /// otherwise it uses the running statistics.
    pub fn forward(&self, params: &[f64], xs: &[&[f64]], train: bool) -> Result<MlpCache> {
        let off = self.offsets();
        if params.len() != off.end {
            return Err(Error::config(format!("MLP expects {} parameters, got {}", off.end, params.len())));
        }
        if let Some(x) = xs.iter().find(|x| x.len() != self.inputs) {
            return Err(Error::config(format!("MLP input has {} values, expected {}", x.len(), self.inputs)));
        }
        let hidden = self.config.hidden_layers == 1;
        let h = self.config.hidden_dim;
        let pre: Vec<Vec<f64>> = if hidden {
            xs.iter()
                .map(|x| {
                    (0..h)
                        .map(|j| {
                            let row = &params[off.w1 + j * self.inputs..off.w1 + (j + 1) * self.inputs];
                            params[off.b1 + j] + row.iter().zip(x.iter()).map(|(w, v)| w * v).sum::<f64>()
                        })
                        .collect()
                })
                .collect()
        } else {
            xs.iter().map(|x| x.to_vec()).collect()
        };

        let width = self.bn_width();
        let (normed, inv_std, batch_stats) = if self.config.batch_norm {
            let (mean, var) = if train {
                if xs.len() < 2 {
                    return Err(Error::config("batch norm in training mode needs a batch of at least 2"));
                }
                let n = xs.len() as f64;
                let mean: Vec<f64> = (0..width).map(|j| pre.iter().map(|r| r[j]).sum::<f64>() / n).collect();
                let var: Vec<f64> = (0..width)
                    .map(|j| pre.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n)
                    .collect();
                (mean, var)
            } else {
                (self.running_mean.clone(), self.running_var.clone())
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let normed = pre
                .iter()
                .map(|r| (0..width).map(|j| (r[j] - mean[j]) * inv_std[j]).collect())
                .collect();
            (normed, inv_std, train.then_some((mean, var)))
        } else {
            (pre.clone(), Vec::new(), None)
        };

        let act: Vec<Vec<f64>> = normed
            .iter()
            .map(|r: &Vec<f64>| {
                r.iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let y = if self.config.batch_norm {
                            params[off.gamma + j] * v + params[off.beta + j]
                        } else {
                            v
                        };
                        if hidden { y.max(0.0) } else { y }
                    })
                    .collect()
            })
            .collect();

        let fan_in = if hidden { h } else { self.inputs };
        let outputs = act
            .iter()
            .map(|a| {
                (0..self.outputs)
                    .map(|o| {
                        let row = &params[off.w2 + o * fan_in..off.w2 + (o + 1) * fan_in];
                        let z = params[off.b2 + o] + row.iter().zip(a).map(|(w, v)| w * v).sum::<f64>();
                        match self.activation {
                            OutputActivation::Identity => z,
                            OutputActivation::Tanh => z.tanh(),
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(MlpCache { pre, normed, act, outputs, inv_std, batch_stats })
    }

    /// Folds the batch statistics of a training forward pass into the
    /// running estimates (unbiased variance, momentum 0.1).
    pub fn update_running_stats(&mut self, cache: &MlpCache) {
        if let Some((mean, var)) = &cache.batch_stats {
            let n = cache.pre.len() as f64;
            for j in 0..mean.len() {
                self.running_mean[j] = (1.0 - BN_MOMENTUM) * self.running_mean[j] + BN_MOMENTUM * mean[j];
                let unbiased = var[j] * n / (n - 1.0);
                self.running_var[j] = (1.0 - BN_MOMENTUM) * self.running_var[j] + BN_MOMENTUM * unbiased;
            }
        }
    }

    /// Sum over the batch of parameter gradients, and the gradient with
    /// respect to each input row.
    pub fn backward(
        &self,
        params: &[f64],
        xs: &[&[f64]],
        cache: &MlpCache,
        d_out: &[Vec<f64>],
    ) -> (Vec<f64>, Vec<Vec<f64>>) {
        let off = self.offsets();
        let hidden = self.config.hidden_layers == 1;
        let h = self.config.hidden_dim;
        let fan_in = if hidden { h } else { self.inputs };
        let width = self.bn_width();
        let mut grad = vec![0.0; off.end];
        let b = xs.len();

        // output layer
        let mut d_act = vec![vec![0.0; fan_in]; b];
        for s in 0..b {
            for o in 0..self.outputs {
                let y = cache.outputs[s][o];
                let dz = match self.activation {
                    OutputActivation::Identity => d_out[s][o],
                    OutputActivation::Tanh => d_out[s][o] * (1.0 - y * y),
                };
                grad[off.b2 + o] += dz;
                for j in 0..fan_in {
                    grad[off.w2 + o * fan_in + j] += dz * cache.act[s][j];
                    d_act[s][j] += dz * params[off.w2 + o * fan_in + j];
                }
            }
        }

        // ReLU then batch-norm affine
        let mut d_norm = vec![vec![0.0; width]; b];
        for s in 0..b {
            for j in 0..width {
                let mut dy = d_act[s][j];
                if hidden && cache.act[s][j] <= 0.0 {
                    dy = 0.0;
                }
                if self.config.batch_norm {
                    grad[off.gamma + j] += dy * cache.normed[s][j];
                    grad[off.beta + j] += dy;
                    d_norm[s][j] = dy * params[off.gamma + j];
                } else {
                    d_norm[s][j] = dy;
                }
            }
        }

        let d_pre: Vec<Vec<f64>> = if self.config.batch_norm {
            if cache.batch_stats.is_some() {
                let n = b as f64;
                let mut out = vec![vec![0.0; width]; b];
                for j in 0..width {
                    let sum_d: f64 = (0..b).map(|s| d_norm[s][j]).sum();
                    let sum_dx: f64 = (0..b).map(|s| d_norm[s][j] * cache.normed[s][j]).sum();
                    for s in 0..b {
                        out[s][j] = cache.inv_std[j] / n
                            * (n * d_norm[s][j] - sum_d - cache.normed[s][j] * sum_dx);
                    }
                }
                out
            } else {
                d_norm.iter().map(|r| r.iter().zip(&cache.inv_std).map(|(d, i)| d * i).collect()).collect()
            }
        } else {
            d_norm
        };

        let d_inputs = if hidden {
            let mut d_x = vec![vec![0.0; self.inputs]; b];
            for s in 0..b {
                for j in 0..h {
                    let dv = d_pre[s][j];
                    if dv == 0.0 {
                        continue;
                    }
                    grad[off.b1 + j] += dv;
                    let row = off.w1 + j * self.inputs;
                    for i in 0..self.inputs {
                        grad[row + i] += dv * xs[s][i];
                        d_x[s][i] += dv * params[row + i];
                    }
                }
            }
            d_x
        } else {
            d_pre
        };
        (grad, d_inputs)
    }
}

/// Logistic regression (`binary`, one logit `s`, class scores `[0, s]`) or
/// an MLP classification head over raw embeddings.
#[derive(Debug, Clone)]
pub struct DenseClassifier {
    kind: &'static str,
    pub mlp: Mlp,
    binary: bool,
    classes: usize,
    params: Vec<f64>,
    mode: Mode,
}

impl DenseClassifier {
    /// `dim + 1` parameters, initialized at zero.
    pub fn logistic(dim: usize) -> Result<Self> {
        let mlp = Mlp::new(dim, 1, MlpConfig::linear(), OutputActivation::Identity)?;
        let params = vec![0.0; mlp.num_params()];
        Ok(Self { kind: "logistic", mlp, binary: true, classes: 2, params, mode: Mode::Train })
    }

    pub fn mlp(dim: usize, classes: usize, config: MlpConfig, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::config("MLP head needs at least 2 classes"));
        }
        let mlp = Mlp::new(dim, classes, config, OutputActivation::Identity)?;
        let params = mlp.init_params(&mut rng::stream(seed, &[TAG_INIT, 100]));
        Ok(Self { kind: "mlp", mlp, binary: false, classes, params, mode: Mode::Train })
    }

    fn logits(&self, out: &[f64]) -> Vec<f64> {
        if self.binary { vec![0.0, out[0]] } else { out.to_vec() }
    }
}

impl Classifier for DenseClassifier {
    fn kind(&self) -> &'static str {
        self.kind
    }

    fn num_classes(&self) -> usize {
        self.classes
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
        _noise: &NoiseModel,
        _seeds: &[u64],
    ) -> Result<(f64, Vec<f64>)> {
        if self.mode != Mode::Train {
            return Err(Error::UnsupportedMode("gradient requested in evaluation mode".into()));
        }
        let cache = self.mlp.forward(&self.params, xs, true)?;
        let n = xs.len() as f64;
        let mut loss = 0.0;
        let mut d_out = Vec::with_capacity(xs.len());
        for (out, &label) in cache.outputs.iter().zip(labels) {
            let (l, g) = cross_entropy_loss(&self.logits(out), label)?;
            loss += l;
            d_out.push(if self.binary { vec![g[1] / n] } else { g.iter().map(|v| v / n).collect() });
        }
        let (grad, _) = self.mlp.backward(&self.params, xs, &cache, &d_out);
        self.mlp.update_running_stats(&cache);
        Ok((loss / n, grad))
    }

    fn predict(&self, xs: &[&[f64]], _noise: &NoiseModel, _seeds: &[u64]) -> Result<Vec<Vec<f64>>> {
        let cache = self.mlp.forward(&self.params, xs, false)?;
        Ok(cache.outputs.iter().map(|o| self.logits(o)).collect())
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = vec![Tensor::new("params", vec![self.params.len()], self.params.clone())];
        if self.mlp.config.batch_norm {
            let w = self.mlp.running_mean.len();
            tensors.push(Tensor::new("bn.running_mean", vec![w], self.mlp.running_mean.clone()));
            tensors.push(Tensor::new("bn.running_var", vec![w], self.mlp.running_var.clone()));
        }
        Checkpoint { tensors }
    }

    fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let p = ckpt.get("params").ok_or_else(|| Error::Data("checkpoint lacks 'params'".into()))?;
        if p.data.len() != self.params.len() {
            return Err(Error::Data(format!("checkpoint has {} params, model {}", p.data.len(), self.params.len())));
        }
        self.params.copy_from_slice(&p.data);
        if self.mlp.config.batch_norm {
            for (name, dst) in [("bn.running_mean", &mut self.mlp.running_mean), ("bn.running_var", &mut self.mlp.running_var)] {
                let t = ckpt.get(name).ok_or_else(|| Error::Data(format!("checkpoint lacks '{name}'")))?;
                if t.data.len() != dst.len() {
                    return Err(Error::Data(format!("'{name}' has wrong length")));
                }
                dst.copy_from_slice(&t.data);
            }
        }
        Ok(())
    }
}

pub fn logistic_train(dataset: &EmbeddingDataset, config: &TrainConfig) -> Result<(DenseClassifier, TrainReport)> {
    if dataset.num_classes != 2 {
        return Err(Error::config("logistic regression is binary"));
    }
    let mut model = DenseClassifier::logistic(dataset.dim)?;
    let report = trainer::train(&mut model, dataset, config, &NoiseModel::noiseless())?;
    Ok((model, report))
}

pub fn mlp_train(
    dataset: &EmbeddingDataset,
    mlp: MlpConfig,
    config: &TrainConfig,
) -> Result<(DenseClassifier, TrainReport)> {
    let mut model = DenseClassifier::mlp(dataset.dim, dataset.num_classes, mlp, config.seed)?;
    let report = trainer::train(&mut model, dataset, config, &NoiseModel::noiseless())?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn count(h: usize, bn: bool) -> usize {
        let cfg = if h == 0 { MlpConfig::linear() } else { MlpConfig::hidden(h) };
        Mlp::new(768, 2, MlpConfig { batch_norm: bn, ..cfg }, OutputActivation::Identity).unwrap().num_params()
    }

    #[test]
    fn reference_counts() {
        assert_eq!(DenseClassifier::logistic(768).unwrap().num_params(), 769);
        assert_eq!(count(0, false), 1_538);
        assert_eq!(count(48, false), 37_010);
        assert_eq!(count(96, false), 74_018);
        assert_eq!(count(144, false), 111_026);
        assert_eq!(count(192, false), 148_034);
        assert_eq!(count(48, true), 37_010 + 96);
        assert_eq!(dense_params(768, 48, true) + dense_params(48, 2, true), 37_010);
    }

    #[test]
    fn config_validation() {
        assert!(MlpConfig { hidden_layers: 0, hidden_dim: 48, batch_norm: false }.validate().is_err());
        assert!(MlpConfig { hidden_layers: 1, hidden_dim: 0, batch_norm: false }.validate().is_err());
        assert!(MlpConfig { hidden_layers: 2, hidden_dim: 8, batch_norm: false }.validate().is_err());
    }

    fn loss_of(mlp: &Mlp, p: &[f64], xs: &[&[f64]], w: &[Vec<f64>]) -> f64 {
        let c = mlp.forward(p, xs, true).unwrap();
        c.outputs.iter().zip(w).map(|(o, w)| o.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (cfg, act) in [
            (MlpConfig::linear(), OutputActivation::Identity),
            (MlpConfig { batch_norm: true, ..MlpConfig::linear() }, OutputActivation::Tanh),
            (MlpConfig::hidden(5), OutputActivation::Tanh),
            (MlpConfig { batch_norm: true, ..MlpConfig::hidden(5) }, OutputActivation::Identity),
        ] {
            let mlp = Mlp::new(4, 3, cfg, act).unwrap();
            let mut p = mlp.init_params(&mut rng);
            p.iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
            let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let xs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let w: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let cache = mlp.forward(&p, &xs, true).unwrap();
            let (g, dx) = mlp.backward(&p, &xs, &cache, &w);
            let h = 1e-6;
            for j in 0..p.len() {
                let mut up = p.clone();
                up[j] += h;
                let mut dn = p.clone();
                dn[j] -= h;
                let fd = (loss_of(&mlp, &up, &xs, &w) - loss_of(&mlp, &dn, &xs, &w)) / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-6, "{cfg:?} param {j}: {fd} vs {}", g[j]);
            }
            let mut rows2 = rows.clone();
            rows2[1][2] += h;
            let up: Vec<&[f64]> = rows2.iter().map(|r| r.as_slice()).collect();
            let lu = loss_of(&mlp, &p, &up, &w);
            rows2[1][2] -= 2.0 * h;
            let dn: Vec<&[f64]> = rows2.iter().map(|r| r.as_slice()).collect();
            let ld = loss_of(&mlp, &p, &dn, &w);
            assert!(((lu - ld) / (2.0 * h) - dx[1][2]).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_norm_modes() {
        let mut model = DenseClassifier::mlp(3, 2, MlpConfig { batch_norm: true, ..MlpConfig::hidden(4) }, 1).unwrap();
        let rows = [vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0], vec![0.3, 0.3, -2.0]];
        let xs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let noise = NoiseModel::noiseless();
        model.loss_and_gradient(&xs, &[0, 1, 0], &noise, &[0; 3]).unwrap();
        let stats = model.mlp.running_mean.clone();
        assert!(stats.iter().any(|v| *v != 0.0));

        model.set_mode(Mode::Eval);
        let a = model.predict(&xs, &noise, &[0; 3]).unwrap();
        let single = model.predict(&xs[..1], &noise, &[0]).unwrap();
        // running statistics: a row's output does not depend on the batch
        assert_eq!(a[0], single[0]);
        assert_eq!(model.mlp.running_mean, stats);
        assert!(matches!(
            model.loss_and_gradient(&xs, &[0, 1, 0], &noise, &[0; 3]),
            Err(Error::UnsupportedMode(_))
        ));
        model.set_mode(Mode::Train);
        assert!(model.loss_and_gradient(&xs[..1], &[0], &noise, &[0]).is_err());
    }

    #[test]
    fn tanh_encoder_range() {
        let mlp = Mlp::new(6, 4, MlpConfig::linear(), OutputActivation::Tanh).unwrap();
        let p: Vec<f64> = (0..mlp.num_params()).map(|i| (i as f64 * 7.3).sin() * 20.0).collect();
        let x = [5.0, -3.0, 8.0, 1.0, 0.0, -9.0];
        let out = mlp.forward(&p, &[&x], false).unwrap().outputs;
        assert!(out[0].iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(mlp.num_params(), 6 * 4 + 4);
    }

    #[test]
    fn zero_logistic_is_chance_on_balanced_data() {
        let d = crate::datasets::synthetic_clusters(8, 300, 3.0, 2).unwrap();
        let d = crate::datasets::make_splits(d, 256, 0).unwrap();
        let mut model = DenseClassifier::logistic(8).unwrap();
        model.set_mode(Mode::Eval);
        let acc = trainer::evaluate(&model, &d, crate::datasets::Split::Val, &NoiseModel::noiseless(), 0).unwrap();
        assert_eq!(acc, 0.5);
    }
}
