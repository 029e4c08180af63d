//! Acceptance criteria, one test per criterion. Each prints a single
//! `PASS`/`FAIL` line to stderr (uncaptured) before asserting.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use qhead::ansatz::{assemble_head_circuit, CircuitSpec, Gate, GateList};
use qhead::baselines::{DenseClassifier, MlpConfig};
use qhead::config::{DatasetSource, EncoderType, ExperimentConfig, ModelKind};
use qhead::energy::{energy_curve, find_crossover, sign_changes, EnergyConstants};
use qhead::experiment::{self, Ablation};
use qhead::grad::evaluate_expectation;
use qhead::head::{EncoderKind, GradientMethod, HeadConfig, HybridHead, QuantumEncoderConfig, EMBEDDING_DIM};
use qhead::noise::{multinomial_oracle, oracle, sample_trajectory, shot_sample_expectation, NoiseModel, Shots};
use qhead::simcore::{Pauli, StateVector};
use qhead::trainer::Classifier;

fn verdict(id: &str, pass: bool, detail: String) {
    let line = format!("{} criterion {id}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_head(rng: &mut ChaCha8Rng) -> HeadConfig {
    loop {
        let qc = rng.gen_range(2..=6);
        let e = rng.gen_range(1..=2);
        let divisors: Vec<usize> = (2..=6).filter(|q| (e * qc) % q == 0).collect();
        if divisors.is_empty() {
            continue;
        }
        let q = divisors[rng.gen_range(0..divisors.len())];
        let final_linear = rng.gen_bool(0.7);
        return HeadConfig {
            input_dim: rng.gen_range(2..=(1usize << qc)),
            encoder: EncoderKind::Quantum(QuantumEncoderConfig {
                num_encoders: e,
                qubits: qc,
                layers: rng.gen_range(1..=3),
                connectivity: rng.gen_range(1..qc),
                encoding_scale: rng.gen_bool(0.5),
            }),
            pqc: CircuitSpec {
                qubits: q,
                connectivity: rng.gen_range(1..q),
                main_layers: rng.gen_range(0..=2),
                reupload_layers: rng.gen_range(0..=2),
                reuploads: rng.gen_range(0..=2),
                encode_rounds: 1,
            },
            classes: if final_linear { rng.gen_range(2..=3) } else { 2 },
            final_linear,
            gradient: GradientMethod::Auto,
        };
    }
}

#[test]
fn criterion_1_gradient_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let noise = NoiseModel { shots: Shots::Infinite, ..NoiseModel::noiseless() };
    let (mut worst_fd, mut worst_ps) = (0.0f64, 0.0f64);
    let h = 1e-5;
    for trial in 0..50 {
        let cfg = random_head(&mut rng);
        let mut head = HybridHead::new(cfg, trial).unwrap();
        let batch = rng.gen_range(1..=3);
        let rows: Vec<Vec<f64>> = (0..batch).map(|_| gaussian(&mut rng, cfg.input_dim)).collect();
        let xs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..cfg.classes)).collect();
        let seeds: Vec<u64> = (0..batch as u64).collect();
        let (_, grad) = head.head_gradient(&xs, &labels, &noise, &seeds).unwrap();
        for j in 0..grad.len() {
            let orig = head.params()[j];
            head.params_mut()[j] = orig + h;
            let up = head.mean_loss(&xs, &labels, &noise, &seeds).unwrap();
            head.params_mut()[j] = orig - h;
            let dn = head.mean_loss(&xs, &labels, &noise, &seeds).unwrap();
            head.params_mut()[j] = orig;
            worst_fd = worst_fd.max(((up - dn) / (2.0 * h) - grad[j]).abs());
        }
        let ps_head = HybridHead::new(HeadConfig { gradient: GradientMethod::ParameterShift, ..cfg }, trial).unwrap();
        let (_, ps) = ps_head.head_gradient(&xs, &labels, &noise, &seeds).unwrap();
        let adj_head = HybridHead::new(HeadConfig { gradient: GradientMethod::Adjoint, ..cfg }, trial).unwrap();
        let (_, adj) = adj_head.head_gradient(&xs, &labels, &noise, &seeds).unwrap();
        worst_ps = worst_ps.max(ps.iter().zip(&adj).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    verdict(
        "1 (gradients)",
        worst_fd < 1e-4 && worst_ps < 1e-8,
        format!("50 configs, max |analytic - FD| = {worst_fd:.2e} (< 1e-4), max |shift - adjoint| = {worst_ps:.2e} (< 1e-8)"),
    );
}

#[test]
fn criterion_2_simulator_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_norm = 0.0f64;
    for _ in 0..10_000 {
        let q = rng.gen_range(1..=8);
        let mut amps: Vec<num_complex::Complex64> =
            (0..1 << q).map(|_| num_complex::Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
        let n: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a /= n);
        let mut s = StateVector::from_amplitudes(amps).unwrap();
        for _ in 0..rng.gen_range(1..=30) {
            match rng.gen_range(0..3) {
                0 => s.apply_ry(rng.gen_range(0..q), rng.gen_range(-10.0..10.0)).unwrap(),
                1 if q > 1 => {
                    let c = rng.gen_range(0..q);
                    let t = (c + rng.gen_range(1..q)) % q;
                    s.apply_cnot(c, t).unwrap();
                }
                _ => s.apply_pauli(rng.gen_range(0..q), Pauli::ALL[rng.gen_range(0..3)]).unwrap(),
            }
        }
        worst_norm = worst_norm.max((s.norm() - 1.0).abs());
    }
    let mut worst_cos = 0.0f64;
    for k in 0..100 {
        let theta = -2.0 * std::f64::consts::PI + 4.0 * std::f64::consts::PI * k as f64 / 99.0;
        let mut s = StateVector::zero(1).unwrap();
        s.apply_ry(0, theta).unwrap();
        worst_cos = worst_cos.max((s.z_expectation(0).unwrap() - theta.cos()).abs());
    }
    verdict(
        "2 (simulator)",
        worst_norm < 1e-10 && worst_cos < 1e-10,
        format!("10^4 sequences, max |norm - 1| = {worst_norm:.2e}; 100 angles, max |<Z> - cos| = {worst_cos:.2e}"),
    );
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn criterion_3_shot_sampler() {
    let shots = 8192u64;
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let g: Vec<f64> = (0..draws).map(|_| shot_sample_expectation(0.0, Shots::Finite(shots), &mut rng).estimate).collect();
    let std_rel = (mean_var(&g).1.sqrt() * (shots as f64).sqrt() - 1.0).abs();

    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    for z in [0.0, 0.5, -0.8] {
        let gauss: Vec<f64> = (0..draws).map(|_| shot_sample_expectation(z, Shots::Finite(shots), &mut rng).estimate).collect();
        let p = [(1.0 + z) / 2.0, (1.0 - z) / 2.0];
        let exact: Vec<f64> = (0..draws)
            .map(|_| {
                let c = multinomial_oracle(&p, shots, &mut rng).unwrap();
                (c[0] as f64 - c[1] as f64) / shots as f64
            })
            .collect();
        let (mg, vg) = mean_var(&gauss);
        let (me, ve) = mean_var(&exact);
        // mean compared on the scale of one shot-noise standard deviation
        worst_mean = worst_mean.max((mg - me).abs() / ve.sqrt());
        worst_var = worst_var.max((vg / ve - 1.0).abs());
    }
    verdict(
        "3 (shot sampler)",
        std_rel < 0.02 && worst_mean < 0.03 && worst_var < 0.03,
        format!(
            "std at z=0 off by {:.2}% (< 2%); vs multinomial: mean diff {:.2}% of sigma, variance off by {:.2}% (< 3%)",
            100.0 * std_rel,
            100.0 * worst_mean,
            100.0 * worst_var
        ),
    );
}

fn one_qubit_circuit() -> (GateList, Vec<f64>, Vec<f64>) {
    let mut c = GateList::new(1);
    for slot in 0..6 {
        c.gates.push(Gate::Ry { qubit: 0, slot });
    }
    (c, vec![0.4, -1.3, 0.9, 2.2, -0.7, 1.1], vec![])
}

fn two_qubit_circuit() -> (GateList, Vec<f64>, Vec<f64>) {
    let spec = CircuitSpec { qubits: 2, connectivity: 1, main_layers: 3, reupload_layers: 1, reuploads: 2, encode_rounds: 1 };
    let c = assemble_head_circuit(&spec).unwrap();
    let params: Vec<f64> = (0..c.num_params()).map(|i| 0.3 + 0.77 * i as f64).collect();
    (c, params, vec![0.6, -0.9])
}

#[test]
fn criterion_4_noise_oracle() {
    let n = 100_000;
    let mut lines = Vec::new();
    let mut pass = true;
    for (p1, p2) in [(1e-4, 1e-3), (2e-4, 2e-3)] {
        for (name, (c, params, latent)) in [("1q", one_qubit_circuit()), ("2q", two_qubit_circuit())] {
            let model = NoiseModel { p1q: p1, p2q: p2, shots: Shots::Infinite, seed: 0 };
            let mut rng = ChaCha8Rng::seed_from_u64(404);
            let samples: Vec<f64> = (0..n)
                .map(|_| {
                    let (t, _) = sample_trajectory(&c, &model, &mut rng);
                    evaluate_expectation(&t, &params, &latent, 0).unwrap()
                })
                .collect();
            let (m, v) = mean_var(&samples);
            let exact = oracle::noisy_expectation(&c, &params, &latent, p1, p2, 0).unwrap();
            let clean = evaluate_expectation(&c, &params, &latent, 0).unwrap();
            let sigma = (v / n as f64).sqrt();
            let ok = sigma > 0.0 && (m - exact).abs() <= 3.0 * sigma;
            pass &= ok;
            lines.push(format!(
                "{name} ({p1:.0e},{p2:.0e}): |mean - rho| = {:.2e} vs 3 sigma = {:.2e} (noise shift {:.2e})",
                (m - exact).abs(),
                3.0 * sigma,
                (exact - clean).abs()
            ));
        }
    }
    verdict("4 (noise oracle)", pass, lines.join("; "));
}

#[test]
fn criterion_5_parameter_counts() {
    let single: Vec<usize> =
        [10, 12, 18].iter().map(|&q| HeadConfig::single_encoder(EMBEDDING_DIM, q).param_counts().total()).collect();
    let mlp = |cfg: MlpConfig| DenseClassifier::mlp(EMBEDDING_DIM, 2, cfg, 0).unwrap().num_params();
    let baselines = [
        mlp(MlpConfig::linear()),
        mlp(MlpConfig::hidden(48)),
        mlp(MlpConfig::hidden(96)),
        DenseClassifier::logistic(EMBEDDING_DIM).unwrap().num_params(),
    ];
    let pass = single == [353, 423, 633] && baselines == [1_538, 37_010, 74_018, 769];
    let nn_encoder = HeadConfig {
        encoder: EncoderKind::Neural { mlp: MlpConfig::linear(), latent_dim: 14 },
        ..HeadConfig::single_encoder(EMBEDDING_DIM, 14)
    };
    verdict(
        "5 (parameter counts)",
        pass,
        format!(
            "single encoder {single:?}, baselines {baselines:?}; NN-encoder 14Q 0/0 = {} (reference 10,866)",
            nn_encoder.param_counts().total()
        ),
    );
}

#[test]
fn criterion_6_energy_crossover() {
    let c = EnergyConstants::default();
    let curve = energy_curve(&c);
    let crossover = find_crossover(&c);
    let monotone = curve.windows(2).all(|w| w[1].e_qpu_kj > w[0].e_qpu_kj && w[1].e_gpu_kj > w[0].e_gpu_kj);
    let changes = sign_changes(&curve);
    verdict(
        "6 (energy crossover)",
        matches!(crossover, Some(45..=47)) && monotone && changes == 1,
        format!(
            "crossover {crossover:?} (reference 46), monotone {monotone}, sign changes {changes}; with P_qpu in the GPU term {:?}",
            find_crossover(&c.with_qpu_power_on_gpu())
        ),
    );
}

/// Synthetic clusters at separation 10. The embedding width is 64 because
/// amplitude encoding on 6 qubits holds 2^6 amplitudes.
fn smoke_config() -> ExperimentConfig {
    ExperimentConfig {
        qubits: 6,
        encoder_qubits: 6,
        encoders: 1,
        synthetic_dim: 64,
        synthetic_separation: 10.0,
        synthetic_per_class: 300,
        samples_per_class: 100,
        learning_rate: 0.01,
        epochs: 60,
        seed: 7,
        ..Default::default()
    }
}

#[test]
fn criterion_7_learning_smoke() {
    let noisy_cfg = ExperimentConfig { shots: Shots::Finite(8192), error_rate_1q: 1e-4, error_rate_2q: 1e-3, ..smoke_config() };
    let clean_cfg = ExperimentConfig { shots: Shots::Infinite, ..smoke_config() };
    let noisy = experiment::run_training(&noisy_cfg, |_| {}).unwrap().report;
    let clean = experiment::run_training(&clean_cfg, |_| {}).unwrap().report;
    // wider embedding on a 10-qubit encoder with a 5-qubit PQC
    let wide_cfg = ExperimentConfig {
        qubits: 5,
        encoder_qubits: 10,
        synthetic_dim: 768,
        shots: Shots::Finite(8192),
        error_rate_1q: 1e-4,
        error_rate_2q: 1e-3,
        epochs: 30,
        ..smoke_config()
    };
    let wide = experiment::run_training(&wide_cfg, |_| {}).unwrap().report;
    verdict(
        "7 (learning smoke)",
        noisy.test_acc >= 0.90 && clean.test_acc >= 0.95 && noisy_cfg.epochs <= 200,
        format!(
            "dim 64, Q = Q_c = 6, {} epochs: noisy test {:.4} (>= 0.90), noiseless test {:.4} (>= 0.95); dim 768 Q_c=10 Q=5 noisy test {:.4}",
            noisy_cfg.epochs, noisy.test_acc, clean.test_acc, wide.test_acc
        ),
    );
}

#[test]
fn criterion_8_ablations() {
    let base = ExperimentConfig { epochs: 15, shots: Shots::Finite(8192), error_rate_1q: 1e-4, error_rate_2q: 1e-3, ..smoke_config() };
    let mut lines = Vec::new();
    let mut pass = true;
    for mode in [Ablation::NnEncoder, Ablation::NnHead, Ablation::NoFinalLinear] {
        let (report, _) = experiment::run_ablation(&base, mode).unwrap();
        let losses: Vec<f64> = report.run.epochs.iter().map(|e| e.loss).collect();
        let trained = losses.iter().all(|l| l.is_finite()) && losses.last() < losses.first() && report.run.test_acc > 0.5;
        pass &= trained;
        lines.push(format!(
            "{mode:?}: params {} -> {}, loss {:.3} -> {:.3}, test {:.3}",
            report.base_params,
            report.ablated_params,
            losses[0],
            losses[losses.len() - 1],
            report.run.test_acc
        ));
        if mode == Ablation::NoFinalLinear {
            let expected = (base.encoder_qubits + 1) * base.classes;
            let removed = report.base_params - report.ablated_params;
            pass &= removed == expected;
            lines.push(format!("removed {removed} = (Q_c+1)k = {expected}"));
        }
    }
    let nn = experiment::ablated_config(&base, Ablation::NnEncoder);
    assert_eq!((nn.model, nn.encoder), (ModelKind::Hybrid, EncoderType::Neural));
    verdict("8 (ablations)", pass, lines.join("; "));
}

fn run_cli(args: &[&str]) -> i32 {
    qhead::cli::run(std::iter::once("qhead").chain(args.iter().copied()))
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn criterion_9_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        epochs: 4,
        shots: Shots::Finite(8192),
        error_rate_1q: 2e-4,
        error_rate_2q: 2e-3,
        dataset: DatasetSource::Synthetic,
        ..smoke_config()
    };
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(&cfg_path, cfg.to_text()).unwrap();
    let cfg_arg = cfg_path.to_str().unwrap();
    let out = dir.path().join("out");
    let out_arg = out.to_str().unwrap();

    let artifacts = ["report.json", "metrics.csv", "checkpoint.qhd", "config.txt", "ablation.json", "gradcheck.json", "energy.csv"];
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        assert_eq!(run_cli(&["train", "--config", cfg_arg, "--out", out_arg]), 0);
        let mut snap = Vec::new();
        for f in &artifacts[..4] {
            snap.push(read(&out.join(f)));
        }
        assert_eq!(run_cli(&["ablate", "--mode", "no-final-linear", "--config", cfg_arg, "--out", out_arg]), 0);
        snap.push(read(&out.join("ablation.json")));
        let gc_cfg = dir.path().join("gc.cfg");
        let gc = ExperimentConfig { qubits: 3, encoder_qubits: 3, synthetic_dim: 8, encoder_layers: 2, ..cfg.clone() };
        std::fs::write(&gc_cfg, gc.to_text()).unwrap();
        assert_eq!(run_cli(&["gradcheck", "--config", gc_cfg.to_str().unwrap(), "--out", out_arg]), 0);
        snap.push(read(&out.join("gradcheck.json")));
        assert_eq!(run_cli(&["energy", "--out", out_arg]), 0);
        snap.push(read(&out.join("energy.csv")));
        snapshots.push(snap);
    }
    let same: Vec<&str> = artifacts.iter().zip(snapshots[0].iter().zip(&snapshots[1])).filter(|(_, (a, b))| a == b).map(|(n, _)| *n).collect();
    verdict(
        "9 (determinism)",
        same.len() == artifacts.len(),
        format!("noisy reruns bit-identical for {same:?} of {artifacts:?}"),
    );
}
