//! Gate noise trajectories and the differentiable shot-noise sampler.
//!
//! Depolarizing convention: after a gate, with probability `p` a uniformly
//! random non-identity Pauli is applied (one of 3 on a single qubit, one of
//! 15 on a pair). On a single qubit this contracts `<Z>` by `1 - 4p/3`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::ansatz::{Gate, GateList};
use crate::error::{Error, Result};
use crate::simcore::Pauli;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shots {
    Finite(u64),
    Infinite,
}

impl Shots {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Shots::Infinite)
    }
}

impl fmt::Display for Shots {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shots::Finite(n) => write!(f, "{n}"),
            Shots::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Shots {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinite") {
            return Ok(Shots::Infinite);
        }
        match s.parse::<u64>() {
            Ok(0) | Err(_) => Err(Error::config(format!("shots must be a positive integer or 'inf', got '{s}'"))),
            Ok(n) => Ok(Shots::Finite(n)),
        }
    }
}

impl Serialize for Shots {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Shots::Finite(n) => s.serialize_u64(*n),
            Shots::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Shots {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::Number(n) => n
                .as_u64()
                .filter(|&n| n > 0)
                .map(Shots::Finite)
                .ok_or_else(|| serde::de::Error::custom("shots must be positive")),
            serde_json::Value::String(s) => s.parse().map_err(serde::de::Error::custom),
            _ => Err(serde::de::Error::custom("shots must be a number or \"inf\"")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub p1q: f64,
    pub p2q: f64,
    pub shots: Shots,
    /// Root the trainer derives per-sample seeds from. Direct forward and
    /// gradient calls take explicit sample seeds instead.
    pub seed: u64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            p1q: 0.0,
            p2q: 0.0,
            shots: Shots::Infinite,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("error_rate_1q", self.p1q), ("error_rate_2q", self.p2q)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if self.shots == Shots::Finite(0) {
            return Err(Error::config("shots must be >= 1"));
        }
        Ok(())
    }

    pub fn has_gate_noise(&self) -> bool {
        self.p1q > 0.0 || self.p2q > 0.0
    }

    pub fn is_noiseless(&self) -> bool {
        !self.has_gate_noise() && self.shots.is_infinite()
    }
}

/// Samples one noise trajectory. Encoding steps are expanded so every
/// encoding rotation counts as a 1-qubit gate. Returns the augmented list and
/// the number of insertion events (a 2-qubit Pauli pair counts once).
pub fn sample_trajectory<R: Rng + ?Sized>(
    circuit: &GateList,
    model: &NoiseModel,
    rng: &mut R,
) -> (GateList, usize) {
    let expanded = circuit.expand_encodings();
    if !model.has_gate_noise() {
        return (expanded, 0);
    }
    let mut gates = Vec::with_capacity(expanded.gates.len() + 8);
    let mut events = 0;
    for gate in &expanded.gates {
        gates.push(*gate);
        match *gate {
            Gate::Ry { qubit, .. } | Gate::EncodeRy { qubit, .. } => {
                if model.p1q > 0.0 && rng.gen::<f64>() < model.p1q {
                    let pauli = Pauli::ALL[rng.gen_range(0..3)];
                    gates.push(Gate::Pauli { qubit, pauli });
                    events += 1;
                }
            }
            Gate::Cnot { control, target } => {
                if model.p2q > 0.0 && rng.gen::<f64>() < model.p2q {
                    // 1..16 indexes the 15 non-identity pairs; digit 0 is I
                    let idx = rng.gen_range(1..16usize);
                    for (qubit, digit) in [(control, idx / 4), (target, idx % 4)] {
                        if digit > 0 {
                            gates.push(Gate::Pauli {
                                qubit,
                                pauli: Pauli::ALL[digit - 1],
                            });
                        }
                    }
                    events += 1;
                }
            }
            Gate::Encode { .. } | Gate::Pauli { .. } => {}
        }
    }
    (
        GateList {
            num_qubits: expanded.num_qubits,
            encode_rounds: expanded.encode_rounds,
            gates,
        },
        events,
    )
}

pub fn sample_pauli_insertions<R: Rng + ?Sized>(circuit: &GateList, model: &NoiseModel, rng: &mut R) -> GateList {
    sample_trajectory(circuit, model, rng).0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotSample {
    /// Noisy `<Z>` estimate, clamped to `[-1, 1]`.
    pub estimate: f64,
    /// The value the gradient flows through (`d estimate / d mean_path = 1`).
    pub mean_path: f64,
}

/// Gaussian limit of the two-outcome multinomial `<Z>` estimator:
/// `clamp(z + eps * sqrt((1 - z^2) / S), -1, 1)` with `eps ~ N(0, 1)`.
/// With infinite shots the estimate is `z` and no randomness is drawn.
pub fn shot_sample_expectation<R: Rng + ?Sized>(z: f64, shots: Shots, rng: &mut R) -> ShotSample {
    let estimate = match shots {
        Shots::Infinite => z,
        Shots::Finite(s) => {
            let eps: f64 = StandardNormal.sample(rng);
            let var = ((1.0 - z * z) / s as f64).max(0.0);
            (z + eps * var.sqrt()).clamp(-1.0, 1.0)
        }
    };
    ShotSample { estimate, mean_path: z }
}

/// Exact multinomial counts, drawn as a chain of conditional binomials.
pub fn multinomial_oracle<R: Rng + ?Sized>(p: &[f64], n: u64, rng: &mut R) -> Result<Vec<u64>> {
    if p.is_empty() || p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::config("probabilities must lie in [0, 1]"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("probabilities sum to {total}, not 1")));
    }
    let mut counts = Vec::with_capacity(p.len());
    let mut remaining = n;
    let mut mass = 1.0;
    for &pi in &p[..p.len() - 1] {
        if remaining == 0 || mass <= 0.0 {
            counts.push(0);
            continue;
        }
        let cond = (pi / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, cond)
            .map_err(|e| Error::config(format!("binomial: {e}")))?
            .sample(rng);
        counts.push(draw);
        remaining -= draw;
        mass -= pi;
    }
    counts.push(remaining);
    Ok(counts)
}

/// Density-matrix reference for 1- and 2-qubit circuits under the same
/// depolarizing convention. Built from explicit matrices, independent of the
/// statevector kernels.
pub mod oracle {
    use num_complex::Complex64;

    use crate::ansatz::{Gate, GateList};
    use crate::error::{Error, Result};

    type C = Complex64;
    type Mat = Vec<Vec<C>>;

    fn c(re: f64) -> C {
        C::new(re, 0.0)
    }

    fn identity(d: usize) -> Mat {
        (0..d).map(|i| (0..d).map(|j| c(if i == j { 1.0 } else { 0.0 })).collect()).collect()
    }

    fn matmul(a: &Mat, b: &Mat) -> Mat {
        let d = a.len();
        (0..d)
            .map(|i| (0..d).map(|j| (0..d).map(|k| a[i][k] * b[k][j]).sum()).collect())
            .collect()
    }

    fn dagger(a: &Mat) -> Mat {
        let d = a.len();
        (0..d).map(|i| (0..d).map(|j| a[j][i].conj()).collect()).collect()
    }

    fn kron(a: &Mat, b: &Mat) -> Mat {
        let (da, db) = (a.len(), b.len());
        let mut out = vec![vec![c(0.0); da * db]; da * db];
        for i in 0..da {
            for j in 0..da {
                for k in 0..db {
                    for l in 0..db {
                        out[i * db + k][j * db + l] = a[i][j] * b[k][l];
                    }
                }
            }
        }
        out
    }

    /// I, X, Y, Z.
    fn paulis() -> [Mat; 4] {
        let i = C::new(0.0, 1.0);
        [
            identity(2),
            vec![vec![c(0.0), c(1.0)], vec![c(1.0), c(0.0)]],
            vec![vec![c(0.0), -i], vec![i, c(0.0)]],
            vec![vec![c(1.0), c(0.0)], vec![c(0.0), c(-1.0)]],
        ]
    }

    fn ry(theta: f64) -> Mat {
        let (s, co) = (theta / 2.0).sin_cos();
        vec![vec![c(co), c(-s)], vec![c(s), c(co)]]
    }

    pub struct DensityMatrix {
        n: usize,
        rho: Mat,
    }

    impl DensityMatrix {
        pub fn zero(n: usize) -> Result<Self> {
            if !(1..=2).contains(&n) {
                return Err(Error::config("density-matrix oracle supports 1 or 2 qubits"));
            }
            let d = 1 << n;
            let mut rho = vec![vec![c(0.0); d]; d];
            rho[0][0] = c(1.0);
            Ok(Self { n, rho })
        }

        fn lift(&self, q: usize, m: &Mat) -> Mat {
            match (self.n, q) {
                (1, _) => m.clone(),
                (_, 0) => kron(m, &identity(2)),
                _ => kron(&identity(2), m),
            }
        }

        fn conjugate(&self, u: &Mat) -> Mat {
            matmul(&matmul(u, &self.rho), &dagger(u))
        }

        pub fn apply_unitary(&mut self, u: &Mat) {
            self.rho = self.conjugate(u);
        }

        pub fn ry(&mut self, q: usize, theta: f64) {
            let u = self.lift(q, &ry(theta));
            self.apply_unitary(&u);
        }

        pub fn cnot(&mut self, control: usize, target: usize) {
            // basis |q0 q1>, q0 most significant
            let mut u = vec![vec![c(0.0); 4]; 4];
            for b in 0..4usize {
                let bits = [(b >> 1) & 1, b & 1];
                let mut out = bits;
                if bits[control] == 1 {
                    out[target] ^= 1;
                }
                u[out[0] * 2 + out[1]][b] = c(1.0);
            }
            self.apply_unitary(&u);
        }

        pub fn pauli(&mut self, q: usize, which: usize) {
            let u = self.lift(q, &paulis()[which]);
            self.apply_unitary(&u);
        }

        pub fn depolarize_1q(&mut self, q: usize, p: f64) {
            let ps = paulis();
            let d = self.rho.len();
            let mut acc = vec![vec![c(0.0); d]; d];
            for (k, pk) in ps.iter().enumerate() {
                let w = if k == 0 { 1.0 - p } else { p / 3.0 };
                let term = self.conjugate(&self.lift(q, pk));
                for i in 0..d {
                    for j in 0..d {
                        acc[i][j] += term[i][j] * w;
                    }
                }
            }
            self.rho = acc;
        }

        pub fn depolarize_2q(&mut self, p: f64) {
            let ps = paulis();
            let mut acc = vec![vec![c(0.0); 4]; 4];
            for a in 0..4 {
                for b in 0..4 {
                    let w = if a == 0 && b == 0 { 1.0 - p } else { p / 15.0 };
                    let term = self.conjugate(&kron(&ps[a], &ps[b]));
                    for i in 0..4 {
                        for j in 0..4 {
                            acc[i][j] += term[i][j] * w;
                        }
                    }
                }
            }
            self.rho = acc;
        }

        pub fn z_expectation(&self, q: usize) -> f64 {
            let d = self.rho.len();
            (0..d)
                .map(|i| {
                    let bit = (i >> (self.n - 1 - q)) & 1;
                    let sign = if bit == 0 { 1.0 } else { -1.0 };
                    sign * self.rho[i][i].re
                })
                .sum()
        }

        pub fn trace(&self) -> f64 {
            (0..self.rho.len()).map(|i| self.rho[i][i].re).sum()
        }
    }

    /// Exact noisy `<Z_measured>` of a (non-trajectory) gate list on 1 or 2
    /// qubits, with depolarizing after every gate.
    pub fn noisy_expectation(
        circuit: &GateList,
        params: &[f64],
        latent: &[f64],
        p1q: f64,
        p2q: f64,
        measured: usize,
    ) -> Result<f64> {
        let n = circuit.num_qubits;
        let mut dm = DensityMatrix::zero(n)?;
        for gate in &circuit.expand_encodings().gates {
            match *gate {
                Gate::Ry { qubit, slot } => {
                    dm.ry(qubit, params[slot]);
                    dm.depolarize_1q(qubit, p1q);
                }
                Gate::EncodeRy { round, qubit, .. } => {
                    dm.ry(qubit, latent[round * n + qubit]);
                    dm.depolarize_1q(qubit, p1q);
                }
                Gate::Cnot { control, target } => {
                    dm.cnot(control, target);
                    dm.depolarize_2q(p2q);
                }
                Gate::Pauli { .. } | Gate::Encode { .. } => {
                    return Err(Error::config("oracle expects a noiseless, expandable circuit"))
                }
            }
        }
        Ok(dm.z_expectation(measured))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{assemble_head_circuit, CircuitSpec};
    use crate::grad::evaluate_expectation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_ry() -> GateList {
        GateList { num_qubits: 1, encode_rounds: 1, gates: vec![Gate::Ry { qubit: 0, slot: 0 }] }
    }

    #[test]
    fn zero_rates_leave_circuit_unchanged() {
        let c = assemble_head_circuit(&CircuitSpec::standard(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = sample_pauli_insertions(&c, &NoiseModel::noiseless(), &mut rng);
        assert_eq!(t, c.expand_encodings());
    }

    #[test]
    fn expected_insertion_count() {
        let c = assemble_head_circuit(&CircuitSpec::standard(4)).unwrap();
        let (sq, tq) = c.gate_counts();
        let model = NoiseModel { p1q: 0.02, p2q: 0.05, shots: Shots::Infinite, seed: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 20_000;
        let total: usize = (0..trials).map(|_| sample_trajectory(&c, &model, &mut rng).1).sum();
        let mean = total as f64 / trials as f64;
        let expected = 0.02 * sq as f64 + 0.05 * tq as f64;
        // Poisson-binomial variance is below the mean
        let sigma = (expected / trials as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * sigma, "{mean} vs {expected}");
    }

    #[test]
    fn single_qubit_contraction() {
        let p = 0.1;
        let theta = 0.7;
        let c = single_ry();
        let exact = oracle::noisy_expectation(&c, &[theta], &[], p, 0.0, 0).unwrap();
        assert!((exact - (1.0 - 4.0 * p / 3.0) * theta.cos()).abs() < 1e-12);

        let model = NoiseModel { p1q: p, p2q: 0.0, shots: Shots::Infinite, seed: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let trials = 40_000;
        let mut sum = 0.0;
        for _ in 0..trials {
            let t = sample_pauli_insertions(&c, &model, &mut rng);
            sum += evaluate_expectation(&t, &[theta], &[], 0).unwrap();
        }
        let mean = sum / trials as f64;
        assert!((mean - exact).abs() < 4.0 / (trials as f64).sqrt(), "{mean} vs {exact}");
    }

    #[test]
    fn density_matrix_trace_preserved() {
        let mut dm = oracle::DensityMatrix::zero(2).unwrap();
        dm.ry(0, 0.4);
        dm.cnot(0, 1);
        dm.depolarize_2q(0.3);
        dm.depolarize_1q(1, 0.2);
        assert!((dm.trace() - 1.0).abs() < 1e-12);
        assert!(oracle::DensityMatrix::zero(3).is_err());
    }

    #[test]
    fn trajectories_match_oracle_at_high_rates() {
        let spec = crate::ansatz::CircuitSpec { qubits: 2, connectivity: 1, main_layers: 2, reupload_layers: 1, reuploads: 1, encode_rounds: 1 };
        let c = crate::ansatz::assemble_head_circuit(&spec).unwrap();
        let params: Vec<f64> = (0..c.num_params()).map(|i| 0.5 - 0.6 * i as f64).collect();
        let latent = [0.2, 1.1];
        let (p1, p2) = (0.05, 0.1);
        let model = NoiseModel { p1q: p1, p2q: p2, shots: Shots::Infinite, seed: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let s: Vec<f64> = (0..n)
            .map(|_| crate::grad::evaluate_expectation(&sample_trajectory(&c, &model, &mut rng).0, &params, &latent, 0).unwrap())
            .collect();
        let m = s.iter().sum::<f64>() / n as f64;
        let sd = (s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let exact = oracle::noisy_expectation(&c, &params, &latent, p1, p2, 0).unwrap();
        let clean = crate::grad::evaluate_expectation(&c, &params, &latent, 0).unwrap();
        assert!((exact - clean).abs() > 20.0 * sd / (n as f64).sqrt());
        assert!((m - exact).abs() < 4.0 * sd / (n as f64).sqrt(), "{m} vs {exact}");
    }

    #[test]
    fn shot_sampler_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(shot_sample_expectation(1.0, Shots::Finite(10), &mut rng).estimate, 1.0);
        assert_eq!(shot_sample_expectation(-1.0, Shots::Finite(10), &mut rng).estimate, -1.0);
        let s = shot_sample_expectation(0.3, Shots::Infinite, &mut rng);
        assert_eq!(s.estimate, 0.3);
        assert_eq!(s.mean_path, 0.3);
        for _ in 0..1000 {
            let s = shot_sample_expectation(0.99, Shots::Finite(1), &mut rng);
            assert!((-1.0..=1.0).contains(&s.estimate));
        }
        let big = shot_sample_expectation(0.2, Shots::Finite(u64::MAX / 2), &mut rng);
        assert!((big.estimate - 0.2).abs() < 1e-8);
    }

    #[test]
    fn multinomial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(multinomial_oracle(&[1.0, 0.0], 77, &mut rng).unwrap(), vec![77, 0]);
        let c = multinomial_oracle(&[0.2, 0.3, 0.5], 1000, &mut rng).unwrap();
        assert_eq!(c.iter().sum::<u64>(), 1000);
        assert!(multinomial_oracle(&[0.2, 0.3], 10, &mut rng).is_err());
        assert!(multinomial_oracle(&[1.2, -0.2], 10, &mut rng).is_err());

        let reps = 4000;
        let draws: Vec<f64> = (0..reps)
            .map(|_| multinomial_oracle(&[0.5, 0.5], 8192, &mut rng).unwrap()[0] as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / reps as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        assert!((mean - 4096.0).abs() < 4.0 * (2048.0 / reps as f64).sqrt());
        assert!((var / 2048.0 - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn shots_parse() {
        assert_eq!("inf".parse::<Shots>().unwrap(), Shots::Infinite);
        assert_eq!("8192".parse::<Shots>().unwrap(), Shots::Finite(8192));
        assert!("0".parse::<Shots>().is_err());
        assert!("-3".parse::<Shots>().is_err());
        let json = serde_json::to_string(&Shots::Infinite).unwrap();
        assert_eq!(serde_json::from_str::<Shots>(&json).unwrap(), Shots::Infinite);
    }
}
