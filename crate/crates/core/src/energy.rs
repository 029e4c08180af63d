//! Inference energy of one circuit evaluation on a QPU versus a statevector
//! simulation on GPUs, and the qubit count where the GPU becomes costlier.

use serde::{Deserialize, Serialize};

use crate::ansatz::{gate_counts, CircuitSpec};
use crate::error::{Error, Result};

pub const CROSSOVER_SCAN: std::ops::RangeInclusive<usize> = 2..=60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyConstants {
    /// QPU power per qubit, W.
    pub p_qpu: f64,
    /// Single-qubit gate time, s.
    pub t_1q: f64,
    /// Two-qubit gate time, s.
    pub t_2q: f64,
    pub shots: f64,
    /// GPU power, W.
    pub p_gpu: f64,
    /// GPU throughput, FLOP/s.
    pub f_gpu: f64,
}

impl Default for EnergyConstants {
    fn default() -> Self {
        Self { p_qpu: 300.0, t_1q: 1e-4, t_2q: 1e-5, shots: 8000.0, p_gpu: 700.0, f_gpu: 3.4e13 }
    }
}

impl EnergyConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p_qpu", self.p_qpu),
            ("t_1q", self.t_1q),
            ("t_2q", self.t_2q),
            ("shots", self.shots),
            ("p_gpu", self.p_gpu),
            ("f_gpu", self.f_gpu),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("energy constant {name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    /// The alternative reading where the GPU formula is charged at the QPU
    /// per-qubit power.
    pub fn with_qpu_power_on_gpu(self) -> Self {
        Self { p_gpu: self.p_qpu, ..self }
    }
}

/// kJ for `shots` executions on a QPU of `qubits` qubits.
pub fn qpu_energy_from_counts(qubits: usize, sq: usize, tq: usize, c: &EnergyConstants) -> f64 {
    qubits as f64 * (sq as f64 * c.t_1q + tq as f64 * c.t_2q) * c.shots * (c.p_qpu / 1000.0)
}

/// kJ for one statevector pass; a 1q gate costs 4 and a 2q gate 8 FLOP per amplitude.
pub fn gpu_energy_from_counts(qubits: usize, sq: usize, tq: usize, c: &EnergyConstants) -> f64 {
    (qubits as f64).exp2() * (sq as f64 * 4.0 + tq as f64 * 8.0) / c.f_gpu * (c.p_gpu / 1000.0)
}

pub fn qpu_energy(spec: &CircuitSpec, c: &EnergyConstants) -> f64 {
    let (sq, tq) = gate_counts(spec);
    qpu_energy_from_counts(spec.qubits, sq, tq, c)
}

pub fn gpu_energy(spec: &CircuitSpec, c: &EnergyConstants) -> f64 {
    let (sq, tq) = gate_counts(spec);
    gpu_energy_from_counts(spec.qubits, sq, tq, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyPoint {
    pub qubits: usize,
    pub e_qpu_kj: f64,
    pub e_gpu_kj: f64,
}

/// Energies over the scan range for the `standard` ansatz family.
pub fn energy_curve(c: &EnergyConstants) -> Vec<EnergyPoint> {
    CROSSOVER_SCAN
        .map(|q| {
            let spec = CircuitSpec::standard(q);
            EnergyPoint { qubits: q, e_qpu_kj: qpu_energy(&spec, c), e_gpu_kj: gpu_energy(&spec, c) }
        })
        .collect()
}

/// Smallest scanned qubit count with `E_gpu >= E_qpu`.
pub fn find_crossover(c: &EnergyConstants) -> Option<usize> {
    energy_curve(c).into_iter().find(|p| p.e_gpu_kj >= p.e_qpu_kj).map(|p| p.qubits)
}

/// Number of sign changes of `E_gpu - E_qpu` along the curve.
pub fn sign_changes(curve: &[EnergyPoint]) -> usize {
    curve
        .windows(2)
        .filter(|w| (w[0].e_gpu_kj >= w[0].e_qpu_kj) != (w[1].e_gpu_kj >= w[1].e_qpu_kj))
        .count()
}

pub fn curve_csv(curve: &[EnergyPoint]) -> String {
    let mut out = String::from("qubits,e_qpu_kj,e_gpu_kj\n");
    for p in curve {
        out.push_str(&format!("{},{:e},{:e}\n", p.qubits, p.e_qpu_kj, p.e_gpu_kj));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qpu_ten_qubits() {
        let e = qpu_energy(&CircuitSpec::standard(10), &EnergyConstants::default());
        assert!((e - 278.4).abs() < 1e-9, "{e}");
        assert_eq!(qpu_energy_from_counts(10, 0, 0, &EnergyConstants::default()), 0.0);
    }

    #[test]
    fn linear_in_shots_and_power() {
        let spec = CircuitSpec::standard(8);
        let c = EnergyConstants::default();
        let double = EnergyConstants { shots: 2.0 * c.shots, p_gpu: 2.0 * c.p_gpu, ..c };
        assert!((qpu_energy(&spec, &double) - 2.0 * qpu_energy(&spec, &c)).abs() < 1e-9);
        assert!((gpu_energy(&spec, &double) - 2.0 * gpu_energy(&spec, &c)).abs() < 1e-18);
    }

    #[test]
    fn gpu_exponential_in_qubits() {
        let c = EnergyConstants::default();
        let a = gpu_energy_from_counts(10, 50, 20, &c);
        let b = gpu_energy_from_counts(13, 50, 20, &c);
        assert!((b / a - 8.0).abs() < 1e-12);
        let curve = energy_curve(&c);
        assert!(curve.windows(2).all(|w| w[1].e_gpu_kj > w[0].e_gpu_kj && w[1].e_qpu_kj > w[0].e_qpu_kj));
    }

    #[test]
    fn forty_six_qubits() {
        let c = EnergyConstants::default();
        let spec = CircuitSpec::standard(46);
        assert_eq!(gate_counts(&spec), (11 * 46, 6 * 46));
        let (q, g) = (qpu_energy(&spec, &c), gpu_energy(&spec, &c));
        assert!((q - 5891.0).abs() < 1.0 && (g - 6131.0).abs() < 1.0, "{q} {g}");
    }

    #[test]
    fn crossover() {
        let c = EnergyConstants::default();
        assert_eq!(find_crossover(&c), Some(46));
        assert_eq!(sign_changes(&energy_curve(&c)), 1);
        let faster = EnergyConstants { f_gpu: 10.0 * c.f_gpu, ..c };
        assert_eq!(find_crossover(&faster), Some(50));
        let t2q = EnergyConstants { t_2q: 3.0 * c.t_2q, ..c };
        let s = CircuitSpec::standard(20);
        assert_eq!(gpu_energy(&s, &t2q), gpu_energy(&s, &c));
        assert_eq!(find_crossover(&c.with_qpu_power_on_gpu()), Some(48));
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(EnergyConstants { f_gpu: 0.0, ..Default::default() }.validate().is_err());
        assert!(EnergyConstants::default().validate().is_ok());
    }
}
