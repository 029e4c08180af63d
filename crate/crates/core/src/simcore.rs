//! Noiseless statevector simulation.
//!
//! Qubit 0 is the most significant bit of a basis index: on `Q` qubits,
//! qubit `q` flips bit `Q - 1 - q`. Gates act in place with stride
//! arithmetic; no dense `2^Q x 2^Q` operator is ever formed.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 24;

/// Inputs whose L2 norm falls below this are rejected by amplitude encoding.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amplitudes: Vec<Complex64>,
}

fn check_qubit_count(num_qubits: usize) -> Result<()> {
    if num_qubits == 0 || num_qubits > MAX_QUBITS {
        return Err(Error::config(format!(
            "qubit count {num_qubits} outside 1..={MAX_QUBITS}"
        )));
    }
    Ok(())
}

impl StateVector {
    /// `|0...0>` on `num_qubits` qubits.
    pub fn zero(num_qubits: usize) -> Result<Self> {
        check_qubit_count(num_qubits)?;
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << num_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(Self {
            num_qubits,
            amplitudes,
        })
    }

    /// Wraps raw amplitudes. The length must be a power of two; the norm is
    /// not checked so that tests can build unnormalized probes.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::config(format!(
                "amplitude array length {len} is not a power of two >= 2"
            )));
        }
        let num_qubits = len.trailing_zeros() as usize;
        check_qubit_count(num_qubits)?;
        Ok(Self {
            num_qubits,
            amplitudes,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    fn mask(&self, q: usize) -> Result<usize> {
        if q >= self.num_qubits {
            return Err(Error::config(format!(
                "qubit index {q} out of range for {} qubits",
                self.num_qubits
            )));
        }
        Ok(1 << (self.num_qubits - 1 - q))
    }

    /// Applies a real 2x2 matrix `[[m00, m01], [m10, m11]]` to qubit `q`.
    pub(crate) fn apply_real_1q(&mut self, q: usize, m: [[f64; 2]; 2]) -> Result<()> {
        let bit = self.mask(q)?;
        let dim = self.amplitudes.len();
        for base in (0..dim).step_by(bit << 1) {
            for i in base..base + bit {
                let a0 = self.amplitudes[i];
                let a1 = self.amplitudes[i + bit];
                self.amplitudes[i] = a0 * m[0][0] + a1 * m[0][1];
                self.amplitudes[i + bit] = a0 * m[1][0] + a1 * m[1][1];
            }
        }
        Ok(())
    }

    /// `<bra| M_q |self>` for a real 2x2 matrix `M` acting on qubit `q`,
    /// without materializing `M_q |self>`.
    pub(crate) fn real_1q_element(&self, bra: &StateVector, q: usize, m: [[f64; 2]; 2]) -> Result<Complex64> {
        let bit = self.mask(q)?;
        let dim = self.amplitudes.len();
        let mut acc = Complex64::new(0.0, 0.0);
        for base in (0..dim).step_by(bit << 1) {
            for i in base..base + bit {
                let a0 = self.amplitudes[i];
                let a1 = self.amplitudes[i + bit];
                acc += bra.amplitudes[i].conj() * (a0 * m[0][0] + a1 * m[0][1]);
                acc += bra.amplitudes[i + bit].conj() * (a0 * m[1][0] + a1 * m[1][1]);
            }
        }
        Ok(acc)
    }

    /// `RY(theta) = [[cos(theta/2), -sin(theta/2)], [sin(theta/2), cos(theta/2)]]`.
    pub fn apply_ry(&mut self, q: usize, theta: f64) -> Result<()> {
        let (s, c) = (theta * 0.5).sin_cos();
        self.apply_real_1q(q, [[c, -s], [s, c]])
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        if control == target {
            return Err(Error::config(format!(
                "CNOT control and target are both qubit {control}"
            )));
        }
        let cbit = self.mask(control)?;
        let tbit = self.mask(target)?;
        for i in 0..self.amplitudes.len() {
            if i & cbit != 0 && i & tbit == 0 {
                self.amplitudes.swap(i, i | tbit);
            }
        }
        Ok(())
    }

    pub fn apply_pauli(&mut self, q: usize, which: Pauli) -> Result<()> {
        let bit = self.mask(q)?;
        let dim = self.amplitudes.len();
        let i_unit = Complex64::new(0.0, 1.0);
        for base in (0..dim).step_by(bit << 1) {
            for i in base..base + bit {
                let a0 = self.amplitudes[i];
                let a1 = self.amplitudes[i + bit];
                let (n0, n1) = match which {
                    Pauli::X => (a1, a0),
                    Pauli::Y => (-i_unit * a1, i_unit * a0),
                    Pauli::Z => (a0, -a1),
                };
                self.amplitudes[i] = n0;
                self.amplitudes[i + bit] = n1;
            }
        }
        Ok(())
    }

    /// `RY(x_i)` on every qubit `i`. Acts on the current state so it can be
    /// reapplied mid-circuit.
    pub fn angle_encode(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.num_qubits {
            return Err(Error::config(format!(
                "angle encoding needs {} values, got {}",
                self.num_qubits,
                x.len()
            )));
        }
        for (q, &v) in x.iter().enumerate() {
            self.apply_ry(q, v)?;
        }
        Ok(())
    }

    /// `<Z_q>`: sum of `|a_i|^2`, signed by bit `q` of `i`.
    pub fn z_expectation(&self, q: usize) -> Result<f64> {
        let bit = self.mask(q)?;
        Ok(self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(i, a)| if i & bit == 0 { a.norm_sqr() } else { -a.norm_sqr() })
            .sum())
    }

    /// `<Z_q>` for every qubit in one pass over the amplitudes.
    pub fn z_expectations(&self) -> Vec<f64> {
        let n = self.num_qubits;
        let mut out = vec![0.0; n];
        for (i, a) in self.amplitudes.iter().enumerate() {
            let p = a.norm_sqr();
            for (q, acc) in out.iter_mut().enumerate() {
                if i & (1 << (n - 1 - q)) == 0 {
                    *acc += p;
                } else {
                    *acc -= p;
                }
            }
        }
        out
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

/// Loads `x`, zero-padded to `2^num_qubits`, as normalized amplitudes.
pub fn amplitude_encode(x: &[f64], num_qubits: usize) -> Result<StateVector> {
    check_qubit_count(num_qubits)?;
    let dim = 1usize << num_qubits;
    if x.is_empty() || x.len() > dim {
        return Err(Error::config(format!(
            "cannot amplitude-encode {} values into {num_qubits} qubits (capacity {dim})",
            x.len()
        )));
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || norm < DEGENERATE_NORM {
        return Err(Error::DegenerateInput(format!(
            "input norm {norm:e} below {DEGENERATE_NORM:e}"
        )));
    }
    let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
    for (a, &v) in amplitudes.iter_mut().zip(x) {
        *a = Complex64::new(v / norm, 0.0);
    }
    Ok(StateVector {
        num_qubits,
        amplitudes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn re(state: &StateVector) -> Vec<f64> {
        state.amplitudes().iter().map(|a| a.re).collect()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn zero_state_layout() {
        assert_eq!(re(&StateVector::zero(1).unwrap()), vec![1.0, 0.0]);
        assert_eq!(re(&StateVector::zero(2).unwrap()), vec![1.0, 0.0, 0.0, 0.0]);
        let s = StateVector::zero(10).unwrap();
        assert_eq!(s.amplitudes().len(), 1024);
        assert!((s.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_state_rejects_bad_counts() {
        assert!(matches!(StateVector::zero(0), Err(Error::Config(_))));
        assert!(matches!(StateVector::zero(25), Err(Error::Config(_))));
    }

    #[test]
    fn ry_cases() {
        let mut s = StateVector::zero(1).unwrap();
        s.apply_ry(0, PI).unwrap();
        assert_close(&re(&s), &[0.0, 1.0], 1e-15);

        let mut s = StateVector::zero(1).unwrap();
        s.apply_ry(0, 0.0).unwrap();
        assert_close(&re(&s), &[1.0, 0.0], 0.0 + 1e-300);

        let mut s = StateVector::zero(1).unwrap();
        s.apply_ry(0, PI / 2.0).unwrap();
        assert_close(&re(&s), &[FRAC_1_SQRT_2, FRAC_1_SQRT_2], 1e-15);
    }

    #[test]
    fn qubit_zero_is_most_significant() {
        let mut s = StateVector::zero(2).unwrap();
        s.apply_pauli(0, Pauli::X).unwrap();
        // |10> is basis index 2
        assert_close(&re(&s), &[0.0, 0.0, 1.0, 0.0], 0.0 + 1e-300);
    }

    #[test]
    fn cnot_cases() {
        let mut s = StateVector::zero(2).unwrap();
        s.apply_pauli(0, Pauli::X).unwrap();
        s.apply_cnot(0, 1).unwrap();
        assert_close(&re(&s), &[0.0, 0.0, 0.0, 1.0], 1e-300);

        let mut s = StateVector::zero(2).unwrap();
        s.apply_cnot(0, 1).unwrap();
        assert_close(&re(&s), &[1.0, 0.0, 0.0, 0.0], 1e-300);

        let mut s = StateVector::zero(3).unwrap();
        s.angle_encode(&[0.3, 1.1, -0.7]).unwrap();
        let before = s.clone();
        s.apply_cnot(2, 0).unwrap();
        s.apply_cnot(2, 0).unwrap();
        assert_eq!(s, before);

        assert!(matches!(s.apply_cnot(1, 1), Err(Error::Config(_))));
        assert!(matches!(s.apply_cnot(0, 3), Err(Error::Config(_))));
    }

    #[test]
    fn pauli_cases() {
        let mut s = StateVector::zero(1).unwrap();
        s.apply_pauli(0, Pauli::X).unwrap();
        assert_close(&re(&s), &[0.0, 1.0], 1e-300);

        let mut s = StateVector::zero(1).unwrap();
        s.apply_pauli(0, Pauli::Z).unwrap();
        assert_close(&re(&s), &[1.0, 0.0], 1e-300);

        let mut s = StateVector::zero(1).unwrap();
        s.apply_pauli(0, Pauli::Y).unwrap();
        assert_eq!(s.amplitudes()[0], Complex64::new(0.0, 0.0));
        assert_eq!(s.amplitudes()[1], Complex64::new(0.0, 1.0));
    }

    #[test]
    fn amplitude_encode_cases() {
        let s = amplitude_encode(&[1.0, 0.0, 0.0, 0.0], 2).unwrap();
        assert_close(&re(&s), &[1.0, 0.0, 0.0, 0.0], 1e-300);

        let s = amplitude_encode(&[3.0, 4.0], 1).unwrap();
        assert_close(&re(&s), &[0.6, 0.8], 1e-15);

        let x: Vec<f64> = (0..768).map(|i| ((i * 37 % 101) as f64) - 50.0).collect();
        let s = amplitude_encode(&x, 10).unwrap();
        assert_eq!(s.amplitudes().len(), 1024);
        assert!(s.amplitudes()[768..].iter().all(|a| *a == Complex64::new(0.0, 0.0)));
        assert!((s.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn amplitude_encode_errors() {
        assert!(matches!(
            amplitude_encode(&[0.0, 0.0], 1),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            amplitude_encode(&[1.0, 2.0, 3.0], 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(amplitude_encode(&[], 1), Err(Error::Config(_))));
        // just above the threshold still normalizes
        let s = amplitude_encode(&[1e-11, 0.0], 1).unwrap();
        assert!((s.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn angle_encode_cases() {
        let mut s = StateVector::zero(3).unwrap();
        s.angle_encode(&[0.0; 3]).unwrap();
        assert_eq!(s, StateVector::zero(3).unwrap());

        let mut s = StateVector::zero(1).unwrap();
        s.angle_encode(&[PI]).unwrap();
        assert_close(&re(&s), &[0.0, 1.0], 1e-15);

        let mut s = StateVector::zero(2).unwrap();
        s.angle_encode(&[PI / 2.0, PI / 2.0]).unwrap();
        assert_close(&re(&s), &[0.5; 4], 1e-15);

        assert!(matches!(s.angle_encode(&[0.1]), Err(Error::Config(_))));
    }

    #[test]
    fn z_expectation_cases() {
        let s = StateVector::zero(1).unwrap();
        assert_eq!(s.z_expectation(0).unwrap(), 1.0);

        for theta in [-2.0, -0.3, 0.0, 0.9, 2.5] {
            let mut s = StateVector::zero(1).unwrap();
            s.apply_ry(0, theta).unwrap();
            assert!((s.z_expectation(0).unwrap() - f64::cos(theta)).abs() < 1e-12);
        }

        let mut s = StateVector::zero(2).unwrap();
        s.angle_encode(&[PI / 2.0, PI / 2.0]).unwrap();
        assert!(s.z_expectation(0).unwrap().abs() < 1e-15);
        let all = s.z_expectations();
        assert!(all.iter().all(|z| z.abs() < 1e-15));
    }

    #[test]
    fn probabilities_cases() {
        assert_eq!(StateVector::zero(1).unwrap().probabilities(), vec![1.0, 0.0]);
        let mut s = StateVector::zero(1).unwrap();
        s.apply_ry(0, PI / 2.0).unwrap();
        let p = s.probabilities();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }
}
