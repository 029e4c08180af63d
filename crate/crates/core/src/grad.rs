//! Expectation values of assembled circuits and their gradients.
//!
//! Three routes are provided: parameter-shift (exact for RY circuits, valid
//! on noise trajectories), adjoint reverse accumulation (noiseless fast
//! path), and central finite differences (test oracle). Gradients cover both
//! the trainable slots and the latent values consumed by encoding steps; a
//! latent entry read by several encoding steps accumulates all of them.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{Gate, GateList};
use crate::error::{Error, Result};
use crate::simcore::StateVector;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CircuitGradient {
    /// One entry per parameter slot.
    pub params: Vec<f64>,
    /// One entry per latent value.
    pub latent: Vec<f64>,
}

fn check_inputs(circuit: &GateList, params: &[f64], latent: &[f64], measured: usize) -> Result<()> {
    let slots = circuit.num_params();
    if params.len() != slots {
        return Err(Error::config(format!(
            "circuit has {slots} parameter slots, got {} values",
            params.len()
        )));
    }
    let needs_latent = circuit
        .gates
        .iter()
        .any(|g| matches!(g, Gate::Encode { .. } | Gate::EncodeRy { .. }));
    if needs_latent && latent.len() != circuit.latent_len() {
        return Err(Error::config(format!(
            "circuit encodes {} latent values, got {}",
            circuit.latent_len(),
            latent.len()
        )));
    }
    if measured >= circuit.num_qubits {
        return Err(Error::config(format!(
            "measured qubit {measured} out of range for {} qubits",
            circuit.num_qubits
        )));
    }
    Ok(())
}

/// Angle of a rotation record, if it is one.
fn rotation(gate: &Gate, nq: usize, params: &[f64], latent: &[f64]) -> Option<(usize, f64)> {
    match *gate {
        Gate::Ry { qubit, slot } => Some((qubit, params[slot])),
        Gate::EncodeRy { round, qubit, .. } => Some((qubit, latent[round * nq + qubit])),
        _ => None,
    }
}

fn apply(
    state: &mut StateVector,
    gate: &Gate,
    nq: usize,
    rounds: usize,
    params: &[f64],
    latent: &[f64],
    shift: f64,
) -> Result<()> {
    match *gate {
        Gate::Cnot { control, target } => state.apply_cnot(control, target),
        Gate::Ry { qubit, slot } => state.apply_ry(qubit, params[slot] + shift),
        Gate::EncodeRy { round, qubit, .. } => state.apply_ry(qubit, latent[round * nq + qubit] + shift),
        Gate::Encode { .. } => {
            for round in 0..rounds {
                state.angle_encode(&latent[round * nq..(round + 1) * nq])?;
            }
            Ok(())
        }
        Gate::Pauli { qubit, pauli } => state.apply_pauli(qubit, pauli),
    }
}

/// Runs the circuit from `|0...0>`; if `shift = Some((k, d))`, the `k`-th
/// gate record gets `d` added to its angle.
fn run_shifted(
    circuit: &GateList,
    initial: Option<&StateVector>,
    params: &[f64],
    latent: &[f64],
    shift: Option<(usize, f64)>,
) -> Result<StateVector> {
    let nq = circuit.num_qubits;
    let mut state = match initial {
        Some(s) if s.num_qubits() == nq => s.clone(),
        Some(s) => {
            return Err(Error::config(format!(
                "initial state has {} qubits, circuit {nq}",
                s.num_qubits()
            )))
        }
        None => StateVector::zero(nq)?,
    };
    for (k, gate) in circuit.gates.iter().enumerate() {
        let d = match shift {
            Some((idx, d)) if idx == k => d,
            _ => 0.0,
        };
        apply(&mut state, gate, nq, circuit.encode_rounds, params, latent, d)?;
    }
    Ok(state)
}

pub fn run_circuit(circuit: &GateList, params: &[f64], latent: &[f64]) -> Result<StateVector> {
    check_inputs(circuit, params, latent, 0)?;
    run_shifted(circuit, None, params, latent, None)
}

/// Runs the circuit starting from `initial` instead of `|0...0>`.
pub fn run_circuit_from(
    circuit: &GateList,
    initial: &StateVector,
    params: &[f64],
    latent: &[f64],
) -> Result<StateVector> {
    check_inputs(circuit, params, latent, 0)?;
    run_shifted(circuit, Some(initial), params, latent, None)
}

/// Noiseless, infinite-shot `<Z>` on `measured`.
pub fn evaluate_expectation(
    circuit: &GateList,
    params: &[f64],
    latent: &[f64],
    measured: usize,
) -> Result<f64> {
    check_inputs(circuit, params, latent, measured)?;
    run_shifted(circuit, None, params, latent, None)?.z_expectation(measured)
}

fn scatter(
    circuit: &GateList,
    per_gate: impl Iterator<Item = (usize, f64)>,
    n_params: usize,
    n_latent: usize,
) -> CircuitGradient {
    let nq = circuit.num_qubits;
    let mut out = CircuitGradient {
        params: vec![0.0; n_params],
        latent: vec![0.0; n_latent],
    };
    for (k, g) in per_gate {
        match circuit.gates[k] {
            Gate::Ry { slot, .. } => out.params[slot] += g,
            Gate::EncodeRy { round, qubit, .. } => out.latent[round * nq + qubit] += g,
            _ => {}
        }
    }
    out
}

/// `dE/dtheta = [E(theta + pi/2) - E(theta - pi/2)] / 2`, applied to every
/// rotation record and summed per slot. Works on noise trajectories (Pauli
/// insertions are held fixed across the shifted evaluations).
pub fn parameter_shift_gradient(
    circuit: &GateList,
    params: &[f64],
    latent: &[f64],
    measured: usize,
) -> Result<CircuitGradient> {
    parameter_shift_multi(circuit, None, params, latent, &[(measured, 1.0)])
}

fn weighted_z(state: &StateVector, observable: &[(usize, f64)]) -> Result<f64> {
    observable
        .iter()
        .map(|&(q, w)| state.z_expectation(q).map(|z| w * z))
        .sum()
}

/// Parameter-shift gradient of `sum_q w_q <Z_q>`, optionally starting from
/// `initial`.
pub fn parameter_shift_multi(
    circuit: &GateList,
    initial: Option<&StateVector>,
    params: &[f64],
    latent: &[f64],
    observable: &[(usize, f64)],
) -> Result<CircuitGradient> {
    for &(q, _) in observable {
        check_inputs(circuit, params, latent, q)?;
    }
    let expanded = circuit.expand_encodings();
    let rotations: Vec<usize> = expanded
        .gates
        .iter()
        .enumerate()
        .filter(|(_, g)| matches!(g, Gate::Ry { .. } | Gate::EncodeRy { .. }))
        .map(|(k, _)| k)
        .collect();
    let shifted: Vec<(usize, f64)> = rotations
        .par_iter()
        .map(|&k| -> Result<(usize, f64)> {
            let plus = weighted_z(&run_shifted(&expanded, initial, params, latent, Some((k, FRAC_PI_2)))?, observable)?;
            let minus = weighted_z(&run_shifted(&expanded, initial, params, latent, Some((k, -FRAC_PI_2)))?, observable)?;
            Ok((k, 0.5 * (plus - minus)))
        })
        .collect::<Result<_>>()?;
    let n_latent = if latent.is_empty() { 0 } else { circuit.latent_len() };
    Ok(scatter(&expanded, shifted.into_iter(), params.len(), n_latent))
}

/// Reverse-mode gradient of `<Z_measured>`: one forward pass, one backward
/// pass carrying `|psi>` and `Z|psi>` back through the gate list. Only for
/// noiseless circuits; trajectories with Pauli insertions are rejected.
pub fn adjoint_gradient(
    circuit: &GateList,
    params: &[f64],
    latent: &[f64],
    measured: usize,
) -> Result<CircuitGradient> {
    Ok(adjoint_value_and_gradient(circuit, params, latent, measured)?.1)
}

/// Like [`adjoint_gradient`] but also returns `<Z_measured>`.
pub fn adjoint_value_and_gradient(
    circuit: &GateList,
    params: &[f64],
    latent: &[f64],
    measured: usize,
) -> Result<(f64, CircuitGradient)> {
    let (values, grads) = adjoint_multi(circuit, None, params, latent, &[(measured, 1.0)])?;
    Ok((values[0], grads))
}

/// Gradient of `sum_q w_q <Z_q>` for the given `(qubit, weight)` pairs, plus
/// every `<Z_q>`. Used by the encoder, whose loss depends on all qubits.
pub fn adjoint_multi(
    circuit: &GateList,
    initial: Option<&StateVector>,
    params: &[f64],
    latent: &[f64],
    observable: &[(usize, f64)],
) -> Result<(Vec<f64>, CircuitGradient)> {
    for &(q, _) in observable {
        check_inputs(circuit, params, latent, q)?;
    }
    if circuit.has_noise() {
        return Err(Error::UnsupportedMode(
            "adjoint differentiation requires a noiseless circuit; use parameter-shift under gate noise".into(),
        ));
    }
    let nq = circuit.num_qubits;
    let expanded = circuit.expand_encodings();
    let mut psi = run_shifted(&expanded, initial, params, latent, None)?;
    let values = observable
        .iter()
        .map(|&(q, _)| psi.z_expectation(q))
        .collect::<Result<Vec<_>>>()?;

    // lambda = O |psi> with O = sum_q w_q Z_q (diagonal)
    let amps = psi.amplitudes();
    let lambda_amps = amps
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let w: f64 = observable
                .iter()
                .map(|&(q, w)| if i & (1 << (nq - 1 - q)) == 0 { w } else { -w })
                .sum();
            a * w
        })
        .collect();
    let mut lambda = StateVector::from_amplitudes(lambda_amps)?;

    let mut per_gate = Vec::new();
    for (k, gate) in expanded.gates.iter().enumerate().rev() {
        match rotation(gate, nq, params, latent) {
            Some((q, angle)) => {
                let (s, c) = (-angle * 0.5).sin_cos();
                let inverse = [[c, -s], [s, c]];
                psi.apply_real_1q(q, inverse)?;
                // d RY(a) / da = RY(a + pi) / 2
                let (ds, dc) = ((angle + std::f64::consts::PI) * 0.5).sin_cos();
                let deriv = [[0.5 * dc, -0.5 * ds], [0.5 * ds, 0.5 * dc]];
                let elem = psi.real_1q_element(&lambda, q, deriv)?;
                per_gate.push((k, 2.0 * elem.re));
                lambda.apply_real_1q(q, inverse)?;
            }
            None => {
                // CNOT is self-inverse
                apply(&mut psi, gate, nq, expanded.encode_rounds, params, latent, 0.0)?;
                apply(&mut lambda, gate, nq, expanded.encode_rounds, params, latent, 0.0)?;
            }
        }
    }
    let n_latent = if latent.is_empty() { 0 } else { circuit.latent_len() };
    Ok((values, scatter(&expanded, per_gate.into_iter(), params.len(), n_latent)))
}

/// Central differences over parameter slots and latent values.
pub fn finite_difference_oracle(
    circuit: &GateList,
    params: &[f64],
    latent: &[f64],
    measured: usize,
    h: f64,
) -> Result<CircuitGradient> {
    if !(h > 0.0) {
        return Err(Error::config(format!("finite-difference step {h} must be > 0")));
    }
    check_inputs(circuit, params, latent, measured)?;
    let eval = |p: &[f64], l: &[f64]| evaluate_expectation(circuit, p, l, measured);
    let mut out = CircuitGradient::default();
    let mut p = params.to_vec();
    for j in 0..params.len() {
        p[j] = params[j] + h;
        let up = eval(&p, latent)?;
        p[j] = params[j] - h;
        let down = eval(&p, latent)?;
        p[j] = params[j];
        out.params.push((up - down) / (2.0 * h));
    }
    let mut l = latent.to_vec();
    for k in 0..latent.len() {
        l[k] = latent[k] + h;
        let up = eval(params, &l)?;
        l[k] = latent[k] - h;
        let down = eval(params, &l)?;
        l[k] = latent[k];
        out.latent.push((up - down) / (2.0 * h));
    }
    Ok(out)
}
