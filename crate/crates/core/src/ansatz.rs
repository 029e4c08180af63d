//! Circuit layout for the re-uploading PQC and the encoder sPQC.
//!
//! An entangling layer with connectivity `c` on `Q` qubits is, for each
//! `i = 0..Q` in order, `CNOT(i -> (i + c) mod Q)` followed by a trainable
//! `RY` on the target. A block of `L` layers cycles `c = 1, 2, ..., C, 1, ...`.
//! The head circuit is
//!
//! ```text
//! ENCODE, main block (M layers), R x [ENCODE, re-uploading block (N layers)]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simcore::{Pauli, MAX_QUBITS};

/// One record of a gate list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gate {
    Cnot { control: usize, target: usize },
    /// Trainable rotation reading parameter `slot`.
    Ry { qubit: usize, slot: usize },
    /// Angle-encode the full latent vector (all qubits, all rounds).
    Encode { step: usize },
    /// One qubit of one encoding round; produced when a list is expanded
    /// for noise insertion. Reads latent entry `round * Q + qubit`.
    EncodeRy { step: usize, round: usize, qubit: usize },
    /// Pauli inserted by a noise trajectory.
    Pauli { qubit: usize, pauli: Pauli },
}

impl Gate {
    pub fn is_two_qubit(&self) -> bool {
        matches!(self, Gate::Cnot { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateList {
    pub num_qubits: usize,
    /// Number of stacked RY rounds per encoding step (the latent length is
    /// `encode_rounds * num_qubits`).
    pub encode_rounds: usize,
    pub gates: Vec<Gate>,
}

impl GateList {
    pub fn new(num_qubits: usize) -> Self {
        Self {
            num_qubits,
            encode_rounds: 1,
            gates: Vec::new(),
        }
    }

    pub fn latent_len(&self) -> usize {
        self.encode_rounds * self.num_qubits
    }

    /// Number of distinct trainable parameter slots.
    pub fn num_params(&self) -> usize {
        self.gates
            .iter()
            .filter_map(|g| match g {
                Gate::Ry { slot, .. } => Some(slot + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn encode_steps(&self) -> usize {
        self.gates
            .iter()
            .filter(|g| matches!(g, Gate::Encode { .. }))
            .count()
    }

    pub fn has_noise(&self) -> bool {
        self.gates.iter().any(|g| matches!(g, Gate::Pauli { .. }))
    }

    /// Replaces every `Encode` with its per-qubit `EncodeRy` records.
    pub fn expand_encodings(&self) -> GateList {
        let mut gates = Vec::with_capacity(self.gates.len());
        for g in &self.gates {
            match *g {
                Gate::Encode { step } => {
                    for round in 0..self.encode_rounds {
                        for qubit in 0..self.num_qubits {
                            gates.push(Gate::EncodeRy { step, round, qubit });
                        }
                    }
                }
                other => gates.push(other),
            }
        }
        GateList {
            num_qubits: self.num_qubits,
            encode_rounds: self.encode_rounds,
            gates,
        }
    }

    /// (single-qubit gates, two-qubit gates), with encodings counted per qubit
    /// and round. Noise insertions are not counted.
    pub fn gate_counts(&self) -> (usize, usize) {
        let mut sq = 0;
        let mut tq = 0;
        for g in &self.gates {
            match g {
                Gate::Cnot { .. } => tq += 1,
                Gate::Ry { .. } | Gate::EncodeRy { .. } => sq += 1,
                Gate::Encode { .. } => sq += self.latent_len(),
                Gate::Pauli { .. } => {}
            }
        }
        (sq, tq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub qubits: usize,
    pub connectivity: usize,
    pub main_layers: usize,
    pub reupload_layers: usize,
    pub reuploads: usize,
    /// Stacked encoding rounds per ENCODE step (one per encoder).
    pub encode_rounds: usize,
}

impl CircuitSpec {
    /// The configuration used for the qubit-scaling experiments.
    pub fn standard(qubits: usize) -> Self {
        Self {
            qubits,
            connectivity: 1,
            main_layers: 2,
            reupload_layers: 1,
            reuploads: 4,
            encode_rounds: 1,
        }
    }

    pub const MEASURED_QUBIT: usize = 0;

    pub fn validate(&self) -> Result<()> {
        if self.qubits < 2 || self.qubits > MAX_QUBITS {
            return Err(Error::config(format!(
                "PQC qubits {} outside 2..={MAX_QUBITS}",
                self.qubits
            )));
        }
        check_connectivity(self.qubits, self.connectivity)?;
        if self.encode_rounds == 0 {
            return Err(Error::config("encode_rounds must be >= 1"));
        }
        Ok(())
    }

    pub fn trainable_layers(&self) -> usize {
        self.main_layers + self.reuploads * self.reupload_layers
    }
}

fn check_connectivity(q: usize, c: usize) -> Result<()> {
    if c == 0 || c >= q {
        return Err(Error::config(format!(
            "connectivity {c} must satisfy 1 <= c < {q}"
        )));
    }
    Ok(())
}

pub fn build_entangling_layer(q: usize, c: usize, param_offset: usize) -> Result<Vec<Gate>> {
    check_connectivity(q, c)?;
    let mut gates = Vec::with_capacity(2 * q);
    for i in 0..q {
        let target = (i + c) % q;
        gates.push(Gate::Cnot { control: i, target });
        gates.push(Gate::Ry {
            qubit: target,
            slot: param_offset + i,
        });
    }
    Ok(gates)
}

/// `num_layers` entangling layers; layer `l` uses connectivity `(l mod C) + 1`.
pub fn build_block(
    q: usize,
    connectivity: usize,
    num_layers: usize,
    param_offset: usize,
) -> Result<Vec<Gate>> {
    check_connectivity(q, connectivity)?;
    let mut gates = Vec::with_capacity(2 * q * num_layers);
    for layer in 0..num_layers {
        let c = layer % connectivity + 1;
        gates.extend(build_entangling_layer(q, c, param_offset + layer * q)?);
    }
    Ok(gates)
}

/// Standalone block as a gate list (used for the encoder sPQC).
pub fn block_circuit(q: usize, connectivity: usize, num_layers: usize) -> Result<GateList> {
    let mut list = GateList::new(q);
    list.gates = build_block(q, connectivity, num_layers, 0)?;
    Ok(list)
}

pub fn assemble_head_circuit(spec: &CircuitSpec) -> Result<GateList> {
    spec.validate()?;
    let q = spec.qubits;
    let mut list = GateList::new(q);
    list.encode_rounds = spec.encode_rounds;
    let mut offset = 0;
    list.gates.push(Gate::Encode { step: 0 });
    list.gates
        .extend(build_block(q, spec.connectivity, spec.main_layers, offset)?);
    offset += spec.main_layers * q;
    for r in 0..spec.reuploads {
        list.gates.push(Gate::Encode { step: r + 1 });
        list.gates
            .extend(build_block(q, spec.connectivity, spec.reupload_layers, offset)?);
        offset += spec.reupload_layers * q;
    }
    Ok(list)
}

pub fn count_parameters(spec: &CircuitSpec) -> usize {
    spec.trainable_layers() * spec.qubits
}

/// `(SQ, TQ)`: `SQ = (M + R N) Q + (1 + R) Q E_rounds`, `TQ = (M + R N) Q`.
pub fn gate_counts(spec: &CircuitSpec) -> (usize, usize) {
    let tq = spec.trainable_layers() * spec.qubits;
    let sq = tq + (1 + spec.reuploads) * spec.qubits * spec.encode_rounds;
    (sq, tq)
}
