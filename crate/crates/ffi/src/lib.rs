//! C ABI over `qhead`.
//!
//! Every fallible call returns a [`QhStatus`]; on failure the message is
//! available from [`qh_last_error`] on the same thread. Objects are opaque
//! handles created by `*_new` functions and released with the matching
//! `*_free`. Panics never cross the boundary; they map to `QH_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use qhead::checkpoint::Checkpoint;
use qhead::config::ExperimentConfig;
use qhead::energy::{self, EnergyConstants};
use qhead::head::{HeadConfig, HybridHead};
use qhead::noise::{NoiseModel, Shots};
use qhead::simcore::{amplitude_encode, Pauli, StateVector};
use qhead::trainer::{Classifier, Mode};
use qhead::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QhStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    DegenerateInput = 3,
    Format = 4,
    Data = 5,
    UnsupportedMode = 6,
    Io = 7,
    Panic = 8,
}

/// Noise applied to the measured PQC output. `shots == 0` means infinite.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QhNoise {
    pub p1q: f64,
    pub p2q: f64,
    pub shots: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QhEnergyConstants {
    pub p_qpu: f64,
    pub t_1q: f64,
    pub t_2q: f64,
    pub shots: f64,
    pub p_gpu: f64,
    pub f_gpu: f64,
}

/// Opaque statevector.
pub struct QhState(StateVector);

/// Opaque hybrid classification head.
pub struct QhHead(HybridHead);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> QhStatus {
    match e {
        Error::Config(_) => QhStatus::Config,
        Error::DegenerateInput(_) => QhStatus::DegenerateInput,
        Error::Format { .. } => QhStatus::Format,
        Error::Data(_) | Error::Json(_) => QhStatus::Data,
        Error::UnsupportedMode(_) => QhStatus::UnsupportedMode,
        Error::Io { .. } => QhStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> QhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QhStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            QhStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            QhStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    let s = deref(p, "path")?;
    let s = CStr::from_ptr(s).to_str().map_err(|_| Error::Config("path is not UTF-8".into()))?;
    Ok(Path::new(s))
}

fn noise_model(n: Option<&QhNoise>) -> NoiseModel {
    match n {
        None => NoiseModel::noiseless(),
        Some(n) => NoiseModel {
            p1q: n.p1q,
            p2q: n.p2q,
            shots: if n.shots == 0 { Shots::Infinite } else { Shots::Finite(n.shots) },
            seed: 0,
        },
    }
}

fn dims(expected: usize, got: usize, what: &str) -> Result<(), Fail> {
    if expected != got {
        return Err(Error::Config(format!("{what}: expected length {expected}, got {got}")).into());
    }
    Ok(())
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// `|0...0>` on `qubits` qubits.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn qh_state_new(qubits: u32, out: *mut *mut QhState) -> QhStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = Box::into_raw(Box::new(QhState(StateVector::zero(qubits as usize)?)));
        Ok(())
    })
}

/// Amplitude-encodes `x[0..len]` (zero-padded) on `qubits` qubits.
///
/// # Safety
/// `x` must point to `len` doubles and `out` to storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn qh_state_amplitude_encode(
    x: *const f64,
    len: usize,
    qubits: u32,
    out: *mut *mut QhState,
) -> QhStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let x = slice(x, len, "x")?;
        *out = Box::into_raw(Box::new(QhState(amplitude_encode(x, qubits as usize)?)));
        Ok(())
    })
}

/// # Safety
/// `state` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qh_state_free(state: *mut QhState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// # Safety
/// `state` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qh_state_apply_ry(state: *mut QhState, qubit: u32, theta: f64) -> QhStatus {
    guard(|| Ok(deref_mut(state, "state")?.0.apply_ry(qubit as usize, theta)?))
}

/// # Safety
/// `state` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qh_state_apply_cnot(state: *mut QhState, control: u32, target: u32) -> QhStatus {
    guard(|| Ok(deref_mut(state, "state")?.0.apply_cnot(control as usize, target as usize)?))
}

/// `pauli`: 1 = X, 2 = Y, 3 = Z.
///
/// # Safety
/// `state` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qh_state_apply_pauli(state: *mut QhState, qubit: u32, pauli: u32) -> QhStatus {
    guard(|| {
        let p = match pauli {
            1 => Pauli::X,
            2 => Pauli::Y,
            3 => Pauli::Z,
            _ => return Err(Error::Config(format!("pauli code {pauli} not in 1..=3")).into()),
        };
        Ok(deref_mut(state, "state")?.0.apply_pauli(qubit as usize, p)?)
    })
}

/// # Safety
/// `state` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qh_state_z_expectation(state: *const QhState, qubit: u32, out: *mut f64) -> QhStatus {
    guard(|| {
        let s = deref(state, "state")?;
        *deref_mut(out, "out")? = s.0.z_expectation(qubit as usize)?;
        Ok(())
    })
}

/// # Safety
/// `state` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qh_state_norm(state: *const QhState, out: *mut f64) -> QhStatus {
    guard(|| {
        *deref_mut(out, "out")? = deref(state, "state")?.0.norm();
        Ok(())
    })
}

/// Single quantum encoder head with the default ansatz on `qubits` qubits,
/// two classes.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qh_head_new(input_dim: usize, qubits: u32, seed: u64, out: *mut *mut QhHead) -> QhStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let head = HybridHead::new(HeadConfig::single_encoder(input_dim, qubits as usize), seed)?;
        *out = Box::into_raw(Box::new(QhHead(head)));
        Ok(())
    })
}

/// Head described by flat `key = value` config text.
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qh_head_from_config(
    config: *const c_char,
    input_dim: usize,
    out: *mut *mut QhHead,
) -> QhStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let text = CStr::from_ptr(deref(config, "config")?)
            .to_str()
            .map_err(|_| Error::Config("config is not UTF-8".into()))?;
        let cfg = ExperimentConfig::parse(text)?;
        let head = HybridHead::new(cfg.head_config(input_dim), cfg.seed)?;
        *out = Box::into_raw(Box::new(QhHead(head)));
        Ok(())
    })
}

/// # Safety
/// `head` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qh_head_free(head: *mut QhHead) {
    if !head.is_null() {
        drop(Box::from_raw(head));
    }
}

/// # Safety
/// `head` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qh_head_num_params(head: *const QhHead, out: *mut usize) -> QhStatus {
    guard(|| {
        *deref_mut(out, "out")? = deref(head, "head")?.0.num_params();
        Ok(())
    })
}

/// Copies the flat parameter vector into `buf[0..len]`; `len` must equal
/// the parameter count.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qh_head_get_params(head: *const QhHead, buf: *mut f64, len: usize) -> QhStatus {
    guard(|| {
        let h = deref(head, "head")?;
        dims(h.0.num_params(), len, "params")?;
        slice_mut(buf, len, "buf")?.copy_from_slice(h.0.params());
        Ok(())
    })
}

/// # Safety
/// `buf` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qh_head_set_params(head: *mut QhHead, buf: *const f64, len: usize) -> QhStatus {
    guard(|| {
        let h = deref_mut(head, "head")?;
        dims(h.0.num_params(), len, "params")?;
        h.0.params_mut().copy_from_slice(slice(buf, len, "buf")?);
        Ok(())
    })
}

/// Logits for one sample. `noise` may be null for the noiseless head.
/// Noise draws are determined by `sample_seed`.
///
/// # Safety
/// `x` must hold `len` doubles and `logits` `num_logits` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qh_head_forward(
    head: *const QhHead,
    x: *const f64,
    len: usize,
    noise: *const QhNoise,
    sample_seed: u64,
    logits: *mut f64,
    num_logits: usize,
) -> QhStatus {
    guard(|| {
        let h = deref(head, "head")?;
        let out = h.0.forward(slice(x, len, "x")?, &noise_model(noise.as_ref()), sample_seed)?;
        dims(out.len(), num_logits, "logits")?;
        slice_mut(logits, num_logits, "logits")?.copy_from_slice(&out);
        Ok(())
    })
}

/// Mean cross-entropy and its gradient over `n` samples stored row-major in
/// `xs` (`n * dim` doubles). Sample `i` uses seed `seed + i`.
///
/// # Safety
/// Buffers must hold the stated number of elements; `grad` must hold the
/// parameter count.
#[no_mangle]
pub unsafe extern "C" fn qh_head_loss_and_gradient(
    head: *mut QhHead,
    xs: *const f64,
    n: usize,
    dim: usize,
    labels: *const u32,
    noise: *const QhNoise,
    seed: u64,
    loss: *mut f64,
    grad: *mut f64,
    grad_len: usize,
) -> QhStatus {
    guard(|| {
        let h = deref_mut(head, "head")?;
        let data = slice(xs, n * dim, "xs")?;
        let rows: Vec<&[f64]> = data.chunks(dim.max(1)).take(n).collect();
        let labels: Vec<usize> = slice(labels, n, "labels")?.iter().map(|&l| l as usize).collect();
        let seeds: Vec<u64> = (0..n as u64).map(|i| seed.wrapping_add(i)).collect();
        dims(h.0.num_params(), grad_len, "grad")?;
        h.0.set_mode(Mode::Train);
        let (l, g) = h.0.loss_and_gradient(&rows, &labels, &noise_model(noise.as_ref()), &seeds)?;
        *deref_mut(loss, "loss")? = l;
        slice_mut(grad, grad_len, "grad")?.copy_from_slice(&g);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn qh_head_save(head: *const QhHead, path: *const c_char) -> QhStatus {
    guard(|| Ok(deref(head, "head")?.0.to_checkpoint().save(self::path(path)?)?))
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn qh_head_load(head: *mut QhHead, path: *const c_char) -> QhStatus {
    guard(|| {
        let h = deref_mut(head, "head")?;
        let ckpt = Checkpoint::load(self::path(path)?)?;
        Ok(h.0.load_checkpoint(&ckpt)?)
    })
}

fn constants(c: Option<&QhEnergyConstants>) -> EnergyConstants {
    match c {
        None => EnergyConstants::default(),
        Some(c) => EnergyConstants { p_qpu: c.p_qpu, t_1q: c.t_1q, t_2q: c.t_2q, shots: c.shots, p_gpu: c.p_gpu, f_gpu: c.f_gpu },
    }
}

#[no_mangle]
pub extern "C" fn qh_energy_default_constants() -> QhEnergyConstants {
    let d = EnergyConstants::default();
    QhEnergyConstants { p_qpu: d.p_qpu, t_1q: d.t_1q, t_2q: d.t_2q, shots: d.shots, p_gpu: d.p_gpu, f_gpu: d.f_gpu }
}

/// QPU and GPU energy (kJ) of the default ansatz on `qubits` qubits.
/// `consts` may be null for the defaults.
///
/// # Safety
/// `qpu_kj` and `gpu_kj` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qh_energy_estimate(
    qubits: u32,
    consts: *const QhEnergyConstants,
    qpu_kj: *mut f64,
    gpu_kj: *mut f64,
) -> QhStatus {
    guard(|| {
        let c = constants(consts.as_ref());
        c.validate()?;
        let spec = qhead::ansatz::CircuitSpec::standard(qubits as usize);
        spec.validate()?;
        *deref_mut(qpu_kj, "qpu_kj")? = energy::qpu_energy(&spec, &c);
        *deref_mut(gpu_kj, "gpu_kj")? = energy::gpu_energy(&spec, &c);
        Ok(())
    })
}

/// Smallest qubit count in 2..=60 where GPU energy reaches QPU energy;
/// writes 0 if there is none.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qh_energy_crossover(consts: *const QhEnergyConstants, out: *mut u32) -> QhStatus {
    guard(|| {
        let c = constants(consts.as_ref());
        c.validate()?;
        *deref_mut(out, "out")? = energy::find_crossover(&c).unwrap_or(0) as u32;
        Ok(())
    })
}
