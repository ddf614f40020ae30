//! C interface to the `sto_hopfield` simulator.
//!
//! Every function returns a [`StoStatus`]; on failure a message is available
//! from [`sto_last_error`] on the same thread. Objects are opaque handles
//! created by `*_new`/`*_train`/`*_load` functions and released with the
//! matching `*_free`. Arrays are passed as pointer plus length; complex
//! matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use num_complex::Complex64;
use sto_hopfield::codec::{self, CodecError};
use sto_hopfield::engine::{self, EngineError, NetworkConfig, NetworkState};
use sto_hopfield::oscillator::{self, OscillatorError, OscillatorParams};
use sto_hopfield::synapse::{self, StoredPatternSet, SynapseError, WeightMatrix};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The stored patterns are linearly dependent.
    DegeneratePatterns = 3,
    /// Bias below the oscillation threshold or target frequency out of reach.
    OutOfRange = 4,
    /// Physical preparation ended with unlocked oscillators.
    LockFailed = 5,
    Io = 6,
    /// Malformed weight file or configuration text.
    Format = 7,
    Panic = 8,
}

/// Oscillator material and geometry constants (SI units).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoParams {
    pub g: f64,
    pub d0: f64,
    pub d1: f64,
    pub k_ms0: f64,
    pub k_ms1: f64,
    pub k_oe0: f64,
    pub k_oe1: f64,
    pub a_j: f64,
    pub b_j: f64,
    pub r0: f64,
}

impl From<OscillatorParams> for StoParams {
    fn from(p: OscillatorParams) -> Self {
        Self {
            g: p.g,
            d0: p.d0,
            d1: p.d1,
            k_ms0: p.k_ms0,
            k_ms1: p.k_ms1,
            k_oe0: p.k_oe0,
            k_oe1: p.k_oe1,
            a_j: p.a_j,
            b_j: p.b_j,
            r0: p.r0,
        }
    }
}

impl From<StoParams> for OscillatorParams {
    fn from(p: StoParams) -> Self {
        Self {
            g: p.g,
            d0: p.d0,
            d1: p.d1,
            k_ms0: p.k_ms0,
            k_ms1: p.k_ms1,
            k_oe0: p.k_oe0,
            k_oe1: p.k_oe1,
            a_j: p.a_j,
            b_j: p.b_j,
            r0: p.r0,
        }
    }
}

/// Opaque trained weight matrix.
pub struct StoWeights(WeightMatrix);

/// Opaque network: configuration, oscillator constants and current state.
pub struct StoNetwork {
    cfg: NetworkConfig,
    params: OscillatorParams,
    state: NetworkState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(StoStatus, String);

impl From<OscillatorError> for Failure {
    fn from(e: OscillatorError) -> Self {
        let status = match e {
            OscillatorError::SubCritical { .. } | OscillatorError::UnreachableFrequency { .. } => StoStatus::OutOfRange,
            _ => StoStatus::InvalidArgument,
        };
        Self(status, e.to_string())
    }
}

impl From<SynapseError> for Failure {
    fn from(e: SynapseError) -> Self {
        let status = match e {
            SynapseError::DegeneratePatterns { .. } => StoStatus::DegeneratePatterns,
            SynapseError::Io(_) => StoStatus::Io,
            SynapseError::Format(_) | SynapseError::Json(_) => StoStatus::Format,
            _ => StoStatus::InvalidArgument,
        };
        Self(status, e.to_string())
    }
}

impl From<CodecError> for Failure {
    fn from(e: CodecError) -> Self {
        let status = match e {
            CodecError::Io(_) => StoStatus::Io,
            CodecError::Json(_) => StoStatus::Format,
            _ => StoStatus::InvalidArgument,
        };
        Self(status, e.to_string())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::FailedLock { .. } => StoStatus::LockFailed,
            EngineError::SubCritical { .. } => StoStatus::OutOfRange,
            EngineError::Oscillator(o) => Failure::from(o.clone()).0,
            _ => StoStatus::InvalidArgument,
        };
        Self(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(StoStatus::InvalidArgument, msg.into())
}

fn set_error(msg: Option<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.map(|m| CString::new(m.replace('\0', " ")).expect("nul bytes removed")));
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard<F>(f: F) -> StoStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(None);
            StoStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(Some(msg));
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(Some(format!("internal panic: {msg}")));
            StoStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(StoStatus::NullPointer, "null array".into()));
    }
    // SAFETY: caller guarantees `p` points to `len` readable elements.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure(StoStatus::NullPointer, "null output array".into()));
    }
    // SAFETY: caller guarantees `p` points to `len` writable elements.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    // SAFETY: caller passes either null or a valid, aligned pointer.
    unsafe { p.as_mut() }.ok_or_else(|| Failure(StoStatus::NullPointer, "null output pointer".into()))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    // SAFETY: non-null handles come from this library.
    unsafe { p.as_ref() }.ok_or_else(|| Failure(StoStatus::NullPointer, "null handle".into()))
}

unsafe fn handle_mut<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    // SAFETY: non-null handles come from this library.
    unsafe { p.as_mut() }.ok_or_else(|| Failure(StoStatus::NullPointer, "null handle".into()))
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(StoStatus::NullPointer, "null string".into()));
    }
    // SAFETY: caller passes a nul-terminated string.
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| invalid("string is not UTF-8"))
}

unsafe fn params_or_default(p: *const StoParams) -> OscillatorParams {
    // SAFETY: caller passes null or a valid pointer.
    unsafe { p.as_ref() }.map_or_else(OscillatorParams::default, |p| (*p).into())
}

fn pattern_set(phases: &[f64], k: usize, n: usize) -> Result<StoredPatternSet, Failure> {
    if phases.len() != k * n {
        return Err(invalid("pattern array length"));
    }
    let rows: Vec<&[f64]> = phases.chunks(n.max(1)).take(k).collect();
    Ok(StoredPatternSet::from_phases(&rows)?)
}

/// Message for the last failed call on this thread, or null after a success.
/// Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn sto_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn sto_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Fills `out` with the reference oscillator constants.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sto_params_default(out: *mut StoParams) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        *unsafe { self::out(out) }? = OscillatorParams::default().into();
        Ok(())
    })
}

/// Steady radius and angular frequency (rad/s) at DC bias `current` (A).
/// `params` may be null for the reference constants.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn sto_steady_state(
    params: *const StoParams,
    current: f64,
    rho0: *mut f64,
    omega: *mut f64,
) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (p, r, w) = unsafe { (params_or_default(params), out(rho0)?, out(omega)?) };
        let ss = oscillator::steady_state(&p, p.current_density(current))?;
        (*r, *w) = (ss.rho0, ss.omega);
        Ok(())
    })
}

/// Oscillation threshold current (A).
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn sto_critical_current(params: *const StoParams, current: *mut f64) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (p, c) = unsafe { (params_or_default(params), out(current)?) };
        *c = oscillator::critical_current(&p)?;
        Ok(())
    })
}

/// DC bias (A) whose steady frequency is `f_target` (Hz).
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn sto_calibrate_bias(params: *const StoParams, f_target: f64, bias: *mut f64) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (p, b) = unsafe { (params_or_default(params), out(bias)?) };
        *b = oscillator::calibrate_bias(&p, f_target)?;
        Ok(())
    })
}

/// Pseudo-inverse weights for `k` patterns of `n` phases each (row-major
/// `k x n` array, radians).
///
/// # Safety
/// `phases` must hold `k * n` values; `weights` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sto_weights_train(
    phases: *const f64,
    k: usize,
    n: usize,
    weights: *mut *mut StoWeights,
) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (ph, w) = unsafe { (slice(phases, k * n)?, out(weights)?) };
        let ps = pattern_set(ph, k, n)?;
        *w = Box::into_raw(Box::new(StoWeights(synapse::train_pseudo_inverse(&ps)?)));
        Ok(())
    })
}

/// Builds weights from a row-major `n x n` array of interleaved
/// (re, im) pairs; the diagonal is zeroed.
///
/// # Safety
/// `values` must hold `2 n n` doubles; `weights` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sto_weights_from_values(
    values: *const f64,
    n: usize,
    weights: *mut *mut StoWeights,
) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (v, w) = unsafe { (slice(values, 2 * n * n)?, out(weights)?) };
        let vals = v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        *w = Box::into_raw(Box::new(StoWeights(WeightMatrix::from_values(n, vals)?)));
        Ok(())
    })
}

/// Releases a weight handle; null is ignored.
///
/// # Safety
/// `weights` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sto_weights_free(weights: *mut StoWeights) {
    if !weights.is_null() {
        // SAFETY: handle was created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(weights) });
    }
}

/// Matrix dimension.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn sto_weights_n(weights: *const StoWeights, n: *mut usize) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (w, n) = unsafe { (handle(weights)?, out(n)?) };
        *n = w.0.n();
        Ok(())
    })
}

/// Entry `(i, j)`.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn sto_weights_get(
    weights: *const StoWeights,
    i: usize,
    j: usize,
    re: *mut f64,
    im: *mut f64,
) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (w, re, im) = unsafe { (handle(weights)?, out(re)?, out(im)?) };
        if i >= w.0.n() || j >= w.0.n() {
            return Err(invalid(format!("index ({i}, {j}) outside {0}x{0}", w.0.n())));
        }
        let v = w.0.get(i, j);
        (*re, *im) = (v.re, v.im);
        Ok(())
    })
}

/// Largest `|w_ij - conj(w_ji)|`.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn sto_weights_hermitian_defect(weights: *const StoWeights, defect: *mut f64) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (w, d) = unsafe { (handle(weights)?, out(defect)?) };
        *d = w.0.hermitian_defect();
        Ok(())
    })
}

/// Writes the binary weight file, optionally tagged with the hash of the
/// `k x n` training patterns (`phases` may be null when `k` is 0).
///
/// # Safety
/// Pointers must be null or valid; `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn sto_weights_save(
    weights: *const StoWeights,
    path: *const c_char,
    phases: *const f64,
    k: usize,
) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (w, path) = unsafe { (handle(weights)?, PathBuf::from(text(path)?)) };
        let n = w.0.n();
        // SAFETY: forwarded caller contract.
        let hash =
            if k == 0 { None } else { Some(pattern_set(unsafe { slice(phases, k * n)? }, k, n)?.content_hash()) };
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(&path).map_err(|e| Failure(StoStatus::Io, format!("{}: {e}", path.display())))?,
        );
        w.0.write_binary(&mut f, hash)?;
        std::io::Write::flush(&mut f).map_err(|e| Failure(StoStatus::Io, e.to_string()))
    })
}

/// Reads a binary weight file.
///
/// # Safety
/// Pointers must be null or valid; `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn sto_weights_load(path: *const c_char, weights: *mut *mut StoWeights) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (path, w) = unsafe { (PathBuf::from(text(path)?), out(weights)?) };
        let mut f = std::io::BufReader::new(
            std::fs::File::open(&path).map_err(|e| Failure(StoStatus::Io, format!("{}: {e}", path.display())))?,
        );
        *w = Box::into_raw(Box::new(StoWeights(WeightMatrix::read_binary(&mut f)?.0)));
        Ok(())
    })
}

/// Feedback currents `kappa Im(sum_j w_ij exp(i theta_j))` (A) for `n` phases.
///
/// # Safety
/// `theta` and `currents` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn sto_feedback(
    weights: *const StoWeights,
    theta: *const f64,
    n: usize,
    kappa: f64,
    currents: *mut f64,
) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (w, th, cur) = unsafe { (handle(weights)?, slice(theta, n)?, slice_mut(currents, n)?) };
        if n != w.0.n() {
            return Err(invalid(format!("{n} phases for {0}x{0} weights", w.0.n())));
        }
        cur.copy_from_slice(&synapse::feedback(&w.0, th, kappa));
        Ok(())
    })
}

/// Hopfield energy of unit phasors at `phases`.
///
/// # Safety
/// `phases` must hold `n` values; `energy` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sto_energy(
    weights: *const StoWeights,
    phases: *const f64,
    n: usize,
    energy: *mut f64,
) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (w, ph, e) = unsafe { (handle(weights)?, slice(phases, n)?, out(energy)?) };
        *e = synapse::energy_of_phases(&w.0, ph)?;
        Ok(())
    })
}

/// One contrastive-divergence update from `k` ideal and `k` relaxed phase
/// patterns (`k x n`, row-major); returns a new handle.
///
/// # Safety
/// Arrays must hold `k * n` values; `updated` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sto_cd_update(
    weights: *const StoWeights,
    ideal: *const f64,
    relaxed: *const f64,
    k: usize,
    eta: f64,
    updated: *mut *mut StoWeights,
) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let w = unsafe { handle(weights)? };
        let n = w.0.n();
        // SAFETY: forwarded caller contract.
        let (x, a, u) = unsafe { (slice(ideal, k * n)?, slice(relaxed, k * n)?, out(updated)?) };
        let next = synapse::cd_update(&w.0, &pattern_set(x, k, n)?, &pattern_set(a, k, n)?, eta)?;
        *u = Box::into_raw(Box::new(StoWeights(next)));
        Ok(())
    })
}

/// RMS phase error minimized over a global phase, and the minimizing phase.
///
/// # Safety
/// `retrieved` and `stored` must hold `n` values; outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sto_error_metric(
    retrieved: *const f64,
    stored: *const f64,
    n: usize,
    delta: *mut f64,
    phi: *mut f64,
) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (a, b, d, p) = unsafe { (slice(retrieved, n)?, slice(stored, n)?, out(delta)?, out(phi)?) };
        let m = codec::error_metric(a, b)?;
        (*d, *p) = (m.delta, m.phi_star);
        Ok(())
    })
}

/// Creates a network from a JSON configuration (null for defaults) and
/// oscillator constants (null for the reference set).
///
/// # Safety
/// `config_json` null or nul-terminated; `network` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sto_network_new(
    config_json: *const c_char,
    params: *const StoParams,
    network: *mut *mut StoNetwork,
) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let out = unsafe { out(network)? };
        let cfg: NetworkConfig = if config_json.is_null() {
            NetworkConfig::default()
        } else {
            // SAFETY: forwarded caller contract.
            serde_json::from_str(unsafe { text(config_json)? })
                .map_err(|e| Failure(StoStatus::Format, e.to_string()))?
        };
        cfg.validate()?;
        // SAFETY: forwarded caller contract.
        let params = unsafe { params_or_default(params) };
        let state = engine::build_network(&cfg, &params)?;
        *out = Box::into_raw(Box::new(StoNetwork { cfg, params, state }));
        Ok(())
    })
}

/// Releases a network handle; null is ignored.
///
/// # Safety
/// `network` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sto_network_free(network: *mut StoNetwork) {
    if !network.is_null() {
        // SAFETY: handle was created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(network) });
    }
}

/// Number of oscillators.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn sto_network_n(network: *const StoNetwork, n: *mut usize) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (net, n) = unsafe { (handle(network)?, out(n)?) };
        *n = net.state.n();
        Ok(())
    })
}

/// Preparation stage toward `query` phases.
///
/// # Safety
/// `query` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn sto_network_prepare(network: *mut StoNetwork, query: *const f64, n: usize) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (net, q) = unsafe { (handle_mut(network)?, slice(query, n)?) };
        engine::prepare(&mut net.state, q, &net.cfg, &net.params)?;
        Ok(())
    })
}

/// Recognition stage on `weights`. `target` (may be null) gives the stored
/// phases for the error; `delta` then receives the final RMS error (NaN
/// without a target). `final_phases` (may be null) receives the extracted
/// phases.
///
/// # Safety
/// Non-null arrays must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn sto_network_recognize(
    network: *mut StoNetwork,
    weights: *const StoWeights,
    target: *const f64,
    n: usize,
    final_phases: *mut f64,
    delta: *mut f64,
) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (net, w) = unsafe { (handle_mut(network)?, handle(weights)?) };
        if n != net.state.n() {
            return Err(invalid(format!("n = {n}, network has {}", net.state.n())));
        }
        let trace = engine::recognize(&mut net.state, &w.0, None, &net.cfg, &net.params)?;
        let ph = trace.final_phases();
        if !final_phases.is_null() {
            // SAFETY: forwarded caller contract.
            unsafe { slice_mut(final_phases, n)? }.copy_from_slice(ph);
        }
        if !delta.is_null() {
            let d = if target.is_null() {
                f64::NAN
            } else {
                // SAFETY: forwarded caller contract.
                codec::error_metric(ph, unsafe { slice(target, n)? })?.delta
            };
            // SAFETY: checked non-null above.
            unsafe { *delta = d };
        }
        Ok(())
    })
}

/// Current phases relative to the reference rotation.
///
/// # Safety
/// `phases` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn sto_network_phases(network: *const StoNetwork, phases: *mut f64, n: usize) -> StoStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (net, out) = unsafe { (handle(network)?, slice_mut(phases, n)?) };
        if n != net.state.n() {
            return Err(invalid(format!("n = {n}, network has {}", net.state.n())));
        }
        out.copy_from_slice(&engine::extract_phasors(&net.state, net.cfg.f_target));
        Ok(())
    })
}
