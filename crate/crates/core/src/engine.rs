//! Coupled-oscillator network: bias setup, joint RK4 integration, the
//! two-stage retrieval protocol, phasor extraction and lock detection.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, wrap, CodecError, PhaseImage};
use crate::oscillator::{
    calibrate_bias, critical_current, derivative_sin_cos, rotate, steady_state, CoefficientLine, OscillatorError,
    OscillatorParams, OscillatorState, RHO_FLOOR,
};
use crate::synapse::WeightMatrix;

/// Minimum integration steps per oscillation period.
pub const MIN_STEPS_PER_PERIOD: f64 = 200.0;

/// Lock criterion: largest phase excursion over the window (rad).
pub const LOCK_MAX_DRIFT: f64 = 0.01;
/// Lock criterion: largest fitted drift rate, as a fraction of the frequency.
pub const LOCK_MAX_REL_SLOPE: f64 = 1e-4;

// Rows per parallel task, and the size below which the coupling product stays serial.
const PAR_MIN_N: usize = 128;
const PAR_ROWS: usize = 16;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Oscillator(#[from] OscillatorError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("oscillator {index} biased at {bias:e} A is below the critical current {critical:e} A")]
    SubCritical { index: usize, bias: f64, critical: f64 },
    #[error("{} oscillator(s) failed to lock: {unlocked:?}", unlocked.len())]
    FailedLock { unlocked: Vec<usize> },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrepareMode {
    /// External sinusoidal drives lock each oscillator to its query phase.
    #[default]
    Physical,
    /// Phases are written directly.
    Direct,
}

/// How trained weights are scaled before `kappa` is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingNorm {
    /// Divide by the largest `|w_ij|`, so `kappa` bounds every synapse current.
    #[default]
    MaxMagnitude,
    /// Use the trained values as they are.
    Raw,
}

/// Steady frequency at 80 uA with the default parameters.
pub fn default_f_target() -> f64 {
    let p = OscillatorParams::default();
    steady_state(&p, p.current_density(80e-6)).map(|s| s.frequency()).unwrap_or(226e6)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub n: usize,
    /// Common operating frequency (Hz).
    pub f_target: f64,
    /// Per-synapse feedback current scale (A).
    pub kappa: f64,
    /// Integration step (s).
    pub dt: f64,
    pub t_prepare: f64,
    pub t_recognize: f64,
    pub prepare_mode: PrepareMode,
    /// Amplitude of the preparation drive (A).
    pub prepare_amplitude: f64,
    /// Relative standard deviation of the per-oscillator DC bias.
    pub bias_dispersion: f64,
    pub seed: u64,
    /// Trace cadence (s).
    pub sample_interval: f64,
    /// Extra phase applied to every synapse in the feedback loop (rad).
    pub loop_phase: f64,
    /// Phase of a locked oscillator relative to its sinusoidal drive (rad).
    pub lock_offset: f64,
    pub coupling_norm: CouplingNorm,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            n: 48,
            f_target: default_f_target(),
            kappa: 10e-9,
            dt: 20e-12,
            t_prepare: 10e-6,
            t_recognize: 5e-6,
            prepare_mode: PrepareMode::Physical,
            prepare_amplitude: 1e-6,
            bias_dispersion: 0.0,
            seed: 0,
            sample_interval: 10e-9,
            loop_phase: PI,
            lock_offset: PI,
            coupling_norm: CouplingNorm::MaxMagnitude,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        if !(self.f_target > 0.0 && self.f_target.is_finite()) {
            return bad(format!("f_target = {}", self.f_target));
        }
        if !(self.dt > 0.0 && self.dt <= 1.0 / (self.f_target * MIN_STEPS_PER_PERIOD)) {
            return bad(format!(
                "dt = {:e} s must be positive and at most one {MIN_STEPS_PER_PERIOD}th of the period {:e} s",
                self.dt,
                1.0 / self.f_target
            ));
        }
        for (name, v) in [
            ("t_prepare", self.t_prepare),
            ("t_recognize", self.t_recognize),
            ("kappa", self.kappa),
            ("prepare_amplitude", self.prepare_amplitude),
            ("bias_dispersion", self.bias_dispersion),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        if !(self.sample_interval >= self.dt && self.sample_interval.is_finite()) {
            return bad(format!("sample_interval = {:e} must be at least dt", self.sample_interval));
        }
        if !(self.loop_phase.is_finite() && self.lock_offset.is_finite()) {
            return bad("loop_phase and lock_offset must be finite".into());
        }
        Ok(())
    }

    pub fn omega(&self) -> f64 {
        TAU * self.f_target
    }

    fn steps(&self, duration: f64) -> u64 {
        (duration / self.dt).round() as u64
    }

    fn sample_every(&self) -> u64 {
        ((self.sample_interval / self.dt).round() as u64).max(1)
    }
}

/// Positions and biases of every oscillator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub rho: Vec<f64>,
    pub theta: Vec<f64>,
    /// DC bias (A).
    pub bias: Vec<f64>,
    pub t: f64,
    /// Number of stage evaluations in which a radius hit the floor.
    pub floor_clamps: u64,
}

impl NetworkState {
    pub fn n(&self) -> usize {
        self.rho.len()
    }

    pub fn oscillator(&self, i: usize) -> OscillatorState {
        OscillatorState::new(self.rho[i], self.theta[i])
    }
}

/// Biases every oscillator at the calibrated current times `1 + g`,
/// `g ~ Normal(0, bias_dispersion)`, each on its own steady orbit at `theta = 0`.
pub fn build_network(cfg: &NetworkConfig, params: &OscillatorParams) -> Result<NetworkState, EngineError> {
    cfg.validate()?;
    let nominal = calibrate_bias(params, cfg.f_target)?;
    let critical = critical_current(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.bias_dispersion).map_err(|e| EngineError::Config(e.to_string()))?;
    let mut bias = Vec::with_capacity(cfg.n);
    let mut rho = Vec::with_capacity(cfg.n);
    for index in 0..cfg.n {
        let g = if cfg.bias_dispersion > 0.0 { normal.sample(&mut rng) } else { 0.0 };
        let b = nominal * (1.0 + g);
        if !(b > critical) {
            return Err(EngineError::SubCritical { index, bias: b, critical });
        }
        let ss = steady_state(params, params.current_density(b))?;
        if !(ss.rho0 < 1.0) {
            return Err(EngineError::Config(format!("oscillator {index} at {b:e} A leaves the disc")));
        }
        bias.push(b);
        rho.push(ss.rho0);
    }
    Ok(NetworkState { rho, theta: vec![0.0; cfg.n], bias, t: 0.0, floor_clamps: 0 })
}

/// Feedback synapses ready for integration: `kappa e^{i loop_phase} w / scale`,
/// split into real and imaginary row-major planes (A).
#[derive(Debug, Clone)]
pub struct Coupling {
    n: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Coupling {
    pub fn new(w: &WeightMatrix, kappa: f64, loop_phase: f64, norm: CouplingNorm) -> Self {
        let scale = match norm {
            CouplingNorm::MaxMagnitude => w.max_magnitude(),
            CouplingNorm::Raw => 1.0,
        };
        let f = if scale > 0.0 { Complex64::from_polar(kappa / scale, loop_phase) } else { Complex64::new(0.0, 0.0) };
        let (re, im) = w.values().iter().map(|z| z * f).map(|z| (z.re, z.im)).unzip();
        Self { n: w.n(), re, im }
    }

    pub fn from_config(w: &WeightMatrix, cfg: &NetworkConfig) -> Self {
        Self::new(w, cfg.kappa, cfg.loop_phase, cfg.coupling_norm)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Effective synapse `i, j` in amperes.
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.re[i * self.n + j], self.im[i * self.n + j])
    }

    /// `out_i = Im(sum_j c_ij e^{i theta_j})` given `sin` and `cos` of the phases.
    pub fn currents(&self, sin: &[f64], cos: &[f64], out: &mut [f64]) {
        let n = self.n;
        let row = |i: usize| dot2(&self.re[i * n..(i + 1) * n], sin, &self.im[i * n..(i + 1) * n], cos);
        if n >= PAR_MIN_N && rayon::current_num_threads() > 1 {
            out.par_chunks_mut(PAR_ROWS).enumerate().for_each(|(c, chunk)| {
                for (k, o) in chunk.iter_mut().enumerate() {
                    *o = row(c * PAR_ROWS + k);
                }
            });
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = row(i);
            }
        }
    }
}

/// `sum a_j x_j + b_j y_j` with four interleaved accumulators in a fixed order.
#[inline]
fn dot2(a: &[f64], x: &[f64], b: &[f64], y: &[f64]) -> f64 {
    let n = a.len();
    let (a, x, b, y) = (&a[..n], &x[..n], &b[..n], &y[..n]);
    let mut s = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let k = 4 * c;
        s[0] += a[k] * x[k] + b[k] * y[k];
        s[1] += a[k + 1] * x[k + 1] + b[k + 1] * y[k + 1];
        s[2] += a[k + 2] * x[k + 2] + b[k + 2] * y[k + 2];
        s[3] += a[k + 3] * x[k + 3] + b[k + 3] * y[k + 3];
    }
    for k in 4 * chunks..n {
        s[0] += a[k] * x[k] + b[k] * y[k];
    }
    (s[0] + s[1]) + (s[2] + s[3])
}

/// Per-oscillator sinusoidal current `amplitude sin((omega + detune_i) t + psi_i)`.
/// An empty `detune` means every oscillator sees `omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct Drive {
    pub amplitude: f64,
    pub omega: f64,
    pub psi: Vec<f64>,
    pub detune: Vec<f64>,
}

impl Drive {
    pub fn new(amplitude: f64, omega: f64, psi: Vec<f64>) -> Self {
        Self { amplitude, omega, psi, detune: Vec::new() }
    }

    pub fn with_detune(mut self, detune: Vec<f64>) -> Self {
        self.detune = detune;
        self
    }

    fn omega_of(&self, i: usize) -> f64 {
        self.omega + self.detune.get(i).copied().unwrap_or(0.0)
    }
}

// The running drive phase is advanced by rotation and recomputed from the
// clock this often to keep rounding from accumulating.
const DRIVE_RESYNC: u64 = 1024;

/// Per-oscillator drive phase tracked across steps.
#[derive(Debug, Clone, Default)]
struct DriveTrack {
    amplitude: f64,
    omega: Vec<f64>,
    psi: Vec<f64>,
    // (sin, cos) of omega_i * dt/2 and omega_i * dt
    half: Vec<(f64, f64)>,
    full: Vec<(f64, f64)>,
    // (sin, cos) of omega_i * t + psi_i at the start of the next step
    now: Vec<(f64, f64)>,
    since_sync: u64,
}

impl DriveTrack {
    fn new(d: &Drive, dt: f64) -> Self {
        let omega: Vec<f64> = (0..d.psi.len()).map(|i| d.omega_of(i)).collect();
        Self {
            amplitude: d.amplitude,
            half: omega.iter().map(|w| (0.5 * w * dt).sin_cos()).collect(),
            full: omega.iter().map(|w| (w * dt).sin_cos()).collect(),
            now: vec![(0.0, 1.0); omega.len()],
            psi: d.psi.clone(),
            omega,
            since_sync: DRIVE_RESYNC,
        }
    }

    fn sync(&mut self, t: f64) {
        for ((now, w), p) in self.now.iter_mut().zip(&self.omega).zip(&self.psi) {
            *now = (w * t + p).sin_cos();
        }
        self.since_sync = 0;
    }

    /// Fills the drive current at `t`, `t + dt/2` and `t + dt` and moves
    /// the tracked phase on to `t + dt`.
    fn fill(&mut self, t: f64, out: &mut [Vec<f64>; 3]) {
        if self.since_sync >= DRIVE_RESYNC {
            self.sync(t);
        }
        self.since_sync += 1;
        let a = self.amplitude;
        let [o0, oh, od] = out;
        for i in 0..self.now.len() {
            let (s, c) = self.now[i];
            let (sh, ch) = self.half[i];
            let (sd, cd) = self.full[i];
            o0[i] = a * s;
            oh[i] = a * (s * ch + c * sh);
            let next = (s * cd + c * sd, c * cd - s * sd);
            od[i] = a * next.0;
            self.now[i] = next;
        }
    }
}

/// Fixed-step RK4 for the joint `2n`-dimensional system with reusable buffers.
#[derive(Debug, Clone)]
pub struct Integrator {
    rhs: Rhs,
    drive: Option<DriveTrack>,
    dt: f64,
    scratch: Scratch,
}

/// Right-hand side of the joint system: coefficients, feedback and drive.
#[derive(Debug, Clone)]
struct Rhs {
    line: CoefficientLine,
    inv_area: f64,
    coupling: Option<Coupling>,
}

#[derive(Debug, Clone, Default)]
struct Scratch {
    kr: [Vec<f64>; 4],
    kt: [Vec<f64>; 4],
    rho: Vec<f64>,
    sin0: Vec<f64>,
    cos0: Vec<f64>,
    sin: Vec<f64>,
    cos: Vec<f64>,
    iac: Vec<f64>,
    // drive current at t, t + dt/2, t + dt
    drive: [Vec<f64>; 3],
}

impl Scratch {
    fn resize(&mut self, n: usize) {
        if self.rho.len() == n {
            return;
        }
        for v in self.kr.iter_mut().chain(self.kt.iter_mut()).chain(self.drive.iter_mut()) {
            v.resize(n, 0.0);
        }
        for v in [&mut self.rho, &mut self.sin0, &mut self.cos0, &mut self.sin, &mut self.cos, &mut self.iac] {
            v.resize(n, 0.0);
        }
    }
}

impl Rhs {
    /// Derivatives at one RK4 stage given the stage radii, `sin`/`cos` of the
    /// drive's running phase and of the oscillator phases; returns how many radii were clamped.
    #[allow(clippy::too_many_arguments)]
    fn eval(
        &self,
        rho: &[f64],
        bias: &[f64],
        drive: Option<&[f64]>,
        sin: &[f64],
        cos: &[f64],
        iac: &mut [f64],
        dr: &mut [f64],
        dth: &mut [f64],
    ) -> u64 {
        match &self.coupling {
            Some(c) => c.currents(sin, cos, iac),
            None => iac.fill(0.0),
        }
        if let Some(d) = drive {
            for (x, v) in iac.iter_mut().zip(d) {
                *x += v;
            }
        }
        let n = rho.len();
        let (bias, iac, sin, cos) = (&bias[..n], &iac[..n], &sin[..n], &cos[..n]);
        let (dr, dth) = (&mut dr[..n], &mut dth[..n]);
        let mut clamps = 0;
        for i in 0..n {
            clamps += u64::from(rho[i] < RHO_FLOOR);
            let r = rho[i].max(RHO_FLOOR);
            let co = self.line.eval((bias[i] + iac[i]) * self.inv_area);
            (dr[i], dth[i]) = derivative_sin_cos(r, sin[i], cos[i], &co);
        }
        clamps
    }
}

impl Integrator {
    pub fn new(params: &OscillatorParams, dt: f64) -> Self {
        Self {
            rhs: Rhs { line: CoefficientLine::new(params), inv_area: params.disc_area().recip(), coupling: None },
            drive: None,
            dt,
            scratch: Scratch::default(),
        }
    }

    pub fn with_coupling(mut self, c: Option<Coupling>) -> Self {
        self.rhs.coupling = c;
        self
    }

    pub fn with_drive(mut self, d: Option<Drive>) -> Self {
        self.drive = d.map(|d| DriveTrack::new(&d, self.dt));
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `state` by one step of `dt`, taking the current time as `t`.
    /// The scratch buffers must already have the state's size.
    fn step_at(&mut self, state: &mut NetworkState, t: f64) {
        let n = state.n();
        let (rhs, s) = (&self.rhs, &mut self.scratch);
        let (dt, h) = (self.dt, 0.5 * self.dt);
        for i in 0..n {
            (s.sin0[i], s.cos0[i]) = state.theta[i].sin_cos();
        }
        let driven = match &mut self.drive {
            Some(d) => {
                d.fill(t, &mut s.drive);
                true
            }
            None => false,
        };
        let dv = |k: usize| driven.then(|| &s.drive[k][..n]);
        let mut clamps =
            rhs.eval(&state.rho, &state.bias, dv(0), &s.sin0, &s.cos0, &mut s.iac, &mut s.kr[0], &mut s.kt[0]);
        for (stage, frac, ts) in [(1, h, 1), (2, h, 1), (3, dt, 2)] {
            let (prev, next) = s.kr.split_at_mut(stage);
            let (prev_t, next_t) = s.kt.split_at_mut(stage);
            let (kr, kt) = (&prev[stage - 1][..n], &prev_t[stage - 1][..n]);
            let (rho, rho0, th0) = (&mut s.rho[..n], &state.rho[..n], (&s.sin0[..n], &s.cos0[..n]));
            let (sn, cs) = (&mut s.sin[..n], &mut s.cos[..n]);
            for i in 0..n {
                rho[i] = rho0[i] + frac * kr[i];
                (sn[i], cs[i]) = rotate(th0.0[i], th0.1[i], frac * kt[i]);
            }
            clamps += rhs.eval(&s.rho, &state.bias, dv(ts), &s.sin, &s.cos, &mut s.iac, &mut next[0], &mut next_t[0]);
        }
        let w = dt / 6.0;
        let [k1r, k2r, k3r, k4r] = &s.kr;
        let [k1t, k2t, k3t, k4t] = &s.kt;
        for i in 0..n {
            state.rho[i] += w * (k1r[i] + 2.0 * k2r[i] + 2.0 * k3r[i] + k4r[i]);
            state.theta[i] += w * (k1t[i] + 2.0 * k2t[i] + 2.0 * k3t[i] + k4t[i]);
            if state.rho[i] < RHO_FLOOR {
                state.rho[i] = RHO_FLOOR;
                clamps += 1;
            }
        }
        state.floor_clamps += clamps;
    }

    pub fn run<F>(&mut self, state: &mut NetworkState, steps: u64, every: u64, mut observe: F)
    where
        F: FnMut(u64, &NetworkState),
    {
        let t0 = state.t;
        let every = every.max(1);
        self.scratch.resize(state.n());
        if let Some(d) = &mut self.drive {
            d.since_sync = DRIVE_RESYNC;
        }
        for k in 0..steps {
            if k % every == 0 {
                observe(k, state);
            }
            self.step_at(state, t0 + k as f64 * self.dt);
            state.t = t0 + (k + 1) as f64 * self.dt;
        }
        observe(steps, state);
    }

    pub fn advance(&mut self, state: &mut NetworkState, steps: u64) {
        self.run(state, steps, u64::MAX, |_, _| {});
    }
}

/// One RK4 step with optional feedback weights and external drive.
pub fn step(
    state: &mut NetworkState,
    w: Option<&WeightMatrix>,
    drive: Option<&Drive>,
    cfg: &NetworkConfig,
    params: &OscillatorParams,
) -> Result<u64, EngineError> {
    if let Some(w) = w {
        if w.n() != state.n() {
            return Err(EngineError::Dimension(format!("weights n = {}, network n = {}", w.n(), state.n())));
        }
    }
    let before = state.floor_clamps;
    let mut it = Integrator::new(params, cfg.dt)
        .with_coupling(w.map(|w| Coupling::from_config(w, cfg)))
        .with_drive(drive.cloned());
    it.advance(state, 1);
    Ok(state.floor_clamps - before)
}

/// Phases relative to a reference rotating at `f_target`.
pub fn extract_phasors(state: &NetworkState, f_target: f64) -> Vec<f64> {
    let wt = TAU * f_target * state.t;
    state.theta.iter().map(|&th| wrap(th - wt)).collect()
}

fn unwrap_series(p: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.len());
    let mut acc = match p.first() {
        Some(&x) => x,
        None => return out,
    };
    out.push(acc);
    for w in p.windows(2) {
        acc += wrap(w[1] - w[0]);
        out.push(acc);
    }
    out
}

fn slope(t: &[f64], y: &[f64]) -> f64 {
    let m = t.len() as f64;
    let (tm, ym) = (t.iter().sum::<f64>() / m, y.iter().sum::<f64>() / m);
    let sxy: f64 = t.iter().zip(y).map(|(t, y)| (t - tm) * (y - ym)).sum();
    let sxx: f64 = t.iter().map(|t| (t - tm).powi(2)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// Lock test over a window of extracted phases, `phases[sample][oscillator]`.
/// An oscillator is locked when its unwrapped phase moves less than
/// [`LOCK_MAX_DRIFT`] and its fitted drift rate is below
/// `2 pi LOCK_MAX_REL_SLOPE f_ref`.
pub fn detect_lock(times: &[f64], phases: &[Vec<f64>], f_ref: f64) -> Vec<bool> {
    let n = phases.first().map_or(0, Vec::len);
    let max_slope = TAU * LOCK_MAX_REL_SLOPE * f_ref;
    (0..n)
        .map(|i| {
            let series: Vec<f64> = phases.iter().map(|p| p[i]).collect();
            let u = unwrap_series(&series);
            let (lo, hi) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            hi - lo < LOCK_MAX_DRIFT && slope(times, &u).abs() < max_slope
        })
        .collect()
}

fn check_len(len: usize, state: &NetworkState) -> Result<(), EngineError> {
    if len != state.n() {
        return Err(EngineError::Dimension(format!("{len} phases for n = {}", state.n())));
    }
    Ok(())
}

/// Sets the network to the query phases.
///
/// Physical preparation starts from seeded random phases (an unprepared
/// array carries no information), drives oscillator `i` with
/// `A sin(omega t + query_i - lock_offset)` for `t_prepare` and then checks
/// lock over the last fifth of the stage.
pub fn prepare(
    state: &mut NetworkState,
    query: &[f64],
    cfg: &NetworkConfig,
    params: &OscillatorParams,
) -> Result<(), EngineError> {
    check_len(query.len(), state)?;
    cfg.validate()?;
    let omega = cfg.omega();
    match cfg.prepare_mode {
        PrepareMode::Direct => {
            for (i, q) in query.iter().enumerate() {
                let ss = steady_state(params, params.current_density(state.bias[i]))?;
                state.theta[i] = q + omega * state.t;
                // on the distorted orbit: a radius off it relaxes within a
                // microsecond and drags the phase along by nonisochronicity
                state.rho[i] = ss.rho0 + ss.rho1 * (state.theta[i] + ss.chi).cos();
            }
            Ok(())
        }
        PrepareMode::Physical => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5052_4550_4152_4500);
            for th in state.theta.iter_mut() {
                *th = omega * state.t + rng.random_range(-PI..PI);
            }
            let drive = Drive::new(cfg.prepare_amplitude, omega, query.iter().map(|q| q - cfg.lock_offset).collect());
            let mut it = Integrator::new(params, cfg.dt).with_drive(Some(drive));
            let steps = cfg.steps(cfg.t_prepare);
            let window_start = steps - steps / 5;
            let (mut times, mut window) = (Vec::new(), Vec::new());
            it.run(state, steps, cfg.sample_every(), |k, s| {
                if k >= window_start {
                    times.push(s.t);
                    window.push(extract_phasors(s, cfg.f_target));
                }
            });
            let unlocked: Vec<usize> = detect_lock(&times, &window, cfg.f_target)
                .iter()
                .enumerate()
                .filter(|(_, &l)| !l)
                .map(|(i, _)| i)
                .collect();
            if unlocked.is_empty() || state.n() == 0 {
                Ok(())
            } else {
                Err(EngineError::FailedLock { unlocked })
            }
        }
    }
}

/// Recognition-stage record. Times start at zero when feedback is engaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub times: Vec<f64>,
    /// Extracted phases per sample.
    pub phases: Vec<Vec<f64>>,
    /// RMS phase error against the target per sample, NaN without a target.
    pub delta: Vec<f64>,
    /// Energy of the sampled phasors on the trained weights.
    pub energy: Vec<f64>,
    /// Final phases decoded against the target.
    pub final_image: Option<PhaseImage>,
}

impl Trace {
    pub fn initial_delta(&self) -> f64 {
        self.delta.first().copied().unwrap_or(f64::NAN)
    }

    pub fn final_delta(&self) -> f64 {
        self.delta.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_phases(&self) -> &[f64] {
        self.phases.last().map_or(&[], Vec::as_slice)
    }

    /// CSV with header `time_s,phase_0..,delta_rad,energy`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let n = self.phases.first().map_or(0, Vec::len);
        let mut header = vec!["time_s".to_string()];
        header.extend((0..n).map(|i| format!("phase_{i}")));
        header.extend(["delta_rad".to_string(), "energy".to_string()]);
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.times.len() {
            let mut row = vec![format!("{:.16e}", self.times[k])];
            row.extend(self.phases[k].iter().map(|p| format!("{p:.16e}")));
            row.push(format!("{:.16e}", self.delta[k]));
            row.push(format!("{:.16e}", self.energy[k]));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `-Re sum_ij conj(a_i) w_ij a_j`; also defined for non-Hermitian weights.
fn energy_re(w: &WeightMatrix, phases: &[f64]) -> f64 {
    let a: Vec<Complex64> = phases.iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
    -(0..w.n()).map(|i| (a[i].conj() * w.row(i).iter().zip(&a).map(|(w, a)| w * a).sum::<Complex64>()).re).sum::<f64>()
}

/// Runs the recognition stage: feedback on, drives off, for `t_recognize`.
pub fn recognize(
    state: &mut NetworkState,
    w: &WeightMatrix,
    target: Option<&PhaseImage>,
    cfg: &NetworkConfig,
    params: &OscillatorParams,
) -> Result<Trace, EngineError> {
    cfg.validate()?;
    if w.n() != state.n() {
        return Err(EngineError::Dimension(format!("weights n = {}, network n = {}", w.n(), state.n())));
    }
    let stored = match target {
        Some(img) => {
            check_len(img.len(), state)?;
            Some(codec::encode(img))
        }
        None => None,
    };
    let mut it = Integrator::new(params, cfg.dt).with_coupling(Some(Coupling::from_config(w, cfg)));
    let t0 = state.t;
    let mut trace =
        Trace { times: Vec::new(), phases: Vec::new(), delta: Vec::new(), energy: Vec::new(), final_image: None };
    let mut err = None;
    it.run(state, cfg.steps(cfg.t_recognize), cfg.sample_every(), |_, s| {
        let ph = extract_phasors(s, cfg.f_target);
        let d = match &stored {
            Some(x) => match codec::error_metric(&ph, x) {
                Ok(m) => m.delta,
                Err(e) => {
                    err = Some(e);
                    f64::NAN
                }
            },
            None => f64::NAN,
        };
        trace.times.push(s.t - t0);
        trace.energy.push(energy_re(w, &ph));
        trace.delta.push(d);
        trace.phases.push(ph);
    });
    if let Some(e) = err {
        return Err(e.into());
    }
    if let Some(img) = target {
        trace.final_image = Some(codec::decode(trace.final_phases(), img.rows, img.cols, img.levels, Some(img))?);
    }
    Ok(trace)
}

fn single(params: &OscillatorParams, bias: f64, theta: f64) -> Result<NetworkState, EngineError> {
    let ss = steady_state(params, params.current_density(bias))?;
    Ok(NetworkState { rho: vec![ss.rho0], theta: vec![theta], bias: vec![bias], t: 0.0, floor_clamps: 0 })
}

/// Mean rotation frequency (Hz) of an undriven oscillator, measured by
/// simulation over `t_measure` after `t_settle`.
pub fn free_run_frequency(
    params: &OscillatorParams,
    bias: f64,
    dt: f64,
    t_settle: f64,
    t_measure: f64,
) -> Result<f64, EngineError> {
    let mut s = single(params, bias, 0.0)?;
    let mut it = Integrator::new(params, dt);
    it.advance(&mut s, (t_settle / dt).round() as u64);
    let (th0, t0) = (s.theta[0], s.t);
    it.advance(&mut s, (t_measure / dt).round() as u64);
    Ok((s.theta[0] - th0) / (TAU * (s.t - t0)))
}

/// Drives one oscillator with `amplitude sin(2 pi f_drive t)` for `duration`,
/// starting at phase `theta0` relative to the drive, and reports whether it
/// is locked over the last fifth together with its mean phase relative to
/// the drive at the end (rad, in `[0, 2 pi)`).
pub fn drive_single(
    params: &OscillatorParams,
    bias: f64,
    amplitude: f64,
    f_drive: f64,
    theta0: f64,
    duration: f64,
    dt: f64,
) -> Result<(bool, f64), EngineError> {
    Ok(drive_batch(params, bias, amplitude, &[f_drive], theta0, duration, dt)?[0])
}

/// [`drive_single`] for several independent copies of the oscillator, one
/// per drive frequency, integrated together.
pub fn drive_batch(
    params: &OscillatorParams,
    bias: f64,
    amplitude: f64,
    f_drive: &[f64],
    theta0: f64,
    duration: f64,
    dt: f64,
) -> Result<Vec<(bool, f64)>, EngineError> {
    let n = f_drive.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let one = single(params, bias, theta0)?;
    let mut s =
        NetworkState { rho: vec![one.rho[0]; n], theta: vec![theta0; n], bias: vec![bias; n], t: 0.0, floor_clamps: 0 };
    let omega: Vec<f64> = f_drive.iter().map(|f| TAU * f).collect();
    let drive = Drive::new(amplitude, omega[0], vec![0.0; n]).with_detune(omega.iter().map(|w| w - omega[0]).collect());
    let mut it = Integrator::new(params, dt).with_drive(Some(drive));
    let steps = (duration / dt).round() as u64;
    let window_start = steps - steps / 5;
    let every = ((steps / 5) / 400).max(1);
    let (mut times, mut window) = (Vec::new(), Vec::new());
    it.run(&mut s, steps, every, |k, s| {
        if k >= window_start {
            times.push(s.t);
            window.push(s.theta.iter().zip(&omega).map(|(th, w)| wrap(th - w * s.t)).collect::<Vec<_>>());
        }
    });
    let f_ref = f_drive.iter().sum::<f64>() / n as f64;
    let locked = detect_lock(&times, &window, f_ref);
    Ok((0..n)
        .map(|i| {
            let (sx, cx) = window.iter().fold((0.0, 0.0), |(a, b), p| (a + p[i].sin(), b + p[i].cos()));
            (locked[i], sx.atan2(cx).rem_euclid(TAU))
        })
        .collect())
}

/// Drive duration used for a locking test at `amplitude`: the lock
/// relaxation rate scales with the amplitude, so the 5 us reference at 1 uA
/// is stretched in inverse proportion below it.
pub fn locking_duration(amplitude: f64) -> f64 {
    5e-6 * (1e-6 / amplitude).max(1.0)
}

/// Locking half-width (Hz) for each drive amplitude (A).
///
/// For each amplitude, the largest positive and negative detunings that
/// still lock are bracketed by a batched grid search (several detunings per
/// integration), and the mean magnitude of the two edges is reported. The
/// oscillator starts on the locked branch (phase `lock_offset` behind the
/// drive), so the result is the locking range, not the capture range.
pub fn characterize_locking(
    params: &OscillatorParams,
    cfg: &NetworkConfig,
    amplitudes: &[f64],
) -> Result<Vec<f64>, EngineError> {
    // grid points per edge and refinement rounds after the first bracket:
    // the final bracket is guess / (PER_EDGE * (PER_EDGE + 1)^ROUNDS)
    const PER_EDGE: usize = 4;
    const ROUNDS: usize = 3;
    cfg.validate()?;
    let bias = calibrate_bias(params, cfg.f_target)?;
    let f_free = free_run_frequency(params, bias, cfg.dt, 0.5e-6, 5e-6)?;
    amplitudes
        .iter()
        .map(|&a| {
            if a == 0.0 {
                return Ok(0.0);
            }
            let duration = locking_duration(a);
            // detunings (Hz) for both edges, positive first
            let run = |grid: &[[f64; PER_EDGE]; 2]| -> Result<Vec<bool>, EngineError> {
                let freqs: Vec<f64> =
                    grid[0].iter().map(|d| f_free + d).chain(grid[1].iter().map(|d| f_free - d)).collect();
                Ok(drive_batch(params, bias, a, &freqs, cfg.lock_offset, duration, cfg.dt)?
                    .into_iter()
                    .map(|r| r.0)
                    .collect())
            };
            let points = |lo: f64, hi: f64, inclusive: bool| -> [f64; PER_EDGE] {
                let parts = if inclusive { PER_EDGE } else { PER_EDGE + 1 };
                std::array::from_fn(|j| lo + (hi - lo) * (j + 1) as f64 / parts as f64)
            };
            // roughly twice the expected width at this amplitude
            let mut hi = 600.0 * a / 1e-9;
            let mut brackets = loop {
                let grid = [points(0.0, hi, true), points(0.0, hi, true)];
                let locked = run(&grid)?;
                if !locked[PER_EDGE - 1] && !locked[2 * PER_EDGE - 1] {
                    break narrow([(0.0, hi); 2], &grid, &locked);
                }
                hi *= 2.0;
                if hi > cfg.f_target {
                    return Err(EngineError::Config(format!("no locking edge found at {a:e} A")));
                }
            };
            for _ in 0..ROUNDS {
                let grid = brackets.map(|(lo, hi)| points(lo, hi, false));
                let locked = run(&grid)?;
                brackets = narrow(brackets, &grid, &locked);
            }
            Ok(brackets.iter().map(|(lo, hi)| 0.25 * (lo + hi)).sum::<f64>())
        })
        .collect()
}

/// Shrinks each edge's `(locked, unlocked)` bracket to the grid interval
/// holding its first unlocked point.
fn narrow<const M: usize>(brackets: [(f64, f64); 2], grid: &[[f64; M]; 2], locked: &[bool]) -> [(f64, f64); 2] {
    std::array::from_fn(|e| {
        let (mut lo, mut hi) = brackets[e];
        for (j, &d) in grid[e].iter().enumerate() {
            if locked[e * M + j] {
                lo = d;
            } else {
                hi = d;
                break;
            }
        }
        (lo, hi)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oscillator::rk4_step;

    fn cfg(n: usize) -> NetworkConfig {
        NetworkConfig { n, ..Default::default() }
    }

    #[test]
    fn default_config_valid() {
        let c = NetworkConfig::default();
        c.validate().unwrap();
        assert!((c.f_target - 226.02e6).abs() < 0.01e6);
        let bad = NetworkConfig { dt: 30e-12, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn build_without_dispersion() {
        let p = OscillatorParams::default();
        let s = build_network(&cfg(10), &p).unwrap();
        assert!(s.bias.iter().all(|&b| b == s.bias[0]));
        assert!((s.bias[0] - 80e-6).abs() < 1e-12);
        assert!(s.theta.iter().all(|&t| t == 0.0));
        let e = build_network(&cfg(0), &p).unwrap();
        assert_eq!(e.n(), 0);
    }

    #[test]
    fn build_dispersion_statistics() {
        let p = OscillatorParams::default();
        let c = NetworkConfig { n: 192, bias_dispersion: 1e-3, seed: 5, ..Default::default() };
        let s = build_network(&c, &p).unwrap();
        let nominal = calibrate_bias(&p, c.f_target).unwrap();
        let g: Vec<f64> = s.bias.iter().map(|b| b / nominal - 1.0).collect();
        let m = g.iter().sum::<f64>() / 192.0;
        let sd = (g.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 191.0).sqrt();
        assert!((sd / 1e-3 - 1.0).abs() < 0.2, "{sd}");
        let huge = NetworkConfig { bias_dispersion: 0.5, ..c };
        assert!(matches!(build_network(&huge, &p), Err(EngineError::SubCritical { .. })));
    }

    #[test]
    fn decoupled_step_matches_single_oscillator() {
        let p = OscillatorParams::default();
        let c = NetworkConfig { n: 3, bias_dispersion: 1e-3, seed: 1, ..Default::default() };
        let mut s = build_network(&c, &p).unwrap();
        s.theta = vec![0.3, -1.0, 2.0];
        let mut singles: Vec<OscillatorState> = (0..3).map(|i| s.oscillator(i)).collect();
        let mut it = Integrator::new(&p, c.dt);
        it.advance(&mut s, 1000);
        for (i, o) in singles.iter_mut().enumerate() {
            for k in 0..1000 {
                let b = s.bias[i];
                rk4_step(&p, o, k as f64 * c.dt, c.dt, |_| b);
            }
            assert_eq!(o.rho, s.rho[i]);
            assert_eq!(o.theta, s.theta[i]);
        }
    }

    #[test]
    fn zero_kappa_equals_uncoupled() {
        let p = OscillatorParams::default();
        let c = NetworkConfig { n: 4, kappa: 0.0, ..Default::default() };
        let w = WeightMatrix::from_values(4, vec![Complex64::new(0.5, 0.2); 16]).unwrap();
        let mut a = build_network(&c, &p).unwrap();
        a.theta = vec![0.1, 0.2, 0.3, 0.4];
        let mut b = a.clone();
        for _ in 0..100 {
            step(&mut a, Some(&w), None, &c, &p).unwrap();
            step(&mut b, None, None, &c, &p).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn coupling_matches_feedback() {
        let n = 7;
        let vals: Vec<Complex64> =
            (0..n * n).map(|k| Complex64::new((k as f64 * 0.37).sin(), (k as f64 * 0.11).cos())).collect();
        let w = WeightMatrix::from_values(n, vals).unwrap();
        let c = Coupling::new(&w, 1e-8, 0.7, CouplingNorm::MaxMagnitude);
        let theta: Vec<f64> = (0..n).map(|i| i as f64 * 0.9).collect();
        let (s, co): (Vec<f64>, Vec<f64>) = theta.iter().map(|t| t.sin_cos()).unzip();
        let mut out = vec![0.0; n];
        c.currents(&s, &co, &mut out);
        let scaled = w.scaled(Complex64::from_polar(1.0 / w.max_magnitude(), 0.7));
        let expect = crate::synapse::feedback(&scaled, &theta, 1e-8);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-22, "{a} {b}");
        }
    }

    #[test]
    fn direct_prepare_is_exact() {
        let p = OscillatorParams::default();
        let c = NetworkConfig { n: 5, prepare_mode: PrepareMode::Direct, ..Default::default() };
        let mut s = build_network(&c, &p).unwrap();
        let q = vec![0.0, 1.0, -2.0, PI, 0.5];
        prepare(&mut s, &q, &c, &p).unwrap();
        let ph = extract_phasors(&s, c.f_target);
        for (a, b) in ph.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn extract_period_shift() {
        let s =
            NetworkState { rho: vec![0.7; 2], theta: vec![0.4, 7.0], bias: vec![80e-6; 2], t: 0.0, floor_clamps: 0 };
        assert_eq!(extract_phasors(&s, 226e6), vec![0.4, wrap(7.0)]);
        let f = 226e6;
        let a = NetworkState { t: 1e-6, ..s.clone() };
        let b = NetworkState { t: 1e-6 + 1.0 / f, theta: s.theta.iter().map(|t| t + TAU).collect(), ..s };
        for (x, y) in extract_phasors(&a, f).iter().zip(extract_phasors(&b, f)) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn lock_detection_thresholds() {
        let f = 226e6;
        let times: Vec<f64> = (0..200).map(|k| k as f64 * 1e-9).collect();
        let constant: Vec<Vec<f64>> = times.iter().map(|_| vec![1.0]).collect();
        assert!(detect_lock(&times, &constant, f)[0]);
        let drifting: Vec<Vec<f64>> = times.iter().map(|t| vec![wrap(TAU * 0.01 * f * t)]).collect();
        assert!(!detect_lock(&times, &drifting, f)[0]);
        let slow: Vec<Vec<f64>> = times.iter().map(|t| vec![1.0 + 2e4 * t]).collect();
        assert!(detect_lock(&times, &slow, f)[0]);
    }

    #[test]
    fn trace_csv_header() {
        let tr = Trace {
            times: vec![0.0],
            phases: vec![vec![0.5, -0.5]],
            delta: vec![0.1],
            energy: vec![-1.0],
            final_image: None,
        };
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), "time_s,phase_0,phase_1,delta_rad,energy");
        assert_eq!(lines.next().unwrap().split(',').nth(1).unwrap(), "5.0000000000000000e-1");
    }
}
