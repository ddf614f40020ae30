//! Vortex spin-torque oscillator in the Thiele (gyrotropic-mode) approximation.
//!
//! The vortex core sits at `r0 * (rho cos theta, rho sin theta)` and obeys
//!
//! ```text
//! d rho / dt   = a rho - b rho^3 - c cos(theta)
//! d theta / dt = w0 + w1 rho^2 + (c / rho) sin(theta)
//! ```
//!
//! where `a`, `b`, `c`, `w0`, `w1` depend linearly on the instantaneous
//! current density through the disc.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest radius the integrator lets the core reach; `c / rho` is singular at 0.
pub const RHO_FLOOR: f64 = 1e-6;

/// Largest steady radius accepted by bias calibration. The point-particle
/// model breaks down as the core approaches the disc edge.
pub const RHO_MAX: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OscillatorError {
    #[error("invalid oscillator parameter {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("radius {rho} is below the floor {RHO_FLOOR}")]
    DegenerateRadius { rho: f64 },
    #[error("bias is sub-critical: a0 = {a0} s^-1")]
    SubCritical { a0: f64 },
    #[error("parameter set has no positive critical current")]
    NonOscillatory,
    #[error("target frequency {f_target} Hz is outside the achievable band [{f_min}, {f_max}] Hz")]
    UnreachableFrequency { f_target: f64, f_min: f64, f_max: f64 },
}

/// Material and geometry constants of a vortex oscillator. Serialized with
/// the conventional symbol names in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscillatorParams {
    /// Gyrovector amplitude (J s m^-2 rad^-1).
    #[serde(rename = "G")]
    pub g: f64,
    /// First-order damping constant (J s m^-2 rad^-1).
    #[serde(rename = "D0")]
    pub d0: f64,
    /// Second-order damping constant (J s m^-2 rad^-1).
    #[serde(rename = "D1")]
    pub d1: f64,
    /// First-order magnetostatic confinement (J m^-2).
    #[serde(rename = "kMS0")]
    pub k_ms0: f64,
    /// Second-order magnetostatic confinement (J m^-2).
    #[serde(rename = "kMS1")]
    pub k_ms1: f64,
    /// First-order Oersted confinement (J A^-1).
    #[serde(rename = "kOe0")]
    pub k_oe0: f64,
    /// Second-order Oersted confinement (J A^-1); may be negative.
    #[serde(rename = "kOe1")]
    pub k_oe1: f64,
    /// Perpendicular (damping-like) spin-transfer efficiency (J A^-1).
    #[serde(rename = "aJ")]
    pub a_j: f64,
    /// In-plane (field-like) spin-transfer efficiency (J A^-1).
    #[serde(rename = "bJ")]
    pub b_j: f64,
    /// Free-layer radius (m).
    pub r0: f64,
}

impl Default for OscillatorParams {
    fn default() -> Self {
        Self {
            g: 1.14e-13,
            d0: 5.08e-16,
            d1: 9.51e-17,
            k_ms0: 1.41e-4,
            k_ms1: 3.53e-5,
            k_oe0: 3.40e-16,
            k_oe1: -1.70e-16,
            a_j: 3.10e-16,
            b_j: 8.26e-17,
            r0: 100e-9,
        }
    }
}

impl OscillatorParams {
    pub fn validate(&self) -> Result<(), OscillatorError> {
        let positive = [
            ("G", self.g),
            ("D0", self.d0),
            ("D1", self.d1),
            ("kMS0", self.k_ms0),
            ("kMS1", self.k_ms1),
            ("kOe0", self.k_oe0),
            ("aJ", self.a_j),
            ("bJ", self.b_j),
            ("r0", self.r0),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(OscillatorError::InvalidParameter { name, value });
            }
        }
        if !self.k_oe1.is_finite() {
            return Err(OscillatorError::InvalidParameter { name: "kOe1", value: self.k_oe1 });
        }
        Ok(())
    }

    /// Cross-section `pi r0^2` the current flows through.
    pub fn disc_area(&self) -> f64 {
        PI * self.r0 * self.r0
    }

    pub fn current_density(&self, current: f64) -> f64 {
        current / self.disc_area()
    }

    pub fn current(&self, density: f64) -> f64 {
        density * self.disc_area()
    }
}

/// Current-dependent coefficients of the equation of motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub w0: f64,
    pub w1: f64,
}

/// Evaluates the coefficients at total current density `j` (A m^-2).
#[inline]
pub fn coefficients(p: &OscillatorParams, j: f64) -> Coefficients {
    let w0 = (p.k_ms0 + p.k_oe0 * j) / p.g;
    let w1 = (p.k_ms1 + p.k_oe1 * j) / p.g;
    Coefficients {
        a: p.a_j * j / p.g - p.d0 / p.g * w0,
        b: p.d1 / p.g * w0 + p.d0 / p.g * w1,
        c: p.b_j * j / p.g,
        w0,
        w1,
    }
}

/// Polar coordinates of the vortex core. `theta` is unwrapped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorState {
    pub rho: f64,
    pub theta: f64,
}

impl OscillatorState {
    pub fn new(rho: f64, theta: f64) -> Self {
        Self { rho, theta }
    }
}

/// Right-hand side `(d rho/dt, d theta/dt)` of the equation of motion.
#[inline]
pub fn derivative(state: &OscillatorState, k: &Coefficients) -> Result<(f64, f64), OscillatorError> {
    if !(state.rho >= RHO_FLOOR) {
        return Err(OscillatorError::DegenerateRadius { rho: state.rho });
    }
    Ok(derivative_unchecked(state.rho, state.theta, k))
}

#[inline(always)]
pub(crate) fn derivative_unchecked(rho: f64, theta: f64, k: &Coefficients) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    derivative_sin_cos(rho, s, c, k)
}

/// Right-hand side given `sin(theta)` and `cos(theta)`.
#[inline(always)]
pub(crate) fn derivative_sin_cos(rho: f64, s: f64, c: f64, k: &Coefficients) -> (f64, f64) {
    (k.a * rho - k.b * rho * rho * rho - k.c * c, k.w0 + k.w1 * rho * rho + k.c / rho * s)
}

/// The coefficients as affine functions of the current density, for use in
/// inner loops: `x(J) = x(0) + J dx/dJ`. Agrees with [`coefficients`] to rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientLine {
    pub at_zero: Coefficients,
    pub slope: Coefficients,
}

impl CoefficientLine {
    pub fn new(p: &OscillatorParams) -> Self {
        let g = p.g;
        let w0s = p.k_oe0 / g;
        let w1s = p.k_oe1 / g;
        Self {
            at_zero: coefficients(p, 0.0),
            slope: Coefficients {
                a: p.a_j / g - p.d0 / g * w0s,
                b: p.d1 / g * w0s + p.d0 / g * w1s,
                c: p.b_j / g,
                w0: w0s,
                w1: w1s,
            },
        }
    }

    #[inline(always)]
    pub fn eval(&self, j: f64) -> Coefficients {
        let (z, s) = (&self.at_zero, &self.slope);
        Coefficients { a: z.a + s.a * j, b: z.b + s.b * j, c: z.c + s.c * j, w0: z.w0 + s.w0 * j, w1: z.w1 + s.w1 * j }
    }
}

/// Closed-form steady precession and its first-harmonic distortion.
///
/// `chi` and `zeta` are the phases of the radial and angular distortions
/// measured relative to the (undetermined) free phase of the orbit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateSolution {
    pub rho0: f64,
    pub omega: f64,
    pub a0: f64,
    pub rho1: f64,
    pub phi1: f64,
    pub chi: f64,
    pub zeta: f64,
}

impl SteadyStateSolution {
    pub fn frequency(&self) -> f64 {
        self.omega / (2.0 * PI)
    }
}

// a0 within this fraction of the spin-transfer term counts as exactly critical.
const CRITICAL_REL_TOL: f64 = 1e-9;

pub fn steady_state(p: &OscillatorParams, j_dc: f64) -> Result<SteadyStateSolution, OscillatorError> {
    let k = coefficients(p, j_dc);
    let scale = (p.a_j * j_dc / p.g).abs().max(p.d0 / p.g * k.w0.abs());
    let mut a0 = k.a;
    if a0.abs() <= CRITICAL_REL_TOL * scale {
        a0 = 0.0;
    } else if a0 < 0.0 {
        return Err(OscillatorError::SubCritical { a0 });
    }
    let rho_sq = a0 / k.b;
    let rho0 = rho_sq.sqrt();
    let omega = k.w0 + k.w1 * rho_sq;
    let rho1 = k.c / omega;
    let phi1 = if rho0 > 0.0 { k.c / (omega * rho0) } else { f64::INFINITY };
    Ok(SteadyStateSolution { rho0, omega, a0, rho1, phi1, chi: FRAC_PI_2, zeta: PI })
}

/// Current density at which spin transfer exactly balances damping (`a = 0`).
pub fn critical_density(p: &OscillatorParams) -> Result<f64, OscillatorError> {
    let denom = p.g * p.a_j - p.d0 * p.k_oe0;
    if !(denom > 0.0) {
        return Err(OscillatorError::NonOscillatory);
    }
    let jc = p.d0 * p.k_ms0 / denom;
    if !(jc > 0.0 && jc.is_finite()) {
        return Err(OscillatorError::NonOscillatory);
    }
    Ok(jc)
}

/// Critical DC current (A).
pub fn critical_current(p: &OscillatorParams) -> Result<f64, OscillatorError> {
    Ok(p.current(critical_density(p)?))
}

/// Density at which the steady radius reaches `rho_max`. `a0` and `b` are both
/// affine in the density, so `a0 - rho_max^2 b = 0` is solved directly.
fn density_at_radius(p: &OscillatorParams, rho_max: f64) -> Result<f64, OscillatorError> {
    let r2 = rho_max * rho_max;
    let k0 = coefficients(p, 0.0);
    let k1 = coefficients(p, 1.0);
    let f0 = k0.a - r2 * k0.b;
    let slope = (k1.a - r2 * k1.b) - f0;
    if !(slope > 0.0) {
        return Err(OscillatorError::NonOscillatory);
    }
    Ok(-f0 / slope)
}

/// Steady angular frequency (rad/s) as a function of DC density; valid above `J_c`.
fn steady_omega(p: &OscillatorParams, j: f64) -> f64 {
    let k = coefficients(p, j);
    k.w0 + k.w1 * (k.a.max(0.0) / k.b)
}

/// DC bias current (A) whose closed-form steady frequency equals `f_target`.
pub fn calibrate_bias(p: &OscillatorParams, f_target: f64) -> Result<f64, OscillatorError> {
    p.validate()?;
    let jc = critical_density(p)?;
    let jmax = density_at_radius(p, RHO_MAX)?;
    let target = 2.0 * PI * f_target;
    let (mut lo, mut hi) = (jc, jmax);
    let (w_lo, w_hi) = (steady_omega(p, lo), steady_omega(p, hi));
    let (f_min, f_max) = (w_lo.min(w_hi) / (2.0 * PI), w_lo.max(w_hi) / (2.0 * PI));
    if !(f_target.is_finite() && f_target >= f_min && f_target <= f_max) {
        return Err(OscillatorError::UnreachableFrequency { f_target, f_min, f_max });
    }
    let increasing = w_hi >= w_lo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let below = steady_omega(p, mid) < target;
        if below == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let j = if (steady_omega(p, lo) - target).abs() <= (steady_omega(p, hi) - target).abs() { lo } else { hi };
    Ok(p.current(j))
}

/// Readout of the magnetoresistance variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    /// Average magnetization to core displacement ratio.
    pub lambda: f64,
    /// Helicity / rotation sign, +1 or -1.
    pub xi: f64,
    /// Half the resistance swing `(R_AP - R_P) / 2` (ohm).
    pub delta_r0: f64,
}

impl Default for ReadoutParams {
    fn default() -> Self {
        Self { lambda: 2.0 / 3.0, xi: 1.0, delta_r0: 124.0 }
    }
}

impl ReadoutParams {
    /// Chooses `delta_r0` so that a core on radius `rho` biased at `i_dc`
    /// produces a voltage swing of amplitude `v_peak`.
    pub fn for_peak_voltage(lambda: f64, xi: f64, rho: f64, i_dc: f64, v_peak: f64) -> Self {
        Self { lambda, xi, delta_r0: v_peak / (i_dc * lambda * rho) }
    }

    pub fn validate(&self) -> Result<(), OscillatorError> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(OscillatorError::InvalidParameter { name: "lambda", value: self.lambda });
        }
        if self.xi != 1.0 && self.xi != -1.0 {
            return Err(OscillatorError::InvalidParameter { name: "xi", value: self.xi });
        }
        if !(self.delta_r0 > 0.0) {
            return Err(OscillatorError::InvalidParameter { name: "deltaR0", value: self.delta_r0 });
        }
        Ok(())
    }
}

/// Resistance variation (ohm) for the given core position.
pub fn readout_resistance(state: &OscillatorState, rp: &ReadoutParams) -> f64 {
    rp.lambda * rp.xi * rp.delta_r0 * state.rho * state.theta.sin()
}

/// One classical RK4 step of a single oscillator driven by `current(t)` (A).
/// The radius is clamped at [`RHO_FLOOR`]; the return value reports whether
/// the clamp engaged.
pub fn rk4_step<F>(p: &OscillatorParams, s: &mut OscillatorState, t: f64, dt: f64, current: F) -> bool
where
    F: Fn(f64) -> f64,
{
    let inv_area = p.disc_area().recip();
    let line = CoefficientLine::new(p);
    let (sin0, cos0) = s.theta.sin_cos();
    let mut clamped = false;
    let mut eval = |rho: f64, dtheta: f64, t: f64| {
        clamped |= rho < RHO_FLOOR;
        let (sn, cs) = rotate(sin0, cos0, dtheta);
        derivative_sin_cos(rho.max(RHO_FLOOR), sn, cs, &line.eval(current(t) * inv_area))
    };
    let h = 0.5 * dt;
    let (k1r, k1t) = eval(s.rho, 0.0, t);
    let (k2r, k2t) = eval(s.rho + h * k1r, h * k1t, t + h);
    let (k3r, k3t) = eval(s.rho + h * k2r, h * k2t, t + h);
    let (k4r, k4t) = eval(s.rho + dt * k3r, dt * k3t, t + dt);
    s.rho += dt / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r);
    s.theta += dt / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
    if s.rho < RHO_FLOOR {
        s.rho = RHO_FLOOR;
        clamped = true;
    }
    clamped
}

/// `(sin(x + d), cos(x + d))` from `sin x`, `cos x`. Within an RK4 step the
/// stage angles differ from the step's base angle by a few hundredths of a
/// radian, where a short Taylor series for `d` is exact to rounding and far
/// cheaper than a fresh evaluation.
#[inline(always)]
pub(crate) fn rotate(s: f64, c: f64, d: f64) -> (f64, f64) {
    if d.abs() > 0.1 {
        let (sd, cd) = d.sin_cos();
        return (s * cd + c * sd, c * cd - s * sd);
    }
    let d2 = d * d;
    // truncation error below 3e-19 for |d| <= 0.1
    let sd = d * (1.0 - d2 / 6.0 * (1.0 - d2 / 20.0 * (1.0 - d2 / 42.0 * (1.0 - d2 / 72.0))));
    let cd = 1.0 - d2 / 2.0 * (1.0 - d2 / 12.0 * (1.0 - d2 / 30.0 * (1.0 - d2 / 56.0 * (1.0 - d2 / 90.0))));
    (s * cd + c * sd, c * cd - s * sd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn j80() -> f64 {
        OscillatorParams::default().current_density(80e-6)
    }

    #[test]
    fn zero_current_is_pure_decay() {
        let p = OscillatorParams::default();
        let k = coefficients(&p, 0.0);
        assert_eq!(k.c, 0.0);
        let expected = -(p.d0 / p.g) * (p.k_ms0 / p.g);
        assert!((k.a - expected).abs() <= 1e-15 * expected.abs());
        assert!(k.a < 0.0);
    }

    #[test]
    fn w0_at_80ua_near_198_mhz() {
        // (kMS0 + kOe0 J) / G / 2pi with J = 80 uA / (pi (100 nm)^2), by hand: 198.06 MHz
        let p = OscillatorParams::default();
        let j = j80();
        assert!((j - 2.546479089e9).abs() < 1.0);
        let f0 = coefficients(&p, j).w0 / (2.0 * PI);
        assert!((f0 - 198.058e6).abs() < 0.01e6, "{f0}");
    }

    #[test]
    fn doubling_aj_doubles_drive_term() {
        let p = OscillatorParams::default();
        let mut p2 = p;
        p2.a_j *= 2.0;
        let j = j80();
        let (k, k2) = (coefficients(&p, j), coefficients(&p2, j));
        let drive = p.a_j * j / p.g;
        assert!(((k2.a - k.a) - drive).abs() <= 1e-9 * drive);
    }

    #[test]
    fn coefficients_affine_in_density() {
        let p = OscillatorParams::default();
        let f = |j: f64| {
            let k = coefficients(&p, j);
            [k.a, k.b, k.c, k.w0, k.w1]
        };
        let (j0, h) = (1.0e9, 2.5e8);
        let (a, b, c) = (f(j0), f(j0 + h), f(j0 + 2.0 * h));
        for i in 0..5 {
            let d1 = b[i] - a[i];
            let d2 = c[i] - b[i];
            assert!((d1 - d2).abs() <= 1e-9 * d1.abs().max(a[i].abs()), "coefficient {i}");
        }
    }

    #[test]
    fn coefficient_line_agrees() {
        let p = OscillatorParams::default();
        let line = CoefficientLine::new(&p);
        for j in [0.0, 1e9, j80(), 4e9] {
            let (x, y) = (coefficients(&p, j), line.eval(j));
            for (u, v) in [(x.a, y.a), (x.b, y.b), (x.c, y.c), (x.w0, y.w0), (x.w1, y.w1)] {
                assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0), "{u} {v}");
            }
        }
    }

    #[test]
    fn derivative_on_circular_orbit() {
        let p = OscillatorParams::default();
        let mut k = coefficients(&p, j80());
        let ss = steady_state(&p, j80()).unwrap();
        k.c = 0.0;
        for theta in [0.0, 1.0, -2.5, 40.0] {
            let (dr, dt) = derivative(&OscillatorState::new(ss.rho0, theta), &k).unwrap();
            assert!(dr.abs() < 1e-9 * k.a, "{dr}");
            assert!((dt - (k.w0 + k.w1 * ss.rho0 * ss.rho0)).abs() < 1e-6);
        }
    }

    #[test]
    fn derivative_at_quadrature() {
        let p = OscillatorParams::default();
        let k = coefficients(&p, j80());
        let rho = 0.7;
        let (dr, _) = derivative(&OscillatorState::new(rho, FRAC_PI_2), &k).unwrap();
        let expected = k.a * rho - k.b * rho.powi(3);
        assert!((dr - expected).abs() <= 1e-9 * expected.abs());
    }

    #[test]
    fn derivative_rejects_degenerate_radius() {
        let k = coefficients(&OscillatorParams::default(), j80());
        let err = derivative(&OscillatorState::new(1e-9, 0.0), &k).unwrap_err();
        assert!(matches!(err, OscillatorError::DegenerateRadius { .. }));
    }

    #[test]
    fn steady_state_at_80ua() {
        let p = OscillatorParams::default();
        let ss = steady_state(&p, j80()).unwrap();
        assert!((ss.rho0 * ss.rho0 - 0.5744).abs() < 5e-4, "{}", ss.rho0 * ss.rho0);
        assert!((ss.frequency() - 226.02e6).abs() < 0.05e6, "{}", ss.frequency());
        let k = coefficients(&p, j80());
        assert!((ss.rho0 * ss.rho0 - ss.a0 / k.b).abs() < 1e-15);
        assert!((ss.omega - (k.w0 + k.w1 * ss.a0 / k.b)).abs() < 1e-6);
        assert!((ss.rho1 - k.c / ss.omega).abs() < 1e-18);
        assert!(ss.rho1 / ss.rho0 < 0.01);
    }

    #[test]
    fn steady_state_at_critical_density() {
        let p = OscillatorParams::default();
        let jc = critical_density(&p).unwrap();
        let ss = steady_state(&p, jc).unwrap();
        assert_eq!(ss.rho0, 0.0);
        assert!((ss.omega - coefficients(&p, jc).w0).abs() < 1e-6);
        assert!(matches!(steady_state(&p, 0.9 * jc), Err(OscillatorError::SubCritical { .. })));
    }

    #[test]
    fn critical_current_matches_bisection_oracle() {
        let p = OscillatorParams::default();
        let ic = critical_current(&p).unwrap();
        // independent: bisection on the sign of a(J)
        let (mut lo, mut hi) = (0.0, 1e11);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if coefficients(&p, mid).a < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let ic_oracle = p.current(0.5 * (lo + hi));
        assert!((ic - ic_oracle).abs() < 1e-12 * ic_oracle);
        assert!((ic - 64e-6).abs() < 0.1e-6, "{ic}");
    }

    #[test]
    fn non_oscillatory_params() {
        let p = OscillatorParams { a_j: 1e-20, ..Default::default() };
        assert_eq!(critical_current(&p), Err(OscillatorError::NonOscillatory));
    }

    #[test]
    fn calibration_round_trip() {
        let p = OscillatorParams::default();
        let f = steady_state(&p, j80()).unwrap().frequency();
        let i = calibrate_bias(&p, f).unwrap();
        assert!((i - 80e-6).abs() < 1e-9 * 80e-6, "{i}");
        let back = steady_state(&p, p.current_density(i)).unwrap().frequency();
        assert!((back - f).abs() <= 1e-9 * f);
    }

    #[test]
    fn calibration_226_mhz_near_80ua() {
        let i = calibrate_bias(&OscillatorParams::default(), 226e6).unwrap();
        assert!((i - 80e-6).abs() < 0.1e-6, "{i}");
    }

    #[test]
    fn calibration_rejects_unreachable() {
        let p = OscillatorParams::default();
        assert!(matches!(calibrate_bias(&p, 10e6), Err(OscillatorError::UnreachableFrequency { .. })));
        // needs rho0 > 1 under these parameters
        assert!(matches!(calibrate_bias(&p, 248e6), Err(OscillatorError::UnreachableFrequency { .. })));
    }

    #[test]
    fn readout_values() {
        let p = OscillatorParams::default();
        let ss = steady_state(&p, j80()).unwrap();
        let rp = ReadoutParams::for_peak_voltage(2.0 / 3.0, 1.0, ss.rho0, 80e-6, 5e-3);
        assert!((rp.delta_r0 - 123.7).abs() < 0.1, "{}", rp.delta_r0);
        let d = ReadoutParams::default();
        assert_eq!(readout_resistance(&OscillatorState::new(0.7, 0.0), &d), 0.0);
        let s = OscillatorState::new(0.7, 0.3);
        let flipped = ReadoutParams { xi: -1.0, ..d };
        assert_eq!(readout_resistance(&s, &flipped), -readout_resistance(&s, &d));
    }

    #[test]
    fn params_json_uses_symbol_names() {
        let s = serde_json::to_string(&OscillatorParams::default()).unwrap();
        for key in ["\"G\"", "\"D0\"", "\"kMS1\"", "\"kOe1\"", "\"aJ\"", "\"bJ\"", "\"r0\""] {
            assert!(s.contains(key), "{s}");
        }
        let back: OscillatorParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, OscillatorParams::default());
    }

    #[test]
    fn validate_rejects_nonpositive() {
        let p = OscillatorParams { d1: 0.0, ..Default::default() };
        assert!(p.validate().is_err());
        let p = OscillatorParams { k_oe1: 1e-16, ..Default::default() };
        assert!(p.validate().is_ok());
    }
}
