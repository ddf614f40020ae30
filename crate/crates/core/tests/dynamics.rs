use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sto_hopfield::codec::{self, wrap};
use sto_hopfield::engine::{self, Integrator, NetworkConfig, NetworkState, PrepareMode};
use sto_hopfield::oscillator::{critical_current, steady_state, OscillatorParams, RHO_FLOOR};
use sto_hopfield::synapse::{self, StoredPatternSet, WeightMatrix};

fn single(bias: f64, rho: f64) -> NetworkState {
    NetworkState { rho: vec![rho], theta: vec![0.0], bias: vec![bias], t: 0.0, floor_clamps: 0 }
}

fn random_patterns(n: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k).map(|_| (0..n).map(|_| rng.random_range(-PI..PI)).collect()).collect()
}

fn trained(n: usize, k: usize, seed: u64) -> (Vec<Vec<f64>>, WeightMatrix) {
    let p = random_patterns(n, k, seed);
    let w = synapse::train_pseudo_inverse(&StoredPatternSet::from_phases(&p).unwrap()).unwrap();
    (p, w)
}

fn direct_cfg(n: usize, kappa: f64) -> NetworkConfig {
    NetworkConfig { n, kappa, prepare_mode: PrepareMode::Direct, ..NetworkConfig::default() }
}

fn max_wrapped_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| wrap(x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn orbit_first_harmonic_matches_rho1() {
    let p = OscillatorParams::default();
    let bias = 80e-6;
    let ss = steady_state(&p, p.current_density(bias)).unwrap();
    let dt = 20e-12;
    let mut s = single(bias, ss.rho0);
    let mut it = Integrator::new(&p, dt);
    it.advance(&mut s, 250_000);
    let mut samples = Vec::new();
    // whole number of periods, sampled every step
    let steps = (200.0 * TAU / ss.omega / dt).round() as u64;
    it.run(&mut s, steps, 1, |_, s| samples.push((s.rho[0], s.theta[0])));
    let mean = samples.iter().map(|x| x.0).sum::<f64>() / samples.len() as f64;
    let h: Complex64 = samples.iter().map(|&(r, th)| (r - mean) * Complex64::from_polar(1.0, -th)).sum::<Complex64>()
        * (2.0 / samples.len() as f64);
    let rel = (h.norm() / ss.rho1 - 1.0).abs();
    assert!(rel < 0.1, "first harmonic {} vs rho1 {}", h.norm(), ss.rho1);
}

#[test]
fn critical_current_dichotomy() {
    let p = OscillatorParams::default();
    let ic = critical_current(&p).unwrap();
    let dt = 20e-12;

    // Below onset the core spirals in to a small residual circle held up by
    // the c cos(theta) term, of order c/w0.
    let below = ic * 0.98;
    let k = sto_hopfield::oscillator::coefficients(&p, p.current_density(below));
    let mut s = single(below, 0.3);
    Integrator::new(&p, dt).advance(&mut s, 7_500_000);
    assert!(s.rho[0] < 5.0 * k.c / k.w0, "rho {} residual scale {}", s.rho[0], k.c / k.w0);
    assert!(s.rho[0] >= RHO_FLOOR);

    let above = ic * 1.02;
    let ss = steady_state(&p, p.current_density(above)).unwrap();
    let mut s = single(above, 0.01);
    Integrator::new(&p, dt).advance(&mut s, 5_000_000);
    assert!((s.rho[0] / ss.rho0 - 1.0).abs() < 0.02, "rho {} vs {}", s.rho[0], ss.rho0);
}

fn coupled_final(dt: f64, t: f64) -> Vec<f64> {
    let p = OscillatorParams::default();
    let (pat, w) = trained(12, 3, 7);
    let cfg = direct_cfg(12, 100e-9);
    let mut s = engine::build_network(&cfg, &p).unwrap();
    let query: Vec<f64> = pat[0].iter().enumerate().map(|(i, x)| x + 0.4 * ((i * 7 % 5) as f64 - 2.0)).collect();
    engine::prepare(&mut s, &query, &cfg, &p).unwrap();
    let mut it = Integrator::new(&p, dt).with_coupling(Some(engine::Coupling::from_config(&w, &cfg)));
    it.advance(&mut s, (t / dt).round() as u64);
    s.theta
}

/// At the default 20 ps step the truncation error of a 100 ns run sits at
/// round-off (about 1e-11 rad), so the order is measured from an 80 ps base
/// where truncation dominates.
#[test]
fn rk4_fourth_order_on_coupled_run() {
    let dt = 80e-12;
    let reference = coupled_final(dt / 16.0, 100e-9);
    let coarse = max_wrapped_gap(&coupled_final(dt, 100e-9), &reference);
    let fine = max_wrapped_gap(&coupled_final(dt / 4.0, 100e-9), &reference);
    assert!(coarse / fine >= 100.0, "defects {coarse:e} {fine:e}");
}

#[test]
fn default_step_defect_is_round_off() {
    let dt = 20e-12;
    let gap = max_wrapped_gap(&coupled_final(dt, 100e-9), &coupled_final(dt / 4.0, 100e-9));
    assert!(gap < 1e-9, "{gap:e}");
}

#[test]
fn zero_kappa_network_equals_independent_oscillators() {
    let p = OscillatorParams::default();
    let (pat, w) = trained(10, 2, 3);
    let cfg = NetworkConfig { bias_dispersion: 1e-3, seed: 5, ..direct_cfg(10, 0.0) };
    let mut s = engine::build_network(&cfg, &p).unwrap();
    engine::prepare(&mut s, &pat[1], &cfg, &p).unwrap();
    let initial = s.clone();
    let mut it = Integrator::new(&p, cfg.dt).with_coupling(Some(engine::Coupling::from_config(&w, &cfg)));
    it.advance(&mut s, 20_000);
    for i in 0..10 {
        let mut one = NetworkState {
            rho: vec![initial.rho[i]],
            theta: vec![initial.theta[i]],
            bias: vec![initial.bias[i]],
            t: 0.0,
            floor_clamps: 0,
        };
        Integrator::new(&p, cfg.dt).advance(&mut one, 20_000);
        assert_eq!(one.theta[0].to_bits(), s.theta[i].to_bits());
        assert_eq!(one.rho[0].to_bits(), s.rho[i].to_bits());
    }
}

/// The c cos(theta) term pins the orbit distortion to absolute phase, so a
/// common shift is not an exact symmetry. The residual stays at the scale of
/// the angular distortion phi1 instead of vanishing.
#[test]
fn global_phase_shift_carries_through_up_to_orbit_distortion() {
    let p = OscillatorParams::default();
    let (pat, w) = trained(24, 3, 11);
    let cfg = NetworkConfig { t_recognize: 1e-6, ..direct_cfg(24, 10e-9) };
    let ss = steady_state(&p, p.current_density(engine::build_network(&cfg, &p).unwrap().bias[0])).unwrap();
    let query: Vec<f64> = pat[2].iter().enumerate().map(|(i, x)| x + if i % 3 == 0 { 0.5 } else { 0.0 }).collect();
    let stored = codec::PhaseVector::new(pat[2].clone());
    let run = |shift: f64| {
        let mut s = engine::build_network(&cfg, &p).unwrap();
        let q: Vec<f64> = query.iter().map(|x| x + shift).collect();
        engine::prepare(&mut s, &q, &cfg, &p).unwrap();
        let tr = engine::recognize(&mut s, &w, None, &cfg, &p).unwrap();
        let last = tr.final_phases().to_vec();
        (codec::error_metric(&last, stored.as_slice()).unwrap().delta, last)
    };
    let (d0, base) = run(0.0);
    for shift in [0.7, 2.0, -2.5] {
        let (d, moved) = run(shift);
        let shifted: Vec<f64> = base.iter().map(|x| x + shift).collect();
        let dev = max_wrapped_gap(&moved, &shifted);
        assert!(dev < 4.0 * ss.phi1, "shift {shift}: deviation {dev:e}, phi1 {:e}", ss.phi1);
        assert!((d - d0).abs() < ss.phi1, "shift {shift}: delta {d} vs {d0}");
    }
}

#[test]
fn parallel_coupling_is_bit_identical() {
    let p = OscillatorParams::default();
    let (pat, w) = trained(192, 12, 21);
    let cfg = NetworkConfig { t_recognize: 50e-9, ..direct_cfg(192, 10e-9) };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut s = engine::build_network(&cfg, &p).unwrap();
            let q: Vec<f64> = pat[3].iter().enumerate().map(|(i, x)| x + 0.01 * (i % 11) as f64).collect();
            engine::prepare(&mut s, &q, &cfg, &p).unwrap();
            engine::recognize(&mut s, &w, None, &cfg, &p).unwrap()
        })
    };
    let (a, b) = (run(1), run(3));
    let bits = |t: &engine::Trace| t.phases.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn physical_prepare_locks_to_query() {
    let p = OscillatorParams::default();
    let (pat, _) = trained(6, 1, 4);
    let cfg = NetworkConfig { n: 6, seed: 9, ..NetworkConfig::default() };
    let mut s = engine::build_network(&cfg, &p).unwrap();
    engine::prepare(&mut s, &pat[0], &cfg, &p).unwrap();
    let got = engine::extract_phasors(&s, cfg.f_target);
    let m = codec::error_metric(&got, &pat[0]).unwrap();
    assert!(m.delta < 0.05, "delta {}", m.delta);
}

#[test]
fn step_rejects_mismatched_weights() {
    let p = OscillatorParams::default();
    let cfg = direct_cfg(4, 10e-9);
    let mut s = engine::build_network(&cfg, &p).unwrap();
    let w = WeightMatrix::zeros(5);
    assert!(engine::step(&mut s, Some(&w), None, &cfg, &p).is_err());
    assert!(engine::recognize(&mut s, &w, None, &cfg, &p).is_err());
}
