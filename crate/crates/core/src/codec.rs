//! Color-wheel phase encoding of images, noise models, decoding and the
//! global-phase-invariant RMS error.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_LEVELS: u32 = 12;

const COARSE_SAMPLES: usize = 4096;
const REFINE_CANDIDATES: usize = 8;
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("image has {got} pixels, expected {rows}x{cols}")]
    Shape { rows: usize, cols: usize, got: usize },
    #[error("pixel {index} has level {level}, outside [0, {levels})")]
    Level { index: usize, level: u32, levels: u32 },
    #[error("need at least 2 levels, got {0}")]
    TooFewLevels(u32),
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("invalid noise spec: {0}")]
    Noise(String),
    #[error("cannot draw {k} distinct images of {n} pixels with {levels} levels")]
    DatasetTooLarge { k: usize, n: usize, levels: u32 },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Wraps an angle to `(-pi, pi]`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// A grid of color-wheel indices, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseImage {
    pub rows: usize,
    pub cols: usize,
    pub levels: u32,
    pub data: Vec<u32>,
}

impl PhaseImage {
    pub fn new(rows: usize, cols: usize, levels: u32, data: Vec<u32>) -> Result<Self, CodecError> {
        let img = Self { rows, cols, levels, data };
        img.validate()?;
        Ok(img)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.levels < 2 {
            return Err(CodecError::TooFewLevels(self.levels));
        }
        if self.data.len() != self.rows * self.cols {
            return Err(CodecError::Shape { rows: self.rows, cols: self.cols, got: self.data.len() });
        }
        if let Some((index, &level)) = self.data.iter().enumerate().find(|(_, &l)| l >= self.levels) {
            return Err(CodecError::Level { index, level, levels: self.levels });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_json(&self) -> Result<String, CodecError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, CodecError> {
        let img: Self = serde_json::from_str(s)?;
        img.validate()?;
        Ok(img)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CodecError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CodecError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// True if `other` equals this image after adding one constant to every index (mod L).
    pub fn equal_up_to_shift(&self, other: &Self) -> bool {
        if self.levels != other.levels || self.data.len() != other.data.len() {
            return false;
        }
        let l = self.levels;
        let Some((&a, &b)) = self.data.first().zip(other.data.first()) else {
            return true;
        };
        let s = (b + l - a) % l;
        self.data.iter().zip(&other.data).all(|(&a, &b)| (a + s) % l == b)
    }
}

/// Phases in `(-pi, pi]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhaseVector(Vec<f64>);

impl PhaseVector {
    /// Wraps every entry onto the principal branch.
    pub fn new(phases: Vec<f64>) -> Self {
        Self(phases.into_iter().map(wrap).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Deref for PhaseVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for PhaseVector {
    fn from(v: Vec<f64>) -> Self {
        Self::new(v)
    }
}

pub fn level_phase(index: u32, levels: u32) -> f64 {
    wrap(TAU * f64::from(index) / f64::from(levels))
}

pub fn encode(img: &PhaseImage) -> PhaseVector {
    PhaseVector(img.data.iter().map(|&i| level_phase(i, img.levels)).collect())
}

/// Nearest wheel level; an exact midpoint goes to the lower index, and the
/// midpoint between `L-1` and `0` goes to `0`.
pub fn nearest_level(phase: f64, levels: u32) -> u32 {
    let l = f64::from(levels);
    let x = phase.rem_euclid(TAU) / TAU * l;
    let lower = x.floor();
    let frac = x - lower;
    let idx = if frac > 0.5 + TIE_TOL { lower + 1.0 } else { lower };
    let idx = idx as u32 % levels;
    if (frac - 0.5).abs() <= TIE_TOL && idx == levels - 1 {
        0
    } else {
        idx
    }
}

/// Maps phases back onto the wheel. With a reference image the optimal
/// global phase against it is removed first.
pub fn decode(
    phases: &[f64],
    rows: usize,
    cols: usize,
    levels: u32,
    reference: Option<&PhaseImage>,
) -> Result<PhaseImage, CodecError> {
    if levels < 2 {
        return Err(CodecError::TooFewLevels(levels));
    }
    if phases.len() != rows * cols {
        return Err(CodecError::Shape { rows, cols, got: phases.len() });
    }
    let shift = match reference {
        Some(r) => {
            if r.len() != phases.len() {
                return Err(CodecError::Length(r.len(), phases.len()));
            }
            error_metric(phases, &encode(r))?.phi_star
        }
        None => 0.0,
    };
    let data = phases.iter().map(|&p| nearest_level(p - shift, levels)).collect();
    Ok(PhaseImage { rows, cols, levels, data })
}

/// Result of the global-phase-minimized RMS comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetric {
    /// RMS wrapped phase difference (rad).
    pub delta: f64,
    /// Global phase that minimizes it; `wrap(stored - retrieved + phi_star)` is centered.
    pub phi_star: f64,
}

/// [`wrap`] for arguments already within `(-3 pi, 3 pi]`.
#[inline(always)]
fn wrap_near(x: f64) -> f64 {
    if x > PI {
        x - TAU
    } else if x <= -PI {
        x + TAU
    } else {
        x
    }
}

// `d` and `phi` both lie in `[-pi, pi]`.
fn mean_sq_at(d: &[f64], phi: f64) -> f64 {
    d.iter().map(|&x| wrap_near(x + phi).powi(2)).sum::<f64>() / d.len() as f64
}

/// Minimizes over `phi` the RMS of `wrap(stored - retrieved + phi)`.
///
/// A uniform scan over `phi` picks candidate branches; within a branch the
/// mean square is a quadratic in `phi` whose minimum is solved exactly.
pub fn error_metric(retrieved: &[f64], stored: &[f64]) -> Result<ErrorMetric, CodecError> {
    if retrieved.len() != stored.len() {
        return Err(CodecError::Length(retrieved.len(), stored.len()));
    }
    if retrieved.is_empty() {
        return Ok(ErrorMetric { delta: 0.0, phi_star: 0.0 });
    }
    let d: Vec<f64> = stored.iter().zip(retrieved).map(|(s, r)| wrap(s - r)).collect();
    let mut coarse: Vec<(f64, f64)> = (0..COARSE_SAMPLES)
        .map(|k| {
            let phi = -PI + TAU * k as f64 / COARSE_SAMPLES as f64;
            (mean_sq_at(&d, phi), phi)
        })
        .collect();
    coarse.select_nth_unstable_by(REFINE_CANDIDATES, |a, b| a.0.total_cmp(&b.0));
    coarse[..REFINE_CANDIDATES].sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut best_val, mut best_phi) = coarse[0];
    let mut unwrapped = vec![0.0; d.len()];
    for &(_, start) in coarse.iter().take(REFINE_CANDIDATES) {
        let mut phi = start;
        // a handful of branch re-assignments always suffices; each step cannot increase the value
        for _ in 0..8 {
            for (u, &x) in unwrapped.iter_mut().zip(&d) {
                *u = wrap(x + phi) - phi;
            }
            let next = -unwrapped.iter().sum::<f64>() / d.len() as f64;
            if next == phi {
                break;
            }
            phi = next;
        }
        let phi = wrap(phi);
        let val = mean_sq_at(&d, phi);
        if val < best_val {
            best_val = val;
            best_phi = phi;
        }
    }
    Ok(ErrorMetric { delta: best_val.sqrt(), phi_star: wrap(best_phi) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    DiscreteGaussian,
    HalfRandomize,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Target RMS index offset for `discrete-gaussian`.
    #[serde(default)]
    pub sigma_states: f64,
    /// Half-open pixel range `[start, end)` for `half-randomize`; the lower
    /// half of the image when absent.
    #[serde(default)]
    pub region: Option<(usize, usize)>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self { kind: NoiseKind::None, sigma_states: 0.0, region: None, seed: 0 }
    }

    pub fn discrete_gaussian(sigma_states: f64, seed: u64) -> Self {
        Self { kind: NoiseKind::DiscreteGaussian, sigma_states, region: None, seed }
    }

    pub fn half_randomize(seed: u64) -> Self {
        Self { kind: NoiseKind::HalfRandomize, sigma_states: 0.0, region: None, seed }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if !(self.sigma_states >= 0.0 && self.sigma_states.is_finite()) {
            return Err(CodecError::Noise(format!("sigma_states = {}", self.sigma_states)));
        }
        if let Some((a, b)) = self.region {
            if a > b {
                return Err(CodecError::Noise(format!("region [{a}, {b}) is reversed")));
            }
        }
        Ok(())
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// RMS of `round(g)` for `g ~ Normal(0, sigma)`, summed exactly over integer bins.
pub fn rounded_gaussian_rms(sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let kmax = (12.0 * sigma).ceil() as i64 + 2;
    let mut m2 = 0.0;
    for k in 1..=kmax {
        let k = k as f64;
        let p = normal_cdf((k + 0.5) / sigma) - normal_cdf((k - 0.5) / sigma);
        m2 += 2.0 * k * k * p;
    }
    m2.sqrt()
}

/// Continuous standard deviation whose rounded samples have RMS `target`.
pub fn calibrate_rounded_sigma(target: f64) -> f64 {
    if target <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, target + 1.0);
    while rounded_gaussian_rms(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if rounded_gaussian_rms(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Applies the noise model; deterministic in `spec.seed`.
pub fn distort(img: &PhaseImage, spec: &NoiseSpec) -> Result<PhaseImage, CodecError> {
    img.validate()?;
    spec.validate()?;
    let mut out = img.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let l = i64::from(img.levels);
    match spec.kind {
        NoiseKind::None => {}
        NoiseKind::DiscreteGaussian => {
            if spec.sigma_states > 0.0 {
                let normal = Normal::new(0.0, calibrate_rounded_sigma(spec.sigma_states))
                    .map_err(|e| CodecError::Noise(e.to_string()))?;
                for v in out.data.iter_mut() {
                    let off = normal.sample(&mut rng).round() as i64;
                    *v = (i64::from(*v) + off).rem_euclid(l) as u32;
                }
            }
        }
        NoiseKind::HalfRandomize => {
            let n = img.len();
            let (a, b) = spec.region.unwrap_or((img.rows / 2 * img.cols, n));
            for v in out.data[a.min(n)..b.min(n)].iter_mut() {
                *v = rng.random_range(0..img.levels);
            }
        }
    }
    Ok(out)
}

/// `k` images with i.i.d. uniform levels, pairwise distinct up to a global
/// level shift.
pub fn generate_dataset(
    rows: usize,
    cols: usize,
    levels: u32,
    k: usize,
    seed: u64,
) -> Result<Vec<PhaseImage>, CodecError> {
    if levels < 2 {
        return Err(CodecError::TooFewLevels(levels));
    }
    let n = rows * cols;
    // shift classes available: L^(n-1)
    let classes = (f64::from(levels)).powf(n.saturating_sub(1) as f64);
    if (k as f64) > classes {
        return Err(CodecError::DatasetTooLarge { k, n, levels });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<PhaseImage> = Vec::with_capacity(k);
    while out.len() < k {
        let data = (0..n).map(|_| rng.random_range(0..levels)).collect();
        let img = PhaseImage { rows, cols, levels, data };
        if !out.iter().any(|o| o.equal_up_to_shift(&img)) {
            out.push(img);
        }
    }
    Ok(out)
}

fn hue_rgb(h: f64) -> [u8; 3] {
    let h6 = h.rem_euclid(360.0) / 60.0;
    let x = 1.0 - (h6 % 2.0 - 1.0).abs();
    let (r, g, b) = match h6 as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b].map(|c: f64| (255.0 * c).round() as u8)
}

/// Plain-text PPM (P3) with hue `360 * index / L` at full saturation.
pub fn render_ppm(img: &PhaseImage) -> String {
    let mut s = format!("P3\n{} {}\n255\n", img.cols, img.rows);
    for row in img.data.chunks(img.cols.max(1)) {
        let line: Vec<String> = row
            .iter()
            .map(|&v| {
                let [r, g, b] = hue_rgb(360.0 * f64::from(v) / f64::from(img.levels));
                format!("{r} {g} {b}")
            })
            .collect();
        let _ = writeln!(s, "{}", line.join("  "));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(data: Vec<u32>) -> PhaseImage {
        let n = data.len();
        PhaseImage::new(1, n, 12, data).unwrap()
    }

    #[test]
    fn wrap_branch() {
        assert_eq!(wrap(PI), PI);
        assert_eq!(wrap(-PI), PI);
        assert!((wrap(3.0 * PI) - PI).abs() < 1e-15);
        assert!((wrap(0.1 - TAU) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn encode_levels() {
        let v = encode(&img(vec![0, 6, 3]));
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], PI);
        assert!((v[2] - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn round_trip_and_alignment() {
        let im = img((0..12).chain(0..12).collect());
        let v = encode(&im);
        assert_eq!(decode(&v, 1, 24, 12, None).unwrap(), im);
        let shifted: Vec<f64> = v.iter().map(|p| p + TAU / 24.0).collect();
        assert_eq!(decode(&shifted, 1, 24, 12, Some(&im)).unwrap(), im);
    }

    #[test]
    fn midpoint_goes_to_lower_index() {
        for k in 0..11 {
            assert_eq!(nearest_level(TAU * (k as f64 + 0.5) / 12.0, 12), k);
        }
        assert_eq!(nearest_level(TAU * 11.5 / 12.0, 12), 0);
        assert_eq!(nearest_level(-TAU / 24.0, 12), 0);
        assert_eq!(nearest_level(TAU * 0.51 / 12.0, 12), 1);
    }

    #[test]
    fn metric_basic_cases() {
        let a: Vec<f64> = (0..50).map(|i| wrap(i as f64 * 0.37)).collect();
        assert_eq!(error_metric(&a, &a).unwrap().delta, 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 1.234).collect();
        assert!(error_metric(&b, &a).unwrap().delta < 1e-12);
    }

    #[test]
    fn single_defect_closed_form() {
        let stored = vec![0.0; 192];
        let mut retrieved = stored.clone();
        retrieved[17] = TAU / 12.0;
        let m = error_metric(&retrieved, &stored).unwrap();
        // branch-fixed differences: one entry -pi/6, the rest 0; phi* = (pi/6)/192
        let expect = (PI / 6.0) * 191f64.sqrt() / 192.0;
        assert!((m.delta - expect).abs() < 1e-12, "{} {expect}", m.delta);
        assert!((m.phi_star - PI / 6.0 / 192.0).abs() < 1e-12);
        assert!((expect - 0.0376889).abs() < 1e-6);
    }

    #[test]
    fn rounded_rms_matches_monte_carlo() {
        let sigma = calibrate_rounded_sigma(1.0);
        assert!((rounded_gaussian_rms(sigma) - 1.0).abs() < 1e-12);
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = 200_000;
        let ms: f64 = (0..m).map(|_| normal.sample(&mut rng).round().powi(2)).sum::<f64>() / m as f64;
        assert!((ms.sqrt() - 1.0).abs() < 0.01, "{}", ms.sqrt());
        assert_eq!(calibrate_rounded_sigma(0.0), 0.0);
    }

    #[test]
    fn discrete_gaussian_rms_one_state() {
        let im = PhaseImage::new(100, 120, 12, vec![5; 12_000]).unwrap();
        assert_eq!(distort(&im, &NoiseSpec::discrete_gaussian(0.0, 4)).unwrap(), im);
        let out = distort(&im, &NoiseSpec::discrete_gaussian(1.0, 4)).unwrap();
        let ms = out
            .data
            .iter()
            .map(|&v| {
                let d = (v as i64 - 5).rem_euclid(12);
                let d = if d > 6 { d - 12 } else { d };
                (d * d) as f64
            })
            .sum::<f64>()
            / 12_000.0;
        assert!((0.95..=1.05).contains(&ms.sqrt()), "{}", ms.sqrt());
    }

    #[test]
    fn half_randomize_keeps_upper_half() {
        let im = generate_dataset(16, 12, 12, 1, 3).unwrap().remove(0);
        let out = distort(&im, &NoiseSpec::half_randomize(9)).unwrap();
        assert_eq!(out.data[..96], im.data[..96]);
        assert_ne!(out.data[96..], im.data[96..]);
    }

    #[test]
    fn dataset_deterministic_and_distinct() {
        let a = generate_dataset(16, 12, 12, 12, 42).unwrap();
        assert_eq!(a, generate_dataset(16, 12, 12, 12, 42).unwrap());
        for i in 0..12 {
            for j in (i + 1)..12 {
                for s in 0..12 {
                    let shifted: Vec<u32> = a[i].data.iter().map(|v| (v + s) % 12).collect();
                    assert_ne!(shifted, a[j].data);
                }
            }
        }
    }

    #[test]
    fn dataset_rejects_shift_duplicates() {
        // 1x2 images with 2 levels have only two shift classes
        let d = generate_dataset(1, 2, 2, 2, 0).unwrap();
        assert!(!d[0].equal_up_to_shift(&d[1]));
        assert!(generate_dataset(1, 2, 2, 3, 0).is_err());
    }

    #[test]
    fn dataset_histogram_uniform() {
        let d = generate_dataset(16, 12, 12, 12, 7).unwrap();
        let mut h = [0f64; 12];
        for v in d.iter().flat_map(|i| &i.data) {
            h[*v as usize] += 1.0;
        }
        let n = 2304.0f64;
        let (e, sd) = (n / 12.0, (n * (1.0 / 12.0) * (11.0 / 12.0)).sqrt());
        assert!(h.iter().all(|c| (c - e).abs() < 3.0 * sd), "{h:?}");
        let chi2: f64 = h.iter().map(|c| (c - e).powi(2) / e).sum();
        // 11 degrees of freedom, 99.9th percentile is 31.3
        assert!(chi2 < 31.3, "{chi2}");
    }

    #[test]
    fn json_and_ppm() {
        let im = PhaseImage::new(2, 3, 12, vec![0, 1, 2, 3, 4, 11]).unwrap();
        let s = im.to_json().unwrap();
        assert_eq!(s, r#"{"rows":2,"cols":3,"levels":12,"data":[0,1,2,3,4,11]}"#);
        assert_eq!(PhaseImage::from_json(&s).unwrap(), im);
        assert!(PhaseImage::from_json(r#"{"rows":1,"cols":1,"levels":12,"data":[12]}"#).is_err());
        let ppm = render_ppm(&im);
        assert!(ppm.starts_with("P3\n3 2\n255\n255 0 0"));
    }
}
