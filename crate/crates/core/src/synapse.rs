//! Complex synaptic matrix: one-shot training, contrastive-divergence
//! correction, energy, feedback currents and hardware-style corruption.

use std::io::{Read, Write};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Condition-number guard for the pattern overlap matrix.
pub const MAX_OVERLAP_CONDITION: f64 = 1e12;

const HERMITIAN_TOL: f64 = 1e-10;
const UNIT_TOL: f64 = 1e-9;

pub const WEIGHT_MAGIC: [u8; 8] = *b"STOWMAT\0";
pub const WEIGHT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SynapseError {
    #[error("pattern set is degenerate (overlap condition number {condition:e})")]
    DegeneratePatterns { condition: f64 },
    #[error("pattern set is empty")]
    EmptyPatterns,
    #[error("pattern {pattern} has length {len}, expected {expected}")]
    LengthMismatch { pattern: usize, len: usize, expected: usize },
    #[error("pattern {pattern} entry {index} has modulus {modulus}, expected 1")]
    NotUnitModulus { pattern: usize, index: usize, modulus: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("energy has imaginary part {imag:e} for real part {real:e}; matrix is not Hermitian")]
    NotHermitian { real: f64, imag: f64 },
    #[error("invalid weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// `k` stored vectors of `n` unit complex numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredPatternSet {
    n: usize,
    patterns: Vec<Vec<Complex64>>,
}

impl StoredPatternSet {
    pub fn new(patterns: Vec<Vec<Complex64>>) -> Result<Self, SynapseError> {
        let n = patterns.first().map(Vec::len).ok_or(SynapseError::EmptyPatterns)?;
        for (p, v) in patterns.iter().enumerate() {
            if v.len() != n {
                return Err(SynapseError::LengthMismatch { pattern: p, len: v.len(), expected: n });
            }
            for (i, z) in v.iter().enumerate() {
                let m = z.norm();
                if (m - 1.0).abs() > UNIT_TOL {
                    return Err(SynapseError::NotUnitModulus { pattern: p, index: i, modulus: m });
                }
            }
        }
        Ok(Self { n, patterns })
    }

    /// Builds the set from phase vectors (rad).
    pub fn from_phases<P: AsRef<[f64]>>(phases: &[P]) -> Result<Self, SynapseError> {
        Self::new(phases.iter().map(|p| p.as_ref().iter().map(|&t| Complex64::from_polar(1.0, t)).collect()).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.patterns.len()
    }

    pub fn pattern(&self, k: usize) -> &[Complex64] {
        &self.patterns[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[Complex64]> {
        self.patterns.iter().map(Vec::as_slice)
    }

    /// SHA-256 over `n`, `k` and the little-endian re/im values.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        h.update((self.k() as u64).to_le_bytes());
        for p in &self.patterns {
            for z in p {
                h.update(z.re.to_le_bytes());
                h.update(z.im.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

/// `C^{kl} = (1/N) sum_i conj(x_i^k) x_i^l`, row-major `k x k`.
pub fn overlap_matrix(ps: &StoredPatternSet) -> Vec<Complex64> {
    let k = ps.k();
    let inv_n = 1.0 / ps.n() as f64;
    let mut c = vec![Complex64::new(0.0, 0.0); k * k];
    for a in 0..k {
        c[a * k + a] = Complex64::new(1.0, 0.0);
        for b in (a + 1)..k {
            let s: Complex64 =
                ps.pattern(a).iter().zip(ps.pattern(b)).map(|(x, y)| x.conj() * y).sum::<Complex64>() * inv_n;
            c[a * k + b] = s;
            c[b * k + a] = s.conj();
        }
    }
    c
}

/// Dense inverse by Gauss-Jordan elimination with partial pivoting.
/// Returns `None` if a pivot vanishes.
fn invert(m: &[Complex64], k: usize) -> Option<Vec<Complex64>> {
    let mut a = m.to_vec();
    let mut inv = vec![Complex64::new(0.0, 0.0); k * k];
    for i in 0..k {
        inv[i * k + i] = Complex64::new(1.0, 0.0);
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&x, &y| a[x * k + col].norm().total_cmp(&a[y * k + col].norm()))?;
        if a[piv * k + col].norm() == 0.0 {
            return None;
        }
        if piv != col {
            for j in 0..k {
                a.swap(piv * k + j, col * k + j);
                inv.swap(piv * k + j, col * k + j);
            }
        }
        let d = a[col * k + col].inv();
        for j in 0..k {
            a[col * k + j] *= d;
            inv[col * k + j] *= d;
        }
        for r in 0..k {
            if r == col {
                continue;
            }
            let f = a[r * k + col];
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..k {
                let (ac, ic) = (a[col * k + j], inv[col * k + j]);
                a[r * k + j] -= f * ac;
                inv[r * k + j] -= f * ic;
            }
        }
    }
    Some(inv)
}

fn norm1(m: &[Complex64], k: usize) -> f64 {
    (0..k).map(|j| (0..k).map(|i| m[i * k + j].norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Row-major `n x n` complex weights with zero self-coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    n: usize,
    w: Vec<Complex64>,
}

impl WeightMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, w: vec![Complex64::new(0.0, 0.0); n * n] }
    }

    /// Wraps row-major values and zeroes the diagonal.
    pub fn from_values(n: usize, w: Vec<Complex64>) -> Result<Self, SynapseError> {
        if w.len() != n * n {
            return Err(SynapseError::Dimension(format!("{} values for n = {n}", w.len())));
        }
        let mut m = Self { n, w };
        m.zero_diagonal();
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.w[i * self.n + j]
    }

    pub fn magnitude(&self, i: usize, j: usize) -> f64 {
        self.get(i, j).norm()
    }

    pub fn phase(&self, i: usize, j: usize) -> f64 {
        self.get(i, j).arg()
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.w[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.w
    }

    /// Polar (delay-and-scale) view: `(|w_ij|, arg w_ij)` row-major.
    pub fn polar(&self) -> Vec<(f64, f64)> {
        self.w.iter().map(|z| z.to_polar()).collect()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.w.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Every entry multiplied by the same complex factor.
    pub fn scaled(&self, factor: Complex64) -> Self {
        Self { n: self.n, w: self.w.iter().map(|z| z * factor).collect() }
    }

    /// Largest `|w_ij - conj(w_ji)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian_defect() <= HERMITIAN_TOL
    }

    fn zero_diagonal(&mut self) {
        for i in 0..self.n {
            self.w[i * self.n + i] = Complex64::new(0.0, 0.0);
        }
    }

    /// `W x` for a complex vector.
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.n).map(|i| self.row(i).iter().zip(x).map(|(w, x)| w * x).sum()).collect()
    }

    pub fn write_binary<W: Write>(&self, out: &mut W, pattern_hash: Option<[u8; 32]>) -> Result<(), SynapseError> {
        out.write_all(&WEIGHT_MAGIC)?;
        out.write_all(&WEIGHT_FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&u32::from(pattern_hash.is_some()).to_le_bytes())?;
        out.write_all(&(self.n as u64).to_le_bytes())?;
        out.write_all(&pattern_hash.unwrap_or([0; 32]))?;
        let mut buf = Vec::with_capacity(16 * self.w.len());
        for z in &self.w {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    /// Reads a binary weight file; returns the matrix and the stored pattern hash.
    pub fn read_binary<R: Read>(input: &mut R) -> Result<(Self, Option<[u8; 32]>), SynapseError> {
        let truncated = |e: std::io::Error| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => SynapseError::Format("truncated file".into()),
            _ => SynapseError::Io(e),
        };
        let mut header = [0u8; 56];
        input.read_exact(&mut header).map_err(truncated)?;
        if header[..8] != WEIGHT_MAGIC {
            return Err(SynapseError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if version != WEIGHT_FORMAT_VERSION {
            return Err(SynapseError::Format(format!("unsupported version {version}")));
        }
        let has_hash = u32::from_le_bytes(header[12..16].try_into().unwrap()) & 1 == 1;
        let n = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
        let hash: [u8; 32] = header[24..56].try_into().unwrap();
        let len = n
            .checked_mul(n)
            .and_then(|x| x.checked_mul(16))
            .ok_or_else(|| SynapseError::Format("size overflow".into()))?;
        // read through `take` so a corrupt size cannot force a huge allocation
        let mut data = Vec::new();
        input.take(len as u64).read_to_end(&mut data)?;
        if data.len() != len {
            return Err(SynapseError::Format(format!("truncated file: {} of {len} data bytes", data.len())));
        }
        let w = data
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        Ok((Self { n, w }, has_hash.then_some(hash)))
    }

    pub fn to_json(&self) -> Result<String, SynapseError> {
        let doc = WeightJson {
            n: self.n,
            re: self.w.iter().map(|z| z.re).collect(),
            im: self.w.iter().map(|z| z.im).collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self, SynapseError> {
        let doc: WeightJson = serde_json::from_str(s)?;
        if doc.re.len() != doc.im.len() {
            return Err(SynapseError::Format("re/im length mismatch".into()));
        }
        let w = doc.re.into_iter().zip(doc.im).map(|(r, i)| Complex64::new(r, i)).collect();
        Self::from_values(doc.n, w)
    }
}

#[derive(Serialize, Deserialize)]
struct WeightJson {
    n: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

/// Outer-product rule: `w_ij = (1/N) sum_k x_i^k conj(x_j^k)`.
pub fn train_hebbian(ps: &StoredPatternSet) -> WeightMatrix {
    let n = ps.n();
    let inv_n = 1.0 / n as f64;
    let mut w = vec![Complex64::new(0.0, 0.0); n * n];
    for x in ps.iter() {
        for i in 0..n {
            let xi = x[i] * inv_n;
            let row = &mut w[i * n..(i + 1) * n];
            for (wij, xj) in row.iter_mut().zip(x) {
                *wij += xi * xj.conj();
            }
        }
    }
    let mut m = WeightMatrix { n, w };
    m.zero_diagonal();
    m
}

/// Projection weights before the diagonal is cleared. Exposed so the
/// fixed-point property `W x^k = x^k` can be checked directly.
pub fn pseudo_inverse_projection(ps: &StoredPatternSet) -> Result<WeightMatrix, SynapseError> {
    let (n, k) = (ps.n(), ps.k());
    let c = overlap_matrix(ps);
    let cinv = invert(&c, k).ok_or(SynapseError::DegeneratePatterns { condition: f64::INFINITY })?;
    let condition = norm1(&c, k) * norm1(&cinv, k);
    if !(condition < MAX_OVERLAP_CONDITION) {
        return Err(SynapseError::DegeneratePatterns { condition });
    }
    // y^l = sum_k x^k Cinv^{kl}; then w_ij = (1/N) sum_l y_i^l conj(x_j^l)
    let inv_n = 1.0 / n as f64;
    let mut w = vec![Complex64::new(0.0, 0.0); n * n];
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for l in 0..k {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = (0..k).map(|kk| ps.pattern(kk)[i] * cinv[kk * k + l]).sum::<Complex64>() * inv_n;
        }
        let xl = ps.pattern(l);
        for i in 0..n {
            let row = &mut w[i * n..(i + 1) * n];
            for (wij, xj) in row.iter_mut().zip(xl) {
                *wij += y[i] * xj.conj();
            }
        }
    }
    Ok(WeightMatrix { n, w })
}

/// Pseudo-inverse (projection) rule with zero self-coupling.
pub fn train_pseudo_inverse(ps: &StoredPatternSet) -> Result<WeightMatrix, SynapseError> {
    let mut m = pseudo_inverse_projection(ps)?;
    m.zero_diagonal();
    Ok(m)
}

/// Feedback current into each neuron, `kappa * Im(sum_j w_ij e^{i theta_j})` (A).
pub fn feedback(w: &WeightMatrix, theta: &[f64], kappa: f64) -> Vec<f64> {
    let mut out = vec![0.0; w.n()];
    let (s, c): (Vec<f64>, Vec<f64>) = theta.iter().map(|t| t.sin_cos()).unzip();
    for (i, o) in out.iter_mut().enumerate() {
        *o = kappa * w.row(i).iter().zip(s.iter().zip(&c)).map(|(w, (s, c))| w.re * s + w.im * c).sum::<f64>();
    }
    out
}

/// The same current written as a sum of scaled, delayed sinusoids,
/// `kappa * sum_{j != i} |w_ij| sin(theta_j + arg w_ij)`.
pub fn feedback_polar(w: &WeightMatrix, theta: &[f64], kappa: f64) -> Vec<f64> {
    (0..w.n())
        .map(|i| {
            kappa
                * (0..w.n())
                    .filter(|&j| j != i)
                    .map(|j| w.magnitude(i, j) * (theta[j] + w.phase(i, j)).sin())
                    .sum::<f64>()
        })
        .collect()
}

/// `E = -sum_ij conj(a_i) w_ij a_j`; fails if the result is not real.
pub fn energy(w: &WeightMatrix, a: &[Complex64]) -> Result<f64, SynapseError> {
    if a.len() != w.n() {
        return Err(SynapseError::Dimension(format!("{} phasors for n = {}", a.len(), w.n())));
    }
    let e: Complex64 = -(0..w.n())
        .map(|i| a[i].conj() * w.row(i).iter().zip(a).map(|(w, a)| w * a).sum::<Complex64>())
        .sum::<Complex64>();
    if e.im.abs() >= 1e-9 * (1.0 + e.re.abs()) {
        return Err(SynapseError::NotHermitian { real: e.re, imag: e.im });
    }
    Ok(e.re)
}

/// Energy of a phase configuration (rad).
pub fn energy_of_phases(w: &WeightMatrix, phases: &[f64]) -> Result<f64, SynapseError> {
    let a: Vec<Complex64> = phases.iter().map(|&t| Complex64::from_polar(1.0, t)).collect();
    energy(w, &a)
}

/// Contrastive-divergence correction
/// `w_ij += (eta/N) sum_k [x_i^k conj(x_j^k) - a_i^k conj(a_j^k)]`.
pub fn cd_update(
    w: &WeightMatrix,
    ideal: &StoredPatternSet,
    relaxed: &StoredPatternSet,
    eta: f64,
) -> Result<WeightMatrix, SynapseError> {
    if ideal.k() != relaxed.k() || ideal.n() != relaxed.n() || ideal.n() != w.n() {
        return Err(SynapseError::Dimension(format!(
            "ideal {}x{}, relaxed {}x{}, weights n = {}",
            ideal.k(),
            ideal.n(),
            relaxed.k(),
            relaxed.n(),
            w.n()
        )));
    }
    let n = w.n();
    let scale = eta / n as f64;
    let mut out = w.clone();
    for (x, a) in ideal.iter().zip(relaxed.iter()) {
        for i in 0..n {
            let (xi, ai) = (x[i] * scale, a[i] * scale);
            let row = &mut out.w[i * n..(i + 1) * n];
            for j in 0..n {
                row[j] += xi * x[j].conj() - ai * a[j].conj();
            }
        }
    }
    out.zero_diagonal();
    Ok(out)
}

/// How a relative error is applied to the phase of a synapse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseErrorLaw {
    /// `arg w -> arg w (1 + g)`
    #[default]
    Multiplicative,
    /// `arg w -> arg w + 2 pi g`
    Additive,
}

/// Independent relative errors on the magnitude and phase of each
/// off-diagonal synapse. Hermiticity is not restored afterwards.
pub fn perturb_weights(w: &WeightMatrix, rel_sigma: f64, seed: u64, law: PhaseErrorLaw) -> WeightMatrix {
    if rel_sigma == 0.0 {
        return w.clone();
    }
    let normal = Normal::new(0.0, rel_sigma).expect("rel_sigma must be finite and non-negative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = w.n();
    let mut out = w.clone();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (g1, g2): (f64, f64) = (normal.sample(&mut rng), normal.sample(&mut rng));
            let (m, p) = w.get(i, j).to_polar();
            let m = (m * (1.0 + g1)).max(0.0);
            let p = match law {
                PhaseErrorLaw::Multiplicative => p * (1.0 + g2),
                PhaseErrorLaw::Additive => p + std::f64::consts::TAU * g2,
            };
            out.w[i * n + j] = Complex64::from_polar(m, p);
        }
    }
    out
}
