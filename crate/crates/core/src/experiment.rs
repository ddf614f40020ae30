//! Batch experiments: configuration, seeding, trial dispatch and output files.
//!
//! Every run writes into one directory: `config.json` (the resolved
//! experiment), CSV results with a one-line header, and per-kind extras
//! (`traces/`, `snapshots/`, weight files).

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{self, CodecError, NoiseSpec, PhaseImage};
use crate::engine::{self, EngineError, NetworkConfig, Trace};
use crate::oscillator::{OscillatorError, OscillatorParams};
use crate::synapse::{self, PhaseErrorLaw, StoredPatternSet, SynapseError, WeightMatrix};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot parse configuration {path}: {source}")]
    ConfigParse { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Synapse(#[from] SynapseError),
    #[error(transparent)]
    Oscillator(#[from] OscillatorError),
    #[error("weight training diverged at iteration {iteration}: mean error {delta:.4} rad exceeds twice the initial {initial:.4} rad")]
    Diverged { iteration: usize, delta: f64, initial: f64 },
    #[error("{failed} of {total} trials failed; see the summary for details")]
    TrialsFailed { failed: usize, total: usize },
}

impl ExperimentError {
    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::ConfigParse { .. } => 2,
            Self::Engine(EngineError::Config(_)) | Self::Codec(CodecError::Noise(_)) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, ExperimentError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    GenDataset,
    Train,
    Retrieve,
    SweepKappa,
    SweepDispersion,
    CdTrain,
    LockCharacterize,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Self::GenDataset => "gen-dataset",
            Self::Train => "train",
            Self::Retrieve => "retrieve",
            Self::SweepKappa => "sweep-kappa",
            Self::SweepDispersion => "sweep-dispersion",
            Self::CdTrain => "cd-train",
            Self::LockCharacterize => "lock-characterize",
        }
    }
}

/// Problem size presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// 8x6 pixels, 4 images, 3 trials per image.
    #[default]
    Desk,
    /// 16x12 pixels, 12 images, 30 trials per image.
    Paper,
}

impl Scale {
    pub fn shape(self) -> (usize, usize) {
        match self {
            Self::Desk => (8, 6),
            Self::Paper => (16, 12),
        }
    }

    pub fn images(self) -> usize {
        match self {
            Self::Desk => 4,
            Self::Paper => 12,
        }
    }

    pub fn trials(self) -> usize {
        match self {
            Self::Desk => 3,
            Self::Paper => 30,
        }
    }
}

impl FromStr for Scale {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            _ => Err(ExperimentError::Config(format!("unknown scale {s:?}, expected desk or paper"))),
        }
    }
}

/// Learning rule for `train` and in-run training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    #[default]
    PseudoInverse,
    Hebbian,
}

/// One experiment. Absent sizes fall back to the [`Scale`] preset; the
/// network size `network.n` always follows the image shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: Option<Kind>,
    pub scale: Scale,
    /// Directory of `image_*.json` files; generated from `seed` when absent.
    pub dataset: Option<PathBuf>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub images: Option<usize>,
    pub levels: u32,
    /// Binary weight file; trained from the dataset when absent.
    pub weights: Option<PathBuf>,
    pub rule: Rule,
    pub network: NetworkConfig,
    pub params: OscillatorParams,
    pub noise: NoiseSpec,
    pub trials: Option<usize>,
    /// Feedback scales (A) for the sweeps; `network.kappa` when empty.
    pub kappas: Vec<f64>,
    /// Relative bias spreads for `sweep-dispersion`.
    pub dispersions: Vec<f64>,
    /// Error level (rad) for the time-to-threshold of `sweep-kappa`.
    pub threshold: f64,
    pub eta: f64,
    pub iterations: usize,
    /// Relative weight error applied before `cd-train` when training in-run.
    pub corruption: f64,
    pub phase_law: PhaseErrorLaw,
    /// `cd-train` stops once the mean error falls below its first value
    /// divided by this factor.
    pub target_reduction: Option<f64>,
    /// Drive amplitudes (A) for `lock-characterize`.
    pub amplitudes: Vec<f64>,
    /// Recognition times (s) at which decoded images are saved.
    pub snapshot_times: Vec<f64>,
    /// Write one CSV trace per trial.
    pub traces: bool,
    pub out: PathBuf,
    pub seed: u64,
    /// Worker threads; all available when absent.
    pub threads: Option<usize>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            kind: None,
            scale: Scale::Desk,
            dataset: None,
            rows: None,
            cols: None,
            images: None,
            levels: codec::DEFAULT_LEVELS,
            weights: None,
            rule: Rule::PseudoInverse,
            network: NetworkConfig::default(),
            params: OscillatorParams::default(),
            noise: NoiseSpec::discrete_gaussian(1.0, 0),
            trials: None,
            kappas: Vec::new(),
            dispersions: vec![0.0, 1e-5, 1e-4, 1e-3, 1e-2],
            threshold: 0.1,
            eta: 0.05,
            iterations: 80,
            corruption: 0.2,
            phase_law: PhaseErrorLaw::Multiplicative,
            target_reduction: None,
            amplitudes: vec![10e-9, 30e-9, 100e-9, 300e-9, 1e-6],
            snapshot_times: Vec::new(),
            traces: true,
            out: PathBuf::from("out"),
            seed: 0,
            threads: None,
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text).map_err(|source| ExperimentError::ConfigParse { path: path.to_path_buf(), source })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("experiment spec serializes")
    }

    pub fn shape(&self) -> (usize, usize) {
        let (r, c) = self.scale.shape();
        (self.rows.unwrap_or(r), self.cols.unwrap_or(c))
    }

    pub fn image_count(&self) -> usize {
        self.images.unwrap_or(self.scale.images())
    }

    pub fn trial_count(&self) -> usize {
        self.trials.unwrap_or(self.scale.trials())
    }

    fn kappa_list(&self) -> Vec<f64> {
        if self.kappas.is_empty() {
            vec![self.network.kappa]
        } else {
            self.kappas.clone()
        }
    }

    /// Fills preset sizes in and checks the fields `kind` needs.
    pub fn resolve(&self, kind: Kind) -> Result<Self> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        let mut s = self.clone();
        s.kind = Some(kind);
        let (rows, cols) = self.shape();
        s.rows = Some(rows);
        s.cols = Some(cols);
        s.images = Some(self.image_count());
        s.trials = Some(self.trial_count());
        s.network.n = rows * cols;
        if rows == 0 || cols == 0 {
            return bad(format!("image shape {rows}x{cols} is empty"));
        }
        if s.levels < 2 {
            return bad(format!("levels = {} must be at least 2", s.levels));
        }
        if s.image_count() == 0 {
            return bad("images must be at least 1".into());
        }
        if s.trial_count() == 0 {
            return bad("trials must be at least 1".into());
        }
        s.network.validate()?;
        s.noise.validate()?;
        if s.kappa_list().iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return bad(format!("kappas {:?} must be finite and non-negative", s.kappas));
        }
        match kind {
            Kind::SweepKappa if s.kappas.is_empty() => return bad("sweep-kappa needs a non-empty kappas list".into()),
            Kind::SweepDispersion => {
                if s.dispersions.is_empty() {
                    return bad("sweep-dispersion needs a non-empty dispersions list".into());
                }
                if s.dispersions.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                    return bad(format!("dispersions {:?} must be finite and non-negative", s.dispersions));
                }
            }
            Kind::CdTrain => {
                if !(s.eta > 0.0 && s.eta.is_finite()) {
                    return bad(format!("eta = {} must be positive", s.eta));
                }
                if s.iterations == 0 {
                    return bad("iterations must be at least 1".into());
                }
                if !(s.corruption >= 0.0 && s.corruption.is_finite()) {
                    return bad(format!("corruption = {} must be non-negative", s.corruption));
                }
                if s.target_reduction.is_some_and(|r| !(r > 1.0)) {
                    return bad("target_reduction must exceed 1".into());
                }
            }
            Kind::LockCharacterize => {
                if s.amplitudes.is_empty() {
                    return bad("lock-characterize needs a non-empty amplitudes list".into());
                }
                if s.amplitudes.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                    return bad(format!("amplitudes {:?} must be positive", s.amplitudes));
                }
            }
            _ => {}
        }
        if !(s.threshold > 0.0) {
            return bad(format!("threshold = {} must be positive", s.threshold));
        }
        if s.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        Ok(s)
    }
}

/// Seed for one random draw: the first eight bytes (little endian) of
/// SHA-256 over the master seed, image and trial indices and a purpose tag.
/// The experiment kind and sweep values are left out so that every
/// experiment and every sweep point sees the same draws for a given trial.
pub fn derive_seed(master: u64, image: usize, trial: usize, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((image as u64).to_le_bytes());
    h.update((trial as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Mean, quartiles and count of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub count: usize,
}

impl Summary {
    /// NaN entries are skipped; an empty sample gives NaN statistics.
    pub fn of(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        v.sort_by(f64::total_cmp);
        let count = v.len();
        if count == 0 {
            return Self { mean: f64::NAN, q25: f64::NAN, median: f64::NAN, q75: f64::NAN, count };
        }
        let q = |p: f64| {
            let x = p * (count - 1) as f64;
            let (i, f) = (x.floor() as usize, x.fract());
            if i + 1 < count {
                v[i] + f * (v[i + 1] - v[i])
            } else {
                v[i]
            }
        };
        Self { mean: v.iter().sum::<f64>() / count as f64, q25: q(0.25), median: q(0.5), q75: q(0.75), count }
    }
}

/// Per-value statistics of the final error along one sweep axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: Vec<f64>,
    pub final_delta: Vec<Summary>,
    /// Fraction of trials that decoded to the stored image.
    pub success_rate: Vec<f64>,
}

/// Outcome of one prepare-recognize-decode trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub image: usize,
    pub trial: usize,
    pub kappa: f64,
    pub dispersion: f64,
    pub initial_delta: f64,
    pub final_delta: f64,
    pub success: bool,
    pub error: Option<String>,
    pub trace: Option<Trace>,
    pub query: Option<PhaseImage>,
}

impl TrialRecord {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.image,
            self.trial,
            num(self.kappa),
            num(self.dispersion),
            num(self.initial_delta),
            num(self.final_delta),
            u8::from(self.success),
            self.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
        )
    }
}

const TRIAL_HEADER: &str = "image,trial,kappa_a,dispersion,initial_delta_rad,final_delta_rad,success,error";

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `text` to `dir/name`, creating `dir`.
fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

fn write_config(spec: &ExperimentSpec) -> Result<()> {
    write_file(&spec.out, "config.json", &spec.to_json())?;
    Ok(())
}

fn pool(spec: &ExperimentSpec) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = spec.threads {
        b = b.num_threads(t);
    }
    b.build().map_err(|e| ExperimentError::Config(format!("thread pool: {e}")))
}

/// Images from `spec.dataset`, or generated from the master seed.
pub fn load_dataset(spec: &ExperimentSpec) -> Result<Vec<PhaseImage>> {
    let (rows, cols) = spec.shape();
    let Some(dir) = &spec.dataset else {
        return Ok(codec::generate_dataset(
            rows,
            cols,
            spec.levels,
            spec.image_count(),
            derive_seed(spec.seed, 0, 0, "dataset"),
        )?);
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("image_"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(ExperimentError::Config(format!("no image_*.json files in {}", dir.display())));
    }
    let images = paths.iter().map(|p| PhaseImage::load(p)).collect::<std::result::Result<Vec<_>, _>>()?;
    if let Some(bad) = images.iter().find(|i| (i.rows, i.cols) != (rows, cols)) {
        return Err(ExperimentError::Config(format!(
            "dataset image is {}x{}, configured shape is {rows}x{cols}",
            bad.rows, bad.cols
        )));
    }
    Ok(images)
}

fn pattern_set(images: &[PhaseImage]) -> Result<StoredPatternSet> {
    let phases: Vec<Vec<f64>> = images.iter().map(|i| codec::encode(i).into_inner()).collect();
    Ok(StoredPatternSet::from_phases(&phases)?)
}

fn train(spec: &ExperimentSpec, ps: &StoredPatternSet) -> Result<WeightMatrix> {
    Ok(match spec.rule {
        Rule::PseudoInverse => synapse::train_pseudo_inverse(ps)?,
        Rule::Hebbian => synapse::train_hebbian(ps),
    })
}

/// Weights from `spec.weights` or trained in-run, plus a warning when the
/// file's pattern hash does not match the dataset.
pub fn load_weights(spec: &ExperimentSpec, ps: &StoredPatternSet) -> Result<(WeightMatrix, Vec<String>)> {
    let Some(path) = &spec.weights else {
        return Ok((train(spec, ps)?, Vec::new()));
    };
    let mut f = std::io::BufReader::new(fs::File::open(path).map_err(io_err(path))?);
    let (w, hash) = WeightMatrix::read_binary(&mut f)?;
    if w.n() != ps.n() {
        return Err(ExperimentError::Config(format!("weights are {0}x{0}, images have {1} pixels", w.n(), ps.n())));
    }
    let mut warnings = Vec::new();
    match hash {
        Some(h) if h != ps.content_hash() => {
            warnings.push(format!("{} was trained on a different pattern set than the dataset", path.display()))
        }
        None => warnings.push(format!("{} carries no pattern hash", path.display())),
        _ => {}
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((w, warnings))
}

fn write_weights(path: &Path, w: &WeightMatrix, hash: Option<[u8; 32]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut f = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    w.write_binary(&mut f, hash)?;
    f.flush().map_err(io_err(path))
}

/// Writes the dataset as `dataset/image_NN.json` plus PPM renderings.
pub fn run_gen_dataset(spec: &ExperimentSpec) -> Result<Vec<PathBuf>> {
    let spec = spec.resolve(Kind::GenDataset)?;
    let images = codec::generate_dataset(
        spec.rows.unwrap_or_default(),
        spec.cols.unwrap_or_default(),
        spec.levels,
        spec.image_count(),
        derive_seed(spec.seed, 0, 0, "dataset"),
    )?;
    write_config(&spec)?;
    let dir = spec.out.join("dataset");
    let mut written = Vec::new();
    for (k, img) in images.iter().enumerate() {
        written.push(write_file(&dir, &format!("image_{k:02}.json"), &img.to_json()?)?);
        write_file(&dir, &format!("image_{k:02}.ppm"), &codec::render_ppm(img))?;
    }
    Ok(written)
}

/// Trains on the dataset and writes `weights.bin` with the pattern hash.
pub fn run_train(spec: &ExperimentSpec) -> Result<PathBuf> {
    let spec = spec.resolve(Kind::Train)?;
    let images = load_dataset(&spec)?;
    let ps = pattern_set(&images)?;
    let w = train(&spec, &ps)?;
    write_config(&spec)?;
    let path = spec.out.join("weights.bin");
    write_weights(&path, &w, Some(ps.content_hash()))?;
    Ok(path)
}

struct TrialSetup<'a> {
    spec: &'a ExperimentSpec,
    images: &'a [PhaseImage],
    w: &'a WeightMatrix,
}

impl TrialSetup<'_> {
    fn run(&self, image: usize, trial: usize, kappa: f64, dispersion: f64) -> TrialRecord {
        let mut rec = TrialRecord {
            image,
            trial,
            kappa,
            dispersion,
            initial_delta: f64::NAN,
            final_delta: f64::NAN,
            success: false,
            error: None,
            trace: None,
            query: None,
        };
        match self.try_run(image, trial, kappa, dispersion, &mut rec) {
            Ok(trace) => {
                rec.initial_delta = trace.initial_delta();
                rec.final_delta = trace.final_delta();
                rec.success = trace.final_image.as_ref() == Some(&self.images[image]);
                rec.trace = Some(trace);
            }
            Err(e) => rec.error = Some(e.to_string()),
        }
        rec
    }

    fn try_run(&self, image: usize, trial: usize, kappa: f64, dispersion: f64, rec: &mut TrialRecord) -> Result<Trace> {
        let spec = self.spec;
        let stored = &self.images[image];
        let noise = spec.noise.with_seed(derive_seed(spec.seed, image, trial, "noise"));
        let query = codec::distort(stored, &noise)?;
        let cfg = NetworkConfig {
            kappa,
            bias_dispersion: dispersion,
            seed: derive_seed(spec.seed, image, trial, "network"),
            ..spec.network.clone()
        };
        let mut state = engine::build_network(&cfg, &spec.params)?;
        engine::prepare(&mut state, &codec::encode(&query), &cfg, &spec.params)?;
        rec.query = Some(query);
        Ok(engine::recognize(&mut state, self.w, Some(stored), &cfg, &spec.params)?)
    }
}

/// Runs every (image, trial) pair for each `(kappa, dispersion)` point in
/// a worker pool; records come back ordered by point, image, trial.
fn run_trials(spec: &ExperimentSpec, setup: &TrialSetup, points: &[(f64, f64)]) -> Result<Vec<TrialRecord>> {
    let jobs: Vec<(f64, f64, usize, usize)> = points
        .iter()
        .flat_map(|&(k, d)| {
            (0..setup.images.len()).flat_map(move |i| (0..spec.trial_count()).map(move |t| (k, d, i, t)))
        })
        .collect();
    Ok(pool(spec)?.install(|| jobs.par_iter().map(|&(k, d, i, t)| setup.run(i, t, k, d)).collect()))
}

fn trial_rows(records: &[TrialRecord]) -> String {
    let mut s = String::from(TRIAL_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Report of a retrieval batch.
#[derive(Debug, Clone)]
pub struct RetrieveReport {
    pub records: Vec<TrialRecord>,
    pub warnings: Vec<String>,
}

impl RetrieveReport {
    pub fn success_rate(&self) -> f64 {
        self.records.iter().filter(|r| r.success).count() as f64 / self.records.len().max(1) as f64
    }

    pub fn mean_initial_delta(&self) -> f64 {
        Summary::of(&self.records.iter().map(|r| r.initial_delta).collect::<Vec<_>>()).mean
    }

    pub fn mean_final_delta(&self) -> f64 {
        Summary::of(&self.records.iter().map(|r| r.final_delta).collect::<Vec<_>>()).mean
    }
}

/// Distorts, prepares, recognizes and decodes every image `trials` times.
/// Writes `summary.csv`, `traces/` and `snapshots/`. Failed trials are
/// flagged in the summary and reported as an error after all files are
/// written.
pub fn run_retrieve(spec: &ExperimentSpec) -> Result<RetrieveReport> {
    let spec = spec.resolve(Kind::Retrieve)?;
    let images = load_dataset(&spec)?;
    let ps = pattern_set(&images)?;
    let (w, warnings) = load_weights(&spec, &ps)?;
    write_config(&spec)?;
    let setup = TrialSetup { spec: &spec, images: &images, w: &w };
    let records = run_trials(&spec, &setup, &[(spec.network.kappa, spec.network.bias_dispersion)])?;
    write_file(&spec.out, "summary.csv", &trial_rows(&records))?;
    for r in &records {
        let stem = format!("image{:02}_trial{:02}", r.image, r.trial);
        if let (true, Some(t)) = (spec.traces, &r.trace) {
            let mut buf = Vec::new();
            t.write_csv(&mut buf).expect("writing to memory");
            let dir = spec.out.join("traces");
            write_file(&dir, &format!("{stem}.csv"), std::str::from_utf8(&buf).expect("CSV is ASCII"))?;
        }
        write_snapshots(&spec, r, &images[r.image], &stem)?;
    }
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        return Err(ExperimentError::TrialsFailed { failed, total: records.len() });
    }
    Ok(RetrieveReport { records, warnings })
}

fn write_snapshots(spec: &ExperimentSpec, r: &TrialRecord, stored: &PhaseImage, stem: &str) -> Result<()> {
    let dir = spec.out.join("snapshots");
    if let Some(q) = &r.query {
        write_file(&dir, &format!("{stem}_query.json"), &q.to_json()?)?;
    }
    let Some(trace) = &r.trace else { return Ok(()) };
    for &t in &spec.snapshot_times {
        let Some(k) = nearest_sample(&trace.times, t) else { continue };
        let img = codec::decode(&trace.phases[k], stored.rows, stored.cols, stored.levels, Some(stored))?;
        let ns = (trace.times[k] * 1e9).round() as u64;
        write_file(&dir, &format!("{stem}_t{ns}ns.json"), &img.to_json()?)?;
    }
    Ok(())
}

fn nearest_sample(times: &[f64], t: f64) -> Option<usize> {
    (0..times.len()).min_by(|&a, &b| (times[a] - t).abs().total_cmp(&(times[b] - t).abs()))
}

/// Time series of the trial-mean error, one per sweep point.
fn mean_curves(records: &[TrialRecord], per_point: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    records
        .chunks(per_point)
        .map(|chunk| {
            let traces: Vec<&Trace> = chunk.iter().filter_map(|r| r.trace.as_ref()).collect();
            let Some(first) = traces.first() else { return (Vec::new(), Vec::new()) };
            let len = traces.iter().map(|t| t.delta.len()).min().unwrap_or(0);
            let times = first.times[..len].to_vec();
            let mean = (0..len).map(|k| traces.iter().map(|t| t.delta[k]).sum::<f64>() / traces.len() as f64).collect();
            (times, mean)
        })
        .collect()
}

/// First time the mean error drops below `threshold`, NaN if never.
pub fn time_to_threshold(times: &[f64], mean_delta: &[f64], threshold: f64) -> f64 {
    times.iter().zip(mean_delta).find(|(_, d)| **d < threshold).map_or(f64::NAN, |(t, _)| *t)
}

fn sweep_summary(axis: Vec<f64>, records: &[TrialRecord], per_point: usize) -> SweepResult {
    let mut final_delta = Vec::new();
    let mut success_rate = Vec::new();
    for chunk in records.chunks(per_point) {
        final_delta.push(Summary::of(&chunk.iter().map(|r| r.final_delta).collect::<Vec<_>>()));
        success_rate.push(chunk.iter().filter(|r| r.success).count() as f64 / chunk.len() as f64);
    }
    SweepResult { axis, final_delta, success_rate }
}

/// `sweep-kappa` output: final-error statistics and time-to-threshold per kappa.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaSweep {
    pub result: SweepResult,
    pub time_to_threshold: Vec<f64>,
    /// Shared time axis and the trial-mean error per kappa.
    pub times: Vec<f64>,
    pub mean_delta: Vec<Vec<f64>>,
}

/// Retrieval for each kappa with identical queries and bias draws.
/// Writes `trials.csv`, `sweep.csv` and `error_vs_time.csv`.
pub fn run_sweep_kappa(spec: &ExperimentSpec) -> Result<KappaSweep> {
    let spec = spec.resolve(Kind::SweepKappa)?;
    let images = load_dataset(&spec)?;
    let ps = pattern_set(&images)?;
    let (w, _) = load_weights(&spec, &ps)?;
    write_config(&spec)?;
    let kappas = spec.kappa_list();
    let setup = TrialSetup { spec: &spec, images: &images, w: &w };
    let points: Vec<(f64, f64)> = kappas.iter().map(|&k| (k, spec.network.bias_dispersion)).collect();
    let records = run_trials(&spec, &setup, &points)?;
    let per_point = images.len() * spec.trial_count();
    write_file(&spec.out, "trials.csv", &trial_rows(&records))?;
    let curves = mean_curves(&records, per_point);
    let result = sweep_summary(kappas.clone(), &records, per_point);
    let ttt: Vec<f64> = curves.iter().map(|(t, d)| time_to_threshold(t, d, spec.threshold)).collect();
    let mut csv = String::from("kappa_a,mean_final_delta_rad,q25,median,q75,trials,success_rate,time_to_threshold_s\n");
    for (i, k) in kappas.iter().enumerate() {
        let s = &result.final_delta[i];
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            num(*k),
            num(s.mean),
            num(s.q25),
            num(s.median),
            num(s.q75),
            s.count,
            num(result.success_rate[i]),
            num(ttt[i])
        );
    }
    write_file(&spec.out, "sweep.csv", &csv)?;
    let len = curves.iter().map(|c| c.0.len()).min().unwrap_or(0);
    let times = curves.first().map_or_else(Vec::new, |c| c.0[..len].to_vec());
    let mean_delta: Vec<Vec<f64>> = curves.iter().map(|c| c.1[..len].to_vec()).collect();
    let mut csv = String::from("time_s");
    for k in &kappas {
        let _ = write!(csv, ",mean_delta_kappa_{}", num(*k));
    }
    csv.push('\n');
    for (j, t) in times.iter().enumerate() {
        csv.push_str(&num(*t));
        for m in &mean_delta {
            csv.push(',');
            csv.push_str(&num(m[j]));
        }
        csv.push('\n');
    }
    write_file(&spec.out, "error_vs_time.csv", &csv)?;
    Ok(KappaSweep { result, time_to_threshold: ttt, times, mean_delta })
}

/// `sweep-dispersion` output, one [`SweepResult`] per kappa.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionSweep {
    pub kappas: Vec<f64>,
    pub results: Vec<SweepResult>,
}

/// Retrieval over the dispersion list for each kappa. Failed trials (for
/// instance a failed preparation lock) count as unsuccessful and are left
/// out of the error statistics. Writes `trials.csv` and `sweep.csv`.
pub fn run_sweep_dispersion(spec: &ExperimentSpec) -> Result<DispersionSweep> {
    let spec = spec.resolve(Kind::SweepDispersion)?;
    let images = load_dataset(&spec)?;
    let ps = pattern_set(&images)?;
    let (w, _) = load_weights(&spec, &ps)?;
    write_config(&spec)?;
    let kappas = spec.kappa_list();
    let setup = TrialSetup { spec: &spec, images: &images, w: &w };
    let points: Vec<(f64, f64)> = kappas.iter().flat_map(|&k| spec.dispersions.iter().map(move |&d| (k, d))).collect();
    let records = run_trials(&spec, &setup, &points)?;
    let per_point = images.len() * spec.trial_count();
    write_file(&spec.out, "trials.csv", &trial_rows(&records))?;
    let mut csv = String::from("kappa_a,dispersion,mean_final_delta_rad,q25,median,q75,trials,success_rate\n");
    let mut results = Vec::new();
    for (kk, k) in kappas.iter().enumerate() {
        let per_kappa = per_point * spec.dispersions.len();
        let r = sweep_summary(spec.dispersions.clone(), &records[kk * per_kappa..(kk + 1) * per_kappa], per_point);
        for (i, d) in spec.dispersions.iter().enumerate() {
            let s = &r.final_delta[i];
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                num(*k),
                num(*d),
                num(s.mean),
                num(s.q25),
                num(s.median),
                num(s.q75),
                s.count,
                num(r.success_rate[i])
            );
        }
        results.push(r);
    }
    write_file(&spec.out, "sweep.csv", &csv)?;
    Ok(DispersionSweep { kappas, results })
}

/// `cd-train` output.
#[derive(Debug, Clone, PartialEq)]
pub struct CdReport {
    /// Mean error of the relaxed patterns before each update, from iteration 1.
    pub mean_delta: Vec<f64>,
    pub weights: WeightMatrix,
    /// Largest Hermitian defect seen over all iterates.
    pub max_hermitian_defect: f64,
}

/// Contrastive-divergence retraining. Each iteration relaxes the network
/// from every stored image (direct preparation) for `t_recognize`, records
/// the mean error, and applies one update over all images. Stops at the
/// iteration cap, at `target_reduction`, or with [`ExperimentError::Diverged`]
/// once the error exceeds twice its first value. Writes `cd_train.csv` and
/// `weights_final.bin` in every case.
pub fn run_cd_train(spec: &ExperimentSpec) -> Result<CdReport> {
    let spec = spec.resolve(Kind::CdTrain)?;
    let images = load_dataset(&spec)?;
    let ps = pattern_set(&images)?;
    let mut w = match &spec.weights {
        Some(_) => load_weights(&spec, &ps)?.0,
        None => synapse::perturb_weights(
            &train(&spec, &ps)?,
            spec.corruption,
            derive_seed(spec.seed, 0, 0, "corruption"),
            spec.phase_law,
        ),
    };
    write_config(&spec)?;
    let cfg = NetworkConfig { prepare_mode: engine::PrepareMode::Direct, bias_dispersion: 0.0, ..spec.network.clone() };
    let pool = pool(&spec)?;
    let mut mean_delta: Vec<f64> = Vec::new();
    let mut max_defect = w.hermitian_defect();
    let mut csv = String::from("iteration,mean_delta_rad,hermitian_defect\n");
    let mut outcome = Ok(());
    for iteration in 1..=spec.iterations {
        let relaxed: Vec<(Vec<f64>, f64)> = pool.install(|| {
            images
                .par_iter()
                .map(|img| -> Result<(Vec<f64>, f64)> {
                    let mut state = engine::build_network(&cfg, &spec.params)?;
                    engine::prepare(&mut state, &codec::encode(img), &cfg, &spec.params)?;
                    let trace = engine::recognize(&mut state, &w, Some(img), &cfg, &spec.params)?;
                    Ok((trace.final_phases().to_vec(), trace.final_delta()))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let delta = relaxed.iter().map(|r| r.1).sum::<f64>() / relaxed.len() as f64;
        mean_delta.push(delta);
        let _ = writeln!(csv, "{iteration},{},{}", num(delta), num(w.hermitian_defect()));
        let initial = mean_delta[0];
        if delta > 2.0 * initial {
            outcome = Err(ExperimentError::Diverged { iteration, delta, initial });
            break;
        }
        if spec.target_reduction.is_some_and(|r| delta <= initial / r) {
            break;
        }
        if iteration == spec.iterations {
            break;
        }
        let relaxed_set = StoredPatternSet::from_phases(&relaxed.iter().map(|r| r.0.clone()).collect::<Vec<_>>())?;
        w = synapse::cd_update(&w, &ps, &relaxed_set, spec.eta)?;
        max_defect = max_defect.max(w.hermitian_defect());
    }
    write_file(&spec.out, "cd_train.csv", &csv)?;
    write_weights(&spec.out.join("weights_final.bin"), &w, Some(ps.content_hash()))?;
    outcome?;
    Ok(CdReport { mean_delta, weights: w, max_hermitian_defect: max_defect })
}

/// Least-squares line `y = slope x + intercept` and its R^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    LinearFit { slope, intercept, r2: 1.0 - ss_res / syy }
}

/// `lock-characterize` output.
#[derive(Debug, Clone, PartialEq)]
pub struct LockReport {
    pub amplitudes: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub fit: LinearFit,
}

/// Locking half-width per drive amplitude. Writes `locking.csv` and `fit.csv`.
pub fn run_lock_characterize(spec: &ExperimentSpec) -> Result<LockReport> {
    let spec = spec.resolve(Kind::LockCharacterize)?;
    write_config(&spec)?;
    let half_widths = engine::characterize_locking(&spec.params, &spec.network, &spec.amplitudes)?;
    let mut csv = String::from("amplitude_a,half_width_hz\n");
    for (a, h) in spec.amplitudes.iter().zip(&half_widths) {
        let _ = writeln!(csv, "{},{}", num(*a), num(*h));
    }
    write_file(&spec.out, "locking.csv", &csv)?;
    let fit = linear_fit(&spec.amplitudes, &half_widths);
    write_file(
        &spec.out,
        "fit.csv",
        &format!("slope_hz_per_a,intercept_hz,r2\n{},{},{}\n", num(fit.slope), num(fit.intercept), num(fit.r2)),
    )?;
    Ok(LockReport { amplitudes: spec.amplitudes.clone(), half_widths, fit })
}

/// Dispatches on `kind`.
pub fn run(spec: &ExperimentSpec, kind: Kind) -> Result<()> {
    match kind {
        Kind::GenDataset => run_gen_dataset(spec).map(drop),
        Kind::Train => run_train(spec).map(drop),
        Kind::Retrieve => run_retrieve(spec).map(drop),
        Kind::SweepKappa => run_sweep_kappa(spec).map(drop),
        Kind::SweepDispersion => run_sweep_dispersion(spec).map(drop),
        Kind::CdTrain => run_cd_train(spec).map(drop),
        Kind::LockCharacterize => run_lock_characterize(spec).map(drop),
    }
}
