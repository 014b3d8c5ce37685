//! Synthetic detector scores and experiment drivers: copula-correlated score
//! generation, mixture windows, window-size/mixture grids, progressive drift
//! streams and exhaustive detector-subset studies.
//!
//! Every driver is a pure function of its configuration and seed. Parallel
//! cells derive their own seeds, so sequential and parallel runs agree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::combiners::{calibrate, Calibration, CombinerKind};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, Execution};
use crate::matrix::ScoreMatrix;
use crate::metrics::{auroc, LabeledScores, Orientation};
use crate::numerics::{chi2_inv_cdf, std_normal_cdf};
use crate::window::{ks_sorted, monitor_correlation, MonitorState};

/// Marginal distribution of one synthetic detector's in-distribution score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScoreShape {
    Normal { mean: f64, std: f64 },
    ShiftedGamma { shape: f64, scale: f64, loc: f64 },
    Bimodal { mean1: f64, std1: f64, mean2: f64, std2: f64, mix: f64 },
}

impl ScoreShape {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ScoreShape::Normal { mean, std } => mean.is_finite() && std > 0.0 && std.is_finite(),
            ScoreShape::ShiftedGamma { shape, scale, loc } => {
                shape > 0.0 && shape.is_finite() && scale > 0.0 && scale.is_finite() && loc.is_finite()
            }
            ScoreShape::Bimodal { mean1, std1, mean2, std2, mix } => {
                mean1.is_finite()
                    && mean2.is_finite()
                    && std1 > 0.0
                    && std2 > 0.0
                    && std1.is_finite()
                    && std2.is_finite()
                    && (0.0..=1.0).contains(&mix)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid shape parameters {self:?}")))
        }
    }

    /// Maps a standard-normal latent value through this shape's quantile function.
    pub fn from_latent(&self, z: f64) -> Result<f64> {
        match *self {
            ScoreShape::Normal { mean, std } => Ok(mean + std * z),
            ScoreShape::ShiftedGamma { shape, scale, loc } => {
                let u = std_normal_cdf(z);
                Ok(loc + scale * 0.5 * chi2_inv_cdf(u, 2.0 * shape)?)
            }
            ScoreShape::Bimodal { mean1, std1, mean2, std2, mix } => {
                let u = std_normal_cdf(z);
                let cdf = |x: f64| {
                    mix * std_normal_cdf((x - mean1) / std1) + (1.0 - mix) * std_normal_cdf((x - mean2) / std2)
                };
                let mut lo = mean1.min(mean2) - 40.0 * std1.max(std2);
                let mut hi = mean1.max(mean2) + 40.0 * std1.max(std2);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if cdf(mid) < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-12 * (1.0 + mid.abs()) {
                        break;
                    }
                }
                Ok(0.5 * (lo + hi))
            }
        }
    }
}

/// Disparate default shapes, cycled across detectors.
pub const DEFAULT_SHAPES: [ScoreShape; 3] = [
    ScoreShape::Normal { mean: 0.0, std: 1.0 },
    ScoreShape::ShiftedGamma { shape: 2.0, scale: 1.5, loc: -1.0 },
    ScoreShape::Bimodal { mean1: -1.0, std1: 0.5, mean2: 2.0, std2: 0.8, mix: 0.3 },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub k: usize,
    /// Pairwise latent correlation of the Gaussian copula.
    pub rho: f64,
    pub id_shapes: Vec<ScoreShape>,
    /// Location decrease applied to each detector's score under shift, per
    /// unit of intensity.
    pub shift_offset: Vec<f64>,
    /// Probability that a mixture-window row is shifted.
    pub beta: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    /// `k` detectors with shapes cycled from [`DEFAULT_SHAPES`].
    pub fn mixed(k: usize, rho: f64, offset: f64, seed: u64) -> Self {
        Self {
            k,
            rho,
            id_shapes: (0..k).map(|j| DEFAULT_SHAPES[j % DEFAULT_SHAPES.len()]).collect(),
            shift_offset: vec![offset; k],
            beta: 0.0,
            seed,
        }
    }

    /// `k` standard-normal detectors.
    pub fn normal(k: usize, rho: f64, offset: f64, seed: u64) -> Self {
        Self {
            k,
            rho,
            id_shapes: vec![ScoreShape::Normal { mean: 0.0, std: 1.0 }; k],
            shift_offset: vec![offset; k],
            beta: 0.0,
            seed,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Domain("k must be >= 1".into()));
        }
        if self.id_shapes.len() != self.k || self.shift_offset.len() != self.k {
            return Err(Error::Dimension(format!(
                "k = {} but {} shapes and {} offsets",
                self.k,
                self.id_shapes.len(),
                self.shift_offset.len()
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Domain(format!("rho must lie in [0,1), got {}", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Domain(format!("beta must lie in [0,1], got {}", self.beta)));
        }
        if self.shift_offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite shift offset".into()));
        }
        self.id_shapes.iter().try_for_each(ScoreShape::validate)
    }

    pub fn detector_names(&self) -> Vec<String> {
        (0..self.k).map(|j| format!("det{j}")).collect()
    }

    /// Draws one row at shift intensity `intensity` (0 = in-distribution).
    fn sample_row<R: Rng>(&self, rng: &mut R, intensity: f64, out: &mut Vec<f64>) -> Result<()> {
        let shared: f64 = rng.sample(StandardNormal);
        let (a, b) = (self.rho.sqrt(), (1.0 - self.rho).sqrt());
        for (shape, off) in self.id_shapes.iter().zip(&self.shift_offset) {
            let e: f64 = rng.sample(StandardNormal);
            out.push(shape.from_latent(a * shared + b * e)? - intensity * off);
        }
        Ok(())
    }

    fn rows<R: Rng>(&self, rng: &mut R, n: usize, mut intensity: impl FnMut(&mut R) -> f64) -> Result<ScoreMatrix> {
        let mut data = Vec::with_capacity(n * self.k);
        for _ in 0..n {
            let s = intensity(rng);
            self.sample_row(rng, s, &mut data)?;
        }
        ScoreMatrix::new(self.detector_names(), data)
    }
}

const STREAM_ID: u64 = 0;
const STREAM_SHIFT: u64 = 1;
const STREAM_MIXTURE: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n` rows from the in-distribution (or fully shifted) generator.
pub fn gen_scores(cfg: &SyntheticConfig, n: usize, shifted: bool) -> Result<ScoreMatrix> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Domain("n must be >= 1".into()));
    }
    let stream = if shifted { STREAM_SHIFT } else { STREAM_ID };
    let intensity = if shifted { 1.0 } else { 0.0 };
    cfg.rows(&mut rng_for(cfg.seed, stream), n, |_| intensity)
}

/// `m` rows, each independently shifted with probability `cfg.beta`.
pub fn gen_mixture_window(cfg: &SyntheticConfig, m: usize) -> Result<ScoreMatrix> {
    Ok(gen_mixture_window_labeled(cfg, m)?.0)
}

/// As [`gen_mixture_window`], also returning which rows were shifted.
pub fn gen_mixture_window_labeled(cfg: &SyntheticConfig, m: usize) -> Result<(ScoreMatrix, Vec<bool>)> {
    cfg.validate()?;
    if m == 0 {
        return Err(Error::Domain("window size must be >= 1".into()));
    }
    let mut rng = rng_for(cfg.seed, STREAM_MIXTURE);
    mixture_rows(cfg, &mut rng, m)
}

fn mixture_rows<R: Rng>(cfg: &SyntheticConfig, rng: &mut R, m: usize) -> Result<(ScoreMatrix, Vec<bool>)> {
    let mut flags = Vec::with_capacity(m);
    let beta = cfg.beta;
    let matrix = cfg.rows(rng, m, |r| {
        let shifted = r.random::<f64>() < beta;
        flags.push(shifted);
        if shifted {
            1.0
        } else {
            0.0
        }
    })?;
    Ok((matrix, flags))
}

/// Parameters of a window-size x mixture grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub window_sizes: Vec<usize>,
    pub betas: Vec<f64>,
    /// ID windows and mixture windows per seed and cell.
    pub trials: usize,
    pub seeds: usize,
    pub reference_size: usize,
    pub exec: Execution,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            window_sizes: vec![1, 2, 4, 8, 16, 32, 64, 128],
            betas: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            trials: 200,
            seeds: 10,
            reference_size: 1000,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub window_size: usize,
    pub beta: f64,
    pub auroc_mean: f64,
    /// Half-width of the normal 95% interval of the mean over seeds.
    pub auroc_ci: f64,
    pub per_seed: Vec<f64>,
}

impl GridCell {
    pub fn lower(&self) -> f64 {
        self.auroc_mean - self.auroc_ci
    }

    pub fn upper(&self) -> f64 {
        self.auroc_mean + self.auroc_ci
    }
}

fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

fn sorted_vec(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Window-level AUROC of the KS statistic against a fixed reference window,
/// for every `(m, beta)` pair, averaged over `spec.seeds` seeds.
pub fn run_window_grid(cal: &Calibration, cfg: &SyntheticConfig, spec: &GridSpec) -> Result<Vec<GridCell>> {
    cfg.validate()?;
    if spec.trials < 1 || spec.seeds < 1 || spec.reference_size < 2 {
        return Err(Error::Domain("grid needs trials >= 1, seeds >= 1, reference_size >= 2".into()));
    }
    if let Some(&bad) = spec.window_sizes.iter().find(|&&m| m == 0) {
        return Err(Error::Domain(format!("window size {bad} is not >= 1")));
    }
    if let Some(&bad) = spec.betas.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(Error::Domain(format!("beta {bad} outside [0,1]")));
    }
    let names = cfg.detector_names();
    if cal.names() != names {
        return Err(Error::NameMismatch { expected: cal.names(), found: names });
    }

    let cells: Vec<(usize, usize)> =
        (0..spec.window_sizes.len()).flat_map(|mi| (0..spec.betas.len()).map(move |bi| (mi, bi))).collect();
    let jobs = cells.len() * spec.seeds;
    let aurocs = spec.exec.try_map_range(jobs, |job| {
        let (mi, bi) = cells[job / spec.seeds];
        let s = job % spec.seeds;
        let m = spec.window_sizes[mi];
        let beta = spec.betas[bi];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[m as u64, bi as u64, s as u64]));

        let reference = sorted_vec(
            cal.confidences_with(&cfg.rows(&mut rng, spec.reference_size, |_| 0.0)?, Execution::Sequential)?,
        );
        let window_ks = |rng: &mut ChaCha8Rng, beta: f64| -> Result<f64> {
            let wcfg = SyntheticConfig { beta, ..cfg.clone() };
            let (w, _) = mixture_rows(&wcfg, rng, m)?;
            let conf = cal.confidences_with(&w, Execution::Sequential)?;
            Ok(ks_sorted(&reference, &sorted_vec(conf)))
        };
        let mut id_ks = Vec::with_capacity(spec.trials);
        let mut mix_ks = Vec::with_capacity(spec.trials);
        for _ in 0..spec.trials {
            id_ks.push(window_ks(&mut rng, 0.0)?);
            mix_ks.push(window_ks(&mut rng, beta)?);
        }
        auroc(&LabeledScores::from_groups(&id_ks, &mix_ks, Orientation::HigherIsShift)?)
    })?;

    Ok(cells
        .iter()
        .enumerate()
        .map(|(c, &(mi, bi))| {
            let per_seed = aurocs[c * spec.seeds..(c + 1) * spec.seeds].to_vec();
            let (auroc_mean, auroc_ci) = mean_ci(&per_seed);
            GridCell { window_size: spec.window_sizes[mi], beta: spec.betas[bi], auroc_mean, auroc_ci, per_seed }
        })
        .collect())
}

/// Piecewise-constant drift: segment `i` lasts `segment_lengths[i]` samples
/// at shift intensity `intensities[i]`, where the model's accuracy is
/// `accuracies[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSchedule {
    pub segment_lengths: Vec<usize>,
    pub intensities: Vec<f64>,
    pub accuracies: Vec<f64>,
}

impl DriftSchedule {
    pub fn new(segment_lengths: Vec<usize>, intensities: Vec<f64>, accuracies: Vec<f64>) -> Result<Self> {
        let s = Self { segment_lengths, intensities, accuracies };
        s.validate()?;
        Ok(s)
    }

    /// Six equal segments at intensities 0..=5 with linearly falling accuracy.
    pub fn progressive(segment_len: usize) -> Self {
        Self {
            segment_lengths: vec![segment_len; 6],
            intensities: (0..6).map(f64::from).collect(),
            accuracies: (0..6).map(|i| 0.76 - 0.1 * i as f64).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.segment_lengths.len();
        if n == 0 || self.intensities.len() != n || self.accuracies.len() != n {
            return Err(Error::Dimension(
                "schedule needs equal, nonzero numbers of lengths, intensities and accuracies".into(),
            ));
        }
        if self.intensities.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("intensities must be finite and >= 0".into()));
        }
        if self.accuracies.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Domain("accuracies must lie in [0,1]".into()));
        }
        Ok(())
    }

    pub fn total_len(&self) -> usize {
        self.segment_lengths.iter().sum()
    }

    /// Segments in reverse order.
    pub fn reversed(&self) -> Self {
        fn rev<T: Copy>(v: &[T]) -> Vec<T> {
            v.iter().rev().copied().collect()
        }
        Self {
            segment_lengths: rev(&self.segment_lengths),
            intensities: rev(&self.intensities),
            accuracies: rev(&self.accuracies),
        }
    }

    fn per_sample(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.segment_lengths
            .iter()
            .zip(self.intensities.iter().zip(&self.accuracies))
            .flat_map(|(&len, (&i, &a))| std::iter::repeat_n((i, a), len))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialRun {
    /// Stream index (0-based) of the sample completing each window.
    pub timestamps: Vec<usize>,
    pub moving_avgs: Vec<f64>,
    pub accuracies: Vec<f64>,
}

impl SequentialRun {
    pub fn correlation(&self) -> Result<f64> {
        monitor_correlation(&self.moving_avgs, &self.accuracies)
    }
}

/// Streams the schedule through the calibration and a sliding monitor of
/// width `window`, pairing each emission with the scheduled accuracy.
pub fn sequential_trace(
    cal: &Calibration,
    cfg: &SyntheticConfig,
    schedule: &DriftSchedule,
    window: usize,
) -> Result<SequentialRun> {
    cfg.validate()?;
    schedule.validate()?;
    if schedule.total_len() <= window {
        return Err(Error::InsufficientData(format!(
            "schedule of {} samples is not longer than the window {window}",
            schedule.total_len()
        )));
    }
    let mut monitor = MonitorState::new(window)?;
    let mut rng = rng_for(cfg.seed, 3);
    let names = cfg.detector_names();
    let aligned_cols = names
        .iter()
        .map(|n| {
            cal.names()
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::NameMismatch { expected: cal.names(), found: names.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut run = SequentialRun { timestamps: Vec::new(), moving_avgs: Vec::new(), accuracies: Vec::new() };
    let mut raw = Vec::with_capacity(cfg.k);
    let mut row = vec![0.0; cfg.k];
    for (t, (intensity, accuracy)) in schedule.per_sample().enumerate() {
        raw.clear();
        cfg.sample_row(&mut rng, intensity, &mut raw)?;
        for (j, &c) in aligned_cols.iter().enumerate() {
            row[c] = raw[j];
        }
        if let Some(avg) = monitor.push(cal.confidence(&row)?) {
            run.timestamps.push(t);
            run.moving_avgs.push(avg);
            run.accuracies.push(accuracy);
        }
    }
    Ok(run)
}

/// [`sequential_trace`] plus the correlation between moving average and
/// accuracy; errors when either series is constant.
pub fn run_sequential(
    cal: &Calibration,
    cfg: &SyntheticConfig,
    schedule: &DriftSchedule,
    window: usize,
) -> Result<(SequentialRun, f64)> {
    let run = sequential_trace(cal, cfg, schedule, window)?;
    let corr = run.correlation()?;
    Ok((run, corr))
}

/// AUROC of `kind` calibrated on `scores_id` and evaluated on both matrices.
pub fn pipeline_auroc(scores_id: &ScoreMatrix, scores_shift: &ScoreMatrix, kind: CombinerKind) -> Result<f64> {
    let cal = calibrate(scores_id, kind)?;
    let id = cal.confidences(scores_id)?;
    let shift = cal.confidences(scores_shift)?;
    auroc(&LabeledScores::from_groups(&id, &shift, Orientation::HigherIsId)?)
}

pub const MAX_SUBSET_DETECTORS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub columns: Vec<usize>,
    pub names: Vec<String>,
    pub auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub size: usize,
    pub count: usize,
    pub best: f64,
    pub mean: f64,
    pub worst: f64,
    /// Standard error of the mean over subsets of this size.
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetStudy {
    pub results: Vec<SubsetResult>,
    pub by_size: Vec<SizeSummary>,
}

pub fn enumerate_subsets(
    scores_id: &ScoreMatrix,
    scores_shift: &ScoreMatrix,
    kind: CombinerKind,
    min_size: usize,
) -> Result<SubsetStudy> {
    enumerate_subsets_with(scores_id, scores_shift, kind, min_size, Execution::default())
}

/// Evaluates every detector subset of size `>= min_size`, refitting the
/// calibration on each subset's in-distribution columns.
pub fn enumerate_subsets_with(
    scores_id: &ScoreMatrix,
    scores_shift: &ScoreMatrix,
    kind: CombinerKind,
    min_size: usize,
    exec: Execution,
) -> Result<SubsetStudy> {
    let k = scores_id.n_cols();
    if k > MAX_SUBSET_DETECTORS {
        return Err(Error::Guard(format!("{k} detectors exceed the subset limit of {MAX_SUBSET_DETECTORS}")));
    }
    if min_size < 1 || min_size > k {
        return Err(Error::Domain(format!("min_size must lie in 1..={k}, got {min_size}")));
    }
    let scores_shift = scores_shift.align_to(scores_id.names())?;
    let masks: Vec<u32> = (1u32..(1u32 << k)).filter(|m| m.count_ones() as usize >= min_size).collect();
    let results = exec.try_map_range(masks.len(), |i| {
        let cols: Vec<usize> = (0..k).filter(|j| masks[i] & (1 << j) != 0).collect();
        let id = scores_id.select_columns(&cols)?;
        let shift = scores_shift.select_columns(&cols)?;
        Ok::<_, Error>(SubsetResult {
            auroc: pipeline_auroc(&id, &shift, kind)?,
            names: id.names().to_vec(),
            columns: cols,
        })
    })?;

    let by_size = (min_size..=k)
        .map(|size| {
            let vals: Vec<f64> = results.iter().filter(|r| r.columns.len() == size).map(|r| r.auroc).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std_err = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0) / n).sqrt()
            } else {
                0.0
            };
            SizeSummary {
                size,
                count: vals.len(),
                best: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean,
                worst: vals.iter().copied().fold(f64::INFINITY, f64::min),
                std_err,
            }
        })
        .collect();
    Ok(SubsetStudy { results, by_size })
}
