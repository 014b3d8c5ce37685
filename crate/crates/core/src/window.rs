//! Window-level shift detection with the two-sample Kolmogorov-Smirnov
//! statistic, and the sliding-window monitor for sequential streams.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::combiners::Calibration;
use crate::error::{Error, Result};
use crate::exec::{derive_seed, Execution};
use crate::matrix::ScoreMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Test window size `m`.
    pub window_size: usize,
    /// Fixed reference window size `r`.
    pub reference_size: usize,
    /// In-distribution acceptance rate at window level.
    pub alpha: f64,
    /// Bootstrap draws used to calibrate the KS threshold.
    pub null_draws: usize,
    pub seed: u64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { window_size: 32, reference_size: 1000, alpha: 0.95, null_draws: 2000, seed: 0 }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 1 {
            return Err(Error::Domain("window size must be >= 1".into()));
        }
        if self.reference_size < 2 {
            return Err(Error::Domain("reference size must be >= 2".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if self.null_draws < 100 {
            return Err(Error::Domain(format!("at least 100 null draws are required, got {}", self.null_draws)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowVerdict {
    pub ks_stat: f64,
    pub threshold: f64,
    pub detected: bool,
    pub window_size: usize,
}

fn check_sample(x: &[f64], which: &str) -> Result<()> {
    if x.is_empty() {
        return Err(Error::InsufficientData(format!("{which} sample is empty")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("{which} sample has non-finite values")));
    }
    Ok(())
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Exact two-sample KS statistic `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    check_sample(a, "first")?;
    check_sample(b, "second")?;
    Ok(ks_sorted(&sorted(a), &sorted(b)))
}

/// KS statistic for two already sorted samples: one merged sweep, evaluating
/// the gap after each block of tied values.
pub fn ks_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    // once one sample is exhausted the remaining gap only shrinks toward 0
    d
}

/// KS distance of a sample from a continuous reference cdf.
pub fn ks_one_sample(x: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    check_sample(x, "")?;
    let s = sorted(x);
    let n = s.len() as f64;
    Ok(s.iter().enumerate().fold(0.0f64, |d, (i, &v)| {
        let f = cdf(v);
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    }))
}

/// Bootstraps the null distribution of the KS statistic between a size-`r`
/// reference window and a disjoint size-`m` window drawn from
/// `reference_scores`, and returns its `alpha` quantile.
pub fn calibrate_window_threshold(cfg: &WindowConfig, reference_scores: &[f64]) -> Result<f64> {
    calibrate_window_threshold_with(cfg, reference_scores, Execution::default())
}

pub fn calibrate_window_threshold_with(cfg: &WindowConfig, reference_scores: &[f64], exec: Execution) -> Result<f64> {
    cfg.validate()?;
    let (r, m) = (cfg.reference_size, cfg.window_size);
    let n = reference_scores.len();
    if n < r + m {
        return Err(Error::InsufficientData(format!(
            "threshold calibration needs at least r + m = {} reference scores, got {n}",
            r + m
        )));
    }
    if reference_scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite reference score".into()));
    }
    let mut null = exec.map_range(cfg.null_draws, |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x6b73, b as u64]));
        let idx = rand::seq::index::sample(&mut rng, n, r + m);
        let mut reference: Vec<f64> = idx.iter().take(r).map(|i| reference_scores[i]).collect();
        let mut test: Vec<f64> = idx.iter().skip(r).map(|i| reference_scores[i]).collect();
        reference.sort_by(f64::total_cmp);
        test.sort_by(f64::total_cmp);
        ks_sorted(&reference, &test)
    });
    null.sort_by(f64::total_cmp);
    let idx = ((cfg.alpha * null.len() as f64).ceil() as usize).clamp(1, null.len()) - 1;
    Ok(null[idx])
}

/// Window detector with a fixed reference window and a bootstrapped threshold.
#[derive(Debug, Clone)]
pub struct WindowDetector<'a> {
    cal: &'a Calibration,
    cfg: WindowConfig,
    reference: Vec<f64>,
    threshold: f64,
}

impl<'a> WindowDetector<'a> {
    /// The first `reference_size` rows of `reference` form the fixed
    /// reference window; all rows form the bootstrap pool for the threshold.
    pub fn new(cal: &'a Calibration, cfg: WindowConfig, reference: &ScoreMatrix) -> Result<Self> {
        cfg.validate()?;
        let pool = cal.confidences(reference)?;
        let threshold = calibrate_window_threshold(&cfg, &pool)?;
        let reference = sorted(&pool[..cfg.reference_size]);
        Ok(Self { cal, cfg, reference, threshold })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn config(&self) -> &WindowConfig {
        &self.cfg
    }

    /// Sorted confidences of the fixed reference window.
    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn detect(&self, test_window: &ScoreMatrix) -> Result<WindowVerdict> {
        if test_window.n_rows() != self.cfg.window_size {
            return Err(Error::Dimension(format!(
                "test window has {} rows, expected {}",
                test_window.n_rows(),
                self.cfg.window_size
            )));
        }
        let conf = self.cal.confidences(test_window)?;
        Ok(self.verdict(&conf))
    }

    /// Verdict for a window of precomputed confidences.
    pub fn verdict(&self, confidences: &[f64]) -> WindowVerdict {
        let ks_stat = ks_sorted(&self.reference, &sorted(confidences));
        WindowVerdict {
            ks_stat,
            threshold: self.threshold,
            detected: ks_stat > self.threshold,
            window_size: confidences.len(),
        }
    }
}

/// One-shot window test. `reference` must hold at least `r + m` rows.
pub fn detect_window(
    cal: &Calibration,
    cfg: &WindowConfig,
    reference: &ScoreMatrix,
    test_window: &ScoreMatrix,
) -> Result<WindowVerdict> {
    WindowDetector::new(cal, *cfg, reference)?.detect(test_window)
}

const RECOMPUTE_EVERY: u64 = 4096;

/// Sliding-window moving average over per-sample confidences.
#[derive(Debug, Clone)]
pub struct MonitorState {
    window: usize,
    buffer: VecDeque<f64>,
    sum: f64,
    samples_seen: u64,
}

impl MonitorState {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Domain("monitor window must be >= 1".into()));
        }
        Ok(Self { window, buffer: VecDeque::with_capacity(window), sum: 0.0, samples_seen: 0 })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    pub fn buffer(&self) -> impl Iterator<Item = &f64> {
        self.buffer.iter()
    }

    /// Pushes one confidence; returns the moving average once the window is full.
    pub fn push(&mut self, confidence: f64) -> Option<f64> {
        if self.buffer.len() == self.window {
            if let Some(old) = self.buffer.pop_front() {
                self.sum -= old;
            }
        }
        self.buffer.push_back(confidence);
        self.sum += confidence;
        self.samples_seen += 1;
        if self.samples_seen.is_multiple_of(RECOMPUTE_EVERY) {
            self.sum = self.buffer.iter().sum();
        }
        (self.buffer.len() == self.window).then(|| self.sum / self.window as f64)
    }
}

/// Free-function form of [`MonitorState::push`].
pub fn monitor_push(state: &mut MonitorState, confidence: f64) -> Option<f64> {
    state.push(confidence)
}

/// Sample Pearson correlation between moving averages and accuracies.
pub fn monitor_correlation(moving_avgs: &[f64], accuracies: &[f64]) -> Result<f64> {
    pearson_correlation(moving_avgs, accuracies)
}

pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData("correlation needs at least 2 pairs".into()));
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Err(Error::Degenerate("correlation with a constant series".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation with a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
