//! p-value combination rules, their correlation corrections, and the offline
//! calibration that ties ecdfs and correction parameters together.
//!
//! Every combined value exposed as a *confidence* follows one convention:
//! low means shifted, high means in-distribution. Raw statistics keep their
//! textbook orientation; [`CombinerKind::statistic_orientation`] records it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ecdf::{check_names, check_open_unit, fit_ecdfs, p_value_matrix_with, p_values_row, Ecdf};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::ScoreMatrix;
use crate::numerics::{chi2_inv_cdf, chi2_sf, probit, std_normal_cdf, PROB_CEIL, PROB_FLOOR};

/// Version written into and expected from persisted calibrations.
pub const FORMAT_VERSION: u32 = 1;

/// Bounds on Hartung's correlation estimate are `[-1/(k-1) + RHO_MARGIN, 1 - RHO_MARGIN]`.
pub const RHO_MARGIN: f64 = 1e-6;

/// Below this many calibration rows a warning is logged.
pub const MIN_RECOMMENDED_ROWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombinerKind {
    Fisher,
    Stouffer,
    Tippett,
    Pearson,
    Edgington,
    Simes,
    Wilkinson,
    MeanScore,
    MinScore,
    MaxScore,
}

/// Which end of a value's range indicates a shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    HigherIsId,
    HigherIsShift,
}

impl CombinerKind {
    pub const ALL: [CombinerKind; 10] = [
        CombinerKind::Fisher,
        CombinerKind::Stouffer,
        CombinerKind::Tippett,
        CombinerKind::Pearson,
        CombinerKind::Edgington,
        CombinerKind::Simes,
        CombinerKind::Wilkinson,
        CombinerKind::MeanScore,
        CombinerKind::MinScore,
        CombinerKind::MaxScore,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CombinerKind::Fisher => "fisher",
            CombinerKind::Stouffer => "stouffer",
            CombinerKind::Tippett => "tippett",
            CombinerKind::Pearson => "pearson",
            CombinerKind::Edgington => "edgington",
            CombinerKind::Simes => "simes",
            CombinerKind::Wilkinson => "wilkinson",
            CombinerKind::MeanScore => "mean-score",
            CombinerKind::MinScore => "min-score",
            CombinerKind::MaxScore => "max-score",
        }
    }

    /// Orientation of the raw statistic returned by [`Calibration::statistic`].
    pub fn statistic_orientation(self) -> Orientation {
        match self {
            CombinerKind::Fisher | CombinerKind::Pearson => Orientation::HigherIsShift,
            _ => Orientation::HigherIsId,
        }
    }

    /// Simple score-level aggregations that bypass p-values.
    pub fn is_score_baseline(self) -> bool {
        matches!(self, CombinerKind::MeanScore | CombinerKind::MinScore | CombinerKind::MaxScore)
    }

    /// Kinds whose confidence has a known null distribution (uniform).
    fn has_parametric_null(self) -> bool {
        matches!(self, CombinerKind::Fisher | CombinerKind::Stouffer)
    }
}

impl fmt::Display for CombinerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CombinerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let alias = match lower.as_str() {
            "fisher-brown" | "brown" => "fisher",
            "stouffer-hartung" | "hartung" => "stouffer",
            "tippet" => "tippett",
            "mean" => "mean-score",
            "min" => "min-score",
            "max" => "max-score",
            other => other,
        };
        CombinerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == alias)
            .ok_or_else(|| Error::Domain(format!("unknown combiner {s:?}")))
    }
}

/// `-2 * sum(ln p_i)`. Larger means stronger evidence of a shift.
pub fn fisher_stat(p: &[f64]) -> Result<f64> {
    check_open_unit(p)?;
    Ok(-2.0 * p.iter().map(|v| v.ln()).sum::<f64>())
}

/// Sum of probits. Larger means more in-distribution.
pub fn stouffer_stat(p: &[f64]) -> Result<f64> {
    check_open_unit(p)?;
    p.iter().map(|&v| probit(v)).sum()
}

/// The order-statistic and averaging combiners evaluated together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasicStats {
    pub tippett: f64,
    pub pearson: f64,
    pub edgington: f64,
    pub simes: f64,
    pub wilkinson: f64,
}

pub fn basic_stats(p: &[f64]) -> Result<BasicStats> {
    check_open_unit(p)?;
    if p.is_empty() {
        return Err(Error::Dimension("no p-values to combine".into()));
    }
    let k = p.len() as f64;
    Ok(BasicStats {
        tippett: p.iter().copied().fold(f64::INFINITY, f64::min),
        wilkinson: p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        edgington: p.iter().sum::<f64>() / k,
        pearson: 2.0 * p.iter().map(|v| (1.0 - v).ln()).sum::<f64>(),
        simes: simes(p),
    })
}

// min over ascending ranks i of (k / i) p_(i), capped at 1
fn simes(p: &[f64]) -> f64 {
    let mut sorted = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len() as f64;
    sorted.iter().enumerate().map(|(i, &v)| k / (i + 1) as f64 * v).fold(1.0, f64::min)
}

/// Per-detector normalization used by the simple-combination baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    MinMax,
    Standard,
    Quantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    Mean,
    Min,
    Max,
}

impl Normalization {
    pub const ALL: [Normalization; 3] = [Normalization::MinMax, Normalization::Standard, Normalization::Quantile];

    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::MinMax => "minmax",
            Normalization::Standard => "standard",
            Normalization::Quantile => "quantile",
        }
    }
}

impl Aggregation {
    pub const ALL: [Aggregation; 3] = [Aggregation::Mean, Aggregation::Min, Aggregation::Max];

    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Mean => "mean",
            Aggregation::Min => "min",
            Aggregation::Max => "max",
        }
    }

    fn apply(self, values: impl Iterator<Item = f64>) -> f64 {
        match self {
            Aggregation::Mean => {
                let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                sum / n as f64
            }
            Aggregation::Min => values.fold(f64::INFINITY, f64::min),
            Aggregation::Max => values.fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Reference moments of one detector's calibration scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorMoments {
    pub mean: f64,
    /// Population standard deviation (divisor r).
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl DetectorMoments {
    pub fn of(ecdf: &Ecdf) -> Self {
        let xs = ecdf.reference();
        let r = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / r;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / r;
        Self { mean, std: var.sqrt(), min: xs[0], max: xs[xs.len() - 1] }
    }
}

/// Normalization constants for [`baseline_combine`], fitted on the same
/// split as the ecdfs.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineStats {
    ecdfs: Vec<Ecdf>,
    moments: Vec<DetectorMoments>,
}

impl BaselineStats {
    pub fn from_ecdfs(ecdfs: &[Ecdf]) -> Self {
        Self { ecdfs: ecdfs.to_vec(), moments: ecdfs.iter().map(DetectorMoments::of).collect() }
    }

    pub fn moments(&self) -> &[DetectorMoments] {
        &self.moments
    }

    /// Errors if `norm` would divide by zero for some detector.
    pub fn check(&self, norm: Normalization) -> Result<()> {
        for (e, m) in self.ecdfs.iter().zip(&self.moments) {
            match norm {
                Normalization::Standard if m.std == 0.0 => {
                    return Err(Error::Degenerate(format!("detector {:?} has zero variance", e.name())))
                }
                Normalization::MinMax if m.max == m.min => {
                    return Err(Error::Degenerate(format!("detector {:?} has zero range", e.name())))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Normalizes each score of `row` per detector, then aggregates.
pub fn baseline_combine(row: &[f64], norm: Normalization, agg: Aggregation, stats: &BaselineStats) -> Result<f64> {
    if row.len() != stats.ecdfs.len() {
        return Err(Error::Dimension(format!("row has {} scores for {} detectors", row.len(), stats.ecdfs.len())));
    }
    stats.check(norm)?;
    if row.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite score".into()));
    }
    Ok(baseline_unchecked(row, norm, agg, stats))
}

fn baseline_unchecked(row: &[f64], norm: Normalization, agg: Aggregation, stats: &BaselineStats) -> f64 {
    let normalized = row.iter().enumerate().map(|(j, &s)| {
        let m = &stats.moments[j];
        match norm {
            Normalization::Standard => (s - m.mean) / m.std,
            Normalization::MinMax => (s - m.min) / (m.max - m.min),
            Normalization::Quantile => stats.ecdfs[j].p_value_unchecked(s),
        }
    });
    agg.apply(normalized)
}

/// Scaled chi-squared model `c * chi2(k')` of the Fisher statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrownParams {
    pub c: f64,
    pub k_prime: f64,
}

impl BrownParams {
    pub fn new(c: f64, k_prime: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite() && k_prime > 0.0 && k_prime.is_finite()) {
            return Err(Error::Domain(format!("invalid Brown parameters c={c}, k'={k_prime}")));
        }
        Ok(Self { c, k_prime })
    }

    /// The uncorrected model for `k` independent p-values: `c = 1, k' = 2k`.
    pub fn independent(k: usize) -> Self {
        Self { c: 1.0, k_prime: 2.0 * k as f64 }
    }

    /// Fisher statistic above which a sample is flagged at in-distribution
    /// acceptance rate `alpha`.
    pub fn threshold(&self, alpha: f64) -> Result<f64> {
        Ok(self.c * chi2_inv_cdf(alpha, self.k_prime)?)
    }
}

/// Moment-matches Brown's scaled chi-squared to calibration Fisher statistics
/// (population moments, divisor r).
pub fn fit_brown(fisher_stats: &[f64]) -> Result<BrownParams> {
    let r = fisher_stats.len();
    if r < 2 {
        return Err(Error::InsufficientData(format!("Brown fit needs at least 2 statistics, got {r}")));
    }
    if fisher_stats.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite Fisher statistic".into()));
    }
    let mu = fisher_stats.iter().sum::<f64>() / r as f64;
    let var = fisher_stats.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / r as f64;
    if var.is_nan() || mu.is_nan() || var <= 0.0 || mu <= 0.0 {
        return Err(Error::Degenerate(format!("Fisher statistics have mean {mu} and variance {var}")));
    }
    BrownParams::new(var / (2.0 * mu), 2.0 * mu * mu / var)
}

/// `1 - F_{c chi2(k')}(fisher_stat)`, clamped to the open unit interval.
pub fn brown_confidence(b: &BrownParams, fisher_stat: f64) -> Result<f64> {
    if fisher_stat.is_nan() || fisher_stat < 0.0 {
        return Err(Error::Domain(format!("Fisher statistic must be >= 0, got {fisher_stat}")));
    }
    let sf = if fisher_stat.is_infinite() { 0.0 } else { chi2_sf(fisher_stat / b.c, b.k_prime)? };
    Ok(sf.clamp(PROB_FLOOR, PROB_CEIL))
}

/// Hartung's correlation estimate and (equal) weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HartungParams {
    pub rho_hat: f64,
    pub weights: Vec<f64>,
}

impl HartungParams {
    pub fn new(rho_hat: f64, k: usize) -> Result<Self> {
        let h = Self { rho_hat, weights: vec![1.0; k] };
        let d = h.denominator();
        if d.is_nan() || d <= 0.0 {
            return Err(Error::Domain(format!("rho {rho_hat} gives a non-positive denominator for k={k}")));
        }
        Ok(h)
    }

    fn denominator(&self) -> f64 {
        let sw: f64 = self.weights.iter().sum();
        let sw2: f64 = self.weights.iter().map(|w| w * w).sum();
        ((1.0 - self.rho_hat) * sw2 + self.rho_hat * sw * sw).sqrt()
    }
}

fn rho_bounds(k: usize) -> (f64, f64) {
    (-1.0 / (k as f64 - 1.0) + RHO_MARGIN, 1.0 - RHO_MARGIN)
}

/// Estimates rho as one minus the mean within-row sample variance of the
/// probits. `probits` is row-major with `k` columns.
pub fn fit_hartung(probits: &[f64], k: usize) -> Result<HartungParams> {
    if k < 2 {
        return Err(Error::Dimension(format!("Hartung fit needs k >= 2, got {k}")));
    }
    if !probits.len().is_multiple_of(k) {
        return Err(Error::Dimension(format!("{} values do not fill rows of width {k}", probits.len())));
    }
    let n = probits.len() / k;
    if n < 2 {
        return Err(Error::InsufficientData(format!("Hartung fit needs at least 2 rows, got {n}")));
    }
    if probits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite probit".into()));
    }
    let mean_var = probits
        .chunks_exact(k)
        .map(|row| {
            let m = row.iter().sum::<f64>() / k as f64;
            row.iter().map(|z| (z - m) * (z - m)).sum::<f64>() / (k as f64 - 1.0)
        })
        .sum::<f64>()
        / n as f64;
    let (lo, hi) = rho_bounds(k);
    HartungParams::new((1.0 - mean_var).clamp(lo, hi), k)
}

/// Correlation-corrected Stouffer statistic; standard normal under the null.
pub fn hartung_stat(h: &HartungParams, p: &[f64]) -> Result<f64> {
    if p.len() != h.weights.len() {
        return Err(Error::Dimension(format!("{} p-values for {} Hartung weights", p.len(), h.weights.len())));
    }
    check_open_unit(p)?;
    let num = h.weights.iter().zip(p).map(|(w, &v)| probit(v).map(|z| w * z)).sum::<Result<f64>>()?;
    Ok(num / h.denominator())
}

/// p-values, raw statistic and confidence of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RowScore {
    pub p_values: Vec<f64>,
    pub statistic: f64,
    pub confidence: f64,
}

/// Everything needed to score future samples: per-detector ecdfs plus the
/// combiner and its fitted correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub(crate) ecdfs: Vec<Ecdf>,
    pub(crate) kind: CombinerKind,
    pub(crate) brown: Option<BrownParams>,
    pub(crate) hartung: Option<HartungParams>,
    /// Sorted calibration confidences, kept for kinds without a parametric null.
    pub(crate) null_confidences: Option<Vec<f64>>,
    pub(crate) r: usize,
    pub(crate) format_version: u32,
    pub(crate) baseline: BaselineStats,
}

/// Fits ecdfs and the combiner's correction on one in-distribution split.
pub fn calibrate(scores: &ScoreMatrix, kind: CombinerKind) -> Result<Calibration> {
    calibrate_split(scores, scores, kind)
}

/// Two-split variant: ecdfs from `ecdf_scores`, Brown/Hartung moments and
/// empirical null from `moment_scores`.
pub fn calibrate_split(
    ecdf_scores: &ScoreMatrix,
    moment_scores: &ScoreMatrix,
    kind: CombinerKind,
) -> Result<Calibration> {
    let r = ecdf_scores.n_rows();
    if r < MIN_RECOMMENDED_ROWS {
        log::warn!("calibrating on {r} rows; at least {MIN_RECOMMENDED_ROWS} are recommended");
    }
    let ecdfs = fit_ecdfs(ecdf_scores)?;
    let moment_scores = moment_scores.align_to(ecdf_scores.names())?;
    let k = ecdfs.len();
    let mut cal = Calibration {
        baseline: BaselineStats::from_ecdfs(&ecdfs),
        ecdfs,
        kind,
        brown: None,
        hartung: None,
        null_confidences: None,
        r,
        format_version: FORMAT_VERSION,
    };
    if k == 1 {
        return Ok(cal);
    }
    if kind.is_score_baseline() {
        cal.baseline.check(Normalization::Standard)?;
    }

    let pv = p_value_matrix_with(&cal.ecdfs, &moment_scores, Execution::default())?;
    match kind {
        CombinerKind::Fisher => {
            let stats = pv.rows().map(fisher_stat).collect::<Result<Vec<_>>>()?;
            cal.brown = Some(fit_brown(&stats)?);
        }
        CombinerKind::Stouffer => {
            let probits = pv.rows().flat_map(|r| r.iter().map(|&p| probit(p))).collect::<Result<Vec<_>>>()?;
            cal.hartung = Some(fit_hartung(&probits, k)?);
        }
        _ => {
            let mut null = (0..moment_scores.n_rows())
                .map(|i| cal.confidence_from_parts(moment_scores.row(i), pv.row(i)))
                .collect::<Result<Vec<_>>>()?;
            null.sort_by(f64::total_cmp);
            cal.null_confidences = Some(null);
        }
    }
    Ok(cal)
}

impl Calibration {
    pub fn kind(&self) -> CombinerKind {
        self.kind
    }

    pub fn ecdfs(&self) -> &[Ecdf] {
        &self.ecdfs
    }

    pub fn names(&self) -> Vec<String> {
        self.ecdfs.iter().map(|e| e.name().to_string()).collect()
    }

    pub fn k(&self) -> usize {
        self.ecdfs.len()
    }

    /// Number of calibration rows the ecdfs were fitted on.
    pub fn r(&self) -> usize {
        self.r
    }

    pub fn format_version(&self) -> u32 {
        self.format_version
    }

    pub fn brown(&self) -> Option<&BrownParams> {
        self.brown.as_ref()
    }

    pub fn hartung(&self) -> Option<&HartungParams> {
        self.hartung.as_ref()
    }

    pub fn null_confidences(&self) -> Option<&[f64]> {
        self.null_confidences.as_deref()
    }

    pub fn baseline_stats(&self) -> &BaselineStats {
        &self.baseline
    }

    /// Copy of this calibration with the Brown parameters replaced.
    pub fn with_brown(&self, brown: BrownParams) -> Result<Self> {
        if self.kind != CombinerKind::Fisher || self.k() < 2 {
            return Err(Error::Domain("Brown parameters apply to Fisher calibrations with k >= 2".into()));
        }
        Ok(Self { brown: Some(brown), ..self.clone() })
    }

    fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.k() {
            return Err(Error::Dimension(format!("row has {} scores for {} detectors", row.len(), self.k())));
        }
        Ok(())
    }

    pub fn p_values(&self, row: &[f64]) -> Result<Vec<f64>> {
        p_values_row(&self.ecdfs, row)
    }

    /// Raw combined statistic in its textbook orientation; the single
    /// p-value when k = 1.
    pub fn statistic(&self, row: &[f64]) -> Result<f64> {
        let p = self.p_values(row)?;
        self.statistic_from_parts(row, &p)
    }

    fn statistic_from_parts(&self, row: &[f64], p: &[f64]) -> Result<f64> {
        if self.k() == 1 {
            return Ok(p[0]);
        }
        match self.kind {
            CombinerKind::Fisher => fisher_stat(p),
            CombinerKind::Stouffer => match &self.hartung {
                Some(h) => hartung_stat(h, p),
                None => stouffer_stat(p),
            },
            _ => raw_statistic(self.kind, row, p, &self.baseline),
        }
    }

    /// Combined confidence: low means shifted. Uniform on in-distribution
    /// data for Fisher/Brown and Stouffer/Hartung.
    pub fn confidence(&self, row: &[f64]) -> Result<f64> {
        let p = self.p_values(row)?;
        self.confidence_from_parts(row, &p)
    }

    fn confidence_from_parts(&self, row: &[f64], p: &[f64]) -> Result<f64> {
        if self.k() == 1 {
            return Ok(p[0]);
        }
        match (self.kind, &self.brown, &self.hartung) {
            (CombinerKind::Fisher, Some(b), _) => brown_confidence(b, fisher_stat(p)?),
            (CombinerKind::Stouffer, _, Some(h)) => Ok(std_normal_cdf(hartung_stat(h, p)?)),
            _ => oriented_statistic(self.kind, row, p, &self.baseline),
        }
    }

    pub fn score_row(&self, row: &[f64]) -> Result<RowScore> {
        self.check_row(row)?;
        let p_values = self.p_values(row)?;
        Ok(RowScore {
            statistic: self.statistic_from_parts(row, &p_values)?,
            confidence: self.confidence_from_parts(row, &p_values)?,
            p_values,
        })
    }

    /// Orientation-normalized ranking value of `row` under any combiner,
    /// using this calibration's ecdfs. No correction parameters are needed
    /// because Brown and equal-weight Hartung never rerank samples.
    pub fn oriented_statistic_for(&self, kind: CombinerKind, row: &[f64]) -> Result<f64> {
        let p = self.p_values(row)?;
        oriented_statistic(kind, row, &p, &self.baseline)
    }

    /// Confidence below which a sample is flagged, for in-distribution
    /// acceptance rate `alpha`.
    pub fn confidence_threshold(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        if self.k() == 1 || self.kind.has_parametric_null() {
            return Ok(1.0 - alpha);
        }
        let null = self
            .null_confidences
            .as_ref()
            .ok_or_else(|| Error::Payload("calibration is missing its null confidences".into()))?;
        let idx = (((1.0 - alpha) * null.len() as f64).ceil() as usize).clamp(1, null.len()) - 1;
        Ok(null[idx])
    }

    /// Fisher statistic above which a sample is flagged: `c * chi2_inv(alpha, k')`.
    pub fn fisher_threshold(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        match &self.brown {
            Some(b) => b.threshold(alpha),
            None => Err(Error::Domain(format!("{} calibration has no Brown parameters", self.kind))),
        }
    }

    /// True when a shift is detected for `row` at acceptance rate `alpha`.
    pub fn decide(&self, row: &[f64], alpha: f64) -> Result<bool> {
        let t = self.confidence_threshold(alpha)?;
        Ok(self.confidence(row)? < t)
    }

    /// Confidences of every row of `scores`, after aligning columns by name.
    pub fn confidences(&self, scores: &ScoreMatrix) -> Result<Vec<f64>> {
        self.confidences_with(scores, Execution::default())
    }

    pub fn confidences_with(&self, scores: &ScoreMatrix, exec: Execution) -> Result<Vec<f64>> {
        let aligned = scores.align_to(&self.names())?;
        check_names(&self.ecdfs, aligned.names())?;
        exec.try_map_range(aligned.n_rows(), |i| self.confidence(aligned.row(i)))
    }

    /// Full per-row output for every row of `scores`.
    pub fn score_matrix(&self, scores: &ScoreMatrix) -> Result<Vec<RowScore>> {
        let aligned = scores.align_to(&self.names())?;
        Execution::default().try_map_range(aligned.n_rows(), |i| self.score_row(aligned.row(i)))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(())
}

fn raw_statistic(kind: CombinerKind, row: &[f64], p: &[f64], baseline: &BaselineStats) -> Result<f64> {
    Ok(match kind {
        CombinerKind::Fisher => fisher_stat(p)?,
        CombinerKind::Stouffer => stouffer_stat(p)?,
        CombinerKind::Tippett => basic_stats(p)?.tippett,
        CombinerKind::Pearson => basic_stats(p)?.pearson,
        CombinerKind::Edgington => basic_stats(p)?.edgington,
        CombinerKind::Simes => basic_stats(p)?.simes,
        CombinerKind::Wilkinson => basic_stats(p)?.wilkinson,
        CombinerKind::MeanScore => baseline_combine(row, Normalization::Standard, Aggregation::Mean, baseline)?,
        CombinerKind::MinScore => baseline_combine(row, Normalization::Standard, Aggregation::Min, baseline)?,
        CombinerKind::MaxScore => baseline_combine(row, Normalization::Standard, Aggregation::Max, baseline)?,
    })
}

fn oriented_statistic(kind: CombinerKind, row: &[f64], p: &[f64], baseline: &BaselineStats) -> Result<f64> {
    let s = raw_statistic(kind, row, p, baseline)?;
    Ok(match kind.statistic_orientation() {
        Orientation::HigherIsId => s,
        Orientation::HigherIsShift => -s,
    })
}

/// Free-function form of [`Calibration::confidence`].
pub fn combined_confidence(cal: &Calibration, score_row: &[f64]) -> Result<f64> {
    cal.confidence(score_row)
}

/// Free-function form of [`Calibration::decide`].
pub fn decide(cal: &Calibration, score_row: &[f64], alpha: f64) -> Result<bool> {
    cal.decide(score_row, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn uniform_rows(seed: u64, n: usize, k: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..k).map(|_| rng.random_range(1e-12..1.0)).collect()).collect()
    }

    fn normal_scores(seed: u64, n: usize, k: usize) -> ScoreMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names = (0..k).map(|j| format!("d{j}")).collect();
        let data = (0..n * k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        ScoreMatrix::new(names, data).unwrap()
    }

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n)
    }

    #[test]
    fn fisher_examples() {
        assert!(fisher_stat(&[0.99999, 0.99999]).unwrap() < 4.001e-5);
        let e = (-1.0f64).exp();
        assert!((fisher_stat(&[e, e]).unwrap() - 4.0).abs() < 1e-14);
        assert!(fisher_stat(&[0.0, 0.5]).is_err());
        assert!(fisher_stat(&[1.0, 0.5]).is_err());
    }

    #[test]
    fn fisher_null_moments() {
        let stats: Vec<f64> = uniform_rows(1, 100_000, 6).iter().map(|r| fisher_stat(r).unwrap()).collect();
        let (m, v) = moments(&stats);
        assert!((m - 12.0).abs() < 0.1, "mean {m}");
        assert!((v - 24.0).abs() < 0.8, "var {v}");
    }

    #[test]
    fn stouffer_examples() {
        assert_eq!(stouffer_stat(&[0.5, 0.5, 0.5]).unwrap(), 0.0);
        let p = [0.1, 0.3, 0.8];
        let q: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
        let (a, b) = (stouffer_stat(&p).unwrap(), stouffer_stat(&q).unwrap());
        assert!((a + b).abs() < 1e-12);
        let stats: Vec<f64> = uniform_rows(2, 100_000, 4).iter().map(|r| stouffer_stat(r).unwrap()).collect();
        let (m, v) = moments(&stats);
        assert!(m.abs() < 0.02, "mean {m}");
        assert!((v - 4.0).abs() < 0.15, "var {v}");
    }

    #[test]
    fn basic_stats_examples() {
        let s = basic_stats(&[0.2, 0.4]).unwrap();
        assert_eq!(s.tippett, 0.2);
        assert_eq!(s.wilkinson, 0.4);
        assert!((s.edgington - 0.3).abs() < 1e-15);
        assert!((s.pearson - 2.0 * (0.8f64.ln() + 0.6f64.ln())).abs() < 1e-14);
        assert!((s.pearson + 1.4679).abs() < 1e-4);
        assert_eq!(s.simes, 0.4);

        let s = basic_stats(&[0.3; 4]).unwrap();
        assert!((s.edgington - 0.3).abs() < 1e-15);
        assert_eq!((s.tippett, s.wilkinson, s.simes), (0.3, 0.3, 0.3));
    }

    #[test]
    fn simes_matches_rank_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let p: Vec<f64> = (0..5).map(|_| rng.random_range(1e-9..1.0)).collect();
            // for each value, its 1-based rank is the count of values <= it
            let mut best = 1.0f64;
            for &v in &p {
                let rank = p.iter().filter(|&&u| u <= v).count();
                best = best.min(5.0 / rank as f64 * v);
            }
            assert_eq!(basic_stats(&p).unwrap().simes, best);
        }
    }

    #[test]
    fn baseline_examples() {
        let cal = normal_scores(5, 500, 3);
        let stats = BaselineStats::from_ecdfs(&fit_ecdfs(&cal).unwrap());
        let means: Vec<f64> = stats.moments().iter().map(|m| m.mean).collect();
        let v = baseline_combine(&means, Normalization::Standard, Aggregation::Mean, &stats).unwrap();
        assert!(v.abs() < 1e-12);

        let maxes: Vec<f64> = stats.moments().iter().map(|m| m.max).collect();
        let v = baseline_combine(&maxes, Normalization::MinMax, Aggregation::Min, &stats).unwrap();
        assert_eq!(v, 1.0);

        let ecdfs = fit_ecdfs(&cal).unwrap();
        let row = cal.row(7);
        let p = p_values_row(&ecdfs, row).unwrap();
        let q = baseline_combine(row, Normalization::Quantile, Aggregation::Mean, &stats).unwrap();
        assert_eq!(q, basic_stats(&p).unwrap().edgington);
    }

    #[test]
    fn baseline_degenerate_detector() {
        let m = ScoreMatrix::new(vec!["a".into(), "b".into()], vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0]).unwrap();
        let stats = BaselineStats::from_ecdfs(&fit_ecdfs(&m).unwrap());
        for norm in [Normalization::Standard, Normalization::MinMax] {
            assert!(matches!(
                baseline_combine(&[1.0, 1.0], norm, Aggregation::Mean, &stats),
                Err(Error::Degenerate(_))
            ));
        }
        assert!(baseline_combine(&[1.0, 1.0], Normalization::Quantile, Aggregation::Mean, &stats).is_ok());
    }

    #[test]
    fn brown_examples() {
        // mean 2k, var 4k exactly: symmetric two-point sample around 2k.
        let k: f64 = 5.0;
        let sd = (4.0 * k).sqrt();
        let stats = [2.0 * k - sd, 2.0 * k + sd];
        let b = fit_brown(&stats).unwrap();
        assert!((b.c - 1.0).abs() < 1e-12);
        assert!((b.k_prime - 2.0 * k).abs() < 1e-12);

        let stats: Vec<f64> = (1..50).map(|i| (i as f64).sqrt()).collect();
        let b1 = fit_brown(&stats).unwrap();
        let scaled: Vec<f64> = stats.iter().map(|v| v * 3.5).collect();
        let b2 = fit_brown(&scaled).unwrap();
        assert!((b2.c - 3.5 * b1.c).abs() < 1e-12);
        assert!((b2.k_prime - b1.k_prime).abs() < 1e-9);

        assert!(matches!(fit_brown(&[2.0, 2.0, 2.0]), Err(Error::Degenerate(_))));
        assert!(fit_brown(&[2.0]).is_err());
    }

    #[test]
    fn brown_confidence_examples() {
        let b = BrownParams::new(1.0, 2.0).unwrap();
        assert_eq!(brown_confidence(&b, 0.0).unwrap(), PROB_CEIL);
        assert!((brown_confidence(&b, 2.0).unwrap() - (-1.0f64).exp()).abs() < 1e-14);
        let mut prev = 1.0;
        for i in 1..200 {
            let c = brown_confidence(&b, i as f64 * 0.25).unwrap();
            assert!(c < prev);
            prev = c;
        }
        assert!(brown_confidence(&b, -1.0).is_err());
    }

    #[test]
    fn hartung_examples() {
        // constant rows -> rho clamps high
        let rows: Vec<f64> = (0..20).flat_map(|i| vec![i as f64 * 0.1; 3]).collect();
        let h = fit_hartung(&rows, 3).unwrap();
        assert_eq!(h.rho_hat, 1.0 - RHO_MARGIN);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let iid: Vec<f64> = (0..50_000).map(|_| rng.sample(StandardNormal)).collect();
        let h = fit_hartung(&iid, 5).unwrap();
        assert!(h.rho_hat.abs() < 0.03, "rho {}", h.rho_hat);

        let anti: Vec<f64> = (0..10_000)
            .flat_map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                [z, -z]
            })
            .collect();
        let h = fit_hartung(&anti, 2).unwrap();
        assert_eq!(h.rho_hat, -1.0 + RHO_MARGIN);

        assert!(fit_hartung(&[0.0; 4], 1).is_err());
    }

    #[test]
    fn hartung_reduces_to_stouffer() {
        let h = HartungParams::new(0.0, 4).unwrap();
        let p = [0.1, 0.7, 0.35, 0.9];
        let expect = stouffer_stat(&p).unwrap() / 2.0;
        assert!((hartung_stat(&h, &p).unwrap() - expect).abs() < 1e-14);
        assert_eq!(hartung_stat(&h, &[0.5; 4]).unwrap(), 0.0);
    }

    #[test]
    fn calibrate_is_deterministic_and_shapes_params() {
        let m = normal_scores(7, 2000, 4);
        let a = calibrate(&m, CombinerKind::Fisher).unwrap();
        let b = calibrate(&m, CombinerKind::Fisher).unwrap();
        assert_eq!(a, b);
        assert!(a.brown().is_some() && a.hartung().is_none());
        let s = calibrate(&m, CombinerKind::Stouffer).unwrap();
        assert!(s.hartung().is_some() && s.brown().is_none());
        let t = calibrate(&m, CombinerKind::Simes).unwrap();
        assert!(t.brown().is_none() && t.hartung().is_none());
        assert_eq!(t.null_confidences().unwrap().len(), 2000);
    }

    #[test]
    fn calibration_confidence_mean_is_half() {
        let m = normal_scores(8, 10_000, 5);
        let cal = calibrate(&m, CombinerKind::Fisher).unwrap();
        let conf = cal.confidences(&m).unwrap();
        let mean = conf.iter().sum::<f64>() / conf.len() as f64;
        assert!((mean - 0.5).abs() < 0.03, "mean {mean}");
    }

    #[test]
    fn name_aligned_scoring_survives_column_permutation() {
        let m = normal_scores(9, 1000, 3);
        let test = normal_scores(10, 200, 3);
        let perm = [2, 0, 1];
        for kind in [CombinerKind::Fisher, CombinerKind::Stouffer, CombinerKind::Tippett] {
            let a = calibrate(&m, kind).unwrap();
            let b = calibrate(&m.select_columns(&perm).unwrap(), kind).unwrap();
            let ca = a.confidences(&test).unwrap();
            let cb = b.confidences(&test).unwrap();
            for (x, y) in ca.iter().zip(&cb) {
                assert!((x - y).abs() < 1e-12, "{kind}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn extreme_rows_hit_clamps() {
        let m = normal_scores(11, 1000, 3);
        for kind in [CombinerKind::Fisher, CombinerKind::Stouffer] {
            let cal = calibrate(&m, kind).unwrap();
            let hi = cal.confidence(&[100.0; 3]).unwrap();
            let lo = cal.confidence(&[-100.0; 3]).unwrap();
            assert!(hi > 0.99, "{kind} {hi}");
            assert!(lo < 1e-3, "{kind} {lo}");
        }
    }

    #[test]
    fn decide_rate_and_threshold_equivalence() {
        let cal_m = normal_scores(12, 10_000, 5);
        let fresh = normal_scores(13, 10_000, 5);
        let cal = calibrate(&cal_m, CombinerKind::Fisher).unwrap();
        let gamma = cal.fisher_threshold(0.95).unwrap();
        let mut flagged = 0;
        for row in fresh.rows() {
            let d = cal.decide(row, 0.95).unwrap();
            assert_eq!(d, cal.statistic(row).unwrap() > gamma);
            flagged += d as usize;
        }
        let rate = flagged as f64 / fresh.n_rows() as f64;
        assert!((rate - 0.05).abs() < 0.01, "rate {rate}");

        let almost_all = fresh.rows().filter(|r| cal.decide(r, 1e-6).unwrap()).count();
        assert!(almost_all as f64 / fresh.n_rows() as f64 > 0.99);
        assert!(cal.decide(fresh.row(0), 1.0).is_err());
    }

    #[test]
    fn empirical_threshold_for_other_kinds() {
        let cal_m = normal_scores(14, 10_000, 4);
        let fresh = normal_scores(15, 10_000, 4);
        for kind in [CombinerKind::Tippett, CombinerKind::Pearson, CombinerKind::MeanScore] {
            let cal = calibrate(&cal_m, kind).unwrap();
            let rate = fresh.rows().filter(|r| cal.decide(r, 0.95).unwrap()).count() as f64 / 10_000.0;
            assert!((rate - 0.05).abs() < 0.012, "{kind}: rate {rate}");
        }
    }

    #[test]
    fn single_detector_passes_through() {
        let m = normal_scores(16, 300, 1);
        let cal = calibrate(&m, CombinerKind::Fisher).unwrap();
        assert!(cal.brown().is_none());
        let p = cal.p_values(&[0.3]).unwrap()[0];
        assert_eq!(cal.confidence(&[0.3]).unwrap(), p);
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in CombinerKind::ALL {
            assert_eq!(kind.as_str().parse::<CombinerKind>().unwrap(), kind);
        }
        assert_eq!("Fisher-Brown".parse::<CombinerKind>().unwrap(), CombinerKind::Fisher);
        assert!("vovk".parse::<CombinerKind>().is_err());
    }

    proptest! {
        #[test]
        fn simes_bounded_by_tippett(p in proptest::collection::vec(1e-9f64..0.999_999, 1..12)) {
            let s = basic_stats(&p).unwrap();
            prop_assert!(s.simes >= s.tippett - 1e-15);
            prop_assert!(s.simes <= p.len() as f64 * s.tippett + 1e-15);
        }

        #[test]
        fn lowering_p_moves_toward_shift(
            p in proptest::collection::vec(0.01f64..0.99, 2..8),
            shrink in 0.1f64..0.99,
        ) {
            let q: Vec<f64> = p.iter().map(|v| v * shrink).collect();
            let b = BrownParams::new(1.3, 7.0).unwrap();
            let h = HartungParams::new(0.4, p.len()).unwrap();
            let fisher = |x: &[f64]| brown_confidence(&b, fisher_stat(x).unwrap()).unwrap();
            let hart = |x: &[f64]| std_normal_cdf(hartung_stat(&h, x).unwrap());
            prop_assert!(fisher(&q) <= fisher(&p));
            prop_assert!(hart(&q) <= hart(&p));
            let (sp, sq) = (basic_stats(&p).unwrap(), basic_stats(&q).unwrap());
            prop_assert!(sq.tippett <= sp.tippett);
            prop_assert!(sq.simes <= sp.simes);
            prop_assert!(sq.edgington <= sp.edgington);
            prop_assert!(sq.wilkinson <= sp.wilkinson);
            prop_assert!(-sq.pearson <= -sp.pearson);
        }
    }
}
