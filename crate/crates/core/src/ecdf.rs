//! Quantile normalization: empirical cdfs fitted on in-distribution scores,
//! used to turn raw detector scores into p-values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::ScoreMatrix;

/// Empirical cdf of one detector's reference (in-distribution) scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ecdf {
    detector_name: String,
    sorted_ref: Vec<f64>,
}

impl Ecdf {
    pub fn fit(ref_scores: &[f64], name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if ref_scores.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "ecdf for {name:?} needs at least 2 reference scores, got {}",
                ref_scores.len()
            )));
        }
        if ref_scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite reference score for {name:?}")));
        }
        let mut sorted_ref = ref_scores.to_vec();
        sorted_ref.sort_by(f64::total_cmp);
        Ok(Self { detector_name: name, sorted_ref })
    }

    /// Rebuilds from an already sorted reference, as read back from disk.
    pub(crate) fn from_sorted(name: String, sorted_ref: Vec<f64>) -> Result<Self> {
        if sorted_ref.len() < 2 || sorted_ref.iter().any(|v| !v.is_finite()) {
            return Err(Error::Payload(format!("invalid reference array for {name:?}")));
        }
        if sorted_ref.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Payload(format!("reference array for {name:?} is not sorted")));
        }
        Ok(Self { detector_name: name, sorted_ref })
    }

    pub fn name(&self) -> &str {
        &self.detector_name
    }

    pub fn reference(&self) -> &[f64] {
        &self.sorted_ref
    }

    pub fn len(&self) -> usize {
        self.sorted_ref.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_ref.is_empty()
    }

    /// Number of reference scores `<= s`, duplicates counted with multiplicity.
    pub fn count_le(&self, s: f64) -> usize {
        self.sorted_ref.partition_point(|&v| v <= s)
    }

    /// Plain empirical cdf `#{S_i <= s} / r`.
    pub fn cdf(&self, s: f64) -> f64 {
        self.count_le(s) as f64 / self.len() as f64
    }

    /// Smoothed p-value `(#{S_i <= s} + 1) / (r + 2)`, always inside (0,1).
    pub fn p_value(&self, s: f64) -> Result<f64> {
        if !s.is_finite() {
            return Err(Error::Domain(format!("non-finite score for detector {:?}", self.detector_name)));
        }
        Ok(self.p_value_unchecked(s))
    }

    pub(crate) fn p_value_unchecked(&self, s: f64) -> f64 {
        (self.count_le(s) as f64 + 1.0) / (self.len() as f64 + 2.0)
    }

    /// Smallest and largest p-value this ecdf can produce.
    pub fn p_range(&self) -> (f64, f64) {
        let r = self.len() as f64;
        (1.0 / (r + 2.0), (r + 1.0) / (r + 2.0))
    }
}

/// The p-values of one sample, one per detector.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueVector {
    values: Vec<f64>,
    detector_names: Vec<String>,
}

impl PValueVector {
    pub fn new(values: Vec<f64>, detector_names: Vec<String>) -> Result<Self> {
        if values.len() != detector_names.len() {
            return Err(Error::Dimension(format!("{} p-values for {} detectors", values.len(), detector_names.len())));
        }
        check_open_unit(&values)?;
        Ok(Self { values, detector_names })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn detector_names(&self) -> &[String] {
        &self.detector_names
    }
}

/// Row-major `n x k` p-values produced by [`p_value_matrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct PValueMatrix {
    names: Vec<String>,
    values: Vec<f64>,
}

impl PValueMatrix {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.values.len() / self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.names.len();
        &self.values[i * k..(i + 1) * k]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.names.len())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn to_vectors(&self) -> Vec<PValueVector> {
        self.rows().map(|r| PValueVector { values: r.to_vec(), detector_names: self.names.clone() }).collect()
    }
}

pub(crate) fn check_open_unit(p: &[f64]) -> Result<()> {
    match p.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        Some(bad) => Err(Error::Domain(format!("p-value {bad} outside (0,1)"))),
        None => Ok(()),
    }
}

pub(crate) fn check_names(ecdfs: &[Ecdf], names: &[String]) -> Result<()> {
    if ecdfs.len() != names.len() || ecdfs.iter().zip(names).any(|(e, n)| e.name() != n) {
        return Err(Error::NameMismatch {
            expected: ecdfs.iter().map(|e| e.name().to_string()).collect(),
            found: names.to_vec(),
        });
    }
    Ok(())
}

/// p-values of one raw score row against aligned ecdfs.
pub fn p_values_row(ecdfs: &[Ecdf], row: &[f64]) -> Result<Vec<f64>> {
    if row.len() != ecdfs.len() {
        return Err(Error::Dimension(format!("row has {} scores for {} detectors", row.len(), ecdfs.len())));
    }
    ecdfs.iter().zip(row).map(|(e, &s)| e.p_value(s)).collect()
}

pub fn p_value_matrix(ecdfs: &[Ecdf], scores: &ScoreMatrix) -> Result<PValueMatrix> {
    p_value_matrix_with(ecdfs, scores, Execution::default())
}

pub fn p_value_matrix_with(ecdfs: &[Ecdf], scores: &ScoreMatrix, exec: Execution) -> Result<PValueMatrix> {
    check_names(ecdfs, scores.names())?;
    let k = ecdfs.len();
    let rows = exec.map_range(scores.n_rows(), |i| {
        let row = scores.row(i);
        (0..k).map(|j| ecdfs[j].p_value_unchecked(row[j])).collect::<Vec<_>>()
    });
    Ok(PValueMatrix { names: scores.names().to_vec(), values: rows.into_iter().flatten().collect() })
}

/// Fits one ecdf per column of `scores`.
pub fn fit_ecdfs(scores: &ScoreMatrix) -> Result<Vec<Ecdf>> {
    scores.names().iter().enumerate().map(|(j, name)| Ecdf::fit(&scores.column(j), name.clone())).collect()
}
