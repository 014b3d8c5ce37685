//! Threshold-free evaluation: AUROC (Mann-Whitney with average ranks) and
//! the shift pass rate at a fixed in-distribution acceptance rate.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use crate::combiners::Orientation;
use crate::error::{Error, Result};
use crate::io::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Id,
    Shift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    scores: Vec<f64>,
    labels: Vec<Label>,
    orientation: Orientation,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<Label>, orientation: Orientation) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Dimension(format!("{} scores for {} labels", scores.len(), labels.len())));
        }
        if scores.iter().any(|v| v.is_nan()) {
            return Err(Error::Domain("NaN score".into()));
        }
        Ok(Self { scores, labels, orientation })
    }

    /// Concatenates in-distribution and shifted scores.
    pub fn from_groups(id: &[f64], shift: &[f64], orientation: Orientation) -> Result<Self> {
        let scores = id.iter().chain(shift).copied().collect();
        let labels =
            std::iter::repeat_n(Label::Id, id.len()).chain(std::iter::repeat_n(Label::Shift, shift.len())).collect();
        Self::new(scores, labels, orientation)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    /// Scores with orientation applied so that higher always means ID.
    fn id_oriented(&self) -> impl Iterator<Item = (f64, Label)> + '_ {
        let sign = match self.orientation {
            Orientation::HigherIsId => 1.0,
            Orientation::HigherIsShift => -1.0,
        };
        self.scores.iter().zip(&self.labels).map(move |(&s, &l)| (sign * s, l))
    }

    fn class_counts(&self) -> Result<(usize, usize)> {
        let n_id = self.labels.iter().filter(|&&l| l == Label::Id).count();
        let n_shift = self.labels.len() - n_id;
        if n_id == 0 || n_shift == 0 {
            return Err(Error::InsufficientData("both ID and SHIFT samples are required".into()));
        }
        Ok((n_id, n_shift))
    }
}

/// Probability that a random ID sample outranks a random shifted one, ties
/// counting one half.
pub fn auroc(d: &LabeledScores) -> Result<f64> {
    let (n_id, n_shift) = d.class_counts()?;
    let mut pairs: Vec<(f64, Label)> = d.scores.iter().copied().zip(d.labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sum of 1-based average ranks of the ID samples, doubled to stay integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i + 1;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        // ranks i+1..=j average to (i+1+j)/2
        let twice_avg = (i + 1 + j) as u128;
        let ids = pairs[i..j].iter().filter(|p| p.1 == Label::Id).count() as u128;
        twice_rank_sum += ids * twice_avg;
        i = j;
    }
    let n1 = n_id as u128;
    // 2U = 2R - n1(n1+1); U counts pairs (id > shift) + half the ties
    let twice_u = twice_rank_sum - n1 * (n1 + 1);
    let u = twice_u as f64 / 2.0;
    let auc = u / (n_id as f64 * n_shift as f64);
    Ok(match d.orientation {
        Orientation::HigherIsId => auc,
        Orientation::HigherIsShift => 1.0 - auc,
    })
}

/// Fraction of shifted samples accepted at the threshold that keeps at least
/// `tpr_level` of the ID samples.
///
/// Accepted means oriented score `>= t`; `t` is the largest threshold with ID
/// acceptance `>= tpr_level`.
pub fn fpr_at_tpr(d: &LabeledScores, tpr_level: f64) -> Result<f64> {
    if !(tpr_level > 0.0 && tpr_level < 1.0) {
        return Err(Error::Domain(format!("tpr level must lie in (0,1), got {tpr_level}")));
    }
    let (n_id, n_shift) = d.class_counts()?;
    let mut id: Vec<f64> = Vec::with_capacity(n_id);
    let mut shift: Vec<f64> = Vec::with_capacity(n_shift);
    for (s, l) in d.id_oriented() {
        match l {
            Label::Id => id.push(s),
            Label::Shift => shift.push(s),
        }
    }
    id.sort_by(|a, b| b.total_cmp(a));
    let needed = ((tpr_level * n_id as f64).ceil() as usize).clamp(1, n_id);
    let t = id[needed - 1];
    let passed = shift.iter().filter(|&&s| s >= t).count();
    Ok(passed as f64 / n_shift as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub auroc: f64,
    pub fpr_at_tpr: f64,
    pub tpr_level: f64,
}

impl MethodMetrics {
    pub fn evaluate(d: &LabeledScores, tpr_level: f64) -> Result<Self> {
        Ok(Self { auroc: auroc(d)?, fpr_at_tpr: fpr_at_tpr(d, tpr_level)?, tpr_level })
    }
}

/// Per-method evaluation results, keyed by method name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub methods: BTreeMap<String, MethodMetrics>,
}

impl EvalReport {
    pub fn insert(&mut self, method: impl Into<String>, m: MethodMetrics) {
        self.methods.insert(method.into(), m);
    }

    pub fn get(&self, method: &str) -> Option<&MethodMetrics> {
        self.methods.get(method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,auroc,fpr_at_tpr,tpr_level\n");
        for (name, m) in &self.methods {
            let _ = writeln!(out, "{name},{},{},{}", fmt_f64(m.auroc), fmt_f64(m.fpr_at_tpr), fmt_f64(m.tpr_level));
        }
        out
    }

    /// JSON object keyed by method name; numbers carry 17 significant digits.
    pub fn to_json(&self) -> String {
        let rows: Vec<String> = self
            .methods
            .iter()
            .map(|(name, m)| {
                format!(
                    "  {}: {{\"auroc\": {}, \"fpr_at_tpr\": {}, \"tpr_level\": {}}}",
                    serde_json::to_string(name).expect("string serializes"),
                    fmt_f64(m.auroc),
                    fmt_f64(m.fpr_at_tpr),
                    fmt_f64(m.tpr_level)
                )
            })
            .collect();
        format!("{{\n{}\n}}\n", rows.join(",\n"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair_count_oracle(id: &[f64], shift: &[f64]) -> f64 {
        let mut num = 0.0;
        for &a in id {
            for &b in shift {
                if a > b {
                    num += 1.0;
                } else if a == b {
                    num += 0.5;
                }
            }
        }
        num / (id.len() as f64 * shift.len() as f64)
    }

    #[test]
    fn perfect_separation() {
        let d = LabeledScores::from_groups(&[1.0; 5], &[0.0; 7], Orientation::HigherIsId).unwrap();
        assert_eq!(auroc(&d).unwrap(), 1.0);
        assert_eq!(fpr_at_tpr(&d, 0.95).unwrap(), 0.0);
        let flipped = LabeledScores::from_groups(&[1.0; 5], &[0.0; 7], Orientation::HigherIsShift).unwrap();
        assert_eq!(auroc(&flipped).unwrap(), 0.0);
    }

    #[test]
    fn all_ties_is_half() {
        let d = LabeledScores::from_groups(&[2.0; 13], &[2.0; 4], Orientation::HigherIsId).unwrap();
        assert_eq!(auroc(&d).unwrap(), 0.5);
    }

    #[test]
    fn single_class_rejected() {
        let d = LabeledScores::from_groups(&[1.0, 2.0], &[], Orientation::HigherIsId).unwrap();
        assert!(auroc(&d).is_err());
        assert!(fpr_at_tpr(&d, 0.9).is_err());
    }

    #[test]
    fn same_distribution_is_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let d = LabeledScores::from_groups(&a, &b, Orientation::HigherIsId).unwrap();
        assert!((auroc(&d).unwrap() - 0.5).abs() < 0.02);
        assert!((fpr_at_tpr(&d, 0.95).unwrap() - 0.95).abs() < 0.02);
        assert!((fpr_at_tpr(&d, 0.8).unwrap() - 0.8).abs() < 0.02);
    }

    #[test]
    fn matches_pair_counting_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let n1 = rng.random_range(1..100);
            let n2 = rng.random_range(1..100);
            let id: Vec<f64> = (0..n1).map(|_| rng.random_range(0..20) as f64).collect();
            let sh: Vec<f64> = (0..n2).map(|_| rng.random_range(0..15) as f64).collect();
            let d = LabeledScores::from_groups(&id, &sh, Orientation::HigherIsId).unwrap();
            assert_eq!(auroc(&d).unwrap(), pair_count_oracle(&id, &sh));
        }
    }

    #[test]
    fn report_csv_layout() {
        let mut r = EvalReport::default();
        r.insert("fisher", MethodMetrics { auroc: 0.9, fpr_at_tpr: 0.25, tpr_level: 0.95 });
        let csv = r.to_csv();
        assert!(csv.starts_with("method,auroc,fpr_at_tpr,tpr_level\nfisher,"));
        r.insert("detector:a\"b", MethodMetrics { auroc: 0.1 + 0.2, fpr_at_tpr: 1.0, tpr_level: 0.95 });
        let back: BTreeMap<String, MethodMetrics> = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r.methods);
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance(
            id in proptest::collection::vec(-5.0f64..5.0, 1..60),
            sh in proptest::collection::vec(-5.0f64..5.0, 1..60),
        ) {
            let d = LabeledScores::from_groups(&id, &sh, Orientation::HigherIsId).unwrap();
            let f = |x: f64| x * x * x + x;
            let id2: Vec<f64> = id.iter().map(|&x| f(x)).collect();
            let sh2: Vec<f64> = sh.iter().map(|&x| f(x)).collect();
            let d2 = LabeledScores::from_groups(&id2, &sh2, Orientation::HigherIsId).unwrap();
            prop_assert_eq!(auroc(&d).unwrap(), auroc(&d2).unwrap());
            prop_assert_eq!(fpr_at_tpr(&d, 0.9).unwrap(), fpr_at_tpr(&d2, 0.9).unwrap());
            let flipped = LabeledScores::from_groups(&id, &sh, Orientation::HigherIsShift).unwrap();
            prop_assert!((auroc(&flipped).unwrap() - (1.0 - auroc(&d).unwrap())).abs() < 1e-15);
        }
    }
}
