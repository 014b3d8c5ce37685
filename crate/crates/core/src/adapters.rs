//! Detector scores derived from classifier logits. All columns are
//! confidence-oriented: higher means more in-distribution.

use crate::error::{Error, Result};
use crate::matrix::ScoreMatrix;

pub const ADAPTER_NAMES: [&str; 4] = ["msp", "maxlogit", "energy", "doctor"];

/// `[msp, maxlogit, energy, doctor]` for one logit vector at temperature `t`.
///
/// Energy is `t * logsumexp(logits / t)`; doctor is the sum of squared softmax
/// probabilities.
pub fn logit_scores(logits: &[f64], temperature: f64) -> Result<[f64; 4]> {
    if logits.len() < 2 {
        return Err(Error::Dimension(format!("need at least 2 classes, got {}", logits.len())));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite logit".into()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Domain(format!("temperature must be > 0, got {temperature}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let msp = 1.0 / z;
    let doctor = exps.iter().map(|e| (e / z) * (e / z)).sum();
    let tz: f64 = logits.iter().map(|&l| ((l - max) / temperature).exp()).sum();
    let energy = max + temperature * tz.ln();
    Ok([msp, max, energy, doctor])
}

/// Applies [`logit_scores`] to every row of a row-major `n x classes` matrix.
pub fn logit_adapters(logits: &[f64], classes: usize, temperature: f64) -> Result<ScoreMatrix> {
    if classes < 2 {
        return Err(Error::Dimension(format!("need at least 2 classes, got {classes}")));
    }
    if !logits.len().is_multiple_of(classes) {
        return Err(Error::Dimension(format!("{} logits do not fill rows of {classes} classes", logits.len())));
    }
    let mut data = Vec::with_capacity(logits.len() / classes * 4);
    for row in logits.chunks_exact(classes) {
        data.extend(logit_scores(row, temperature)?);
    }
    ScoreMatrix::new(ADAPTER_NAMES.iter().map(|s| s.to_string()).collect(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits() {
        let [msp, maxlogit, energy, doctor] = logit_scores(&[0.0, 0.0], 1.0).unwrap();
        assert_eq!(msp, 0.5);
        assert_eq!(maxlogit, 0.0);
        assert!((energy - 2f64.ln()).abs() < 1e-15);
        assert_eq!(doctor, 0.5);
    }

    #[test]
    fn shift_invariance() {
        let l = [1.3, -0.2, 2.7, 0.4];
        let c = 5.25;
        let shifted: Vec<f64> = l.iter().map(|v| v + c).collect();
        let a = logit_scores(&l, 1.0).unwrap();
        let b = logit_scores(&shifted, 1.0).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-15);
        assert!((a[3] - b[3]).abs() < 1e-15);
        assert!((b[1] - a[1] - c).abs() < 1e-12);
        assert!((b[2] - a[2] - c).abs() < 1e-12);
    }

    #[test]
    fn energy_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let l: Vec<f64> = (0..5).map(|_| rng.random_range(-5.0..5.0)).collect();
            let naive = l.iter().map(|v| v.exp()).sum::<f64>().ln();
            assert!((logit_scores(&l, 1.0).unwrap()[2] - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_rise_with_predicted_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let mut l: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let top = (0..6).max_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap();
            let before = logit_scores(&l, 1.0).unwrap();
            l[top] += 0.5;
            let after = logit_scores(&l, 1.0).unwrap();
            for j in 0..4 {
                assert!(after[j] > before[j], "column {j}");
            }
        }
    }

    #[test]
    fn matrix_shape_checks() {
        assert!(logit_adapters(&[0.0; 5], 2, 1.0).is_err());
        assert!(logit_adapters(&[0.0; 4], 1, 1.0).is_err());
        let m = logit_adapters(&[0.0, 1.0, 2.0, 0.0], 2, 1.0).unwrap();
        assert_eq!(m.n_rows(), 2);
        assert_eq!(m.names(), ADAPTER_NAMES.map(String::from));
    }
}
