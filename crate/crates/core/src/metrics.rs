//! Accuracy-curve statistics across repeated runs.

use serde::Serialize;

use crate::error::{Error, Result};

/// Normal-approximation critical value for a two-sided 95% interval.
pub const Z_95: f64 = 1.96;

/// Completed rounds needed to first reach `threshold`, or `None` if the
/// curve never gets there. `curve[i]` is the accuracy after round `i + 1`.
pub fn r_threshold(curve: &[f64], threshold: f64) -> Result<Option<usize>> {
    if curve.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(curve.iter().position(|&a| a >= threshold).map(|i| i + 1))
}

/// Arithmetic mean, accumulated as offsets from the first sample so that
/// identical samples return that sample exactly.
pub fn mean(samples: &[f64]) -> Result<f64> {
    let (&first, _) = samples
        .split_first()
        .ok_or(Error::InsufficientSamples { needed: 1, got: 0 })?;
    let offset: f64 = samples.iter().map(|x| x - first).sum();
    Ok(first + offset / samples.len() as f64)
}

/// Mean and `1.96 * s / sqrt(n)` half-width, `s` the sample standard
/// deviation.
pub fn mean_ci95(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let m = mean(samples)?;
    let n = samples.len() as f64;
    let var = samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((m, Z_95 * var.sqrt() / n.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub repetitions: usize,
    pub threshold: f64,
    pub mean_accuracy: Vec<f64>,
    /// Per-round half-widths; `None` with a single repetition.
    pub ci95_accuracy: Option<Vec<f64>>,
    pub final_mean_accuracy: f64,
    pub final_ci95_accuracy: Option<f64>,
    pub r_threshold: Vec<Option<usize>>,
    /// Mean over the repetitions that reached the threshold.
    pub r_threshold_mean: Option<f64>,
    pub r_threshold_ci95: Option<f64>,
}

impl ExperimentSummary {
    /// Summarize one accuracy curve per repetition. All curves must have the
    /// same non-zero length.
    pub fn from_curves(curves: &[Vec<f64>], threshold: f64) -> Result<Self> {
        let first = curves.first().ok_or(Error::EmptyInput)?;
        let rounds = first.len();
        if rounds == 0 {
            return Err(Error::EmptyInput);
        }
        if let Some(bad) = curves.iter().find(|c| c.len() != rounds) {
            return Err(Error::Shape {
                expected: rounds,
                found: bad.len(),
            });
        }
        let column = |r: usize| curves.iter().map(|c| c[r]).collect::<Vec<_>>();
        let mean_accuracy = (0..rounds).map(|r| mean(&column(r))).collect::<Result<Vec<_>>>()?;
        let ci95_accuracy = if curves.len() >= 2 {
            Some(
                (0..rounds)
                    .map(|r| mean_ci95(&column(r)).map(|(_, hw)| hw))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let r_values = curves
            .iter()
            .map(|c| r_threshold(c, threshold))
            .collect::<Result<Vec<_>>>()?;
        let reached: Vec<f64> = r_values.iter().flatten().map(|&r| r as f64).collect();
        let (r_mean, r_ci) = match reached.len() {
            0 => (None, None),
            1 => (Some(reached[0]), None),
            _ => {
                let (m, hw) = mean_ci95(&reached)?;
                (Some(m), Some(hw))
            }
        };
        Ok(ExperimentSummary {
            repetitions: curves.len(),
            threshold,
            final_mean_accuracy: mean_accuracy[rounds - 1],
            final_ci95_accuracy: ci95_accuracy.as_ref().map(|v| v[rounds - 1]),
            mean_accuracy,
            ci95_accuracy,
            r_threshold: r_values,
            r_threshold_mean: r_mean,
            r_threshold_ci95: r_ci,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn threshold_examples() {
        assert_eq!(r_threshold(&[0.3, 0.55, 0.61, 0.7], 0.6).unwrap(), Some(3));
        assert_eq!(r_threshold(&[0.3, 0.5], 0.6).unwrap(), None);
        assert_eq!(r_threshold(&[0.6], 0.6).unwrap(), Some(1));
        assert!(matches!(r_threshold(&[], 0.6), Err(Error::EmptyInput)));
    }

    #[test]
    fn ci_examples() {
        assert_eq!(mean_ci95(&[0.4, 0.4, 0.4]).unwrap(), (0.4, 0.0));
        let (m, hw) = mean_ci95(&[0.0, 1.0]).unwrap();
        assert_eq!(m, 0.5);
        let expected = 1.96 * 0.5f64.sqrt() / 2f64.sqrt();
        assert!((hw - expected).abs() < 1e-15);
        assert!((hw - 0.98).abs() < 1e-12);
        assert!(matches!(mean_ci95(&[1.0]), Err(Error::InsufficientSamples { needed: 2, got: 1 })));
        assert!(mean(&[]).is_err());
    }

    #[test]
    fn half_width_shrinks_like_inverse_sqrt_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut widths = Vec::new();
        for n in [100usize, 400, 1600, 6400] {
            // Average over trials to tame sampling noise in s.
            let trials = 50;
            let w: f64 = (0..trials)
                .map(|_| {
                    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                    mean_ci95(&xs).unwrap().1
                })
                .sum::<f64>()
                / trials as f64;
            widths.push(w);
        }
        for pair in widths.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!((ratio - 2.0).abs() < 0.05, "ratio {ratio}");
        }
    }

    #[test]
    fn summary_of_curves() {
        let curves = vec![vec![0.5, 0.7, 0.9], vec![0.4, 0.6, 0.8], vec![0.2, 0.3, 0.5]];
        let s = ExperimentSummary::from_curves(&curves, 0.6).unwrap();
        assert_eq!(s.r_threshold, vec![Some(2), Some(2), None]);
        assert_eq!(s.r_threshold_mean, Some(2.0));
        assert_eq!(s.r_threshold_ci95, Some(0.0));
        assert!((s.final_mean_accuracy - 2.2 / 3.0).abs() < 1e-12);
        assert!(s.final_ci95_accuracy.unwrap() > 0.0);
        let single = ExperimentSummary::from_curves(&curves[..1], 0.6).unwrap();
        assert_eq!(single.ci95_accuracy, None);
        assert!(ExperimentSummary::from_curves(&[vec![0.1], vec![0.1, 0.2]], 0.6).is_err());
    }

    proptest! {
        #[test]
        fn threshold_is_monotone(curve in prop::collection::vec(0.0..1.0f64, 1..30), a in 0.01..0.99f64, b in 0.01..0.99f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let r_lo = r_threshold(&curve, lo).unwrap();
            let r_hi = r_threshold(&curve, hi).unwrap();
            match (r_lo, r_hi) {
                (Some(x), Some(y)) => prop_assert!(x <= y),
                (None, Some(_)) => prop_assert!(false, "higher threshold reached first"),
                _ => {}
            }
        }

        #[test]
        fn mean_is_permutation_invariant(mut xs in prop::collection::vec(-1e3..1e3f64, 2..20), seed in any::<u64>()) {
            let (m, hw) = mean_ci95(&xs).unwrap();
            use rand::seq::SliceRandom;
            xs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (m2, hw2) = mean_ci95(&xs).unwrap();
            prop_assert!((m - m2).abs() <= 1e-9 * (1.0 + m.abs()));
            prop_assert!(hw >= 0.0);
            prop_assert!((hw - hw2).abs() <= 1e-9 * (1.0 + hw));
        }
    }
}
