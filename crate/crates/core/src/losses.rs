//! Training objectives and their gradients with respect to network outputs.
//!
//! Pixel losses are mean squared errors (pixel-averaged), which keeps the
//! balance factor ε and the learning rate independent of resolution. The
//! KL regularizer is weighted by `beta_kl`; with `beta_kl = 0` the
//! multi-task objective reduces to `l_geo + ε · l_rec` exactly.

use crate::error::{Error, Result};

fn check_shapes(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} values", a.len()),
            actual: format!("{} values", b.len()),
        });
    }
    if a.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: "non-empty arrays".into(),
            actual: "empty".into(),
        });
    }
    Ok(())
}

/// Pixel-averaged squared error.
pub fn mse(target: &[f64], prediction: &[f64]) -> Result<f64> {
    check_shapes(target, prediction)?;
    let sum: f64 = target
        .iter()
        .zip(prediction)
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    Ok(sum / target.len() as f64)
}

/// d mse / d prediction, scaled by `weight`.
pub(crate) fn mse_grad(target: &[f64], prediction: &[f64], weight: f64) -> Vec<f64> {
    let k = 2.0 * weight / target.len() as f64;
    target.iter().zip(prediction).map(|(t, p)| k * (p - t)).collect()
}

/// Context-restoration loss: error between the original image and the
/// reconstruction of its patch-swapped version.
pub fn l_cr(original: &[f64], reconstruction_of_corrupted: &[f64]) -> Result<f64> {
    mse(original, reconstruction_of_corrupted)
}

/// Reconstruction loss between an input and its reconstruction.
pub fn l_rec(x: &[f64], reconstruction: &[f64]) -> Result<f64> {
    mse(x, reconstruction)
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&l| (l - lse).exp()).collect()
}

/// `ln softmax(logits)` computed without forming the probabilities.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&l| l - lse).collect()
}

/// Cross-entropy of `softmax(logits)` against a one-hot `true_class`.
pub fn l_geo(geo_logits: &[f64], true_class: usize) -> Result<f64> {
    if true_class >= geo_logits.len() {
        return Err(Error::InvalidClass {
            index: true_class,
            classes: geo_logits.len(),
        });
    }
    if let Some(i) = geo_logits.iter().position(|l| !l.is_finite()) {
        return Err(Error::InvalidConfig(format!("non-finite logit at {i}")));
    }
    Ok(log_sum_exp(geo_logits) - geo_logits[true_class])
}

/// Batch mean of [`l_geo`].
pub fn l_geo_batch(logits: &[Vec<f64>], classes: &[usize]) -> Result<f64> {
    if logits.len() != classes.len() || logits.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} labels", logits.len()),
            actual: format!("{}", classes.len()),
        });
    }
    let mut sum = 0.0;
    for (l, &c) in logits.iter().zip(classes) {
        sum += l_geo(l, c)?;
    }
    Ok(sum / logits.len() as f64)
}

/// d l_geo / d logits = softmax − one_hot, scaled by `weight`.
pub(crate) fn l_geo_grad(logits: &[f64], true_class: usize, weight: f64) -> Vec<f64> {
    let mut g = softmax(logits);
    g[true_class] -= 1.0;
    g.iter_mut().for_each(|v| *v *= weight);
    g
}

/// KL(N(μ, σ²) ‖ N(0, I)) for one sample, summed over latent dimensions.
pub fn l_kl(mu: &[f64], log_var: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

/// Batch mean of [`l_kl`].
pub fn l_kl_batch(mu: &[Vec<f64>], log_var: &[Vec<f64>]) -> f64 {
    let n = mu.len().max(1) as f64;
    mu.iter().zip(log_var).map(|(m, lv)| l_kl(m, lv)).sum::<f64>() / n
}

/// Gradients of `weight · l_kl` with respect to μ and log σ².
pub(crate) fn l_kl_grad(mu: &[f64], log_var: &[f64], weight: f64) -> (Vec<f64>, Vec<f64>) {
    let d_mu = mu.iter().map(|m| weight * m).collect();
    let d_lv = log_var.iter().map(|lv| weight * 0.5 * (lv.exp() - 1.0)).collect();
    (d_mu, d_lv)
}

/// Loss components of one optimization step together with the weights that
/// produced `l_total`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l_cr: f64,
    pub l_geo: f64,
    pub l_rec: f64,
    pub l_kl: f64,
    pub l_total: f64,
    pub epsilon: f64,
    pub beta_kl: f64,
}

/// Unweighted component values fed into [`l_multitask`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub l_geo: f64,
    pub l_rec: f64,
    pub l_kl: f64,
}

/// `l_total = l_geo + ε · l_rec + beta_kl · l_kl`.
pub fn l_multitask(c: LossComponents, epsilon: f64, beta_kl: f64) -> Result<LossBreakdown> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidConfig(format!("epsilon must be > 0, got {epsilon}")));
    }
    if !(beta_kl >= 0.0) || !beta_kl.is_finite() {
        return Err(Error::InvalidConfig(format!("beta_kl must be >= 0, got {beta_kl}")));
    }
    Ok(LossBreakdown {
        l_cr: 0.0,
        l_geo: c.l_geo,
        l_rec: c.l_rec,
        l_kl: c.l_kl,
        l_total: c.l_geo + epsilon * c.l_rec + beta_kl * c.l_kl,
        epsilon,
        beta_kl,
    })
}

/// Pretraining objective `l_cr + beta_kl · l_kl`.
pub fn l_pretrain(l_cr: f64, l_kl: f64, beta_kl: f64) -> Result<LossBreakdown> {
    if !(beta_kl >= 0.0) || !beta_kl.is_finite() {
        return Err(Error::InvalidConfig(format!("beta_kl must be >= 0, got {beta_kl}")));
    }
    Ok(LossBreakdown {
        l_cr,
        l_kl,
        l_total: l_cr + beta_kl * l_kl,
        epsilon: 0.0,
        beta_kl,
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel_close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * b.abs().max(1e-300) || a == b
    }

    #[test]
    fn pixel_losses() {
        assert_eq!(l_cr(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(l_cr(&[0.0; 9], &[1.0; 9]).unwrap(), 1.0);
        assert!(rel_close(l_cr(&[0.0, 0.5], &[0.5, 0.5]).unwrap(), 0.125));
        assert!(rel_close(l_rec(&[0.2; 4], &[0.5; 4]).unwrap(), 0.09));
        assert!(rel_close(
            l_rec(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0, 0.0, 1.0]).unwrap(),
            0.25
        ));
        assert!(matches!(l_rec(&[0.0; 3], &[0.0; 4]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn geo_cross_entropy() {
        assert!(rel_close(l_geo(&[0.0; 20], 3).unwrap(), 20f64.ln()));
        let mut saturated = vec![0.0; 20];
        saturated[7] = 1000.0;
        assert!(l_geo(&saturated, 7).unwrap() < 1e-6);
        assert!(rel_close(
            l_geo(&[1.0, 0.0], 0).unwrap(),
            (1.0 + (-1.0f64).exp()).ln()
        ));
        assert!(matches!(
            l_geo(&[0.0; 20], 20),
            Err(Error::InvalidClass { .. })
        ));
    }

    #[test]
    fn kl_divergence() {
        assert_eq!(l_kl(&[0.0; 5], &[0.0; 5]), 0.0);
        assert!(rel_close(l_kl(&[1.0], &[0.0]), 0.5));
        assert!(rel_close(
            l_kl_batch(&[vec![1.0], vec![0.0]], &[vec![0.0], vec![0.0]]),
            0.25
        ));
    }

    #[test]
    fn multitask_combination() {
        let c = LossComponents {
            l_geo: 2.0,
            l_rec: 0.5,
            l_kl: 0.0,
        };
        assert_eq!(l_multitask(c, 1.0, 0.0).unwrap().l_total, 2.5);
        let c = LossComponents {
            l_geo: 1.7,
            l_rec: 0.0,
            l_kl: 0.0,
        };
        assert_eq!(l_multitask(c, 0.3, 0.9).unwrap().l_total, 1.7);
        let c = LossComponents {
            l_geo: 1.0,
            l_rec: 2.0,
            l_kl: 4.0,
        };
        assert!(rel_close(l_multitask(c, 0.5, 0.25).unwrap().l_total, 3.0));
        assert!(l_multitask(c, 0.0, 0.1).is_err());
        assert!(l_multitask(c, -1.0, 0.1).is_err());
        assert!(l_multitask(c, 1.0, -0.1).is_err());
    }

    proptest! {
        #[test]
        fn geo_is_shift_invariant(
            logits in proptest::collection::vec(-30.0f64..30.0, 20),
            shift in -100.0f64..100.0,
            class in 0usize..20,
        ) {
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let a = l_geo(&logits, class).unwrap();
            let b = l_geo(&shifted, class).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn kl_is_nonnegative(
            mu in proptest::collection::vec(-5.0f64..5.0, 8),
            lv in proptest::collection::vec(-5.0f64..5.0, 8),
        ) {
            prop_assert!(l_kl(&mu, &lv) >= 0.0);
        }

        #[test]
        fn mse_zero_iff_identical(
            a in proptest::collection::vec(0.0f64..1.0, 1..40),
            i in 0usize..40,
            delta in 1e-6f64..1.0,
        ) {
            prop_assert_eq!(mse(&a, &a).unwrap(), 0.0);
            let mut b = a.clone();
            let i = i % b.len();
            b[i] += delta;
            prop_assert!(mse(&a, &b).unwrap() > 0.0);
        }

        #[test]
        fn multitask_is_linear_in_weights(
            g in 0.0f64..5.0, r in 0.0f64..5.0, k in 0.0f64..5.0,
            e1 in 0.01f64..3.0, e2 in 0.01f64..3.0, b1 in 0.0f64..3.0, b2 in 0.0f64..3.0,
        ) {
            let c = LossComponents { l_geo: g, l_rec: r, l_kl: k };
            let t = |e, b| l_multitask(c, e, b).unwrap().l_total;
            // Affine in each weight: the difference quotient is the component itself.
            prop_assert!(((t(e1, b1) - t(e2, b1)) - (e1 - e2) * r).abs() < 1e-9);
            prop_assert!(((t(e1, b1) - t(e1, b2)) - (b1 - b2) * k).abs() < 1e-9);
        }
    }
}
