//! Numerically stable softmax, KL and logistic helpers.
//!
//! KL is always taken as `KL(p ‖ q) = Σ p·ln(p/q)` with `p` the reference
//! distribution and `q` the distribution being fitted.

use crate::error::{invalid, Error, Result};
use crate::types::TokenDistribution;

fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.len() < 2 {
        return Err(invalid("softmax needs at least two logits"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(invalid("softmax input contains non-finite values"));
    }
    Ok(())
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

pub fn softmax(logits: &[f64]) -> Result<TokenDistribution> {
    check_logits(logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(TokenDistribution::from_normalized(
        exps.into_iter().map(|e| e / sum).collect(),
    ))
}

pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    check_logits(logits)?;
    let lse = log_sum_exp(logits);
    Ok(logits.iter().map(|v| v - lse).collect())
}

pub fn kl_divergence(p: &TokenDistribution, q: &TokenDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "vocabulary sizes differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.probs().iter().zip(q.probs()).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::SupportMismatch { index: i });
        }
        kl += pi * (pi / qi).ln();
    }
    // Rounding can leave tiny negatives when p ≈ q.
    Ok(kl.max(0.0))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: &[f64]) -> TokenDistribution {
        TokenDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(softmax(&[1000.0, 1000.0]).unwrap().probs(), &[0.5, 0.5]);
        let p = softmax(&[1f64.ln(), 3f64.ln()]).unwrap();
        assert!((p.probs()[0] - 0.25).abs() < 1e-15);
        assert!((p.probs()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax(&[0.0, f64::NAN]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
        assert!(softmax(&[1.0]).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&dist(&[0.5, 0.5]), &dist(&[0.5, 0.5])).unwrap(), 0.0);
        let v = kl_divergence(&dist(&[0.75, 0.25]), &dist(&[0.5, 0.5])).unwrap();
        assert!((v - (0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln())).abs() < 1e-15);
        assert!((v - 0.130812).abs() < 1e-6);
        let v = kl_divergence(&dist(&[1.0, 0.0]), &dist(&[0.5, 0.5])).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn kl_support_mismatch() {
        let err = kl_divergence(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0])).unwrap_err();
        assert_eq!(err, Error::SupportMismatch { index: 1 });
        assert!(kl_divergence(&dist(&[0.5, 0.5]), &dist(&[0.2, 0.3, 0.5])).is_err());
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_shift_invariant(xs in prop::collection::vec(-50.0f64..50.0, 2..12), c in -100.0f64..100.0) {
                let a = softmax(&xs).unwrap();
                let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
                let b = softmax(&shifted).unwrap();
                for (x, y) in a.probs().iter().zip(b.probs()) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
                prop_assert!((a.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }

            #[test]
            fn softmax_permutation_equivariant(xs in prop::collection::vec(-20.0f64..20.0, 2..10), rot in 0usize..10) {
                let k = rot % xs.len();
                let mut rotated = xs.clone();
                rotated.rotate_left(k);
                let a = softmax(&xs).unwrap();
                let b = softmax(&rotated).unwrap();
                let mut a_rot = a.probs().to_vec();
                a_rot.rotate_left(k);
                for (x, y) in a_rot.iter().zip(b.probs()) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }

            #[test]
            fn gibbs_inequality(p in prop::collection::vec(-5.0f64..5.0, 2..8), q in prop::collection::vec(-5.0f64..5.0, 8)) {
                let p = softmax(&p).unwrap();
                let q = softmax(&q[..p.len()]).unwrap();
                prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
                prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
            }
        }
    }
}
