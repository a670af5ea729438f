//! Visual consistency objective.
//!
//! The reference model always reads the 1/4 representation; the policy reads
//! the representation picked by the sampled rate. The per-step KL is taken as
//! `KL(π_ref ‖ π_policy)` and averaged over the response.

use crate::error::{shape, Result};
use crate::math::kl_divergence;
use crate::rng::Rng;
use crate::types::{CompressionRate, PatchGrid};

use super::toylm::ToyLm;

/// One consistency-training example: a response and both visual representations.
#[derive(Debug, Clone)]
pub struct VicoSample {
    pub response: Vec<usize>,
    /// Projected 1/4 features, one grid per tile.
    pub quarter: Vec<PatchGrid>,
    /// Projected 1/16 features, one grid per tile.
    pub sixteenth: Vec<PatchGrid>,
}

impl VicoSample {
    pub fn view(&self, rate: CompressionRate) -> &[PatchGrid] {
        match rate {
            CompressionRate::Quarter => &self.quarter,
            CompressionRate::Sixteenth => &self.sixteenth,
        }
    }
}

fn check_pair(reference: &ToyLm, policy: &ToyLm, response: &[usize]) -> Result<()> {
    if reference.vocab() != policy.vocab() {
        return Err(shape(format!(
            "vocabulary mismatch: reference {} vs policy {}",
            reference.vocab(),
            policy.vocab()
        )));
    }
    if response.is_empty() {
        return Err(shape("consistency loss needs at least one response token"));
    }
    Ok(())
}

/// Mean per-step `KL(π_ref(·|I_1/4) ‖ π_policy(·|I_ξ))` along `response`.
pub fn vico_loss(
    reference: &ToyLm,
    policy: &ToyLm,
    response: &[usize],
    quarter: &[PatchGrid],
    compressed: &[PatchGrid],
    xi: CompressionRate,
) -> Result<f64> {
    check_pair(reference, policy, response)?;
    let ref_visual = reference.visual_context(quarter)?;
    let pol_view = match xi {
        CompressionRate::Quarter => quarter,
        CompressionRate::Sixteenth => compressed,
    };
    let pol_visual = policy.visual_context(pol_view)?;
    let ref_steps = reference.step_distributions(response, &ref_visual)?;
    let pol_steps = policy.step_distributions(response, &pol_visual)?;
    let mut total = 0.0;
    for (p, q) in ref_steps.iter().zip(&pol_steps) {
        total += kl_divergence(p, q)?;
    }
    Ok(total / response.len() as f64)
}

pub fn vico_sample_loss(reference: &ToyLm, policy: &ToyLm, sample: &VicoSample, xi: CompressionRate) -> Result<f64> {
    vico_loss(reference, policy, &sample.response, &sample.quarter, &sample.sixteenth, xi)
}

/// Gradient of [`vico_sample_loss`] with respect to the policy head weights.
///
/// `∂KL/∂logits_policy = π_policy − π_ref` at every step.
pub fn vico_loss_grad(reference: &ToyLm, policy: &ToyLm, sample: &VicoSample, xi: CompressionRate) -> Result<Vec<f64>> {
    check_pair(reference, policy, &sample.response)?;
    let ref_visual = reference.visual_context(&sample.quarter)?;
    let pol_visual = policy.visual_context(sample.view(xi))?;
    let head = policy.head();
    let mut grad = vec![0.0; head.params().len()];
    let n = sample.response.len() as f64;
    let mut prev = None;
    for &tok in &sample.response {
        let p_ref = reference.head().distribution(&reference.context(prev, &ref_visual))?;
        let ctx = policy.context(prev, &pol_visual);
        let p_pol = head.distribution(&ctx)?;
        let dlogits: Vec<f64> = p_pol
            .probs()
            .iter()
            .zip(p_ref.probs())
            .map(|(q, p)| (q - p) / n)
            .collect();
        head.accumulate_logit_grad(&mut grad, &ctx, &dlogits);
        prev = Some(tok);
    }
    Ok(grad)
}

/// How the expectation over the compression rate is evaluated.
#[derive(Debug, Clone)]
pub enum RateExpectation {
    /// Both rates, weighted 1/2 each.
    Exhaustive,
    /// Monte-Carlo over `draws` uniformly sampled rates.
    Sampled { seed: u64, draws: usize },
}

pub fn sample_rate(rng: &mut Rng) -> CompressionRate {
    if rng.coin(0.5) {
        CompressionRate::Quarter
    } else {
        CompressionRate::Sixteenth
    }
}

/// Consistency loss with the rate drawn uniformly from {1/4, 1/16}.
pub fn vico_expected_loss(
    reference: &ToyLm,
    policy: &ToyLm,
    sample: &VicoSample,
    mode: &RateExpectation,
) -> Result<f64> {
    match mode {
        RateExpectation::Exhaustive => {
            let q = vico_sample_loss(reference, policy, sample, CompressionRate::Quarter)?;
            let s = vico_sample_loss(reference, policy, sample, CompressionRate::Sixteenth)?;
            Ok(0.5 * q + 0.5 * s)
        }
        RateExpectation::Sampled { seed, draws } => {
            if *draws == 0 {
                return Err(crate::error::invalid("sampled expectation needs at least one draw"));
            }
            let mut rng = Rng::new(*seed);
            let mut total = 0.0;
            for _ in 0..*draws {
                total += vico_sample_loss(reference, policy, sample, sample_rate(&mut rng))?;
            }
            Ok(total / *draws as f64)
        }
    }
}

/// Stochastic gradient descent on the consistency objective, updating only the
/// policy head. Each step draws one sample and one rate.
pub fn consistency_train(
    reference: &ToyLm,
    policy: &mut ToyLm,
    samples: &[VicoSample],
    steps: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<()> {
    if samples.is_empty() {
        return Ok(());
    }
    for _ in 0..steps {
        let sample = &samples[rng.below(samples.len())];
        let xi = sample_rate(rng);
        let grad = vico_loss_grad(reference, policy, sample, xi)?;
        for (w, g) in policy.head_mut().params_mut().iter_mut().zip(grad) {
            *w -= lr * g;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::vico::ToyLmConfig;

    fn grids(seed: u64, scale: f64) -> Vec<PatchGrid> {
        let mut rng = Rng::new(seed);
        vec![PatchGrid::new(2, 32, rng.normal_vec(4 * 32, scale)).unwrap()]
    }

    fn sample(seed: u64, len: usize) -> VicoSample {
        let mut rng = Rng::new(seed);
        VicoSample {
            response: (0..len).map(|_| rng.below(16)).collect(),
            quarter: grids(seed + 1, 1.0),
            sixteenth: grids(seed + 2, 1.0),
        }
    }

    #[test]
    fn identical_models_on_quarter_is_zero() {
        let lm = ToyLm::new(ToyLmConfig::default(), 3).unwrap();
        let s = sample(1, 5);
        assert_eq!(vico_sample_loss(&lm, &lm, &s, CompressionRate::Quarter).unwrap(), 0.0);
        assert!(vico_sample_loss(&lm, &lm, &s, CompressionRate::Sixteenth).unwrap() > 0.0);
    }

    #[test]
    fn hand_value_single_step() {
        let config = ToyLmConfig {
            vocab: 2,
            ..ToyLmConfig::default()
        };
        let mut reference = ToyLm::new(config, 5).unwrap();
        let mut policy = reference.clone();
        let quarter = grids(9, 1.0);
        let ctx = reference.context(None, &reference.visual_context(&quarter).unwrap());
        let norm2: f64 = ctx.iter().map(|c| c * c).sum();
        let w = reference.head_mut().params_mut();
        w.iter_mut().for_each(|x| *x = 0.0);
        for (k, c) in ctx.iter().enumerate() {
            w[k] = c * 3f64.ln() / norm2;
        }
        policy.head_mut().params_mut().iter_mut().for_each(|x| *x = 0.0);
        let loss = vico_loss(&reference, &policy, &[0], &quarter, &quarter, CompressionRate::Quarter).unwrap();
        let oracle = 0.75 * (0.75f64 / 0.5).ln() + 0.25 * (0.25f64 / 0.5).ln();
        assert!((loss - oracle).abs() < 1e-12);
        assert!((loss - 0.130812).abs() < 1e-6);
    }

    #[test]
    fn mean_normalization() {
        // Zeroing the token-embedding columns makes every step see the same
        // logits, so all per-step KLs are equal.
        let mut reference = ToyLm::new(ToyLmConfig::default(), 2).unwrap();
        let mut policy = ToyLm::new(ToyLmConfig::default(), 3).unwrap();
        let width = 16;
        for lm in [&mut reference, &mut policy] {
            for (i, w) in lm.head_mut().params_mut().iter_mut().enumerate() {
                if i % width < 8 {
                    *w = 0.0;
                }
            }
        }
        let base = sample(4, 3);
        let doubled = VicoSample {
            response: [base.response.clone(), base.response.clone()].concat(),
            ..base.clone()
        };
        let a = vico_sample_loss(&reference, &policy, &base, CompressionRate::Sixteenth).unwrap();
        let b = vico_sample_loss(&reference, &policy, &doubled, CompressionRate::Sixteenth).unwrap();
        assert!(a > 0.0);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn vocab_mismatch_is_shape_error() {
        let a = ToyLm::new(ToyLmConfig::default(), 1).unwrap();
        let b = ToyLm::new(
            ToyLmConfig {
                vocab: 8,
                ..ToyLmConfig::default()
            },
            1,
        )
        .unwrap();
        let s = sample(1, 3);
        assert!(matches!(
            vico_sample_loss(&a, &b, &s, CompressionRate::Quarter),
            Err(crate::Error::Shape(_))
        ));
    }

    #[test]
    fn expectation_modes() {
        let reference = ToyLm::new(ToyLmConfig::default(), 7).unwrap();
        let policy = ToyLm::new(ToyLmConfig::default(), 8).unwrap();
        let s = sample(2, 4);
        let q = vico_sample_loss(&reference, &policy, &s, CompressionRate::Quarter).unwrap();
        let x = vico_sample_loss(&reference, &policy, &s, CompressionRate::Sixteenth).unwrap();
        let exact = vico_expected_loss(&reference, &policy, &s, &RateExpectation::Exhaustive).unwrap();
        assert!((exact - 0.5 * (q + x)).abs() < 1e-15);
        let mode = RateExpectation::Sampled { seed: 3, draws: 64 };
        let a = vico_expected_loss(&reference, &policy, &s, &mode).unwrap();
        assert_eq!(a, vico_expected_loss(&reference, &policy, &s, &mode).unwrap());
        assert!(a >= q.min(x) && a <= q.max(x));
        let same = vico_expected_loss(&reference, &reference, &s, &RateExpectation::Exhaustive).unwrap();
        assert!(same >= 0.0);
    }

    #[test]
    fn consistency_training_reduces_sixteenth_loss() {
        let reference = ToyLm::new(ToyLmConfig::default(), 11).unwrap();
        let mut policy = reference.clone();
        let samples: Vec<VicoSample> = (0..6).map(|i| sample(100 + i, 4)).collect();
        let before: f64 = samples
            .iter()
            .map(|s| vico_expected_loss(&reference, &policy, s, &RateExpectation::Exhaustive).unwrap())
            .sum();
        consistency_train(&reference, &mut policy, &samples, 300, 0.5, &mut Rng::new(1)).unwrap();
        let after: f64 = samples
            .iter()
            .map(|s| vico_expected_loss(&reference, &policy, s, &RateExpectation::Exhaustive).unwrap())
            .sum();
        assert!(after < before);
        assert!(policy.same_backbone(&reference));
    }
}
