//! Next-token prediction loss with square-average reweighting.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::policy::ToyPolicy;
use crate::error::{invalid, Error, Result};
use crate::math::log_softmax;

/// A training sequence; `mask[i]` marks tokens that carry loss (response tokens).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSequence {
    pub sample_id: u64,
    pub query_id: u64,
    pub tokens: Vec<u32>,
    pub mask: Vec<bool>,
}

impl LossSequence {
    /// Every token carries loss.
    pub fn response(sample_id: u64, query_id: u64, tokens: Vec<u32>) -> Self {
        let mask = vec![true; tokens.len()];
        Self {
            sample_id,
            query_id,
            tokens,
            mask,
        }
    }

    pub fn loss_tokens(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// `−log softmax(logits)[target]`.
pub fn token_nll(logits: &[f64], target: usize) -> Result<f64> {
    let lp = log_softmax(logits)?;
    lp.get(target)
        .map(|v| -v)
        .ok_or_else(|| invalid(format!("target {target} outside {} logits", logits.len())))
}

/// Per-token losses `L_i = −log p(x_i | x_<i)` at masked positions, in order.
pub fn ntp_loss(policy: &ToyPolicy, seq: &LossSequence) -> Result<Vec<f64>> {
    if seq.mask.len() != seq.tokens.len() {
        return Err(invalid("loss mask length differs from sequence length"));
    }
    if seq.loss_tokens() == 0 {
        return Err(Error::NoLossTokens);
    }
    let lps = policy.token_log_probs(seq.query_id, &seq.tokens)?;
    Ok(lps
        .iter()
        .zip(&seq.mask)
        .filter(|(_, m)| **m)
        .map(|(lp, _)| -lp)
        .collect())
}

/// Normalized token weights `w_i / Σ_j w_j` with `w_i = N^{-1/2}`, where `N`
/// is the loss-token count of the token's sample.
pub fn square_average_weights(per_token: &[(u64, f64)], sample_sizes: &HashMap<u64, usize>) -> Result<Vec<f64>> {
    let raw: Vec<f64> = per_token
        .iter()
        .map(|(id, _)| match sample_sizes.get(id) {
            Some(&n) if n >= 1 => Ok(1.0 / (n as f64).sqrt()),
            _ => Err(invalid(format!("sample {id} has no loss-token count"))),
        })
        .collect::<Result<_>>()?;
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return Err(Error::NoLossTokens);
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// `Σ_i (w_i / Σ_j w_j) · L_i` over every loss token in the batch.
pub fn square_average_reweight(per_token: &[(u64, f64)], sample_sizes: &HashMap<u64, usize>) -> Result<f64> {
    let weights = square_average_weights(per_token, sample_sizes)?;
    Ok(weights.iter().zip(per_token).map(|(w, (_, l))| w * l).sum())
}

fn batch_tokens(policy: &ToyPolicy, batch: &[LossSequence]) -> Result<(Vec<(u64, f64)>, HashMap<u64, usize>)> {
    let mut per_token = Vec::new();
    let mut sizes = HashMap::new();
    for seq in batch {
        let losses = ntp_loss(policy, seq)?;
        *sizes.entry(seq.sample_id).or_insert(0) += losses.len();
        per_token.extend(losses.into_iter().map(|l| (seq.sample_id, l)));
    }
    Ok((per_token, sizes))
}

/// Square-averaged NTP loss over a batch.
pub fn ntp_batch_loss(policy: &ToyPolicy, batch: &[LossSequence]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::NoLossTokens);
    }
    let (per_token, sizes) = batch_tokens(policy, batch)?;
    square_average_reweight(&per_token, &sizes)
}

pub fn ntp_batch_grad(policy: &ToyPolicy, batch: &[LossSequence]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::NoLossTokens);
    }
    let (per_token, sizes) = batch_tokens(policy, batch)?;
    let weights = square_average_weights(&per_token, &sizes)?;
    let mut grad = vec![0.0; policy.params().len()];
    let mut w = weights.iter();
    for seq in batch {
        let scales: Vec<f64> = seq
            .mask
            .iter()
            .map(|&m| if m { -*w.next().expect("one weight per loss token") } else { 0.0 })
            .collect();
        policy.accumulate_token_grads(&mut grad, seq.query_id, &seq.tokens, &scales)?;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_policy_costs_ln_v() {
        let p = ToyPolicy::uniform(4, 3, 1).unwrap();
        let seq = LossSequence::response(0, 0, vec![1, 2, 3]);
        for l in ntp_loss(&p, &seq).unwrap() {
            assert!((l - 4f64.ln()).abs() < 1e-15);
            assert!((l - 1.386294).abs() < 1e-6);
        }
    }

    #[test]
    fn logit_level_examples() {
        assert!((token_nll(&[3f64.ln(), 0.0], 0).unwrap() - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((token_nll(&[3f64.ln(), 0.0], 0).unwrap() - 0.287682).abs() < 1e-6);
        // p(target) = 1 − 1e-12
        let confident = [(1.0f64 - 1e-12).ln(), 1e-12f64.ln()];
        assert!(token_nll(&confident, 0).unwrap() < 1e-11);
    }

    #[test]
    fn mask_selects_response_tokens() {
        let p = ToyPolicy::random(5, 3, 1.0, 4).unwrap();
        let seq = LossSequence {
            sample_id: 0,
            query_id: 2,
            tokens: vec![0, 1, 2, 3],
            mask: vec![false, false, true, true],
        };
        let all = p.token_log_probs(2, &seq.tokens).unwrap();
        let l = ntp_loss(&p, &seq).unwrap();
        assert_eq!(l, vec![-all[2], -all[3]]);
        let empty = LossSequence {
            mask: vec![false; 4],
            ..seq
        };
        assert_eq!(ntp_loss(&p, &empty), Err(Error::NoLossTokens));
    }

    #[test]
    fn square_average_examples() {
        let sizes: HashMap<u64, usize> = [(0, 4), (1, 16)].into_iter().collect();
        let single: HashMap<u64, usize> = [(0, 7)].into_iter().collect();
        let c: Vec<(u64, f64)> = (0..7).map(|_| (0, 0.37)).collect();
        assert!((square_average_reweight(&c, &single).unwrap() - 0.37).abs() < 1e-15);

        let ones: Vec<(u64, f64)> = (0..4).map(|_| (0, 1.0)).chain((0..16).map(|_| (1, 1.0))).collect();
        assert!((square_average_reweight(&ones, &sizes).unwrap() - 1.0).abs() < 1e-15);

        let split: Vec<(u64, f64)> = (0..4).map(|_| (0, 1.0)).chain((0..16).map(|_| (1, 0.0))).collect();
        // Σw = 4·0.5 + 16·0.25 = 6; the N=4 tokens contribute 4·0.5/6.
        assert!((square_average_reweight(&split, &sizes).unwrap() - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn missing_sample_size_is_error() {
        let sizes: HashMap<u64, usize> = HashMap::new();
        assert!(square_average_reweight(&[(3, 1.0)], &sizes).is_err());
    }
}
