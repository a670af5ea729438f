//! Preference (DPO), quality (BCO) and composite (MPO) losses.

use serde::{Deserialize, Serialize};

use super::ntp::{ntp_batch_grad, ntp_batch_loss, LossSequence};
use super::policy::ToyPolicy;
use crate::error::{invalid, Error, Result};
use crate::math::{log_sigmoid, sigmoid};

pub const DEFAULT_BETA: f64 = 0.1;

/// A chosen/rejected response pair with summed log-probabilities under the
/// policy and the frozen reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub query_id: u64,
    pub chosen: Vec<u32>,
    pub rejected: Vec<u32>,
    pub policy_chosen: f64,
    pub policy_rejected: f64,
    pub ref_chosen: f64,
    pub ref_rejected: f64,
}

impl PreferencePair {
    pub fn validate(&self) -> Result<()> {
        if self.chosen == self.rejected {
            return Err(invalid("chosen and rejected responses are identical"));
        }
        for (name, v) in [
            ("policy_chosen", self.policy_chosen),
            ("policy_rejected", self.policy_rejected),
            ("ref_chosen", self.ref_chosen),
            ("ref_rejected", self.ref_rejected),
        ] {
            if v.is_nan() || v > 0.0 {
                return Err(invalid(format!("{name} = {v} is not a log-probability")));
            }
        }
        Ok(())
    }

    /// Builds a pair with both log-probability sums evaluated on real models.
    pub fn from_models(policy: &ToyPolicy, reference: &ToyPolicy, query_id: u64, chosen: Vec<u32>, rejected: Vec<u32>) -> Result<Self> {
        let pair = Self {
            query_id,
            policy_chosen: policy.sequence_log_prob(query_id, &chosen)?,
            policy_rejected: policy.sequence_log_prob(query_id, &rejected)?,
            ref_chosen: reference.sequence_log_prob(query_id, &chosen)?,
            ref_rejected: reference.sequence_log_prob(query_id, &rejected)?,
            chosen,
            rejected,
        };
        pair.validate()?;
        Ok(pair)
    }

    /// The same pair with policy log-probabilities recomputed under `policy`.
    pub fn rescored(&self, policy: &ToyPolicy) -> Result<Self> {
        Ok(Self {
            policy_chosen: policy.sequence_log_prob(self.query_id, &self.chosen)?,
            policy_rejected: policy.sequence_log_prob(self.query_id, &self.rejected)?,
            ..self.clone()
        })
    }

    /// `(log π_c − log π_ref_c) − (log π_r − log π_ref_r)`.
    pub fn margin(&self) -> f64 {
        (self.policy_chosen - self.ref_chosen) - (self.policy_rejected - self.ref_rejected)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidConfig(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

/// `−log σ(β · margin)`.
pub fn dpo_loss(pair: &PreferencePair, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(-log_sigmoid(beta * pair.margin()))
}

/// A single response for the quality loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcoSample {
    pub query_id: u64,
    pub tokens: Vec<u32>,
    pub policy_logprob: f64,
    pub ref_logprob: f64,
    pub good: bool,
}

impl BcoSample {
    pub fn logratio(&self) -> f64 {
        self.policy_logprob - self.ref_logprob
    }

    /// Chosen response as good, rejected as bad.
    pub fn from_pair(pair: &PreferencePair) -> [BcoSample; 2] {
        [
            BcoSample {
                query_id: pair.query_id,
                tokens: pair.chosen.clone(),
                policy_logprob: pair.policy_chosen,
                ref_logprob: pair.ref_chosen,
                good: true,
            },
            BcoSample {
                query_id: pair.query_id,
                tokens: pair.rejected.clone(),
                policy_logprob: pair.policy_rejected,
                ref_logprob: pair.ref_rejected,
                good: false,
            },
        ]
    }
}

/// Good: `−log σ(β·logratio − δ)`; bad: `−log σ(−(β·logratio − δ))`.
pub fn bco_loss(logratio: f64, good: bool, beta: f64, delta: f64) -> Result<f64> {
    check_beta(beta)?;
    let z = beta * logratio - delta;
    Ok(-log_sigmoid(if good { z } else { -z }))
}

/// Reward shift: batch mean of `β · logratio`.
pub fn bco_delta(samples: &[BcoSample], beta: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("empty quality batch"));
    }
    Ok(samples.iter().map(|s| beta * s.logratio()).sum::<f64>() / samples.len() as f64)
}

/// Mean quality loss; `delta = None` uses the batch mean.
pub fn bco_batch_loss(samples: &[BcoSample], beta: f64, delta: Option<f64>) -> Result<f64> {
    let delta = match delta {
        Some(d) => d,
        None => bco_delta(samples, beta)?,
    };
    let mut total = 0.0;
    for s in samples {
        total += bco_loss(s.logratio(), s.good, beta, delta)?;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpoWeights {
    pub preference: f64,
    pub quality: f64,
    pub generation: f64,
}

impl MpoWeights {
    pub fn new(preference: f64, quality: f64, generation: f64) -> Result<Self> {
        let w = Self {
            preference,
            quality,
            generation,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.preference, self.quality, self.generation];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig(format!("weights must be finite and non-negative: {all:?}")));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidConfig("at least one weight must be positive".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            preference: k * self.preference,
            quality: k * self.quality,
            generation: k * self.generation,
        }
    }
}

impl Default for MpoWeights {
    fn default() -> Self {
        Self {
            preference: 1.0,
            quality: 1.0,
            generation: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpoConfig {
    pub weights: MpoWeights,
    pub beta: f64,
    /// Fixed quality-loss shift; `None` takes the detached batch mean.
    pub delta: Option<f64>,
}

impl Default for MpoConfig {
    fn default() -> Self {
        Self {
            weights: MpoWeights::default(),
            beta: DEFAULT_BETA,
            delta: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpoComponents {
    pub preference: f64,
    pub quality: f64,
    pub generation: f64,
}

impl MpoComponents {
    pub fn combine(&self, weights: &MpoWeights) -> Result<f64> {
        weights.validate()?;
        Ok(weights.preference * self.preference + weights.quality * self.quality + weights.generation * self.generation)
    }
}

fn chosen_sequences(pairs: &[PreferencePair]) -> Vec<LossSequence> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| LossSequence::response(i as u64, p.query_id, p.chosen.clone()))
        .collect()
}

fn rescore_all(policy: &ToyPolicy, pairs: &[PreferencePair]) -> Result<Vec<PreferencePair>> {
    if pairs.is_empty() {
        return Err(invalid("empty preference batch"));
    }
    pairs
        .iter()
        .map(|p| {
            p.validate()?;
            p.rescored(policy)
        })
        .collect()
}

/// Mean DPO, mean BCO (chosen good, rejected bad) and square-averaged NTP on
/// the chosen responses, all under `policy`.
pub fn mpo_components(policy: &ToyPolicy, pairs: &[PreferencePair], config: &MpoConfig) -> Result<MpoComponents> {
    let scored = rescore_all(policy, pairs)?;
    let mut preference = 0.0;
    for p in &scored {
        preference += dpo_loss(p, config.beta)?;
    }
    let quality_samples: Vec<BcoSample> = scored.iter().flat_map(BcoSample::from_pair).collect();
    Ok(MpoComponents {
        preference: preference / scored.len() as f64,
        quality: bco_batch_loss(&quality_samples, config.beta, config.delta)?,
        generation: ntp_batch_loss(policy, &chosen_sequences(&scored))?,
    })
}

pub fn mpo_loss(policy: &ToyPolicy, pairs: &[PreferencePair], config: &MpoConfig) -> Result<f64> {
    mpo_components(policy, pairs, config)?.combine(&config.weights)
}

/// Mean DPO loss and its gradient with respect to the policy parameters.
pub fn dpo_batch_grad(policy: &ToyPolicy, pairs: &[PreferencePair], beta: f64) -> Result<(f64, Vec<f64>)> {
    check_beta(beta)?;
    let scored = rescore_all(policy, pairs)?;
    let n = scored.len() as f64;
    let mut grad = vec![0.0; policy.params().len()];
    let mut loss = 0.0;
    for p in &scored {
        let m = p.margin();
        loss += -log_sigmoid(beta * m);
        // d/dm −log σ(βm) = −β σ(−βm)
        let dm = -beta * sigmoid(-beta * m) / n;
        policy.accumulate_sequence_grad(&mut grad, p.query_id, &p.chosen, dm)?;
        policy.accumulate_sequence_grad(&mut grad, p.query_id, &p.rejected, -dm)?;
    }
    Ok((loss / n, grad))
}

/// Mean BCO loss over the pair-derived samples and its gradient. The shift
/// is treated as a constant.
pub fn bco_batch_grad(policy: &ToyPolicy, pairs: &[PreferencePair], beta: f64, delta: Option<f64>) -> Result<(f64, Vec<f64>)> {
    check_beta(beta)?;
    let scored = rescore_all(policy, pairs)?;
    let samples: Vec<BcoSample> = scored.iter().flat_map(BcoSample::from_pair).collect();
    let delta = match delta {
        Some(d) => d,
        None => bco_delta(&samples, beta)?,
    };
    let n = samples.len() as f64;
    let mut grad = vec![0.0; policy.params().len()];
    let mut loss = 0.0;
    for s in &samples {
        let z = beta * s.logratio() - delta;
        let signed = if s.good { z } else { -z };
        loss += -log_sigmoid(signed);
        // d/dz −log σ(±z) = ∓σ(∓z)
        let dz = if s.good { -sigmoid(-z) } else { sigmoid(z) };
        policy.accumulate_sequence_grad(&mut grad, s.query_id, &s.tokens, beta * dz / n)?;
    }
    Ok((loss / n, grad))
}

pub fn mpo_loss_grad(policy: &ToyPolicy, pairs: &[PreferencePair], config: &MpoConfig) -> Result<(f64, Vec<f64>)> {
    config.weights.validate()?;
    let w = config.weights;
    let (lp, gp) = dpo_batch_grad(policy, pairs, config.beta)?;
    let (lq, gq) = bco_batch_grad(policy, pairs, config.beta, config.delta)?;
    let scored = rescore_all(policy, pairs)?;
    let seqs = chosen_sequences(&scored);
    let lg = ntp_batch_loss(policy, &seqs)?;
    let gg = ntp_batch_grad(policy, &seqs)?;
    let grad = gp
        .iter()
        .zip(&gq)
        .zip(&gg)
        .map(|((p, q), g)| w.preference * p + w.quality * q + w.generation * g)
        .collect();
    Ok((w.preference * lp + w.quality * lq + w.generation * lg, grad))
}
