//! Group sequence policy optimization: group-normalized advantages,
//! length-normalized sequence ratios and the clipped objective.

use serde::{Deserialize, Serialize};

use super::policy::ToyPolicy;
use crate::error::{invalid, shape, Error, Result};
use crate::math::mean_std;

pub const DEFAULT_CLIP_EPS: f64 = 0.2;
pub const DEFAULT_EPS_STD: f64 = 1e-8;

/// `G` responses sampled for one query, with rewards and per-token
/// log-probabilities under the sampling policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub query_id: u64,
    pub responses: Vec<Vec<u32>>,
    pub rewards: Vec<f64>,
    pub old_logprobs: Vec<Vec<f64>>,
}

impl RolloutGroup {
    pub fn validate(&self) -> Result<()> {
        let g = self.responses.len();
        if g < 2 {
            return Err(invalid(format!("a group needs at least 2 responses, got {g}")));
        }
        if self.rewards.len() != g || self.old_logprobs.len() != g {
            return Err(shape(format!(
                "{g} responses but {} rewards and {} log-prob arrays",
                self.rewards.len(),
                self.old_logprobs.len()
            )));
        }
        if let Some(r) = self.rewards.iter().find(|r| !r.is_finite()) {
            return Err(invalid(format!("non-finite reward {r}")));
        }
        for (i, (resp, lps)) in self.responses.iter().zip(&self.old_logprobs).enumerate() {
            if resp.len() != lps.len() {
                return Err(shape(format!(
                    "response {i} has {} tokens but {} old log-probs",
                    resp.len(),
                    lps.len()
                )));
            }
        }
        Ok(())
    }

    /// Samples `g` responses from `old` and records their log-probabilities.
    pub fn sample(old: &ToyPolicy, query_id: u64, g: usize, len: usize, rewards: Vec<f64>, rng: &mut crate::rng::Rng) -> Result<Self> {
        let mut responses = Vec::with_capacity(g);
        let mut old_logprobs = Vec::with_capacity(g);
        for _ in 0..g {
            let y = old.sample(query_id, len, rng)?;
            old_logprobs.push(old.token_log_probs(query_id, &y)?);
            responses.push(y);
        }
        let group = Self {
            query_id,
            responses,
            rewards,
            old_logprobs,
        };
        group.validate()?;
        Ok(group)
    }
}

/// `Â_i = (r_i − mean) / (std + eps_std)` with the population std; a group
/// with identical rewards yields all zeros.
pub fn gspo_advantages(rewards: &[f64], eps_std: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(invalid("advantages need at least 2 rewards"));
    }
    if !(eps_std >= 0.0) {
        return Err(Error::InvalidConfig(format!("eps_std must be non-negative, got {eps_std}")));
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let (mean, std) = mean_std(rewards);
    Ok(rewards.iter().map(|r| (r - mean) / (std + eps_std)).collect())
}

/// `exp(mean_t(new_t − old_t))`.
pub fn gspo_ratio(new_logprobs: &[f64], old_logprobs: &[f64]) -> Result<f64> {
    if new_logprobs.len() != old_logprobs.len() {
        return Err(shape(format!(
            "{} new log-probs vs {} old",
            new_logprobs.len(),
            old_logprobs.len()
        )));
    }
    if new_logprobs.is_empty() {
        return Err(Error::EmptyResponse);
    }
    let sum: f64 = new_logprobs.iter().zip(old_logprobs).map(|(n, o)| n - o).sum();
    Ok((sum / new_logprobs.len() as f64).exp())
}

/// `min(s·Â, clip(s, 1−ε, 1+ε)·Â)`.
pub fn gspo_contribution(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

/// `∂/∂s` of [`gspo_contribution`]; zero when the clipped branch is selected.
pub fn gspo_contribution_slope(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    if ratio * advantage <= clipped * advantage {
        advantage
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GspoConfig {
    pub clip_eps: f64,
    pub eps_std: f64,
}

impl Default for GspoConfig {
    fn default() -> Self {
        Self {
            clip_eps: DEFAULT_CLIP_EPS,
            eps_std: DEFAULT_EPS_STD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GspoOutput {
    /// The objective `J`, averaged over groups.
    pub objective: f64,
    /// `−J`, for descent.
    pub loss: f64,
    /// Gradient of `loss` with respect to the policy parameters.
    pub grad: Vec<f64>,
    pub ratios: Vec<Vec<f64>>,
    pub advantages: Vec<Vec<f64>>,
}

/// Clipped sequence-level objective over `groups` with no reference penalty.
pub fn gspo_objective(groups: &[RolloutGroup], policy: &ToyPolicy, config: &GspoConfig) -> Result<GspoOutput> {
    if !(config.clip_eps > 0.0 && config.clip_eps < 1.0) {
        return Err(Error::InvalidConfig(format!("clip_eps must lie in (0,1), got {}", config.clip_eps)));
    }
    if groups.is_empty() {
        return Err(invalid("no rollout groups"));
    }
    let mut grad = vec![0.0; policy.params().len()];
    let mut objective = 0.0;
    let mut all_ratios = Vec::with_capacity(groups.len());
    let mut all_adv = Vec::with_capacity(groups.len());
    let n_groups = groups.len() as f64;
    for group in groups {
        group.validate()?;
        let adv = gspo_advantages(&group.rewards, config.eps_std)?;
        let g = group.responses.len() as f64;
        let mut ratios = Vec::with_capacity(group.responses.len());
        let mut group_sum = 0.0;
        for ((y, old), &a) in group.responses.iter().zip(&group.old_logprobs).zip(&adv) {
            let new = policy.token_log_probs(group.query_id, y)?;
            let s = gspo_ratio(&new, old)?;
            group_sum += gspo_contribution(s, a, config.clip_eps);
            let slope = gspo_contribution_slope(s, a, config.clip_eps);
            if slope != 0.0 {
                // ∂s/∂θ = s · mean_t ∇log π(y_t); the loss is −J.
                let scale = -slope * s / (y.len() as f64 * g * n_groups);
                policy.accumulate_sequence_grad(&mut grad, group.query_id, y, scale)?;
            }
            ratios.push(s);
        }
        objective += group_sum / g;
        all_ratios.push(ratios);
        all_adv.push(adv);
    }
    objective /= n_groups;
    Ok(GspoOutput {
        objective,
        loss: -objective,
        grad,
        ratios: all_ratios,
        advantages: all_adv,
    })
}
