//! Linear-softmax head: `π(· | ctx) = softmax(W · ctx)`.
//!
//! Every toy policy in the crate is one of these over some context featurizer,
//! which keeps all gradients closed-form.

use crate::error::{shape, Result};
use crate::math;
use crate::rng::Rng;
use crate::types::TokenDistribution;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    vocab: usize,
    dim: usize,
    /// Row-major `vocab × dim`.
    weights: Vec<f64>,
}

impl LinearHead {
    pub fn new(vocab: usize, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if vocab < 2 || dim == 0 {
            return Err(shape(format!("head needs vocab ≥ 2 and dim ≥ 1 (got {vocab}, {dim})")));
        }
        if weights.len() != vocab * dim {
            return Err(shape(format!(
                "head weights: expected {} values, got {}",
                vocab * dim,
                weights.len()
            )));
        }
        Ok(Self { vocab, dim, weights })
    }

    pub fn zeros(vocab: usize, dim: usize) -> Result<Self> {
        Self::new(vocab, dim, vec![0.0; vocab * dim])
    }

    pub fn random(vocab: usize, dim: usize, scale: f64, rng: &mut Rng) -> Result<Self> {
        Self::new(vocab, dim, rng.normal_vec(vocab * dim, scale))
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.weights
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn check_ctx(&self, ctx: &[f64]) -> Result<()> {
        if ctx.len() != self.dim {
            return Err(shape(format!(
                "context width {} does not match head dim {}",
                ctx.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn logits(&self, ctx: &[f64]) -> Result<Vec<f64>> {
        self.check_ctx(ctx)?;
        Ok(self
            .weights
            .chunks_exact(self.dim)
            .map(|row| math::dot(row, ctx))
            .collect())
    }

    pub fn distribution(&self, ctx: &[f64]) -> Result<TokenDistribution> {
        math::softmax(&self.logits(ctx)?)
    }

    pub fn log_probs(&self, ctx: &[f64]) -> Result<Vec<f64>> {
        math::log_softmax(&self.logits(ctx)?)
    }

    pub fn log_prob(&self, ctx: &[f64], target: usize) -> Result<f64> {
        if target >= self.vocab {
            return Err(shape(format!("token {target} outside vocabulary {}", self.vocab)));
        }
        Ok(self.log_probs(ctx)?[target])
    }

    /// `grad += scale · ∂ log π(target | ctx) / ∂W`, i.e. `scale · (e_target − π) ctxᵀ`.
    pub fn accumulate_log_prob_grad(
        &self,
        grad: &mut [f64],
        ctx: &[f64],
        target: usize,
        scale: f64,
    ) -> Result<()> {
        let probs = self.distribution(ctx)?;
        let mut dlogits: Vec<f64> = probs.probs().iter().map(|p| -p * scale).collect();
        dlogits[target] += scale;
        self.accumulate_logit_grad(grad, ctx, &dlogits);
        Ok(())
    }

    /// `grad += dlogits ⊗ ctx`.
    pub fn accumulate_logit_grad(&self, grad: &mut [f64], ctx: &[f64], dlogits: &[f64]) {
        for (row, &g) in grad.chunks_exact_mut(self.dim).zip(dlogits) {
            if g == 0.0 {
                continue;
            }
            for (w, c) in row.iter_mut().zip(ctx) {
                *w += g * c;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_head_is_uniform() {
        let head = LinearHead::zeros(4, 3).unwrap();
        let lp = head.log_prob(&[1.0, -2.0, 0.5], 2).unwrap();
        assert!((lp + 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn shape_checks() {
        let head = LinearHead::zeros(4, 3).unwrap();
        assert!(head.logits(&[1.0]).is_err());
        assert!(head.log_prob(&[0.0; 3], 4).is_err());
        assert!(LinearHead::new(1, 3, vec![0.0; 3]).is_err());
    }

    #[test]
    fn log_prob_grad_matches_central_difference() {
        let mut rng = Rng::new(11);
        let head = LinearHead::random(5, 3, 0.7, &mut rng).unwrap();
        let ctx = rng.normal_vec(3, 1.0);
        let mut grad = vec![0.0; 15];
        head.accumulate_log_prob_grad(&mut grad, &ctx, 2, 1.0).unwrap();
        let h = 1e-5;
        for i in 0..15 {
            let mut plus = head.clone();
            plus.params_mut()[i] += h;
            let mut minus = head.clone();
            minus.params_mut()[i] -= h;
            let fd = (plus.log_prob(&ctx, 2).unwrap() - minus.log_prob(&ctx, 2).unwrap()) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-8, "entry {i}: {fd} vs {}", grad[i]);
        }
    }
}
