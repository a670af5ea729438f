use crate::error::{shape, Result};
use crate::head::LinearHead;
use crate::rng::{mix64, Rng};

/// Deterministic context features for `(query, previous token)`.
///
/// Both parts are seeded Gaussian embeddings derived on demand, so a policy
/// needs no table and any token id is valid context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Featurizer {
    pub dim: usize,
    pub seed: u64,
}

impl Featurizer {
    pub fn context(&self, query_id: u64, prev: Option<u32>) -> Vec<f64> {
        let token_key = prev.map_or(u64::MAX, u64::from);
        let mut tok = Rng::new(mix64(self.seed ^ mix64(token_key)));
        let mut query = Rng::new(mix64(self.seed.rotate_left(17) ^ mix64(query_id)));
        (0..self.dim).map(|_| tok.normal() + 0.5 * query.normal()).collect()
    }
}

/// Linear-softmax policy over token sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    featurizer: Featurizer,
    head: LinearHead,
}

impl ToyPolicy {
    pub fn new(featurizer: Featurizer, head: LinearHead) -> Result<Self> {
        if head.dim() != featurizer.dim {
            return Err(shape(format!(
                "head dim {} does not match featurizer dim {}",
                head.dim(),
                featurizer.dim
            )));
        }
        Ok(Self { featurizer, head })
    }

    pub fn random(vocab: usize, dim: usize, scale: f64, seed: u64) -> Result<Self> {
        let rng = Rng::new(seed);
        Self::new(
            Featurizer { dim, seed: mix64(seed) },
            LinearHead::random(vocab, dim, scale, &mut rng.fork(1))?,
        )
    }

    /// A policy with zero weights: uniform over the vocabulary.
    pub fn uniform(vocab: usize, dim: usize, seed: u64) -> Result<Self> {
        Self::new(Featurizer { dim, seed }, LinearHead::zeros(vocab, dim)?)
    }

    pub fn vocab(&self) -> usize {
        self.head.vocab()
    }

    pub fn featurizer(&self) -> Featurizer {
        self.featurizer
    }

    pub fn head(&self) -> &LinearHead {
        &self.head
    }

    pub fn params(&self) -> &[f64] {
        self.head.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.head.params_mut()
    }

    pub fn with_params(&self, params: &[f64]) -> Self {
        let mut out = self.clone();
        out.params_mut().copy_from_slice(params);
        out
    }

    fn check_token(&self, tok: u32) -> Result<usize> {
        let t = tok as usize;
        if t >= self.vocab() {
            return Err(shape(format!("token {tok} outside vocabulary {}", self.vocab())));
        }
        Ok(t)
    }

    /// `log π(y_t | x, y_<t)` for every position of `tokens`.
    pub fn token_log_probs(&self, query_id: u64, tokens: &[u32]) -> Result<Vec<f64>> {
        let mut prev = None;
        tokens
            .iter()
            .map(|&tok| {
                let t = self.check_token(tok)?;
                let lp = self.head.log_prob(&self.featurizer.context(query_id, prev), t)?;
                prev = Some(tok);
                Ok(lp)
            })
            .collect()
    }

    pub fn sequence_log_prob(&self, query_id: u64, tokens: &[u32]) -> Result<f64> {
        Ok(self.token_log_probs(query_id, tokens)?.iter().sum())
    }

    /// `grad += Σ_t scales[t] · ∇ log π(y_t | x, y_<t)`.
    pub fn accumulate_token_grads(&self, grad: &mut [f64], query_id: u64, tokens: &[u32], scales: &[f64]) -> Result<()> {
        let mut prev = None;
        for (&tok, &scale) in tokens.iter().zip(scales) {
            let t = self.check_token(tok)?;
            if scale != 0.0 {
                let ctx = self.featurizer.context(query_id, prev);
                self.head.accumulate_log_prob_grad(grad, &ctx, t, scale)?;
            }
            prev = Some(tok);
        }
        Ok(())
    }

    /// `grad += scale · ∇ log π(tokens | x)`.
    pub fn accumulate_sequence_grad(&self, grad: &mut [f64], query_id: u64, tokens: &[u32], scale: f64) -> Result<()> {
        self.accumulate_token_grads(grad, query_id, tokens, &vec![scale; tokens.len()])
    }

    /// Draws a response of `len` tokens.
    pub fn sample(&self, query_id: u64, len: usize, rng: &mut Rng) -> Result<Vec<u32>> {
        let mut out = Vec::with_capacity(len);
        let mut prev = None;
        for _ in 0..len {
            let dist = self.head.distribution(&self.featurizer.context(query_id, prev))?;
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut pick = dist.len() - 1;
            for (i, p) in dist.probs().iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            out.push(pick as u32);
            prev = Some(pick as u32);
        }
        Ok(out)
    }
}
