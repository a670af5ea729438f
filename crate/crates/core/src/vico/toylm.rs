use std::sync::Arc;

use crate::error::{shape, Result};
use crate::head::LinearHead;
use crate::rng::Rng;
use crate::types::{PatchGrid, TokenDistribution};

/// Shape of a [`ToyLm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyLmConfig {
    pub vocab: usize,
    pub embed_dim: usize,
    /// Width of the pooled visual context.
    pub visual_dim: usize,
    /// Width of the incoming visual tokens (projector output).
    pub hidden_dim: usize,
    /// Pre-activation gain of the visual adapter.
    pub adapter_gain: f64,
    /// Std of the initial head weights.
    pub head_scale: f64,
}

impl Default for ToyLmConfig {
    fn default() -> Self {
        Self {
            vocab: 16,
            embed_dim: 8,
            visual_dim: 8,
            hidden_dim: 32,
            adapter_gain: 3.0,
            head_scale: 1.0,
        }
    }
}

/// Frozen parts shared by a reference model and every policy derived from it.
#[derive(Debug)]
struct Backbone {
    config: ToyLmConfig,
    /// `(vocab + 1) × embed_dim`; the last row is the start token.
    embed: Vec<f64>,
    /// `visual_dim × hidden_dim`.
    adapter: Vec<f64>,
}

/// Linear-softmax language model conditioned on visual tokens.
///
/// `π(y_t | y_<t, I) = softmax(W · [embed(y_{t−1}); v(I)])` where `v(I)` is the
/// per-tile mean of `tanh(A · token)`, averaged over tiles. Only `W` is
/// trainable; `embed` and `A` are frozen and shared between clones.
#[derive(Debug, Clone)]
pub struct ToyLm {
    backbone: Arc<Backbone>,
    head: LinearHead,
}

impl ToyLm {
    pub fn new(config: ToyLmConfig, seed: u64) -> Result<Self> {
        let root = Rng::new(seed);
        let embed = root.fork(1).normal_vec((config.vocab + 1) * config.embed_dim, 1.0);
        let adapter = root.fork(2).normal_vec(
            config.visual_dim * config.hidden_dim,
            config.adapter_gain / (config.hidden_dim as f64).sqrt(),
        );
        let head = LinearHead::random(
            config.vocab,
            config.embed_dim + config.visual_dim,
            config.head_scale,
            &mut root.fork(3),
        )?;
        Ok(Self {
            backbone: Arc::new(Backbone {
                config,
                embed,
                adapter,
            }),
            head,
        })
    }

    pub fn config(&self) -> &ToyLmConfig {
        &self.backbone.config
    }

    pub fn vocab(&self) -> usize {
        self.backbone.config.vocab
    }

    pub fn head(&self) -> &LinearHead {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut LinearHead {
        &mut self.head
    }

    /// Pooled visual context for a request's tiles.
    pub fn visual_context(&self, tiles: &[PatchGrid]) -> Result<Vec<f64>> {
        let cfg = &self.backbone.config;
        let mut out = vec![0.0; cfg.visual_dim];
        if tiles.is_empty() {
            return Ok(out);
        }
        for tile in tiles {
            if tile.dim() != cfg.hidden_dim {
                return Err(shape(format!(
                    "visual token width {} does not match model hidden width {}",
                    tile.dim(),
                    cfg.hidden_dim
                )));
            }
            let mut acc = vec![0.0; cfg.visual_dim];
            for tok in tile.tokens() {
                for (a, row) in acc.iter_mut().zip(self.backbone.adapter.chunks_exact(cfg.hidden_dim)) {
                    *a += crate::math::dot(row, tok).tanh();
                }
            }
            let n = tile.token_count() as f64;
            for (o, a) in out.iter_mut().zip(acc) {
                *o += a / n;
            }
        }
        let t = tiles.len() as f64;
        out.iter_mut().for_each(|o| *o /= t);
        Ok(out)
    }

    /// Head input for predicting the token after `prev` (`None` = start).
    pub fn context(&self, prev: Option<usize>, visual: &[f64]) -> Vec<f64> {
        let cfg = &self.backbone.config;
        let row = prev.unwrap_or(cfg.vocab);
        let mut ctx = Vec::with_capacity(cfg.embed_dim + cfg.visual_dim);
        ctx.extend_from_slice(&self.backbone.embed[row * cfg.embed_dim..(row + 1) * cfg.embed_dim]);
        ctx.extend_from_slice(visual);
        ctx
    }

    /// Next-token distributions along a teacher-forced response.
    pub fn step_distributions(&self, response: &[usize], visual: &[f64]) -> Result<Vec<TokenDistribution>> {
        let mut prev = None;
        let mut out = Vec::with_capacity(response.len());
        for &tok in response {
            if tok >= self.vocab() {
                return Err(shape(format!("token {tok} outside vocabulary {}", self.vocab())));
            }
            out.push(self.head.distribution(&self.context(prev, visual))?);
            prev = Some(tok);
        }
        Ok(out)
    }

    /// Greedy decode of `len` tokens.
    pub fn greedy(&self, visual: &[f64], len: usize) -> Result<Vec<usize>> {
        let mut prev = None;
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let tok = self.head.distribution(&self.context(prev, visual))?.argmax();
            out.push(tok);
            prev = Some(tok);
        }
        Ok(out)
    }

    /// Ancestral sample of `len` tokens.
    pub fn sample(&self, visual: &[f64], len: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        let mut prev = None;
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let dist = self.head.distribution(&self.context(prev, visual))?;
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut tok = dist.len() - 1;
            for (i, p) in dist.probs().iter().enumerate() {
                acc += p;
                if u < acc {
                    tok = i;
                    break;
                }
            }
            out.push(tok);
            prev = Some(tok);
        }
        Ok(out)
    }

    pub fn same_backbone(&self, other: &ToyLm) -> bool {
        Arc::ptr_eq(&self.backbone, &other.backbone)
    }
}
