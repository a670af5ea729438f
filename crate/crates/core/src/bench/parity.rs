//! Accuracy parity of the routed deployment on a scored toy task.
//!
//! The task: for each synthetic image, reproduce the reference model's greedy
//! answer on the full 1/4 view. Both deployments serve the consistency-trained
//! policy; `dvd` keeps every tile at 1/4, `dvd_vir` lets the fitted router
//! pick per tile. Requests travel through the real servers over loopback.

use std::sync::Arc;

use crate::error::Result;
use crate::rng::Rng;
use crate::serving::{run_pipeline, ComputeProfile, DeployOptions, OutputHead, Request, ServingModel, Topology};
use crate::synth::synth_image;
use crate::transport::{FeatureFrame, ResponseStatus};
use crate::types::CompressionRate;
use crate::vico::{fit_flash_router, FlashArtifacts, FlashConfig};
use crate::vision::{RatePolicy, VisionModel};

#[derive(Debug, Clone)]
pub struct ParityConfig {
    pub seed: u64,
    pub requests: usize,
    /// Tile grid of each image.
    pub rows: usize,
    pub cols: usize,
    pub detail_prob: f64,
    pub decode_len: u32,
    pub threshold: f64,
    pub flash: FlashConfig,
}

impl Default for ParityConfig {
    fn default() -> Self {
        Self {
            seed: 17,
            requests: 48,
            rows: 1,
            cols: 2,
            detail_prob: 0.5,
            decode_len: 8,
            threshold: 0.5,
            flash: FlashConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParityReport {
    /// Mean per-position agreement with the labels.
    pub score_dvd: f64,
    pub score_vir: f64,
    pub mean_tokens_dvd: f64,
    pub mean_tokens_vir: f64,
    pub router_train_accuracy: f64,
    pub failures: usize,
}

impl ParityReport {
    pub fn retention(&self) -> f64 {
        if self.score_dvd == 0.0 {
            return if self.score_vir == 0.0 { 1.0 } else { f64::INFINITY };
        }
        self.score_vir / self.score_dvd
    }

    pub fn token_reduction(&self) -> f64 {
        1.0 - self.mean_tokens_vir / self.mean_tokens_dvd
    }
}

fn agreement(tokens: &[u32], label: &[usize]) -> f64 {
    if label.is_empty() {
        return 0.0;
    }
    let hits = tokens.iter().zip(label).filter(|(t, l)| **t as usize == **l).count();
    hits as f64 / label.len() as f64
}

/// Labels: the reference model's greedy answer on BF16-rounded 1/4 features,
/// the same view the language server sees.
fn label(art: &FlashArtifacts, vision: &VisionModel, request: &Request, len: usize) -> Result<Vec<usize>> {
    let tiles = vision.tile(&request.image)?;
    let mut grids = Vec::with_capacity(tiles.len());
    for tile in &tiles.tiles {
        let tf = vision.process_tile(tile, &RatePolicy::Fixed(CompressionRate::Quarter))?;
        let frame = FeatureFrame::from_grid(0, 0, 1, tf.rate, &tf.features)
            .map_err(|e| crate::error::invalid(e.to_string()))?;
        grids.push(frame.to_grid().map_err(|e| crate::error::invalid(e.to_string()))?);
    }
    art.reference.greedy(&art.reference.visual_context(&grids)?, len)
}

pub fn parity_requests(config: &ParityConfig, tile_size: usize) -> Vec<Request> {
    let root = Rng::new(config.seed);
    (0..config.requests as u64)
        .map(|id| {
            let mut rng = root.fork(id);
            Request {
                request_id: id,
                image: synth_image(config.rows, config.cols, tile_size, config.detail_prob, &mut rng).to_tensor(),
                prompt: vec![1],
                decode_len: config.decode_len,
                arrival_ns: 0,
            }
        })
        .collect()
}

pub fn flash_parity(vision: &VisionModel, config: &ParityConfig) -> Result<ParityReport> {
    let art = fit_flash_router(vision, &config.flash)?;
    let requests = parity_requests(config, vision.tile_size());
    let labels = requests
        .iter()
        .map(|r| label(&art, vision, r, config.decode_len as usize))
        .collect::<Result<Vec<_>>>()?;
    let model = Arc::new(ServingModel::new(vision.clone(), OutputHead::ToyLm(Arc::new(art.policy.clone()))));
    let profile = ComputeProfile::light();
    let dvd = run_pipeline(
        &requests,
        Topology::Dvd,
        model.clone(),
        &DeployOptions::new(profile, RatePolicy::Fixed(CompressionRate::Quarter)),
    )?;
    let routed = RatePolicy::Routed {
        params: art.router.clone(),
        threshold: config.threshold,
    };
    let vir = run_pipeline(&requests, Topology::DvdVir, model, &DeployOptions::new(profile, routed))?;

    let n = requests.len().max(1) as f64;
    let score = |run: &crate::serving::PipelineRun| {
        run.responses
            .iter()
            .zip(&labels)
            .map(|(r, l)| agreement(&r.tokens, l))
            .sum::<f64>()
            / n
    };
    let tokens = |run: &crate::serving::PipelineRun| {
        run.responses.iter().map(|r| f64::from(r.visual_tokens)).sum::<f64>() / n
    };
    let failures = dvd
        .responses
        .iter()
        .chain(&vir.responses)
        .filter(|r| r.status != ResponseStatus::Ok)
        .count();
    Ok(ParityReport {
        score_dvd: score(&dvd),
        score_vir: score(&vir),
        mean_tokens_dvd: tokens(&dvd),
        mean_tokens_vir: tokens(&vir),
        router_train_accuracy: art.train_accuracy,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agreement_counts_positions() {
        assert_eq!(agreement(&[1, 2, 3, 4], &[1, 0, 3, 0]), 0.5);
        assert_eq!(agreement(&[], &[]), 0.0);
    }

    #[test]
    fn report_ratios() {
        let r = ParityReport {
            score_dvd: 0.8,
            score_vir: 0.8,
            mean_tokens_dvd: 512.0,
            mean_tokens_vir: 320.0,
            router_train_accuracy: 1.0,
            failures: 0,
        };
        assert_eq!(r.retention(), 1.0);
        assert!((r.token_reduction() - 0.375).abs() < 1e-12);
    }
}
