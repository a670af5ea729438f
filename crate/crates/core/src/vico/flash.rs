//! End-to-end router fitting on synthetic tiles: consistency training of the
//! policy head, per-tile loss ratios, percentile labels and logistic fitting.

use log::debug;

use super::labels::{assign_label, loss_ratio, LossRatioWindow, RouterLabel};
use super::loss::{consistency_train, vico_sample_loss, VicoSample};
use super::toylm::{ToyLm, ToyLmConfig};
use super::train::{router_accuracy, train_router, RouterExample};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::synth::{synth_tile, TileKind};
use crate::types::CompressionRate;
use crate::vision::{RatePolicy, RouterParams, VisionModel};

#[derive(Debug, Clone)]
pub struct FlashConfig {
    pub seed: u64,
    pub lm: ToyLmConfig,
    /// Tiles used for consistency training.
    pub consistency_tiles: usize,
    pub consistency_steps: usize,
    pub consistency_lr: f64,
    /// Tiles used to build the router dataset.
    pub router_tiles: usize,
    pub response_len: usize,
    pub detail_prob: f64,
    pub window_capacity: usize,
    pub percentile: f64,
    pub router_epochs: usize,
    pub router_lr: f64,
}

impl Default for FlashConfig {
    fn default() -> Self {
        Self {
            seed: 2025,
            lm: ToyLmConfig::default(),
            consistency_tiles: 48,
            consistency_steps: 400,
            consistency_lr: 0.5,
            router_tiles: 96,
            response_len: 8,
            detail_prob: 0.5,
            window_capacity: super::labels::DEFAULT_WINDOW_CAPACITY,
            percentile: super::labels::DEFAULT_PERCENTILE,
            router_epochs: 2000,
            router_lr: 2.0,
        }
    }
}

/// One tile prepared for labeling.
#[derive(Debug, Clone)]
pub struct TileItem {
    pub kind: TileKind,
    /// Mean-pooled 1024-token encoder features (router input).
    pub pooled: Vec<f64>,
    pub sample: VicoSample,
}

#[derive(Debug, Clone)]
pub struct FlashArtifacts {
    pub reference: ToyLm,
    pub policy: ToyLm,
    pub router: RouterParams,
    pub examples: Vec<RouterExample>,
    pub kinds: Vec<TileKind>,
    pub ratios: Vec<f64>,
    pub tau: f64,
    pub skipped: usize,
    pub train_accuracy: f64,
}

pub fn prepare_tiles(
    vision: &VisionModel,
    reference: &ToyLm,
    count: usize,
    response_len: usize,
    detail_prob: f64,
    rng: &mut Rng,
) -> Result<Vec<TileItem>> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = if rng.coin(detail_prob) {
            TileKind::Detailed
        } else {
            TileKind::Smooth
        };
        let tile = synth_tile(kind, vision.tile_size(), rng);
        let grid = vision.encode(&tile)?;
        let quarter = vision.compress(&grid, &RatePolicy::Fixed(CompressionRate::Quarter))?.features;
        let sixteenth = vision.compress(&grid, &RatePolicy::Fixed(CompressionRate::Sixteenth))?.features;
        let visual = reference.visual_context(std::slice::from_ref(&quarter))?;
        let response = reference.sample(&visual, response_len, rng)?;
        out.push(TileItem {
            kind,
            pooled: grid.mean_pool(),
            sample: VicoSample {
                response,
                quarter: vec![quarter],
                sixteenth: vec![sixteenth],
            },
        });
    }
    Ok(out)
}

/// Ratios for each tile; tiles hitting the degenerate denominator are skipped.
pub fn tile_ratios(reference: &ToyLm, policy: &ToyLm, items: &[TileItem]) -> Result<Vec<Option<f64>>> {
    items
        .iter()
        .map(|item| {
            let l16 = vico_sample_loss(reference, policy, &item.sample, CompressionRate::Sixteenth)?;
            let l4 = vico_sample_loss(reference, policy, &item.sample, CompressionRate::Quarter)?;
            match loss_ratio(l16, l4) {
                Ok(r) => Ok(Some(r)),
                Err(Error::DegenerateDenominator { value, .. }) => {
                    debug!("skipping tile with 1/4 loss {value:e}");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Labels ratios against the percentile of the filled window.
pub fn label_ratios(ratios: &[f64], window: &mut LossRatioWindow) -> Result<(Vec<RouterLabel>, f64)> {
    for &r in ratios {
        window.push(r)?;
    }
    let tau = window.threshold()?;
    Ok((ratios.iter().map(|&r| assign_label(r, tau)).collect(), tau))
}

pub fn fit_flash_router(vision: &VisionModel, config: &FlashConfig) -> Result<FlashArtifacts> {
    let root = Rng::new(config.seed);
    let reference = ToyLm::new(config.lm, config.seed)?;
    let mut policy = reference.clone();

    let mut rng = root.fork(1);
    let train_items = prepare_tiles(
        vision,
        &reference,
        config.consistency_tiles,
        config.response_len,
        config.detail_prob,
        &mut rng,
    )?;
    let samples: Vec<VicoSample> = train_items.into_iter().map(|i| i.sample).collect();
    consistency_train(
        &reference,
        &mut policy,
        &samples,
        config.consistency_steps,
        config.consistency_lr,
        &mut root.fork(2),
    )?;

    let items = prepare_tiles(
        vision,
        &reference,
        config.router_tiles,
        config.response_len,
        config.detail_prob,
        &mut root.fork(3),
    )?;
    let ratios = tile_ratios(&reference, &policy, &items)?;
    let kept: Vec<(&TileItem, f64)> = items
        .iter()
        .zip(&ratios)
        .filter_map(|(item, r)| r.map(|r| (item, r)))
        .collect();
    let skipped = items.len() - kept.len();
    let values: Vec<f64> = kept.iter().map(|(_, r)| *r).collect();
    let mut window = LossRatioWindow::new(config.window_capacity, config.percentile)?;
    let (labels, tau) = label_ratios(&values, &mut window)?;
    let examples: Vec<RouterExample> = kept
        .iter()
        .zip(&labels)
        .map(|((item, _), label)| RouterExample {
            features: item.pooled.clone(),
            label: *label,
        })
        .collect();
    let router = train_router(&examples, config.router_epochs, config.router_lr)?;
    let train_accuracy = router_accuracy(&router, &examples, 0.5)?;
    Ok(FlashArtifacts {
        reference,
        policy,
        router,
        kinds: kept.iter().map(|(item, _)| item.kind).collect(),
        examples,
        ratios: values,
        tau,
        skipped,
        train_accuracy,
    })
}
