//! Image → tiles → patch features → router → pixel shuffle → projector.

mod encoder;
mod projector;
mod router;
mod shuffle;
mod tiling;

pub use encoder::{encode_tile, PatchEncoder, TOKENS_PER_SIDE};
pub use projector::{hidden_dim, project};
pub use router::{decide_rate, fixed_rate_tile, route_tile, RoutedTile, RouterParams};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};
pub use tiling::{resize_bilinear, select_grid, tile_image, TileSet};

use crate::error::Result;
use crate::rng::Rng;
use crate::types::{CompressionRate, ImageTensor, PatchGrid};

/// How a tile's compression rate is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum RatePolicy {
    Fixed(CompressionRate),
    Routed { params: RouterParams, threshold: f64 },
}

/// Language-ready features for one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct TileFeatures {
    pub rate: CompressionRate,
    pub router_score: f64,
    pub features: PatchGrid,
}

/// The full vision-side model: tiling parameters, encoder and projector.
#[derive(Debug, Clone)]
pub struct VisionModel {
    encoder: PatchEncoder,
    max_tiles: usize,
}

impl VisionModel {
    pub fn new(tile_size: usize, max_tiles: usize, dim: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            encoder: PatchEncoder::new(tile_size, dim, &Rng::new(seed))?,
            max_tiles,
        })
    }

    pub fn tile_size(&self) -> usize {
        self.encoder.tile_size()
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn hidden_dim(&self) -> usize {
        hidden_dim(self.encoder.dim())
    }

    pub fn max_tiles(&self) -> usize {
        self.max_tiles
    }

    pub fn tile(&self, img: &ImageTensor) -> Result<TileSet> {
        tile_image(img, self.tile_size(), self.max_tiles)
    }

    pub fn encode(&self, tile: &ImageTensor) -> Result<PatchGrid> {
        self.encoder.encode(tile)
    }

    /// Encode, pick a rate, shuffle and project one tile.
    pub fn process_tile(&self, tile: &ImageTensor, policy: &RatePolicy) -> Result<TileFeatures> {
        let grid = self.encode(tile)?;
        self.compress(&grid, policy)
    }

    pub fn compress(&self, grid: &PatchGrid, policy: &RatePolicy) -> Result<TileFeatures> {
        let routed = match policy {
            RatePolicy::Fixed(rate) => fixed_rate_tile(grid, *rate)?,
            RatePolicy::Routed { params, threshold } => route_tile(grid, params, *threshold)?,
        };
        Ok(TileFeatures {
            rate: routed.rate,
            router_score: routed.router_score,
            features: project(routed.rate, &routed.tokens)?,
        })
    }
}
