//! Synthetic images with a known per-tile level of detail.
//!
//! Smooth tiles are a flat colour with a gentle gradient. Detailed tiles look
//! like dense print: every sub-patch cell is either background or carries fine
//! one-pixel strokes. All pixels are multiples of 1/255 so images survive an
//! 8-bit round trip exactly.

use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::types::ImageTensor;
use crate::vision::TOKENS_PER_SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TileKind {
    Smooth,
    Detailed,
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit pixels of one synthetic tile.
pub fn synth_tile_bytes(kind: TileKind, side: usize, rng: &mut Rng) -> Vec<u8> {
    let mut px = vec![0u8; side * side * 3];
    match kind {
        TileKind::Smooth => {
            let base: Vec<f64> = (0..3).map(|_| rng.uniform_range(0.25, 0.75)).collect();
            let gx = rng.uniform_range(-0.08, 0.08);
            let gy = rng.uniform_range(-0.08, 0.08);
            for y in 0..side {
                for x in 0..side {
                    let shade = gx * (x as f64 / side as f64 - 0.5) + gy * (y as f64 / side as f64 - 0.5);
                    for c in 0..3 {
                        px[(y * side + x) * 3 + c] = quantize(base[c] + shade);
                    }
                }
            }
        }
        TileKind::Detailed => {
            let paper: Vec<f64> = (0..3).map(|_| rng.uniform_range(0.6, 0.9)).collect();
            let ink: Vec<f64> = (0..3).map(|_| rng.uniform_range(0.05, 0.3)).collect();
            let cell = (side / TOKENS_PER_SIDE).max(1);
            let cells = side.div_ceil(cell);
            // 0 = blank, 1 = vertical strokes, 2 = horizontal strokes
            let pattern: Vec<u8> = (0..cells * cells)
                .map(|_| if rng.coin(0.5) { 0 } else { 1 + rng.below(2) as u8 })
                .collect();
            for y in 0..side {
                for x in 0..side {
                    let inked = match pattern[(y / cell) * cells + x / cell] {
                        1 => x % 2 == 0,
                        2 => y % 2 == 0,
                        _ => false,
                    };
                    let colour = if inked { &ink } else { &paper };
                    for c in 0..3 {
                        px[(y * side + x) * 3 + c] = quantize(colour[c]);
                    }
                }
            }
        }
    }
    px
}

pub fn synth_tile(kind: TileKind, side: usize, rng: &mut Rng) -> ImageTensor {
    ImageTensor::from_u8(side, side, &synth_tile_bytes(kind, side, rng)).expect("synthetic tile is well formed")
}

/// An image assembled from a `rows × cols` grid of synthetic tiles.
#[derive(Debug, Clone)]
pub struct SynthImage {
    pub height: usize,
    pub width: usize,
    pub bytes: Vec<u8>,
    pub kinds: Vec<TileKind>,
}

impl SynthImage {
    pub fn to_tensor(&self) -> ImageTensor {
        ImageTensor::from_u8(self.height, self.width, &self.bytes).expect("synthetic image is well formed")
    }
}

pub fn synth_image(rows: usize, cols: usize, tile_side: usize, detail_prob: f64, rng: &mut Rng) -> SynthImage {
    let (height, width) = (rows * tile_side, cols * tile_side);
    let mut bytes = vec![0u8; height * width * 3];
    let mut kinds = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let kind = if rng.coin(detail_prob) {
                TileKind::Detailed
            } else {
                TileKind::Smooth
            };
            kinds.push(kind);
            let tile = synth_tile_bytes(kind, tile_side, rng);
            for y in 0..tile_side {
                let dst = ((r * tile_side + y) * width + c * tile_side) * 3;
                bytes[dst..dst + tile_side * 3].copy_from_slice(&tile[y * tile_side * 3..(y + 1) * tile_side * 3]);
            }
        }
    }
    SynthImage {
        height,
        width,
        bytes,
        kinds,
    }
}
