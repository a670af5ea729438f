//! Value types shared across the vision path, the router and the wire layer.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};

/// Row-major `height × width × channels` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width * Self::CHANNELS {
            return Err(shape(format!(
                "image {height}x{width}x{} needs {} values, got {}",
                Self::CHANNELS,
                height * width * Self::CHANNELS,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels: Self::CHANNELS,
            pixels,
        })
    }

    /// Builds an image from 8-bit samples, mapping `k` to `k / 255`.
    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            channels: Self::CHANNELS,
            pixels: vec![0.0; height * width * Self::CHANNELS],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Quantizes back to 8-bit samples (round to nearest).
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Square lattice of `side × side` tokens, each a `dim`-wide feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    side: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PatchGrid {
    pub fn new(side: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if side == 0 || !side.is_power_of_two() {
            return Err(shape(format!("grid side {side} is not a power of two")));
        }
        if dim == 0 {
            return Err(shape("grid feature dim must be positive"));
        }
        if data.len() != side * side * dim {
            return Err(shape(format!(
                "grid {side}x{side}x{dim} needs {} values, got {}",
                side * side * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("grid contains non-finite values"));
        }
        Ok(Self { side, dim, data })
    }

    pub fn zeros(side: usize, dim: usize) -> Result<Self> {
        Self::new(side, dim, vec![0.0; side * side * dim])
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token_count(&self) -> usize {
        self.side * self.side
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn token(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.side + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn tokens(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Mean of all token vectors.
    pub fn mean_pool(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for tok in self.tokens() {
            for (a, v) in acc.iter_mut().zip(tok) {
                *a += v;
            }
        }
        let n = self.token_count() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

/// Visual-token compression rate chosen per tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompressionRate {
    /// 1/4: a 1024-token tile keeps 256 tokens.
    Quarter,
    /// 1/16: a 1024-token tile keeps 64 tokens.
    Sixteenth,
}

impl CompressionRate {
    pub const ALL: [CompressionRate; 2] = [CompressionRate::Quarter, CompressionRate::Sixteenth];

    pub fn as_f64(self) -> f64 {
        match self {
            CompressionRate::Quarter => 0.25,
            CompressionRate::Sixteenth => 0.0625,
        }
    }

    /// Spatial merge factor per axis.
    pub fn factor(self) -> usize {
        match self {
            CompressionRate::Quarter => 2,
            CompressionRate::Sixteenth => 4,
        }
    }

    /// Tokens kept from the 1024-token tile lattice.
    pub fn tokens_per_tile(self) -> usize {
        match self {
            CompressionRate::Quarter => 256,
            CompressionRate::Sixteenth => 64,
        }
    }

    /// One-byte wire code (the denominator of the rate).
    pub fn code(self) -> u8 {
        match self {
            CompressionRate::Quarter => 4,
            CompressionRate::Sixteenth => 16,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            4 => Some(CompressionRate::Quarter),
            16 => Some(CompressionRate::Sixteenth),
            _ => None,
        }
    }
}

impl std::fmt::Display for CompressionRate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CompressionRate::Quarter => f.write_str("1/4"),
            CompressionRate::Sixteenth => f.write_str("1/16"),
        }
    }
}

/// Probability vector over a vocabulary of at least two entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(invalid("distribution needs at least two outcomes"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid("probabilities must be finite and non-negative"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the most probable outcome, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for TokenDistribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}
