use serde::{Deserialize, Serialize};

use super::encoder::TOKENS_PER_SIDE;
use super::shuffle::pixel_shuffle;
use crate::error::{shape, Error, Result};
use crate::math;
use crate::types::{CompressionRate, PatchGrid};

/// Logistic router weights over the mean-pooled tile feature, bias last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterParams {
    weights: Vec<f64>,
}

impl RouterParams {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(shape("router needs at least one feature weight plus a bias"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidInput("router weights must be finite".into()));
        }
        Ok(Self { weights })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim + 1],
        }
    }

    /// A router whose score saturates so every tile takes `rate`.
    pub fn pinned(dim: usize, rate: CompressionRate) -> Self {
        let mut weights = vec![0.0; dim + 1];
        weights[dim] = match rate {
            CompressionRate::Quarter => 40.0,
            CompressionRate::Sixteenth => -40.0,
        };
        Self { weights }
    }

    pub fn dim(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.weights[self.dim()]
    }

    pub fn logit(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.dim() {
            return Err(shape(format!(
                "router expects {} features, got {}",
                self.dim(),
                features.len()
            )));
        }
        Ok(math::dot(&self.weights[..self.dim()], features) + self.bias())
    }

    pub fn score(&self, features: &[f64]) -> Result<f64> {
        Ok(math::sigmoid(self.logit(features)?))
    }
}

/// A tile after routing and compression.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutedTile {
    pub rate: CompressionRate,
    pub tokens: PatchGrid,
    pub router_score: f64,
}

/// Rate from a score: at or above the threshold keeps the higher resolution.
pub fn decide_rate(score: f64, threshold: f64) -> CompressionRate {
    if score >= threshold {
        CompressionRate::Quarter
    } else {
        CompressionRate::Sixteenth
    }
}

/// Scores the uncompressed 1024-token lattice and applies the chosen shuffle.
pub fn route_tile(grid: &PatchGrid, params: &RouterParams, threshold: f64) -> Result<RoutedTile> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "router threshold {threshold} outside (0, 1)"
        )));
    }
    if grid.side() != TOKENS_PER_SIDE {
        return Err(shape(format!(
            "router expects the {TOKENS_PER_SIDE}x{TOKENS_PER_SIDE} lattice, got side {}",
            grid.side()
        )));
    }
    let router_score = params.score(&grid.mean_pool())?;
    let rate = decide_rate(router_score, threshold);
    Ok(RoutedTile {
        rate,
        tokens: pixel_shuffle(grid, rate)?,
        router_score,
    })
}

/// Compresses at a fixed rate without consulting a router.
pub fn fixed_rate_tile(grid: &PatchGrid, rate: CompressionRate) -> Result<RoutedTile> {
    Ok(RoutedTile {
        rate,
        tokens: pixel_shuffle(grid, rate)?,
        router_score: match rate {
            CompressionRate::Quarter => 1.0,
            CompressionRate::Sixteenth => 0.0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn grid(seed: u64) -> PatchGrid {
        let mut r = Rng::new(seed);
        PatchGrid::new(32, 4, r.normal_vec(32 * 32 * 4, 1.0)).unwrap()
    }

    /// Bias chosen so σ(bias) == target for a zero-mean feature direction.
    fn forcing(target: f64) -> RouterParams {
        let mut w = vec![0.0; 5];
        w[4] = (target / (1.0 - target)).ln();
        RouterParams::new(w).unwrap()
    }

    #[test]
    fn zero_router_ties_to_quarter() {
        let t = route_tile(&grid(1), &RouterParams::zeros(4), 0.5).unwrap();
        assert_eq!(t.router_score, 0.5);
        assert_eq!(t.rate, CompressionRate::Quarter);
        assert_eq!(t.tokens.token_count(), 256);
    }

    #[test]
    fn forced_branches() {
        let hi = route_tile(&grid(2), &forcing(0.9), 0.5).unwrap();
        assert!((hi.router_score - 0.9).abs() < 1e-12);
        assert_eq!((hi.rate, hi.tokens.token_count()), (CompressionRate::Quarter, 256));
        let lo = route_tile(&grid(2), &forcing(0.1), 0.5).unwrap();
        assert!((lo.router_score - 0.1).abs() < 1e-12);
        assert_eq!((lo.rate, lo.tokens.token_count()), (CompressionRate::Sixteenth, 64));
    }

    #[test]
    fn dim_mismatch_and_bad_threshold() {
        assert!(route_tile(&grid(3), &RouterParams::zeros(3), 0.5).is_err());
        let err = route_tile(&grid(3), &RouterParams::zeros(4), 1.0).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
        assert!(route_tile(&PatchGrid::zeros(16, 4).unwrap(), &RouterParams::zeros(4), 0.5).is_err());
    }

    #[test]
    fn routing_is_deterministic_and_counts_are_fixed() {
        let mut r = Rng::new(77);
        for seed in 0..20 {
            let params = RouterParams::new(r.normal_vec(5, 3.0)).unwrap();
            let g = grid(seed);
            let a = route_tile(&g, &params, 0.5).unwrap();
            let b = route_tile(&g, &params, 0.5).unwrap();
            assert_eq!(a, b);
            assert!(a.tokens.token_count() == 256 || a.tokens.token_count() == 64);
        }
    }

    #[test]
    fn pinned_router_saturates() {
        let g = grid(4);
        assert_eq!(
            route_tile(&g, &RouterParams::pinned(4, CompressionRate::Quarter), 0.5).unwrap().rate,
            CompressionRate::Quarter
        );
        assert_eq!(
            route_tile(&g, &RouterParams::pinned(4, CompressionRate::Sixteenth), 0.5).unwrap().rate,
            CompressionRate::Sixteenth
        );
    }
}
