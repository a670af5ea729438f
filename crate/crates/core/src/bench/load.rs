//! Open-loop request streams.

use std::time::Duration;

use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::serving::Request;
use crate::synth::synth_image;

pub const TIERS: [u32; 3] = [448, 896, 1344];
/// Side of one synthetic source tile; a tier-`t` image is `t / 448` tiles across.
pub const TIER_TILE: usize = 448;
pub const DEFAULT_PROMPT_LEN: usize = 8;
pub const DEFAULT_DECODE_LEN: u32 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub requests_per_second: f64,
    pub duration: Duration,
    /// Image side in pixels: 448, 896 or 1344.
    pub tier: u32,
    pub decode_len: u32,
    pub seed: u64,
}

impl LoadSpec {
    pub fn new(requests_per_second: f64, duration: Duration, tier: u32, seed: u64) -> Self {
        Self {
            requests_per_second,
            duration,
            tier,
            decode_len: DEFAULT_DECODE_LEN,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.requests_per_second > 0.0 && self.requests_per_second.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "request rate must be positive, got {}",
                self.requests_per_second
            )));
        }
        if !TIERS.contains(&self.tier) {
            return Err(Error::InvalidConfig(format!("tier must be one of {TIERS:?}, got {}", self.tier)));
        }
        if self.decode_len == 0 {
            return Err(Error::InvalidConfig("decode_len must be at least 1".into()));
        }
        Ok(())
    }

    /// Tiles per axis of a tier image.
    pub fn tiles_per_side(&self) -> usize {
        self.tier as usize / TIER_TILE
    }
}

/// A request and its send time relative to the start of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledRequest {
    pub offset: Duration,
    pub request: Request,
}

/// Poisson arrival offsets over `[0, duration)`: exponential gaps at `rate`.
pub fn arrival_offsets(rate: f64, duration: Duration, rng: &mut Rng) -> Result<Vec<Duration>> {
    let gap = Exp::new(rate).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let horizon = duration.as_secs_f64();
    let mut out = Vec::new();
    let mut t = gap.sample(rng);
    while t < horizon {
        out.push(Duration::from_secs_f64(t));
        t += gap.sample(rng);
    }
    Ok(out)
}

/// Open-loop request stream. Arrival times and request contents depend only
/// on the spec.
pub fn generate_load(spec: &LoadSpec) -> Result<Vec<ScheduledRequest>> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let offsets = arrival_offsets(spec.requests_per_second, spec.duration, &mut root.fork(0))?;
    offsets
        .into_iter()
        .enumerate()
        .map(|(i, offset)| {
            Ok(ScheduledRequest {
                offset,
                request: tier_request(spec, i as u64)?,
            })
        })
        .collect()
}

/// Request `id` of the stream described by `spec`, independent of arrivals.
pub fn tier_request(spec: &LoadSpec, id: u64) -> Result<Request> {
    spec.validate()?;
    let side = spec.tiles_per_side();
    let mut content = Rng::new(spec.seed).fork(1 + id);
    let image = synth_image(side, side, TIER_TILE, 0.5, &mut content).to_tensor();
    let prompt = (0..DEFAULT_PROMPT_LEN).map(|_| content.below(32_000) as u32).collect();
    Ok(Request {
        request_id: id,
        image,
        prompt,
        decode_len: spec.decode_len,
        arrival_ns: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let spec = LoadSpec::new(16.0, Duration::from_secs(1), 448, 3);
        let a = generate_load(&spec).unwrap();
        let b = generate_load(&spec).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        assert!(a.windows(2).all(|w| w[0].offset <= w[1].offset));
        let c = generate_load(&LoadSpec { seed: 4, ..spec }).unwrap();
        assert_ne!(a.iter().map(|s| s.offset).collect::<Vec<_>>(), c.iter().map(|s| s.offset).collect::<Vec<_>>());
    }

    #[test]
    fn tier_sets_image_size() {
        let spec = LoadSpec::new(20.0, Duration::from_millis(500), 896, 1);
        for s in generate_load(&spec).unwrap() {
            assert_eq!((s.request.image.height(), s.request.image.width()), (896, 896));
            assert_eq!(s.request.prompt.len(), DEFAULT_PROMPT_LEN);
        }
    }

    #[test]
    fn zero_duration_is_empty() {
        assert!(generate_load(&LoadSpec::new(16.0, Duration::ZERO, 448, 1)).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_load(&LoadSpec::new(0.0, Duration::from_secs(1), 448, 1)).is_err());
        assert!(generate_load(&LoadSpec::new(1.0, Duration::from_secs(1), 500, 1)).is_err());
    }

    #[test]
    fn mean_rate_matches() {
        let n = arrival_offsets(200.0, Duration::from_secs(20), &mut Rng::new(9)).unwrap().len();
        // Poisson(4000): 5 standard deviations is about 316.
        assert!((n as f64 - 4000.0).abs() < 316.0, "{n}");
    }
}
