use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::types::CompressionRate;

/// Smallest 1/4-rate loss accepted as a ratio denominator.
pub const RATIO_EPSILON: f64 = 1e-8;
pub const DEFAULT_WINDOW_CAPACITY: usize = 4096;
pub const DEFAULT_PERCENTILE: f64 = 50.0;

/// Relative loss increase from compressing a tile: `loss_16 / loss_4`.
pub fn loss_ratio(loss_16: f64, loss_4: f64) -> Result<f64> {
    if !(loss_16 >= 0.0) || !loss_16.is_finite() || !loss_4.is_finite() {
        return Err(invalid(format!("losses must be finite and non-negative ({loss_16}, {loss_4})")));
    }
    if loss_4 <= RATIO_EPSILON {
        return Err(Error::DegenerateDenominator {
            value: loss_4,
            epsilon: RATIO_EPSILON,
        });
    }
    Ok(loss_16 / loss_4)
}

/// Router target: 1 keeps the tile at 1/4, 0 compresses it to 1/16.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum RouterLabel {
    Compress,
    Keep,
}

impl RouterLabel {
    pub fn value(self) -> u8 {
        match self {
            RouterLabel::Compress => 0,
            RouterLabel::Keep => 1,
        }
    }

    pub fn rate(self) -> CompressionRate {
        match self {
            RouterLabel::Compress => CompressionRate::Sixteenth,
            RouterLabel::Keep => CompressionRate::Quarter,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }
}

impl From<RouterLabel> for u8 {
    fn from(l: RouterLabel) -> u8 {
        l.value()
    }
}

impl TryFrom<u8> for RouterLabel {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(RouterLabel::Compress),
            1 => Ok(RouterLabel::Keep),
            other => Err(format!("router label must be 0 or 1, got {other}")),
        }
    }
}

pub fn assign_label(ratio: f64, tau: f64) -> RouterLabel {
    if ratio >= tau {
        RouterLabel::Keep
    } else {
        RouterLabel::Compress
    }
}

/// Sliding window of recent loss ratios with a percentile threshold.
#[derive(Debug, Clone)]
pub struct LossRatioWindow {
    buffer: VecDeque<f64>,
    capacity: usize,
    percentile: f64,
}

impl Default for LossRatioWindow {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW_CAPACITY, DEFAULT_PERCENTILE).expect("defaults are valid")
    }
}

impl LossRatioWindow {
    pub fn new(capacity: usize, percentile: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("window capacity must be positive".into()));
        }
        if !(percentile > 0.0 && percentile <= 100.0) {
            return Err(Error::InvalidConfig(format!("percentile {percentile} outside (0, 100]")));
        }
        Ok(Self {
            buffer: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
            percentile,
        })
    }

    pub fn push(&mut self, ratio: f64) -> Result<()> {
        if !(ratio >= 0.0) || !ratio.is_finite() {
            return Err(invalid(format!("loss ratio {ratio} must be finite and non-negative")));
        }
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(ratio);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn percentile(&self) -> f64 {
        self.percentile
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.buffer.iter().copied()
    }

    /// Snapshot of τ; see [`percentile_threshold`].
    pub fn threshold(&self) -> Result<f64> {
        percentile_threshold(self)
    }

    /// Pushes `ratio`, then labels it against the updated threshold.
    pub fn observe(&mut self, ratio: f64) -> Result<(RouterLabel, f64)> {
        self.push(ratio)?;
        let tau = self.threshold()?;
        Ok((assign_label(ratio, tau), tau))
    }
}

/// Nearest-rank percentile: the element at `ceil(k/100 · n) − 1` after sorting.
pub fn percentile_threshold(window: &LossRatioWindow) -> Result<f64> {
    nearest_rank(&window.buffer.iter().copied().collect::<Vec<_>>(), window.percentile)
}

pub fn nearest_rank(values: &[f64], percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (percentile / 100.0 * n as f64).ceil() as usize;
    Ok(sorted[rank.saturating_sub(1).min(n - 1)])
}
