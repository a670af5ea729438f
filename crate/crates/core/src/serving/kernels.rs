//! Dense multiply-accumulate work and its accounting.

use std::hint::black_box;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One work unit is a `UNIT_DIM × UNIT_DIM` matrix-vector product.
pub const UNIT_DIM: usize = 64;

fn unit_matrix() -> &'static [f64] {
    static M: OnceLock<Vec<f64>> = OnceLock::new();
    M.get_or_init(|| {
        // Scaled so repeated products neither blow up nor vanish.
        (0..UNIT_DIM * UNIT_DIM)
            .map(|k| {
                let (i, j) = (k / UNIT_DIM, k % UNIT_DIM);
                (((i * 31 + j * 17) % 97) as f64 / 97.0 - 0.5) / (UNIT_DIM as f64).sqrt()
            })
            .collect()
    })
}

/// Runs `units` matrix-vector products and returns a value derived from the
/// result so the work cannot be optimized away.
pub fn burn(units: u64) -> f64 {
    let a = unit_matrix();
    let mut x = [0.0f64; UNIT_DIM];
    for (i, v) in x.iter_mut().enumerate() {
        *v = 1.0 + i as f64 / UNIT_DIM as f64;
    }
    let mut y = [0.0f64; UNIT_DIM];
    for _ in 0..units {
        let m = black_box(a);
        for (row, out) in m.chunks_exact(UNIT_DIM).zip(y.iter_mut()) {
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(&x) {
                acc += w * v;
            }
            *out = acc;
        }
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / norm + 0.5;
        }
    }
    black_box(x.iter().sum())
}

/// Abstract work per unit of input, each realized by [`burn`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeProfile {
    pub vision_work_per_tile: u64,
    pub prefill_work_per_token: u64,
    pub decode_work_per_token: u64,
}

impl ComputeProfile {
    pub fn validate(&self) -> Result<()> {
        if self.vision_work_per_tile == 0 || self.prefill_work_per_token == 0 || self.decode_work_per_token == 0 {
            return Err(Error::InvalidConfig(format!("every work count must be positive: {self:?}")));
        }
        Ok(())
    }

    /// The smallest legal profile; for functional tests where timing is irrelevant.
    pub fn light() -> Self {
        Self {
            vision_work_per_tile: 1,
            prefill_work_per_token: 1,
            decode_work_per_token: 1,
        }
    }
}

impl Default for ComputeProfile {
    /// Compute-bound on the language side at every tier: per tile, prefill of
    /// 256 visual tokens outweighs the vision work, and decode adds a fixed
    /// per-request cost on top.
    fn default() -> Self {
        Self {
            vision_work_per_tile: 2000,
            prefill_work_per_token: 14,
            decode_work_per_token: 160,
        }
    }
}

/// Counts of work units performed, by stage.
#[derive(Debug, Default)]
pub struct WorkMeter {
    vision: AtomicU64,
    prefill: AtomicU64,
    decode: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkTotals {
    pub vision: u64,
    pub prefill: u64,
    pub decode: u64,
}

impl WorkMeter {
    pub fn vision(&self, units: u64) {
        burn(units);
        self.vision.fetch_add(units, Ordering::Relaxed);
    }

    pub fn prefill(&self, units: u64) {
        burn(units);
        self.prefill.fetch_add(units, Ordering::Relaxed);
    }

    pub fn decode(&self, units: u64) {
        burn(units);
        self.decode.fetch_add(units, Ordering::Relaxed);
    }

    pub fn totals(&self) -> WorkTotals {
        WorkTotals {
            vision: self.vision.load(Ordering::Relaxed),
            prefill: self.prefill.load(Ordering::Relaxed),
            decode: self.decode.load(Ordering::Relaxed),
        }
    }
}
