//! Toy MLP projector between the vision encoder and the language model.
//!
//! Both compression paths land on the same hidden width, `4 · dim`. The 1/4
//! path passes each shuffled token through unchanged. The 1/16 path merges a
//! 4×4 block by averaging the four 2×2 sub-blocks it contains, so a 1/16 token
//! equals the mean of the four 1/4 tokens covering the same area. Smooth
//! regions survive that merge; fine detail does not.

use crate::error::{shape, Result};
use crate::types::{CompressionRate, PatchGrid};

/// Hidden width the language side sees for encoder width `dim`.
pub fn hidden_dim(dim: usize) -> usize {
    4 * dim
}

/// Projects a shuffled grid produced at `rate` to the language hidden width.
pub fn project(rate: CompressionRate, shuffled: &PatchGrid) -> Result<PatchGrid> {
    let f = rate.factor();
    if shuffled.dim() % (f * f) != 0 {
        return Err(shape(format!(
            "shuffled dim {} is not a multiple of {}",
            shuffled.dim(),
            f * f
        )));
    }
    let base = shuffled.dim() / (f * f);
    match rate {
        CompressionRate::Quarter => Ok(shuffled.clone()),
        CompressionRate::Sixteenth => {
            let hidden = hidden_dim(base);
            let mut out = Vec::with_capacity(shuffled.token_count() * hidden);
            for tok in shuffled.tokens() {
                // slot (i, j) of the 2×2 output = mean over sub-blocks (A, B) of
                // fine token (2A + i, 2B + j) in the 4×4 row-major concatenation.
                for i in 0..2 {
                    for j in 0..2 {
                        let mut acc = vec![0.0; base];
                        for a in 0..2 {
                            for b in 0..2 {
                                let fine = (2 * a + i) * 4 + (2 * b + j);
                                for (x, v) in acc.iter_mut().zip(&tok[fine * base..(fine + 1) * base]) {
                                    *x += v;
                                }
                            }
                        }
                        out.extend(acc.into_iter().map(|x| x / 4.0));
                    }
                }
            }
            PatchGrid::new(shuffled.side(), hidden, out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::vision::pixel_shuffle;

    #[test]
    fn sixteenth_is_spatial_mean_of_quarter() {
        let mut r = Rng::new(4);
        let g = PatchGrid::new(8, 3, r.normal_vec(8 * 8 * 3, 1.0)).unwrap();
        let q = project(CompressionRate::Quarter, &pixel_shuffle(&g, CompressionRate::Quarter).unwrap()).unwrap();
        let s = project(CompressionRate::Sixteenth, &pixel_shuffle(&g, CompressionRate::Sixteenth).unwrap()).unwrap();
        assert_eq!((q.side(), q.dim()), (4, 12));
        assert_eq!((s.side(), s.dim()), (2, 12));
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..12 {
                    let mean = (q.token(2 * i, 2 * j)[k]
                        + q.token(2 * i, 2 * j + 1)[k]
                        + q.token(2 * i + 1, 2 * j)[k]
                        + q.token(2 * i + 1, 2 * j + 1)[k])
                        / 4.0;
                    assert!((s.token(i, j)[k] - mean).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn blockwise_constant_grid_survives_merge() {
        // Values depend only on the 2×2 position inside each 4×4 block.
        let side = 8;
        let mut data = vec![];
        for y in 0..side {
            for x in 0..side {
                data.push(((y % 2) * 2 + x % 2) as f64);
            }
        }
        let g = PatchGrid::new(side, 1, data).unwrap();
        let q = project(CompressionRate::Quarter, &pixel_shuffle(&g, CompressionRate::Quarter).unwrap()).unwrap();
        let s = project(CompressionRate::Sixteenth, &pixel_shuffle(&g, CompressionRate::Sixteenth).unwrap()).unwrap();
        assert_eq!(s.token(0, 0), q.token(0, 0));
        assert_eq!(s.token(1, 1), q.token(3, 3));
    }
}
