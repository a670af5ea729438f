use crate::error::{shape, Result};
use crate::rng::Rng;
use crate::types::{ImageTensor, PatchGrid};

/// Sub-patches per tile edge; 32×32 gives the 1024-token lattice.
pub const TOKENS_PER_SIDE: usize = 32;

/// Stand-in for the vision transformer: a seed-fixed linear projection of each
/// flattened sub-patch to `dim` features. No bias, so it is exactly linear.
#[derive(Debug, Clone)]
pub struct PatchEncoder {
    patch_px: usize,
    dim: usize,
    /// `in_dim × dim`, row-major, `in_dim = patch_px² · 3`.
    weights: Vec<f64>,
}

impl PatchEncoder {
    pub fn new(tile_size: usize, dim: usize, rng: &Rng) -> Result<Self> {
        if tile_size == 0 || tile_size % TOKENS_PER_SIDE != 0 {
            return Err(shape(format!(
                "tile side {tile_size} is not divisible by {TOKENS_PER_SIDE}"
            )));
        }
        if dim == 0 {
            return Err(shape("encoder dim must be positive"));
        }
        let patch_px = tile_size / TOKENS_PER_SIDE;
        let in_dim = patch_px * patch_px * ImageTensor::CHANNELS;
        let mut rng = rng.fork(0x656e_636f_6465_72);
        let weights = rng.normal_vec(in_dim * dim, 1.0 / (in_dim as f64).sqrt());
        Ok(Self {
            patch_px,
            dim,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tile_size(&self) -> usize {
        self.patch_px * TOKENS_PER_SIDE
    }

    pub fn encode(&self, tile: &ImageTensor) -> Result<PatchGrid> {
        if tile.height() != tile.width() {
            return Err(shape(format!(
                "tile must be square, got {}x{}",
                tile.height(),
                tile.width()
            )));
        }
        if tile.height() != self.tile_size() {
            return Err(shape(format!(
                "tile side {} does not match encoder tile size {}",
                tile.height(),
                self.tile_size()
            )));
        }
        let ch = tile.channels();
        let row_len = self.patch_px * ch;
        let px = tile.pixels();
        let mut out = vec![0.0; TOKENS_PER_SIDE * TOKENS_PER_SIDE * self.dim];
        for (t, feat) in out.chunks_exact_mut(self.dim).enumerate() {
            let (ty, tx) = (t / TOKENS_PER_SIDE, t % TOKENS_PER_SIDE);
            let mut w_rows = self.weights.chunks_exact(self.dim);
            for y in 0..self.patch_px {
                let start = ((ty * self.patch_px + y) * tile.width() + tx * self.patch_px) * ch;
                for &v in &px[start..start + row_len] {
                    let w = w_rows.next().expect("weights cover the sub-patch");
                    if v == 0.0 {
                        continue;
                    }
                    for (f, wk) in feat.iter_mut().zip(w) {
                        *f += v * wk;
                    }
                }
            }
        }
        PatchGrid::new(TOKENS_PER_SIDE, self.dim, out)
    }
}

/// One-shot encode: builds the seeded encoder for this tile size and applies it.
pub fn encode_tile(tile: &ImageTensor, rng: &Rng, dim: usize) -> Result<PatchGrid> {
    if tile.height() != tile.width() {
        return Err(shape("tile must be square"));
    }
    PatchEncoder::new(tile.height(), dim, rng)?.encode(tile)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_tile(side: usize, seed: u64) -> ImageTensor {
        let mut r = Rng::new(seed);
        ImageTensor::new(side, side, (0..side * side * 3).map(|_| r.uniform()).collect()).unwrap()
    }

    #[test]
    fn tile_448_yields_1024_tokens() {
        let g = encode_tile(&noise_tile(448, 1), &Rng::new(5), 8).unwrap();
        assert_eq!(g.side(), 32);
        assert_eq!(g.token_count(), 1024);
        assert_eq!(g.dim(), 8);
    }

    #[test]
    fn zero_tile_encodes_to_zero() {
        let g = encode_tile(&ImageTensor::zeros(64, 64), &Rng::new(5), 4).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_for_seed() {
        let tile = noise_tile(64, 2);
        let a = encode_tile(&tile, &Rng::new(9), 4).unwrap();
        let b = encode_tile(&tile, &Rng::new(9), 4).unwrap();
        assert_eq!(a, b);
        let c = encode_tile(&tile, &Rng::new(10), 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn indivisible_side_is_shape_error() {
        assert!(encode_tile(&ImageTensor::zeros(48, 48), &Rng::new(0), 4).is_err());
        assert!(encode_tile(&ImageTensor::zeros(64, 32), &Rng::new(0), 4).is_err());
    }

    #[test]
    fn encoder_is_linear() {
        let a = noise_tile(64, 3);
        let b = noise_tile(64, 4);
        let sum: Vec<f64> = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x + y) / 2.0).collect();
        let mid = ImageTensor::new(64, 64, sum).unwrap();
        let enc = PatchEncoder::new(64, 4, &Rng::new(1)).unwrap();
        let (ga, gb, gm) = (enc.encode(&a).unwrap(), enc.encode(&b).unwrap(), enc.encode(&mid).unwrap());
        for ((x, y), m) in ga.data().iter().zip(gb.data()).zip(gm.data()) {
            assert!(((x + y) / 2.0 - m).abs() < 1e-12);
        }
    }
}
