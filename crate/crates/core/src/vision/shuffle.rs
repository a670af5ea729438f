use crate::error::{shape, Result};
use crate::types::{CompressionRate, PatchGrid};

/// Space-to-depth. Each output token is the concatenation of its `f×f` input
/// block in row-major order; side shrinks by `f` and dim grows by `f²`.
pub fn pixel_shuffle(grid: &PatchGrid, rate: CompressionRate) -> Result<PatchGrid> {
    let f = rate.factor();
    let (side, dim) = (grid.side(), grid.dim());
    if side % f != 0 {
        return Err(shape(format!("grid side {side} is not divisible by {f}")));
    }
    let out_side = side / f;
    let mut out = Vec::with_capacity(grid.data().len());
    for i in 0..out_side {
        for j in 0..out_side {
            for a in 0..f {
                for b in 0..f {
                    out.extend_from_slice(grid.token(i * f + a, j * f + b));
                }
            }
        }
    }
    PatchGrid::new(out_side, dim * f * f, out)
}

/// Depth-to-space; the exact inverse of [`pixel_shuffle`] for the same rate.
pub fn pixel_unshuffle(grid: &PatchGrid, rate: CompressionRate) -> Result<PatchGrid> {
    let f = rate.factor();
    let (side, dim) = (grid.side(), grid.dim());
    if dim % (f * f) != 0 {
        return Err(shape(format!("grid dim {dim} is not divisible by {}", f * f)));
    }
    let out_dim = dim / (f * f);
    let out_side = side * f;
    let mut out = vec![0.0; grid.data().len()];
    for i in 0..side {
        for j in 0..side {
            let tok = grid.token(i, j);
            for a in 0..f {
                for b in 0..f {
                    let src = &tok[(a * f + b) * out_dim..(a * f + b + 1) * out_dim];
                    let dst = ((i * f + a) * out_side + j * f + b) * out_dim;
                    out[dst..dst + out_dim].copy_from_slice(src);
                }
            }
        }
    }
    PatchGrid::new(out_side, out_dim, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn iota(side: usize, dim: usize) -> PatchGrid {
        PatchGrid::new(side, dim, (0..side * side * dim).map(|v| v as f64).collect()).unwrap()
    }

    fn random_grid(side: usize, dim: usize, seed: u64) -> PatchGrid {
        let mut r = Rng::new(seed);
        PatchGrid::new(side, dim, r.normal_vec(side * side * dim, 1.0)).unwrap()
    }

    #[test]
    fn token_counts_from_1024_lattice() {
        let g = PatchGrid::zeros(32, 3).unwrap();
        let q = pixel_shuffle(&g, CompressionRate::Quarter).unwrap();
        assert_eq!((q.side(), q.token_count(), q.dim()), (16, 256, 12));
        let s = pixel_shuffle(&g, CompressionRate::Sixteenth).unwrap();
        assert_eq!((s.side(), s.token_count(), s.dim()), (8, 64, 48));
    }

    #[test]
    fn hand_traced_block_gather() {
        let q = pixel_shuffle(&iota(4, 1), CompressionRate::Quarter).unwrap();
        assert_eq!(q.token(0, 0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(q.token(0, 1), &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(q.token(1, 1), &[10.0, 11.0, 14.0, 15.0]);
        let s = pixel_shuffle(&iota(4, 1), CompressionRate::Sixteenth).unwrap();
        assert_eq!(s.token(0, 0), iota(4, 1).data());
    }

    #[test]
    fn single_token_unshuffle_restores_block() {
        let g = PatchGrid::new(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let u = pixel_unshuffle(&g, CompressionRate::Quarter).unwrap();
        assert_eq!((u.side(), u.dim()), (2, 1));
        assert_eq!(u.token(0, 0), &[1.0]);
        assert_eq!(u.token(0, 1), &[2.0]);
        assert_eq!(u.token(1, 0), &[3.0]);
        assert_eq!(u.token(1, 1), &[4.0]);
    }

    #[test]
    fn divisibility_errors() {
        assert!(pixel_shuffle(&PatchGrid::zeros(2, 1).unwrap(), CompressionRate::Sixteenth).is_err());
        assert!(pixel_unshuffle(&PatchGrid::zeros(2, 8).unwrap(), CompressionRate::Sixteenth).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(seed in any::<u64>(), log_side in 2u32..6, dim in 1usize..5) {
            let g = random_grid(1 << log_side, dim, seed);
            for rate in CompressionRate::ALL {
                let back = pixel_unshuffle(&pixel_shuffle(&g, rate).unwrap(), rate).unwrap();
                prop_assert_eq!(&back, &g);
            }
        }

        #[test]
        fn shuffle_is_a_permutation(seed in any::<u64>(), dim in 1usize..4) {
            let g = random_grid(8, dim, seed);
            for rate in CompressionRate::ALL {
                let s = pixel_shuffle(&g, rate).unwrap();
                let mut a = g.data().to_vec();
                let mut b = s.data().to_vec();
                a.sort_by(f64::total_cmp);
                b.sort_by(f64::total_cmp);
                prop_assert_eq!(a, b);
            }
        }
    }
}
