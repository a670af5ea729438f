//! Inputs shared by the criterion benches.

use dvd_core::transport::FeatureFrame;
use dvd_core::{CompressionRate, PatchGrid, Rng};

/// A 32x32 token grid of width `dim` filled with standard normals.
pub fn random_grid(dim: usize, seed: u64) -> PatchGrid {
    let mut rng = Rng::new(seed);
    PatchGrid::new(32, dim, rng.normal_vec(1024 * dim, 1.0)).expect("valid grid")
}

/// One full-rate frame carrying projected features of width `4 * dim`.
pub fn quarter_frame(dim: usize, seed: u64) -> FeatureFrame {
    let mut rng = Rng::new(seed);
    let grid = PatchGrid::new(16, 4 * dim, rng.normal_vec(256 * 4 * dim, 1.0)).expect("valid grid");
    FeatureFrame::from_grid(seed, 0, 1, CompressionRate::Quarter, &grid).expect("valid frame")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_have_expected_shapes() {
        assert_eq!(random_grid(8, 1).token_count(), 1024);
        let f = quarter_frame(8, 1);
        assert_eq!((f.token_count, f.dim), (256, 32));
    }
}
