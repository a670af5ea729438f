//! Decoupled vision-language serving with a per-tile visual resolution router,
//! plus closed-form loss kits for preference optimization, group sequence
//! policy optimization and visual consistency training.

pub mod bench;
pub mod error;
pub mod head;
pub mod math;
pub mod rl;
pub mod serving;
pub mod rng;
pub mod synth;
pub mod transport;
pub mod types;
pub mod vico;
pub mod vision;

pub use error::{Error, Result};
pub use head::LinearHead;
pub use math::{kl_divergence, softmax};
pub use rng::Rng;
pub use types::{CompressionRate, ImageTensor, PatchGrid, TokenDistribution};
