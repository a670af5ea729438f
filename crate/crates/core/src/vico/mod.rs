//! Visual consistency learning and router training.

mod checkpoint;
mod flash;
mod labels;
mod loss;
mod toylm;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
    CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use flash::{fit_flash_router, label_ratios, prepare_tiles, tile_ratios, FlashArtifacts, FlashConfig, TileItem};
pub use labels::{
    assign_label, loss_ratio, nearest_rank, percentile_threshold, LossRatioWindow, RouterLabel,
    DEFAULT_PERCENTILE, DEFAULT_WINDOW_CAPACITY, RATIO_EPSILON,
};
pub use loss::{
    consistency_train, sample_rate, vico_expected_loss, vico_loss, vico_loss_grad, vico_sample_loss,
    RateExpectation, VicoSample,
};
pub use toylm::{ToyLm, ToyLmConfig};
pub use train::{logistic_loss_and_grad, router_accuracy, train_router, train_router_with_history, RouterExample};
