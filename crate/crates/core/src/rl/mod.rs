//! Closed-form RL loss kit on linear-softmax toy policies.

mod fixtures;
mod gradcheck;
mod gspo;
mod ntp;
mod policy;
mod preference;
mod select;

pub use fixtures::{read_fixtures, write_fixtures, FixtureError, LossFixture, PolicySpec, VicoCase};
pub use gradcheck::{
    central_difference, check_fixture, generate_suite, relative_error, run_fixtures, run_loss_suite, GradCheck,
    LossSuiteReport, DEFAULT_FIXTURES_PER_LOSS, FD_STEP, GRAD_TOLERANCE,
};
pub use gspo::{
    gspo_advantages, gspo_contribution, gspo_contribution_slope, gspo_objective, gspo_ratio, GspoConfig, GspoOutput,
    RolloutGroup, DEFAULT_CLIP_EPS, DEFAULT_EPS_STD,
};
pub use ntp::{
    ntp_batch_grad, ntp_batch_loss, ntp_loss, square_average_reweight, square_average_weights, token_nll,
    LossSequence,
};
pub use policy::{Featurizer, ToyPolicy};
pub use preference::{
    bco_batch_grad, bco_batch_loss, bco_delta, bco_loss, dpo_batch_grad, dpo_loss, mpo_components, mpo_loss,
    mpo_loss_grad, BcoSample, MpoComponents, MpoConfig, MpoWeights, PreferencePair, DEFAULT_BETA,
};
pub use select::{filter_rollouts, in_band, select_best_of_n, QueryAccuracy, ACCURACY_BAND};
