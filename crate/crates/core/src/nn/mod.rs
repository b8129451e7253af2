//! Feed-forward classifier with an embedding tap, trained under any mixing strategy.

pub mod adamw;
pub mod checkpoint;
pub mod gradcheck;
pub mod network;
pub mod params;
pub mod train;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use gradcheck::{gradcheck, GradCheckReport};
pub use network::{Architecture, Boundary, MixRecord, TappedNetwork};
pub use params::{ParameterStore, Tensor};
pub use train::{predict_probabilities, train_epoch, AugmentConfig, EpochConfig, EpochLog, InputView};
