//! Dynamic data pruning for sequence-model training.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: waveform instances, WAV/manifest I/O, normalisation, resampling
//!   and a stratified synthetic task generator.
//! - [`scoring`]: the per-instance score table refreshed from training losses.
//! - [`selection`]: instance-wise kept-set policies (Static, Random, Easy, Hard,
//!   Easy2hard) and the ε schedule.
//! - [`timewise`]: point dropping, chunk dropping and adaptive time masking.
//! - [`learner`]: the learner contract and a toy linear-softmax frame classifier.
//! - [`harness`]: duration-budgeted batching and the per-epoch pruning loop.
//! - [`sweep`] and [`report`]: experiment grids and rendered outputs.

pub mod corpus;
pub mod error;
pub mod harness;
pub mod learner;
pub mod report;
pub mod rng;
pub mod scoring;
pub mod selection;
pub mod sweep;
pub mod timewise;

pub use corpus::{AudioInstance, Manifest, ManifestEntry, Stratum, SyntheticSpec};
pub use error::{Error, Result};
pub use harness::{
    BucketError, DatasetSource, EpochReport, ExperimentConfig, ExperimentResult, RateError,
    RunSummary,
};
pub use learner::{Learner, ToyFrameClassifier};
pub use scoring::ScoreTable;
pub use selection::{EpsilonSchedule, PolicyKind, SelectionConfig, Selector};
pub use sweep::{SweepRow, SweepSpec};
pub use timewise::{DropMode, DropSpec, MaskSpec};
