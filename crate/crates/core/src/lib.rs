//! Rater-conditioned label fusion for multi-rater vessel segmentation: volume
//! types and I/O, rater encoding, rater-specific label schemas, weighted
//! majority voting, agreement metrics and a synthetic phantom generator.

pub mod encoding;
pub mod error;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod rng;
pub mod schema;
pub mod volume;

pub use error::{Error, FormatError, Result};
pub use fusion::{weighted_majority_vote, DisagreementMap, VoteConfig};
pub use schema::LabelSchema;
pub use volume::{LabelVolume, LogitVolume, ScalarVolume, VolumeGeometry};
