//! Adaptive length-penalty training with reward shaping (LEASH).
//!
//! This crate implements length-controlled policy optimization as a
//! constrained problem solved by a Lagrangian primal-dual loop: the policy
//! maximizes a shaped task reward while a dual variable `lambda` scales a
//! one-sided length penalty and is itself adjusted by dual ascent on the
//! measured constraint violation.
//!
//! The training dynamics are exercised at desk scale on synthetic
//! think-then-answer environments ([`envsim`]) small enough that expected
//! rewards, lengths, and violations can be computed exactly ([`oracle`]).
//!
//! Module map:
//!
//! - [`envsim`]: stop/continue episodes with a length-dependent correctness
//!   model, the rollout sampler, and task-set serialization.
//! - [`shaping`]: task reward, one-sided penalty, augmented and clipped
//!   shaped rewards, and the two-sided ablation variant.
//! - [`dual`]: the adaptive penalty-coefficient controller and its
//!   constant-coefficient baseline.
//! - [`policy`]: tabular softmax policy, group-relative advantages, the
//!   asymmetric-clip token-level surrogate and its analytic gradient.
//! - [`trainer`]: the outer loop tying the above together, with per-iteration
//!   metrics and CSV logging.
//! - [`oracle`]: exact expectations by trajectory enumeration, finite
//!   difference gradients, and the complementary-slackness diagnostic.
//! - [`analysis`]: keyword-group frequency counting over text and marker
//!   statistics over synthetic rollouts.
//! - [`cli`]: the `leash` command-line front end.

use std::path::PathBuf;

pub mod analysis;
pub mod cli;
pub mod dual;
pub mod envsim;
pub mod oracle;
pub mod plot;
pub mod policy;
pub mod shaping;
pub mod trainer;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("length {length} exceeds task max_length {max_length}")]
    LengthExceedsCap { length: usize, max_length: usize },

    #[error("target length must be positive")]
    ZeroTarget,

    #[error("empty input: {context}")]
    Empty { context: &'static str },

    #[error("group size must be at least 2, got {got}")]
    GroupTooSmall { got: usize },

    #[error("state bucket {bucket} out of range for a table with {buckets} buckets")]
    BucketOutOfRange { bucket: usize, buckets: usize },

    #[error("rollout batch was sampled under policy version {batch}, snapshot has version {snapshot}")]
    SnapshotMismatch { batch: u64, snapshot: u64 },

    #[error("non-finite {what}")]
    NonFinite { what: String },

    #[error("non-finite {what} at iteration {iteration}")]
    NonFiniteAtIteration { what: String, iteration: usize },

    #[error("max_length {cap} exceeds the exact-enumeration bound of {bound}")]
    EnumerationCapExceeded { cap: usize, bound: usize },

    #[error("invalid task {id}: {reason}")]
    InvalidTask { id: u64, reason: String },

    #[error("invalid task set: {0}")]
    InvalidTaskSet(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
