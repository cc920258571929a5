//! Experiment harness: run configuration, the training loop,
//! checkpointing, descriptor extraction and result tables.

mod checkpoint;
mod config;
mod extract;
mod report;
mod train;

pub use checkpoint::Checkpoint;
pub use config::{AugmentSection, DataSection, PhocSection, TrainConfig};
pub use extract::{extract_descriptors, load_network};
pub use report::{append_result, read_results, write_table, ResultEntry};
pub use train::{train, TrainOutcome};

use crate::arch::ArchError;
use crate::data::{DataError, WordSample};
use crate::diffcore::DiffError;
use crate::phoc::PhocError;
use crate::retrieval::RetrievalError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("training data unavailable: {0}")]
    DataUnavailable(String),
    #[error("loss diverged to a non-finite value at iteration {iteration}")]
    DivergedLoss { iteration: u64 },
    #[error("checkpoint does not match the configured architecture: {0}")]
    ArchMismatch(String),
    #[error("checkpoint file corrupt: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Phoc(#[from] PhocError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which side of a cross-validation fold to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FoldRole {
    Train,
    Test,
}

impl std::str::FromStr for FoldRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(FoldRole::Train),
            "test" => Ok(FoldRole::Test),
            other => Err(format!("unknown fold role {other:?} (expected train or test)")),
        }
    }
}

/// Restrict samples to one side of a four-fold page split.
pub fn select_fold(
    samples: Vec<WordSample>,
    fold: usize,
    role: FoldRole,
) -> Result<Vec<WordSample>, HarnessError> {
    let plan = crate::data::make_gw_folds(&samples)?;
    let fold = plan
        .folds
        .get(fold)
        .ok_or_else(|| HarnessError::Config(format!("fold {fold} out of range (0..4)")))?;
    let keep: std::collections::HashSet<&str> = match role {
        FoldRole::Train => fold.train.iter().map(String::as_str).collect(),
        FoldRole::Test => fold.test.iter().map(String::as_str).collect(),
    };
    Ok(samples
        .into_iter()
        .filter(|s| keep.contains(s.sample_id.as_str()))
        .collect())
}

/// Derive an independent seed stream for a named purpose.
pub(crate) fn derive_seed(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut x = seed
        ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93)
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 32)).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    x ^ (x >> 32)
}
