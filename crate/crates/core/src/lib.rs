//! Diagnostics for where visual reasoning breaks down in vision-language
//! models: non-parametric probes over stage-wise image embeddings, interval
//! and dependence statistics, a centroid-contrastive training objective, and
//! a synthetic data generator with known separability.

pub mod cli;
pub mod decompose;
pub mod embedding;
pub mod io;
pub mod objective;
pub mod probe;
pub mod rng;
pub mod stats;
pub mod synth;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error(transparent)]
    Embedding(#[from] embedding::EmbeddingError),
    #[error(transparent)]
    Probe(#[from] probe::ProbeError),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
    #[error(transparent)]
    Objective(#[from] objective::ObjectiveError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Decompose(#[from] decompose::DecomposeError),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// 2 for unreadable or malformed input and failed writes, 1 for
    /// everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io(e) if !e.is_validation() => 2,
            _ => 1,
        }
    }
}
