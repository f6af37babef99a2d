//! The centroid-contrastive training objective: similarity loss, its
//! combination with a next-token loss, the loss-weight schedules, and a
//! closed-form gradient checked against finite differences.

mod grad;
pub mod gradcheck;
mod loss;
mod schedule;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

pub use grad::{sim_loss_grad, SimLossGrad};
pub use loss::{combined_loss, sim_loss, sim_loss_from_vectors, LossTerms};
pub use schedule::{default_scale, schedule_weights, ScheduleConfig, ScheduleKind, ScheduleRow};

use crate::embedding::{EmbeddingError, EmbeddingStore, Pooling, Stage};
use crate::probe::{self, BongardSample, ProbeError};

/// Softmax temperature for the similarity logits.
pub const DEFAULT_TAU: f64 = 0.07;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("similarity {0} is outside [-1, 1]")]
    InvalidSimilarity(f64),
    #[error("{name} must be non-negative and finite, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("step {step} is outside 0..{total}")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("a schedule needs at least one step")]
    NoSteps,
    #[error("unknown schedule `{0}` (expected constant, linear or cosine)")]
    UnknownSchedule(String),
    #[error("finite difference produced a non-finite value")]
    NonFiniteDifference,
    #[error("no next-token loss for sample `{0}`")]
    MissingNtLoss(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

/// Per-sample breakdown of the combined objective.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleLoss {
    pub sample_id: String,
    pub s_p: f64,
    pub s_n: f64,
    pub sim: f64,
    pub l_nt: f64,
    pub combined: f64,
}

/// Evaluates the combined objective on the final-stage embeddings of every
/// sample, with next-token losses supplied per sample id.
pub fn dataset_losses(
    store: &EmbeddingStore,
    samples: &[BongardSample],
    nt_loss: &BTreeMap<String, f64>,
    weights: (f64, f64),
    tau: f64,
) -> Result<Vec<SampleLoss>, ObjectiveError> {
    let mut out = samples
        .iter()
        .map(|s| {
            let r = probe::classify_batched(store, s, Stage::Final, Pooling::Mean)?;
            let l_nt = *nt_loss
                .get(&s.sample_id)
                .ok_or_else(|| ObjectiveError::MissingNtLoss(s.sample_id.clone()))?;
            let terms = LossTerms {
                s_p: r.s_p,
                s_n: r.s_n,
                tau,
                y: s.truth,
                l_nt,
                w_n: weights.0,
                w_c: weights.1,
            };
            Ok(SampleLoss {
                sample_id: s.sample_id.clone(),
                s_p: r.s_p,
                s_n: r.s_n,
                sim: sim_loss(&terms)?,
                l_nt,
                combined: combined_loss(&terms)?,
            })
        })
        .collect::<Result<Vec<_>, ObjectiveError>>()?;
    out.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(out)
}
