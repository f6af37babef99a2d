//! Non-parametric linear probes over pooled image embeddings.
//!
//! Two classification contexts are supported:
//!
//! * **Batched**: nearest-centroid. The query is compared to the renormalized
//!   mean of the positive set and of the negative set.
//! * **Single**: nearest-neighbour. The query takes the label of the single
//!   most similar example image across both sets.
//!
//! Ties resolve to [`Label::Positive`] in both contexts. The linear
//! separability ceiling is the batched, mean-pooled, vision-stage accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{self, EmbeddingError, EmbeddingStore, PooledVector, Pooling, Stage};
use crate::stats::{AccuracyEstimate, StatsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("missing {stage} embedding for image `{image_id}`")]
    MissingEmbedding { image_id: String, stage: Stage },
    #[error("sample `{sample_id}`: {source}")]
    Embedding {
        sample_id: String,
        #[source]
        source: EmbeddingError,
    },
    #[error("no samples to probe")]
    NoSamples,
    #[error("duplicate sample id `{0}`")]
    DuplicateSample(String),
    #[error("prediction set `{method}` has no entry for sample `{sample_id}`")]
    MissingPrediction { method: String, sample_id: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Which example set a query belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn flip(self) -> Self {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Context {
    #[default]
    Batched,
    Single,
}

impl Context {
    pub fn as_str(self) -> &'static str {
        match self {
            Context::Batched => "batched",
            Context::Single => "single",
        }
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One task instance: `k` positive examples, `k` negative examples and a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BongardSample {
    pub sample_id: String,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    pub query: String,
    pub truth: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_tag: Option<String>,
}

impl BongardSample {
    pub fn k(&self) -> usize {
        self.positives.len()
    }

    /// Every image id the sample references, query last.
    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.positives
            .iter()
            .chain(&self.negatives)
            .chain(std::iter::once(&self.query))
            .map(String::as_str)
    }

    /// The same task with the example sets exchanged and the truth flipped.
    pub fn swapped(&self) -> Self {
        Self {
            positives: self.negatives.clone(),
            negatives: self.positives.clone(),
            truth: self.truth.flip(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub sample_id: String,
    pub predicted: Label,
    pub truth: Label,
    pub s_p: f64,
    pub s_n: f64,
    pub stage: Stage,
    pub context: Context,
}

impl ProbeResult {
    pub fn correct(&self) -> bool {
        self.predicted == self.truth
    }
}

/// Tie rule shared by both contexts.
fn decide(s_p: f64, s_n: f64) -> Label {
    if s_p >= s_n {
        Label::Positive
    } else {
        Label::Negative
    }
}

fn pooled(
    store: &EmbeddingStore,
    sample: &BongardSample,
    image_id: &str,
    stage: Stage,
    pooling: Pooling,
) -> Result<PooledVector, ProbeError> {
    let record = store.get(stage, image_id).ok_or_else(|| ProbeError::MissingEmbedding {
        image_id: image_id.to_owned(),
        stage,
    })?;
    embedding::pool(record, pooling).map_err(|source| ProbeError::Embedding {
        sample_id: sample.sample_id.clone(),
        source,
    })
}

fn pooled_set(
    store: &EmbeddingStore,
    sample: &BongardSample,
    ids: &[String],
    stage: Stage,
    pooling: Pooling,
) -> Result<Vec<PooledVector>, ProbeError> {
    ids.iter().map(|id| pooled(store, sample, id, stage, pooling)).collect()
}

/// Nearest-centroid classification of the query.
pub fn classify_batched(
    store: &EmbeddingStore,
    sample: &BongardSample,
    stage: Stage,
    pooling: Pooling,
) -> Result<ProbeResult, ProbeError> {
    let wrap = |source| ProbeError::Embedding {
        sample_id: sample.sample_id.clone(),
        source,
    };
    let query = pooled(store, sample, &sample.query, stage, pooling)?;
    let pos = pooled_set(store, sample, &sample.positives, stage, pooling)?;
    let neg = pooled_set(store, sample, &sample.negatives, stage, pooling)?;
    let c_p = embedding::centroid(&pos).map_err(wrap)?;
    let c_n = embedding::centroid(&neg).map_err(wrap)?;
    let s_p = embedding::cosine(query.as_slice(), &c_p).map_err(wrap)?;
    let s_n = embedding::cosine(query.as_slice(), &c_n).map_err(wrap)?;
    Ok(ProbeResult {
        sample_id: sample.sample_id.clone(),
        predicted: decide(s_p, s_n),
        truth: sample.truth,
        s_p,
        s_n,
        stage,
        context: Context::Batched,
    })
}

/// Nearest-neighbour classification of the query against every example image.
///
/// `s_p` and `s_n` are the best similarity within each set, so the prediction
/// is the set holding the overall nearest example.
pub fn classify_single(
    store: &EmbeddingStore,
    sample: &BongardSample,
    stage: Stage,
    pooling: Pooling,
) -> Result<ProbeResult, ProbeError> {
    let query = pooled(store, sample, &sample.query, stage, pooling)?;
    let best = |ids: &[String]| -> Result<f64, ProbeError> {
        let mut best = f64::NEG_INFINITY;
        for v in pooled_set(store, sample, ids, stage, pooling)? {
            let s = embedding::cosine(query.as_slice(), v.as_slice()).map_err(|source| {
                ProbeError::Embedding {
                    sample_id: sample.sample_id.clone(),
                    source,
                }
            })?;
            best = best.max(s);
        }
        Ok(best)
    };
    let s_p = best(&sample.positives)?;
    let s_n = best(&sample.negatives)?;
    Ok(ProbeResult {
        sample_id: sample.sample_id.clone(),
        predicted: decide(s_p, s_n),
        truth: sample.truth,
        s_p,
        s_n,
        stage,
        context: Context::Single,
    })
}

pub fn classify(
    store: &EmbeddingStore,
    sample: &BongardSample,
    stage: Stage,
    context: Context,
    pooling: Pooling,
) -> Result<ProbeResult, ProbeError> {
    match context {
        Context::Batched => classify_batched(store, sample, stage, pooling),
        Context::Single => classify_single(store, sample, stage, pooling),
    }
}

/// Probe configuration; the default is the one that defines the LSC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub stage: Stage,
    pub context: Context,
    pub pooling: Pooling,
}

impl ProbeSpec {
    pub const LSC: ProbeSpec = ProbeSpec {
        stage: Stage::Vision,
        context: Context::Batched,
        pooling: Pooling::Mean,
    };

    pub fn new(stage: Stage, context: Context, pooling: Pooling) -> Self {
        Self { stage, context, pooling }
    }

    pub fn is_lsc(&self) -> bool {
        *self == Self::LSC
    }

    pub fn label(&self) -> String {
        if self.is_lsc() {
            "lsc".to_owned()
        } else {
            format!("probe/{}/{}/{}", self.stage, self.context, self.pooling)
        }
    }
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self::LSC
    }
}

/// Per-sample results in sample-id order plus the aggregate accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRun {
    pub spec: ProbeSpec,
    pub results: Vec<ProbeResult>,
    pub estimate: AccuracyEstimate,
}

impl ProbeRun {
    pub fn predictions(&self) -> PredictionSet {
        PredictionSet::new(
            self.spec.label(),
            self.results
                .iter()
                .map(|r| (r.sample_id.clone(), Prediction::from(r.predicted))),
        )
    }
}

/// Classifies every sample and aggregates accuracy, with per-class splits.
///
/// Any missing embedding aborts the whole run.
pub fn probe_accuracy(
    store: &EmbeddingStore,
    samples: &[BongardSample],
    spec: ProbeSpec,
) -> Result<ProbeRun, ProbeError> {
    if samples.is_empty() {
        return Err(ProbeError::NoSamples);
    }
    let mut seen = BTreeSet::new();
    for s in samples {
        if !seen.insert(s.sample_id.as_str()) {
            return Err(ProbeError::DuplicateSample(s.sample_id.clone()));
        }
    }
    let mut results = samples
        .par_iter()
        .map(|s| classify(store, s, spec.stage, spec.context, spec.pooling))
        .collect::<Result<Vec<_>, _>>()?;
    results.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let estimate = AccuracyEstimate::from_outcomes(spec.label(), results.iter().map(|r| (r.truth, r.correct())))?;
    Ok(ProbeRun {
        spec,
        results,
        estimate,
    })
}

/// A binary prediction, or `Invalid` when a generative answer could not be
/// parsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prediction {
    Positive,
    Negative,
    Invalid,
}

impl Prediction {
    pub fn label(self) -> Option<Label> {
        match self {
            Prediction::Positive => Some(Label::Positive),
            Prediction::Negative => Some(Label::Negative),
            Prediction::Invalid => None,
        }
    }
}

impl From<Label> for Prediction {
    fn from(l: Label) -> Self {
        match l {
            Label::Positive => Prediction::Positive,
            Label::Negative => Prediction::Negative,
        }
    }
}

/// Per-sample predictions of one method (a generative prompt or a probe).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub method: String,
    pub predictions: BTreeMap<String, Prediction>,
}

impl PredictionSet {
    pub fn new(method: impl Into<String>, items: impl IntoIterator<Item = (String, Prediction)>) -> Self {
        Self {
            method: method.into(),
            predictions: items.into_iter().collect(),
        }
    }

    pub fn get(&self, sample_id: &str) -> Option<Prediction> {
        self.predictions.get(sample_id).copied()
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn invalid_count(&self) -> usize {
        self.predictions.values().filter(|p| **p == Prediction::Invalid).count()
    }

    /// Accuracy of this set against the samples' ground truth.
    ///
    /// Invalid predictions count as wrong, so `n` is always the sample count.
    pub fn accuracy(&self, samples: &[BongardSample]) -> Result<AccuracyEstimate, ProbeError> {
        if samples.is_empty() {
            return Err(ProbeError::NoSamples);
        }
        let outcomes = samples
            .iter()
            .map(|s| {
                let p = self.get(&s.sample_id).ok_or_else(|| ProbeError::MissingPrediction {
                    method: self.method.clone(),
                    sample_id: s.sample_id.clone(),
                })?;
                Ok((s.truth, p.label() == Some(s.truth)))
            })
            .collect::<Result<Vec<_>, ProbeError>>()?;
        Ok(AccuracyEstimate::from_outcomes(self.method.clone(), outcomes)?)
    }
}
