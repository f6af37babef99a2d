//! Synthetic task generator with a dial for linear separability.
//!
//! Each sample gets its own pair of class directions on the unit sphere. The
//! chord between them is `separation · σ`, where `σ = 1/√dim` is the
//! per-coordinate within-class standard deviation. An image is a Gaussian
//! perturbation of its class direction, renormalized; each token perturbs the
//! image again at half that scale and is renormalized. Values are rounded to
//! `f32` so that writing and reloading a dataset is lossless.
//!
//! Randomness comes from [`crate::rng`] with one stream per
//! `(sample, role, image, token)`, so output is identical regardless of how
//! samples are scheduled across threads.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{dot, normalize, EmbeddingError, EmbeddingRecord, EmbeddingStore, Pooling, Stage};
use crate::probe::{self, BongardSample, Label, Prediction, PredictionSet, ProbeError};
use crate::rng;

const ROLE_GEOMETRY: u64 = 0;
const ROLE_POSITIVE: u64 = 1;
const ROLE_NEGATIVE: u64 = 2;
const ROLE_QUERY: u64 = 3;
const ROLE_GEN: u64 = 4;
const ROLE_ROTATION: u64 = 5;
const IMAGE_LEVEL: u64 = u64::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

/// How final-stage embeddings derive from vision-stage ones.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FinalTransform {
    #[default]
    Identity,
    /// One random orthogonal matrix applied to every token.
    Rotation,
    /// Removes `strength` of each token's component along the sample's
    /// discriminative axis; `1.0` leaves no class signal.
    Collapse { strength: f64 },
}

fn default_k() -> usize {
    6
}
fn default_tokens() -> usize {
    4
}
fn default_skill() -> f64 {
    1.0
}
fn default_method() -> String {
    "direct".to_owned()
}
fn default_name() -> String {
    "synthetic".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub dim: usize,
    pub num_samples: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Chord between class directions in units of within-class σ.
    pub separation: f64,
    /// Probability the simulated generative answer copies the vision probe.
    #[serde(default)]
    pub gen_agreement: f64,
    /// When not copying, answer the opposite of the probe.
    #[serde(default)]
    pub flip_to_inverse: bool,
    /// When not copying (and not inverting), probability of answering the
    /// ground truth.
    #[serde(default = "default_skill")]
    pub gen_skill: f64,
    #[serde(default = "default_tokens")]
    pub tokens_per_image: usize,
    #[serde(default)]
    pub final_transform: FinalTransform,
    #[serde(default = "default_method")]
    pub gen_method: String,
    #[serde(default = "default_name")]
    pub dataset_name: String,
}

impl SynthConfig {
    pub fn new(seed: u64, dim: usize, num_samples: usize, separation: f64) -> Self {
        Self {
            seed,
            dim,
            num_samples,
            k: default_k(),
            separation,
            gen_agreement: 0.0,
            flip_to_inverse: false,
            gen_skill: default_skill(),
            tokens_per_image: default_tokens(),
            final_transform: FinalTransform::Identity,
            gen_method: default_method(),
            dataset_name: default_name(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_owned()));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.num_samples == 0 || self.k == 0 || self.tokens_per_image == 0 {
            return bad("num_samples, k and tokens_per_image must be positive");
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad("separation must be non-negative and finite");
        }
        for (name, p) in [("gen_agreement", self.gen_agreement), ("gen_skill", self.gen_skill)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::InvalidConfig(format!("{name} must be in [0, 1]")));
            }
        }
        if let FinalTransform::Collapse { strength } = self.final_transform {
            if !(0.0..=1.0).contains(&strength) {
                return bad("collapse strength must be in [0, 1]");
            }
        }
        if self.gen_method.is_empty() || self.dataset_name.is_empty() {
            return bad("gen_method and dataset_name must be non-empty");
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        1.0 / (self.dim as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub store: EmbeddingStore,
    pub samples: Vec<BongardSample>,
    pub gen_predictions: PredictionSet,
    /// Accuracy of classifying each vision-stage query against the true
    /// class directions, i.e. the limit of infinitely many examples.
    pub bayes_accuracy: f64,
}

struct Geometry {
    mu_p: Vec<f64>,
    mu_n: Vec<f64>,
    axis: Vec<f64>,
}

fn geometry(cfg: &SynthConfig, sample: u64) -> Geometry {
    let mut r = rng::stream(cfg.seed, &[sample, ROLE_GEOMETRY]);
    let m = rng::unit_vector(&mut r, cfg.dim);
    let axis = loop {
        let g = rng::gaussian_vector(&mut r, cfg.dim);
        let along = dot(&g, &m);
        let ortho: Vec<f64> = g.iter().zip(&m).map(|(x, mi)| x - along * mi).collect();
        if let Ok(u) = normalize(ortho) {
            break u;
        }
    };
    let chord = (cfg.separation * cfg.sigma()).min(2.0);
    let half = (chord / 2.0).asin();
    let (c, s) = (half.cos(), half.sin());
    let mu_p = m.iter().zip(&axis).map(|(a, b)| c * a + s * b).collect();
    let mu_n = m.iter().zip(&axis).map(|(a, b)| c * a - s * b).collect();
    Geometry { mu_p, mu_n, axis }
}

fn to_f32_grid(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

/// Perturbs `center` and renormalizes, with fallback to `center` on the
/// (measure-zero) zero vector.
fn perturb(center: &[f64], scale: f64, r: &mut rng::Stream) -> Vec<f64> {
    let noisy: Vec<f64> = center.iter().map(|c| c + scale * rng::standard_normal(r)).collect();
    normalize(noisy).unwrap_or_else(|_| center.to_vec())
}

/// Row-major `tokens × dim` values for one image.
fn image_tokens(cfg: &SynthConfig, sample: u64, role: u64, image: u64, mu: &[f64]) -> Vec<f64> {
    let sigma = cfg.sigma();
    let center = perturb(mu, sigma, &mut rng::stream(cfg.seed, &[sample, role, image, IMAGE_LEVEL]));
    let mut values = Vec::with_capacity(cfg.tokens_per_image * cfg.dim);
    for t in 0..cfg.tokens_per_image as u64 {
        let mut r = rng::stream(cfg.seed, &[sample, role, image, t]);
        values.extend(perturb(&center, 0.5 * sigma, &mut r));
    }
    to_f32_grid(&mut values);
    values
}

/// Random orthogonal matrix (row-major) by Gram-Schmidt on a Gaussian matrix.
fn rotation(cfg: &SynthConfig) -> Vec<Vec<f64>> {
    let mut r = rng::stream(cfg.seed, &[IMAGE_LEVEL, ROLE_ROTATION]);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(cfg.dim);
    while rows.len() < cfg.dim {
        let mut v = rng::gaussian_vector(&mut r, cfg.dim);
        for q in &rows {
            let p = dot(&v, q);
            v.iter_mut().zip(q).for_each(|(x, qi)| *x -= p * qi);
        }
        if let Ok(u) = normalize(v) {
            rows.push(u);
        }
    }
    rows
}

fn transform_final(values: &[f64], cfg: &SynthConfig, geo: &Geometry, rot: Option<&[Vec<f64>]>) -> Vec<f64> {
    let mut out: Vec<f64> = match (cfg.final_transform, rot) {
        (FinalTransform::Rotation, Some(rows)) => values
            .chunks_exact(cfg.dim)
            .flat_map(|tok| rows.iter().map(move |row| dot(row, tok)))
            .collect(),
        (FinalTransform::Collapse { strength }, _) => values
            .chunks_exact(cfg.dim)
            .flat_map(|tok| {
                let along = strength * dot(tok, &geo.axis);
                tok.iter().zip(&geo.axis).map(move |(x, a)| x - along * a)
            })
            .collect(),
        _ => values.to_vec(),
    };
    to_f32_grid(&mut out);
    out
}

struct SampleParts {
    sample: BongardSample,
    records: Vec<EmbeddingRecord>,
    known_means_correct: bool,
}

fn build_sample(cfg: &SynthConfig, index: u64, rot: Option<&[Vec<f64>]>) -> Result<SampleParts, SynthError> {
    let geo = geometry(cfg, index);
    let sample_id = format!("s{index:05}");
    let truth = if index.is_multiple_of(2) { Label::Positive } else { Label::Negative };
    let mut records = Vec::new();
    let mut add = |image_id: String, values: Vec<f64>| -> Result<(), SynthError> {
        let fin = transform_final(&values, cfg, &geo, rot);
        records.push(EmbeddingRecord::new(image_id.clone(), Stage::Vision, cfg.tokens_per_image, cfg.dim, values)?);
        records.push(EmbeddingRecord::new(image_id, Stage::Final, cfg.tokens_per_image, cfg.dim, fin)?);
        Ok(())
    };
    let mut positives = Vec::with_capacity(cfg.k);
    let mut negatives = Vec::with_capacity(cfg.k);
    for j in 0..cfg.k as u64 {
        let id = format!("{sample_id}_p{j}");
        add(id.clone(), image_tokens(cfg, index, ROLE_POSITIVE, j, &geo.mu_p))?;
        positives.push(id);
        let id = format!("{sample_id}_n{j}");
        add(id.clone(), image_tokens(cfg, index, ROLE_NEGATIVE, j, &geo.mu_n))?;
        negatives.push(id);
    }
    let query = format!("{sample_id}_q");
    let mu_q = if truth == Label::Positive { &geo.mu_p } else { &geo.mu_n };
    let q_values = image_tokens(cfg, index, ROLE_QUERY, 0, mu_q);
    let mut q_mean = vec![0.0; cfg.dim];
    for tok in q_values.chunks_exact(cfg.dim) {
        q_mean.iter_mut().zip(tok).for_each(|(a, t)| *a += t);
    }
    let known = if dot(&q_mean, &geo.mu_p) >= dot(&q_mean, &geo.mu_n) {
        Label::Positive
    } else {
        Label::Negative
    };
    add(query.clone(), q_values)?;
    Ok(SampleParts {
        sample: BongardSample {
            sample_id,
            positives,
            negatives,
            query,
            truth,
            split_tag: None,
        },
        records,
        known_means_correct: known == truth,
    })
}

/// Simulated generative answer for one sample.
fn simulate_generation(cfg: &SynthConfig, index: u64, probe: Label, truth: Label) -> Label {
    let mut r = rng::stream(cfg.seed, &[index, ROLE_GEN]);
    if rng::uniform(&mut r) < cfg.gen_agreement {
        probe
    } else if cfg.flip_to_inverse {
        probe.flip()
    } else if rng::uniform(&mut r) < cfg.gen_skill {
        truth
    } else {
        truth.flip()
    }
}

/// Generates a dataset; identical configs give identical datasets.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset, SynthError> {
    config.validate()?;
    let rot = matches!(config.final_transform, FinalTransform::Rotation).then(|| rotation(config));
    let parts = (0..config.num_samples as u64)
        .into_par_iter()
        .map(|i| build_sample(config, i, rot.as_deref()))
        .collect::<Result<Vec<_>, _>>()?;

    let mut store = EmbeddingStore::new();
    let mut samples = Vec::with_capacity(parts.len());
    let mut known_correct = 0usize;
    for p in parts {
        for r in p.records {
            store.insert(r)?;
        }
        known_correct += p.known_means_correct as usize;
        samples.push(p.sample);
    }

    let predictions = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let probe = probe::classify_batched(&store, s, Stage::Vision, Pooling::Mean)?.predicted;
            let gen = simulate_generation(config, i as u64, probe, s.truth);
            Ok((s.sample_id.clone(), Prediction::from(gen)))
        })
        .collect::<Result<BTreeMap<_, _>, ProbeError>>()?;

    Ok(SynthDataset {
        bayes_accuracy: known_correct as f64 / samples.len() as f64,
        config: config.clone(),
        store,
        samples,
        gen_predictions: PredictionSet {
            method: config.gen_method.clone(),
            predictions,
        },
    })
}

/// Nearest-centroid predictions recomputed with plain loops over the raw
/// token buffers, sharing no code with the probe module. Returns
/// `(sample_id, predicted)` in input order, or `None` for a sample whose
/// embeddings are missing or degenerate.
pub fn oracle_predictions(store: &EmbeddingStore, samples: &[BongardSample], stage: Stage) -> Vec<(String, Option<Label>)> {
    #[allow(clippy::needless_range_loop)]
    fn unit_mean(values: &[f64], dim: usize) -> Option<Vec<f64>> {
        let rows = values.len() / dim;
        let mut out = vec![0.0; dim];
        for r in 0..rows {
            for c in 0..dim {
                out[c] += values[r * dim + c];
            }
        }
        let mut sq = 0.0;
        for c in 0..dim {
            out[c] /= rows as f64;
            sq += out[c] * out[c];
        }
        let len = sq.sqrt();
        if len < 1e-12 {
            return None;
        }
        for c in 0..dim {
            out[c] /= len;
        }
        Some(out)
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for i in 0..a.len() {
            ab += a[i] * b[i];
            aa += a[i] * a[i];
            bb += b[i] * b[i];
        }
        ab / (aa.sqrt() * bb.sqrt())
    }

    let predict = |s: &BongardSample| -> Option<Label> {
        let vec_of = |id: &str| {
            let rec = store.get(stage, id)?;
            unit_mean(rec.values(), rec.dim())
        };
        let set_mean = |ids: &[String]| -> Option<Vec<f64>> {
            let mut members = Vec::new();
            for id in ids {
                members.extend(vec_of(id)?);
            }
            unit_mean(&members, store.dim()?)
        };
        let q = vec_of(&s.query)?;
        let s_p = cos(&q, &set_mean(&s.positives)?);
        let s_n = cos(&q, &set_mean(&s.negatives)?);
        Some(if s_p >= s_n { Label::Positive } else { Label::Negative })
    };

    samples.iter().map(|s| (s.sample_id.clone(), predict(s))).collect()
}

/// Accuracy of [`oracle_predictions`]; unresolvable samples count as wrong.
pub fn oracle_nearest_centroid(store: &EmbeddingStore, samples: &[BongardSample], stage: Stage) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let correct = oracle_predictions(store, samples, stage)
        .iter()
        .zip(samples)
        .filter(|((_, p), s)| *p == Some(s.truth))
        .count();
    correct as f64 / samples.len() as f64
}

impl SynthDataset {
    pub fn oracle_accuracy(&self, stage: Stage) -> f64 {
        oracle_nearest_centroid(&self.store, &self.samples, stage)
    }
}
