//! Embedding records and the pooling / normalization / similarity primitives
//! every probe is built from.
//!
//! An image arrives as a `num_tokens × dim` matrix of activations taken at one
//! pipeline [`Stage`]. It is reduced to a single unit vector by pooling over the
//! token axis and L2-normalizing. Set prototypes ([`centroid`]) are the
//! renormalized mean of their members, and all comparisons are cosine
//! similarities, so every decision here is invariant to positive rescaling.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norms below this are treated as zero; normalization is undefined there.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("vector norm {norm:e} is below {ZERO_NORM:e}; cannot normalize")]
    ZeroVector { norm: f64 },
    #[error("non-finite value at token {token}, component {component}")]
    NonFiniteInput { token: usize, component: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot take the centroid of an empty set")]
    EmptySet,
    #[error("invalid shape: {num_tokens} tokens × {dim} dims with {len} values")]
    InvalidShape {
        num_tokens: usize,
        dim: usize,
        len: usize,
    },
}

/// Where in the model pipeline an embedding was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Vision encoder output, before any language-model contextualization.
    Vision,
    /// Last hidden layer of the language model at the image-token positions.
    Final,
}

impl Stage {
    pub const ALL: [Stage; 2] = [Stage::Vision, Stage::Final];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Vision => "vision",
            Stage::Final => "final",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reduction over the token axis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::Max => "max",
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One image's token-embedding sequence at one stage, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    image_id: String,
    stage: Stage,
    num_tokens: usize,
    dim: usize,
    values: Vec<f64>,
}

impl EmbeddingRecord {
    /// Builds a record from a row-major `num_tokens × dim` buffer.
    pub fn new(
        image_id: impl Into<String>,
        stage: Stage,
        num_tokens: usize,
        dim: usize,
        values: Vec<f64>,
    ) -> Result<Self, EmbeddingError> {
        if num_tokens == 0 || dim == 0 || values.len() != num_tokens * dim {
            return Err(EmbeddingError::InvalidShape {
                num_tokens,
                dim,
                len: values.len(),
            });
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFiniteInput {
                token: idx / dim,
                component: idx % dim,
            });
        }
        Ok(Self {
            image_id: image_id.into(),
            stage,
            num_tokens,
            dim,
            values,
        })
    }

    /// Convenience constructor from a list of token rows.
    pub fn from_rows(
        image_id: impl Into<String>,
        stage: Stage,
        rows: &[Vec<f64>],
    ) -> Result<Self, EmbeddingError> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(EmbeddingError::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        let values = rows.iter().flatten().copied().collect();
        Self::new(image_id, stage, rows.len(), dim, values)
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn num_tokens(&self) -> usize {
        self.num_tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tokens(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }
}

/// A pooled, unit-norm image vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector {
    pub image_id: String,
    pub stage: Stage,
    v: Vec<f64>,
}

impl PooledVector {
    /// Normalizes `v` and wraps it. Fails on zero or non-finite input.
    pub fn new(image_id: impl Into<String>, stage: Stage, v: Vec<f64>) -> Result<Self, EmbeddingError> {
        if let Some(idx) = v.iter().position(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFiniteInput {
                token: 0,
                component: idx,
            });
        }
        Ok(Self {
            image_id: image_id.into(),
            stage,
            v: normalize(v)?,
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.v
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.v
    }
}

impl AsRef<[f64]> for PooledVector {
    fn as_ref(&self) -> &[f64] {
        &self.v
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` to unit L2 norm.
pub fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>, EmbeddingError> {
    let n = norm(&v);
    if n.is_nan() || n < ZERO_NORM {
        return Err(EmbeddingError::ZeroVector { norm: n });
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// Pools a record over its tokens and L2-normalizes the result.
pub fn pool(record: &EmbeddingRecord, method: Pooling) -> Result<PooledVector, EmbeddingError> {
    let dim = record.dim();
    let pooled = match method {
        Pooling::Mean => {
            let mut acc = vec![0.0; dim];
            for tok in record.tokens() {
                acc.iter_mut().zip(tok).for_each(|(a, t)| *a += t);
            }
            let n = record.num_tokens() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        }
        Pooling::Max => {
            let mut acc = vec![f64::NEG_INFINITY; dim];
            for tok in record.tokens() {
                acc.iter_mut().zip(tok).for_each(|(a, &t)| *a = a.max(t));
            }
            acc
        }
    };
    Ok(PooledVector {
        image_id: record.image_id().to_owned(),
        stage: record.stage(),
        v: normalize(pooled)?,
    })
}

/// Cosine similarity `a·b / (‖a‖‖b‖)`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    for n in [na, nb] {
        if n.is_nan() || n < ZERO_NORM {
            return Err(EmbeddingError::ZeroVector { norm: n });
        }
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Renormalized elementwise mean of a non-empty set of vectors.
pub fn centroid<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<f64>, EmbeddingError> {
    let first = vectors.first().ok_or(EmbeddingError::EmptySet)?.as_ref();
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
    }
    let k = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    normalize(acc)
}

/// All records of a dataset, keyed by stage and image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    dim: Option<usize>,
    records: BTreeMap<Stage, BTreeMap<String, EmbeddingRecord>>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a record, returning the displaced one if the id was already
    /// present at that stage.
    pub fn insert(&mut self, record: EmbeddingRecord) -> Result<Option<EmbeddingRecord>, EmbeddingError> {
        match self.dim {
            Some(d) if d != record.dim() => {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: d,
                    found: record.dim(),
                })
            }
            _ => self.dim = Some(record.dim()),
        }
        Ok(self
            .records
            .entry(record.stage())
            .or_default()
            .insert(record.image_id().to_owned(), record))
    }

    pub fn get(&self, stage: Stage, image_id: &str) -> Option<&EmbeddingRecord> {
        self.records.get(&stage)?.get(image_id)
    }

    pub fn contains(&self, stage: Stage, image_id: &str) -> bool {
        self.get(stage, image_id).is_some()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn stages(&self) -> impl Iterator<Item = Stage> + '_ {
        self.records.keys().copied()
    }

    pub fn has_stage(&self, stage: Stage) -> bool {
        self.records.get(&stage).is_some_and(|m| !m.is_empty())
    }

    /// Records at one stage in image-id order.
    pub fn records(&self, stage: Stage) -> impl Iterator<Item = &EmbeddingRecord> {
        self.records.get(&stage).into_iter().flat_map(|m| m.values())
    }

    pub fn len(&self) -> usize {
        self.records.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn rec(rows: &[Vec<f64>]) -> EmbeddingRecord {
        EmbeddingRecord::from_rows("img", Stage::Vision, rows).unwrap()
    }

    #[test]
    fn single_token_pool_is_normalization() {
        let v = pool(&rec(&[vec![3.0, 4.0]]), Pooling::Mean).unwrap();
        assert_abs_diff_eq!(v.as_slice()[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(v.as_slice()[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn mean_and_max_pool_of_unit_axes() {
        let r = rec(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        for method in [Pooling::Mean, Pooling::Max] {
            let v = pool(&r, method).unwrap();
            assert_abs_diff_eq!(v.as_slice()[0], H, epsilon = 1e-15);
            assert_abs_diff_eq!(v.as_slice()[1], H, epsilon = 1e-15);
        }
    }

    #[test]
    fn pool_rejects_zero_mean() {
        let r = rec(&[vec![1.0, -2.0], vec![-1.0, 2.0]]);
        assert!(matches!(pool(&r, Pooling::Mean), Err(EmbeddingError::ZeroVector { .. })));
    }

    #[test]
    fn record_rejects_non_finite() {
        let err = EmbeddingRecord::new("x", Stage::Final, 2, 2, vec![0.0, 1.0, f64::NAN, 0.0]).unwrap_err();
        assert_eq!(err, EmbeddingError::NonFiniteInput { token: 1, component: 0 });
        assert!(EmbeddingRecord::new("x", Stage::Final, 0, 2, vec![]).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(cosine(&[0.6, 0.8], &[0.8, 0.6]).unwrap(), 0.96, epsilon = 1e-15);
        assert!(matches!(
            cosine(&[1.0, 0.0], &[1.0]),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
        assert!(matches!(cosine(&[1.0, 0.0], &[0.0, 0.0]), Err(EmbeddingError::ZeroVector { .. })));
    }

    #[test]
    fn centroid_examples() {
        assert_eq!(centroid(&[vec![1.0, 0.0]]).unwrap(), vec![1.0, 0.0]);
        let c = centroid(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_abs_diff_eq!(c[0], H, epsilon = 1e-15);
        assert_abs_diff_eq!(c[1], H, epsilon = 1e-15);
        assert!(matches!(
            centroid(&[vec![1.0, 0.0], vec![-1.0, 0.0]]),
            Err(EmbeddingError::ZeroVector { .. })
        ));
        assert_eq!(centroid::<Vec<f64>>(&[]), Err(EmbeddingError::EmptySet));
        assert!(matches!(
            centroid(&[vec![1.0, 0.0], vec![1.0]]),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn store_enforces_shared_dim() {
        let mut store = EmbeddingStore::new();
        store.insert(rec(&[vec![1.0, 0.0]])).unwrap();
        let other = EmbeddingRecord::from_rows("b", Stage::Final, &[vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(store.insert(other).is_err());
        assert!(store.insert(rec(&[vec![0.0, 1.0]])).unwrap().is_some());
    }

    fn rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..6, 1usize..8).prop_flat_map(|(t, d)| {
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), t)
        })
    }

    proptest! {
        #[test]
        fn pooled_vectors_are_unit_and_idempotent(rows in rows()) {
            let r = rec(&rows);
            for method in [Pooling::Mean, Pooling::Max] {
                if let Ok(v) = pool(&r, method) {
                    prop_assert!((norm(v.as_slice()) - 1.0).abs() < 1e-6);
                    let again = normalize(v.as_slice().to_vec()).unwrap();
                    for (a, b) in again.iter().zip(v.as_slice()) {
                        prop_assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }

        #[test]
        fn pooling_and_centroid_ignore_order(rows in rows(), seed in any::<u64>()) {
            let mut shuffled = rows.clone();
            let n = shuffled.len();
            shuffled.rotate_left((seed as usize) % n);
            let (a, b) = (rec(&rows), rec(&shuffled));
            if let (Ok(pa), Ok(pb)) = (pool(&a, Pooling::Mean), pool(&b, Pooling::Mean)) {
                for (x, y) in pa.as_slice().iter().zip(pb.as_slice()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
            if let (Ok(ca), Ok(cb)) = (centroid(&rows), centroid(&shuffled)) {
                for (x, y) in ca.iter().zip(&cb) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn cosine_is_scale_invariant(
            q in prop::collection::vec(-1.0f64..1.0, 4),
            c in prop::collection::vec(-1.0f64..1.0, 4),
            lambda in 1e-3f64..1e3,
        ) {
            prop_assume!(norm(&q) > 1e-3 && norm(&c) > 1e-3);
            let scaled: Vec<f64> = c.iter().map(|x| x * lambda).collect();
            let a = cosine(&q, &c).unwrap();
            let b = cosine(&q, &scaled).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
