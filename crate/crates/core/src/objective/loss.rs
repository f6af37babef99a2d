use serde::{Deserialize, Serialize};

use super::{ObjectiveError, DEFAULT_TAU};
use crate::embedding;
use crate::probe::Label;

/// Inputs to the combined objective for one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub s_p: f64,
    pub s_n: f64,
    pub tau: f64,
    /// Which centroid the query belongs to.
    pub y: Label,
    /// Next-token loss, supplied by the caller.
    pub l_nt: f64,
    pub w_n: f64,
    pub w_c: f64,
}

impl LossTerms {
    pub fn new(s_p: f64, s_n: f64, y: Label) -> Self {
        Self {
            s_p,
            s_n,
            tau: DEFAULT_TAU,
            y,
            l_nt: 0.0,
            w_n: 1.0,
            w_c: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        check_tau(self.tau)?;
        for s in [self.s_p, self.s_n] {
            if !(-1.0..=1.0).contains(&s) {
                return Err(ObjectiveError::InvalidSimilarity(s));
            }
        }
        for (name, w) in [("l_nt", self.l_nt), ("w_n", self.w_n), ("w_c", self.w_c)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(ObjectiveError::Negative { name, value: w });
            }
        }
        Ok(())
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<(), ObjectiveError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(ObjectiveError::InvalidTemperature(tau))
    }
}

/// Margin of the wrong logit over the right one, `(s_other - s_target) / tau`.
pub(crate) fn logit_margin(s_p: f64, s_n: f64, tau: f64, y: Label) -> f64 {
    match y {
        Label::Positive => (s_n - s_p) / tau,
        Label::Negative => (s_p - s_n) / tau,
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Two-way cross-entropy over the temperature-scaled similarities.
///
/// For two logits, `-log softmax(l)[y]` reduces to `softplus(l_other - l_y)`,
/// which is the max-subtracted log-sum-exp form.
pub fn sim_loss(terms: &LossTerms) -> Result<f64, ObjectiveError> {
    terms.validate()?;
    Ok(softplus(logit_margin(terms.s_p, terms.s_n, terms.tau, terms.y)))
}

/// `w_n · L_NT + w_c · L_sim`.
pub fn combined_loss(terms: &LossTerms) -> Result<f64, ObjectiveError> {
    let sim = sim_loss(terms)?;
    Ok(terms.w_n * terms.l_nt + terms.w_c * sim)
}

/// Forward pass over raw vectors: member means are renormalized into
/// centroids and compared to the query by cosine.
pub fn sim_loss_from_vectors(
    query: &[f64],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    tau: f64,
    y: Label,
) -> Result<f64, ObjectiveError> {
    check_tau(tau)?;
    let c_p = embedding::centroid(positives)?;
    let c_n = embedding::centroid(negatives)?;
    let s_p = embedding::cosine(query, &c_p)?;
    let s_n = embedding::cosine(query, &c_n)?;
    Ok(softplus(logit_margin(s_p, s_n, tau, y)))
}
