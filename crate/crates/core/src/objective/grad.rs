//! Closed-form gradient of the similarity loss through the full centroid
//! construction: member mean, renormalization, cosine with the query.

use super::loss::{check_tau, logit_margin, sigmoid, softplus};
use super::ObjectiveError;
use crate::embedding::{self, dot, norm, EmbeddingError};
use crate::probe::Label;

#[derive(Debug, Clone, PartialEq)]
pub struct SimLossGrad {
    pub loss: f64,
    pub s_p: f64,
    pub s_n: f64,
    /// dL/d(query)
    pub query: Vec<f64>,
    /// dL/d(member) for each positive example, in input order.
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

/// Vector-Jacobian product of `x ↦ x / ‖x‖`: maps an upstream gradient on
/// the unit vector back to `x`.
fn normalize_vjp(unit: &[f64], len: f64, upstream: &[f64]) -> Vec<f64> {
    let radial = dot(upstream, unit);
    upstream.iter().zip(unit).map(|(g, u)| (g - radial * u) / len).collect()
}

struct Centroid {
    unit: Vec<f64>,
    raw_norm: f64,
}

fn mean_centroid(members: &[Vec<f64>], dim: usize) -> Result<Centroid, ObjectiveError> {
    if members.is_empty() {
        return Err(EmbeddingError::EmptySet.into());
    }
    let mut acc = vec![0.0; dim];
    for m in members {
        if m.len() != dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: dim,
                found: m.len(),
            }
            .into());
        }
        acc.iter_mut().zip(m).for_each(|(a, x)| *a += x);
    }
    let k = members.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    let raw_norm = norm(&acc);
    let unit = embedding::normalize(acc)?;
    Ok(Centroid { unit, raw_norm })
}

/// Loss value and gradients with respect to the query and every member.
///
/// Inputs are expected to be unit vectors but need only be non-zero; the
/// gradient is taken in ambient coordinates.
pub fn sim_loss_grad(
    query: &[f64],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    tau: f64,
    y: Label,
) -> Result<SimLossGrad, ObjectiveError> {
    check_tau(tau)?;
    let dim = query.len();
    let q_norm = norm(query);
    let q_unit = embedding::normalize(query.to_vec())?;
    let c_p = mean_centroid(positives, dim)?;
    let c_n = mean_centroid(negatives, dim)?;
    let s_p = dot(&q_unit, &c_p.unit);
    let s_n = dot(&q_unit, &c_n.unit);

    let margin = logit_margin(s_p, s_n, tau, y);
    let loss = softplus(margin);
    // dL/dmargin = sigmoid(margin); margin = ±(s_n - s_p)/tau
    let g = sigmoid(margin) / tau;
    let (g_sp, g_sn) = match y {
        Label::Positive => (-g, g),
        Label::Negative => (g, -g),
    };

    let up_q: Vec<f64> = c_p
        .unit
        .iter()
        .zip(&c_n.unit)
        .map(|(p, n)| g_sp * p + g_sn * n)
        .collect();
    let d_query = normalize_vjp(&q_unit, q_norm, &up_q);

    let member_grads = |c: &Centroid, g_s: f64, k: usize| -> Vec<Vec<f64>> {
        let up: Vec<f64> = q_unit.iter().map(|q| g_s * q).collect();
        let d_raw = normalize_vjp(&c.unit, c.raw_norm, &up);
        let share: Vec<f64> = d_raw.iter().map(|x| x / k as f64).collect();
        vec![share; k]
    };

    Ok(SimLossGrad {
        loss,
        s_p,
        s_n,
        query: d_query,
        positives: member_grads(&c_p, g_sp, positives.len()),
        negatives: member_grads(&c_n, g_sn, negatives.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::loss::sim_loss_from_vectors;

    fn unit(v: &[f64]) -> Vec<f64> {
        embedding::normalize(v.to_vec()).unwrap()
    }

    #[test]
    fn loss_matches_forward_path() {
        let q = unit(&[0.3, -0.2, 0.9]);
        let pos = vec![unit(&[1.0, 0.0, 0.2]), unit(&[0.5, 0.5, 0.5])];
        let neg = vec![unit(&[-0.3, 1.0, 0.0])];
        for y in [Label::Positive, Label::Negative] {
            let g = sim_loss_grad(&q, &pos, &neg, 0.07, y).unwrap();
            let f = sim_loss_from_vectors(&q, &pos, &neg, 0.07, y).unwrap();
            assert!((g.loss - f).abs() < 1e-12);
        }
    }

    #[test]
    fn swapping_sets_and_label_mirrors_gradients() {
        let q = unit(&[1.0, 1.0, 0.0]);
        let pos = vec![unit(&[1.0, 0.0, 0.1])];
        let neg = vec![unit(&[0.0, 1.0, 0.1])];
        let a = sim_loss_grad(&q, &pos, &neg, 0.07, Label::Positive).unwrap();
        let b = sim_loss_grad(&q, &neg, &pos, 0.07, Label::Negative).unwrap();
        assert!((a.s_p - a.s_n).abs() < 1e-15);
        assert!(norm(&a.query) > 1e-3);
        for (x, y) in a.query.iter().zip(&b.query) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(a.positives, b.negatives);
        // the same sets with the label flipped reverse the query gradient
        let c = sim_loss_grad(&q, &pos, &neg, 0.07, Label::Negative).unwrap();
        for (x, y) in a.query.iter().zip(&c.query) {
            assert!((x + y).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_correct_case_has_vanishing_gradient() {
        let q = unit(&[1.0, 0.0, 0.0, 0.0]);
        let pos = vec![unit(&[1.0, 0.05, 0.0, 0.0]), unit(&[1.0, -0.05, 0.0, 0.0])];
        let neg = vec![unit(&[-1.0, 0.0, 0.1, 0.0])];
        let g = sim_loss_grad(&q, &pos, &neg, 0.07, Label::Positive).unwrap();
        assert!(g.s_p - g.s_n > 1.9);
        let total = norm(&g.query) + g.positives.iter().chain(&g.negatives).map(|v| norm(v)).sum::<f64>();
        assert!(total < 1e-6, "{total}");
    }

    #[test]
    fn errors_propagate() {
        let q = unit(&[1.0, 0.0]);
        let pos = vec![unit(&[1.0, 0.0]), unit(&[-1.0, 0.0])];
        let neg = vec![unit(&[0.0, 1.0])];
        assert!(matches!(
            sim_loss_grad(&q, &pos, &neg, 0.07, Label::Positive),
            Err(ObjectiveError::Embedding(EmbeddingError::ZeroVector { .. }))
        ));
        assert!(matches!(
            sim_loss_grad(&q, &[], &neg, 0.07, Label::Positive),
            Err(ObjectiveError::Embedding(EmbeddingError::EmptySet))
        ));
        assert!(matches!(
            sim_loss_grad(&q, &neg, &neg, 0.0, Label::Positive),
            Err(ObjectiveError::InvalidTemperature(_))
        ));
    }
}
