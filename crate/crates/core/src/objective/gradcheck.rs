//! Finite-difference verification of [`sim_loss_grad`](super::sim_loss_grad).
//!
//! The numerical side only evaluates the forward loss, built from the
//! embedding primitives, so it shares no code with the analytic gradient.

use serde::Serialize;

use super::loss::sim_loss_from_vectors;
use super::{sim_loss_grad, ObjectiveError, DEFAULT_TAU};
use crate::probe::Label;
use crate::rng;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Central differences `(f(x+h) - f(x-h)) / 2h` along every coordinate.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// One random problem: unit query, unit members, a label.
#[derive(Debug, Clone, PartialEq)]
pub struct GradInstance {
    pub query: Vec<f64>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
    pub tau: f64,
    pub y: Label,
}

impl GradInstance {
    /// Dimension in 4..=64, 1..=6 members per side.
    pub fn random(seed: u64, index: u64, tau: f64) -> Self {
        let mut r = rng::stream(seed, &[index]);
        let dim = 4 + (rng::uniform(&mut r) * 61.0) as usize;
        let k_p = 1 + (rng::uniform(&mut r) * 6.0) as usize;
        let k_n = 1 + (rng::uniform(&mut r) * 6.0) as usize;
        let y = if rng::uniform(&mut r) < 0.5 { Label::Positive } else { Label::Negative };
        let query = rng::unit_vector(&mut r, dim);
        let positives = (0..k_p).map(|_| rng::unit_vector(&mut r, dim)).collect();
        let negatives = (0..k_n).map(|_| rng::unit_vector(&mut r, dim)).collect();
        Self {
            query,
            positives,
            negatives,
            tau,
            y,
        }
    }

    fn flatten(&self) -> Vec<f64> {
        self.query
            .iter()
            .chain(self.positives.iter().flatten())
            .chain(self.negatives.iter().flatten())
            .copied()
            .collect()
    }

    fn unflatten(&self, flat: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let d = self.query.len();
        let (q, rest) = flat.split_at(d);
        let (p, n) = rest.split_at(d * self.positives.len());
        (
            q.to_vec(),
            p.chunks(d).map(<[f64]>::to_vec).collect(),
            n.chunks(d).map(<[f64]>::to_vec).collect(),
        )
    }

    /// Max relative error between analytic and central-difference gradients.
    pub fn check(&self, h: f64) -> Result<f64, ObjectiveError> {
        let g = sim_loss_grad(&self.query, &self.positives, &self.negatives, self.tau, self.y)?;
        let analytic: Vec<f64> = g
            .query
            .iter()
            .chain(g.positives.iter().flatten())
            .chain(g.negatives.iter().flatten())
            .copied()
            .collect();
        let numeric = central_difference(
            |x| {
                let (q, p, n) = self.unflatten(x);
                sim_loss_from_vectors(&q, &p, &n, self.tau, self.y).unwrap_or(f64::NAN)
            },
            &self.flatten(),
            h,
        );
        if numeric.iter().any(|v| !v.is_finite()) {
            return Err(ObjectiveError::NonFiniteDifference);
        }
        Ok(max_relative_error(&analytic, &numeric))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub trials: u64,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub max_relative_error: f64,
    pub worst_trial: u64,
    pub failures: u64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Runs `trials` random instances at temperature `tau`.
pub fn run(trials: u64, seed: u64, h: f64, tolerance: f64, tau: f64) -> Result<GradcheckReport, ObjectiveError> {
    let mut report = GradcheckReport {
        trials,
        seed,
        step: h,
        tolerance,
        max_relative_error: 0.0,
        worst_trial: 0,
        failures: 0,
    };
    for i in 0..trials {
        let err = GradInstance::random(seed, i, tau).check(h)?;
        if err >= tolerance {
            report.failures += 1;
        }
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_trial = i;
        }
    }
    Ok(report)
}

pub fn run_default(trials: u64, seed: u64) -> Result<GradcheckReport, ObjectiveError> {
    run(trials, seed, DEFAULT_STEP, DEFAULT_TOLERANCE, DEFAULT_TAU)
}
