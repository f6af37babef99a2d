use std::fmt;

use serde::{Deserialize, Serialize};

use super::{sig6, StatsError};
use crate::probe::Label;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959964;

/// Wald half-width of the 95% interval on a proportion.
pub fn margin_of_error(p_hat: f64, n: u64) -> Result<f64, StatsError> {
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(StatsError::InvalidProportion(p_hat));
    }
    if n == 0 {
        return Err(StatsError::NonPositiveN);
    }
    Ok(Z_95 * (p_hat * (1.0 - p_hat) / n as f64).sqrt())
}

/// An accuracy with its 95% margin of error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyEstimate {
    pub label: String,
    #[serde(with = "sig6")]
    pub p_hat: f64,
    pub n: u64,
    #[serde(with = "sig6")]
    pub me: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<Box<PerClass>>,
}

/// Accuracy restricted to truth-positive and truth-negative samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub positive: AccuracyEstimate,
    pub negative: AccuracyEstimate,
}

impl AccuracyEstimate {
    pub fn from_proportion(label: impl Into<String>, p_hat: f64, n: u64) -> Result<Self, StatsError> {
        Ok(Self {
            label: label.into(),
            p_hat,
            n,
            me: margin_of_error(p_hat, n)?,
            per_class: None,
        })
    }

    pub fn from_counts(label: impl Into<String>, correct: u64, n: u64) -> Result<Self, StatsError> {
        if n == 0 {
            return Err(StatsError::NonPositiveN);
        }
        if correct > n {
            return Err(StatsError::InvalidProportion(correct as f64 / n as f64));
        }
        Self::from_proportion(label, correct as f64 / n as f64, n)
    }

    /// A published `p ± me` pair taken at face value.
    pub fn from_reported(label: impl Into<String>, p_hat: f64, me: f64, n: u64) -> Result<Self, StatsError> {
        if !(0.0..=1.0).contains(&p_hat) {
            return Err(StatsError::InvalidProportion(p_hat));
        }
        if n == 0 {
            return Err(StatsError::NonPositiveN);
        }
        Ok(Self {
            label: label.into(),
            p_hat,
            n,
            me: me.max(0.0),
            per_class: None,
        })
    }

    /// Aggregates `(truth, correct)` outcomes, attaching per-class splits when
    /// both classes are present.
    pub fn from_outcomes(
        label: impl Into<String>,
        outcomes: impl IntoIterator<Item = (Label, bool)>,
    ) -> Result<Self, StatsError> {
        let label = label.into();
        // [correct, total] for positive then negative truth
        let mut tally = [[0u64; 2]; 2];
        for (truth, ok) in outcomes {
            let row = &mut tally[(truth == Label::Negative) as usize];
            row[0] += ok as u64;
            row[1] += 1;
        }
        let correct = tally[0][0] + tally[1][0];
        let n = tally[0][1] + tally[1][1];
        let mut est = Self::from_counts(label.clone(), correct, n)?;
        if tally[0][1] > 0 && tally[1][1] > 0 {
            est.per_class = Some(Box::new(PerClass {
                positive: Self::from_counts(format!("{label}/positive"), tally[0][0], tally[0][1])?,
                negative: Self::from_counts(format!("{label}/negative"), tally[1][0], tally[1][1])?,
            }));
        }
        Ok(est)
    }

    pub fn lower(&self) -> f64 {
        self.p_hat - self.me
    }

    pub fn upper(&self) -> f64 {
        self.p_hat + self.me
    }

    /// Positive-minus-negative per-class accuracy gap, if available.
    pub fn class_gap(&self) -> Option<f64> {
        self.per_class.as_ref().map(|pc| pc.positive.p_hat - pc.negative.p_hat)
    }
}

impl fmt::Display for AccuracyEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1} ± {:.1}", 100.0 * self.p_hat, 100.0 * self.me)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonOutcome {
    Superior,
    Inferior,
    Indistinguishable,
}

impl ComparisonOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            ComparisonOutcome::Superior => "superior",
            ComparisonOutcome::Inferior => "inferior",
            ComparisonOutcome::Indistinguishable => "indistinguishable",
        }
    }
}

/// Interval comparison; touching intervals overlap.
pub fn compare(a: &AccuracyEstimate, b: &AccuracyEstimate) -> ComparisonOutcome {
    if a.lower() > b.upper() {
        ComparisonOutcome::Superior
    } else if b.lower() > a.upper() {
        ComparisonOutcome::Inferior
    } else {
        ComparisonOutcome::Indistinguishable
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BottleneckClass {
    Surpassed,
    LinearReasoningBottleneck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    RepresentationRefinement,
    PostRepresentationReasoning,
}

/// Where generative performance sits relative to the separability ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTaxonomy")]
pub struct TaxonomyLabel {
    bottleneck_class: BottleneckClass,
    mechanism: Option<Mechanism>,
}

#[derive(Deserialize)]
struct RawTaxonomy {
    bottleneck_class: BottleneckClass,
    mechanism: Option<Mechanism>,
}

impl TryFrom<RawTaxonomy> for TaxonomyLabel {
    type Error = String;

    fn try_from(raw: RawTaxonomy) -> Result<Self, String> {
        match (raw.bottleneck_class, raw.mechanism) {
            (BottleneckClass::Surpassed, Some(m)) => Ok(Self::surpassed(m)),
            (BottleneckClass::LinearReasoningBottleneck, None) => Ok(Self::bottleneck()),
            (class, m) => Err(format!("mechanism {m:?} is inconsistent with {class:?}")),
        }
    }
}

impl TaxonomyLabel {
    pub fn bottleneck() -> Self {
        Self {
            bottleneck_class: BottleneckClass::LinearReasoningBottleneck,
            mechanism: None,
        }
    }

    pub fn surpassed(mechanism: Mechanism) -> Self {
        Self {
            bottleneck_class: BottleneckClass::Surpassed,
            mechanism: Some(mechanism),
        }
    }

    pub fn bottleneck_class(&self) -> BottleneckClass {
        self.bottleneck_class
    }

    pub fn mechanism(&self) -> Option<Mechanism> {
        self.mechanism
    }
}

impl fmt::Display for TaxonomyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mechanism {
            None => f.write_str("linear_reasoning_bottleneck"),
            Some(Mechanism::RepresentationRefinement) => f.write_str("surpassed + representation_refinement"),
            Some(Mechanism::PostRepresentationReasoning) => f.write_str("surpassed + post_representation_reasoning"),
        }
    }
}

/// Classifies generative accuracy against the vision-stage ceiling, and the
/// mechanism against final-stage separability when the ceiling is surpassed.
pub fn classify_taxonomy(
    gen: &AccuracyEstimate,
    lsc: &AccuracyEstimate,
    fin: &AccuracyEstimate,
) -> Result<TaxonomyLabel, StatsError> {
    if gen.n != lsc.n || gen.n != fin.n {
        return Err(StatsError::MismatchedN {
            gen: gen.n,
            lsc: lsc.n,
            fin: fin.n,
        });
    }
    if compare(gen, lsc) != ComparisonOutcome::Superior {
        return Ok(TaxonomyLabel::bottleneck());
    }
    Ok(match compare(gen, fin) {
        ComparisonOutcome::Superior => TaxonomyLabel::surpassed(Mechanism::PostRepresentationReasoning),
        _ => TaxonomyLabel::surpassed(Mechanism::RepresentationRefinement),
    })
}
