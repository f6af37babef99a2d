//! Interval estimates, the surpassed/bottleneck taxonomy, chi-squared
//! dependence between probes and generative predictions, and report assembly.

mod chi2;
mod interval;
mod report;

pub use chi2::{
    chi2_dependence, chi2_sf_1dof, chi2_statistic, ContingencyTable, DependenceResult, Direction, SIGNIFICANCE,
};
pub use interval::{
    classify_taxonomy, compare, margin_of_error, AccuracyEstimate, BottleneckClass, ComparisonOutcome, Mechanism,
    PerClass, TaxonomyLabel, Z_95,
};
pub use report::{aggregate_report, EvalReport, EvalRow, MethodResult, RowLabels, ScatterPoint, Tally, Tallies};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("proportion {0} is outside [0, 1]")]
    InvalidProportion(f64),
    #[error("sample count must be positive")]
    NonPositiveN,
    #[error("estimates have different sample counts (gen {gen}, lsc {lsc}, final {fin})")]
    MismatchedN { gen: u64, lsc: u64, fin: u64 },
    #[error("prediction sets `{left}` and `{right}` cover different samples")]
    MismatchedSamples { left: String, right: String },
    #[error("duplicate report row {0}")]
    DuplicateRow(String),
}

/// Serializes accuracies with six significant digits.
pub(crate) mod sig6 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn round(x: f64) -> f64 {
        if x == 0.0 || !x.is_finite() {
            return x;
        }
        format!("{x:.5e}").parse().unwrap_or(x)
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(round(*x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::deserialize(d)
    }

}
