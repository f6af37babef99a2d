use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::StatsError;
use crate::probe::{Label, PredictionSet};

pub const SIGNIFICANCE: f64 = 0.05;

/// 2×2 counts of probe prediction (rows) against generative prediction
/// (columns), positive first: `[[a, b], [c, d]]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable(pub [[u64; 2]; 2]);

impl ContingencyTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self([[a, b], [c, d]])
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut t = [[0u64; 2]; 2];
        for (row, col) in pairs {
            t[(row == Label::Negative) as usize][(col == Label::Negative) as usize] += 1;
        }
        Self(t)
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> [u64; 2] {
        [self.0[0][0] + self.0[0][1], self.0[1][0] + self.0[1][1]]
    }

    pub fn col_sums(&self) -> [u64; 2] {
        [self.0[0][0] + self.0[1][0], self.0[0][1] + self.0[1][1]]
    }

    pub fn is_degenerate(&self) -> bool {
        self.row_sums().contains(&0) || self.col_sums().contains(&0)
    }

    /// Relabels the rows only.
    pub fn swap_rows(&self) -> Self {
        Self([self.0[1], self.0[0]])
    }

    pub fn swap_cols(&self) -> Self {
        let [[a, b], [c, d]] = self.0;
        Self([[b, a], [d, c]])
    }
}

/// Survival function of the chi-squared distribution with one degree of
/// freedom, `erfc(sqrt(x / 2))`.
pub fn chi2_sf_1dof(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        erfc((x / 2.0).sqrt())
    }
}

/// Pearson statistic for a 2×2 table, optionally with Yates' correction.
/// Zero for degenerate tables.
pub fn chi2_statistic(table: &ContingencyTable, yates: bool) -> f64 {
    if table.is_degenerate() {
        return 0.0;
    }
    let [[a, b], [c, d]] = table.0.map(|r| r.map(|x| x as f64));
    let n = a + b + c + d;
    let mut diff = (a * d - b * c).abs();
    if yates {
        diff = (diff - n / 2.0).max(0.0);
    }
    n * diff * diff / ((a + b) * (c + d) * (a + c) * (b + d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Positive,
    Inverse,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceResult {
    pub chi2: f64,
    pub p_value: f64,
    pub significant: bool,
    pub direction: Direction,
    pub table: ContingencyTable,
    /// A marginal was zero; the test is undefined and reported as no dependence.
    #[serde(default)]
    pub degenerate: bool,
}

impl DependenceResult {
    pub fn from_table(table: ContingencyTable, yates: bool) -> Self {
        if table.is_degenerate() {
            return Self {
                chi2: 0.0,
                p_value: 1.0,
                significant: false,
                direction: Direction::None,
                table,
                degenerate: true,
            };
        }
        let chi2 = chi2_statistic(&table, yates);
        let p_value = chi2_sf_1dof(chi2);
        let significant = p_value < SIGNIFICANCE;
        let [[a, b], [c, d]] = table.0;
        // odds ratio ad/bc compared to 1 without dividing
        let (ad, bc) = (a as u128 * d as u128, b as u128 * c as u128);
        let direction = match (significant, ad.cmp(&bc)) {
            (false, _) => Direction::None,
            (true, std::cmp::Ordering::Greater) => Direction::Positive,
            (true, std::cmp::Ordering::Less) => Direction::Inverse,
            (true, std::cmp::Ordering::Equal) => Direction::None,
        };
        Self {
            chi2,
            p_value,
            significant,
            direction,
            table,
            degenerate: false,
        }
    }

    pub fn is_inverse(&self) -> bool {
        self.direction == Direction::Inverse
    }
}

/// Chi-squared test of dependence between a probe's and a generative
/// method's predictions.
///
/// Both sets must cover the same sample ids. Samples where either side is
/// invalid are left out of the table.
pub fn chi2_dependence(
    probe: &PredictionSet,
    gen: &PredictionSet,
    yates: bool,
) -> Result<DependenceResult, StatsError> {
    if probe.predictions.len() != gen.predictions.len()
        || probe.predictions.keys().zip(gen.predictions.keys()).any(|(a, b)| a != b)
    {
        return Err(StatsError::MismatchedSamples {
            left: probe.method.clone(),
            right: gen.method.clone(),
        });
    }
    let pairs = probe
        .predictions
        .values()
        .zip(gen.predictions.values())
        .filter_map(|(p, g)| Some((p.label()?, g.label()?)));
    Ok(DependenceResult::from_table(ContingencyTable::from_pairs(pairs), yates))
}
