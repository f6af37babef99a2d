use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ObjectiveError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// `(1, C)` at every step.
    Constant,
    /// `(1, p·C)`.
    Linear,
    /// `(1 - cos(πp/2), cos(πp/2)·min(2p, 1)·C)`.
    Cosine,
}

impl FromStr for ScheduleKind {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(Self::Constant),
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(ObjectiveError::UnknownSchedule(other.to_owned())),
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Constant => "constant",
            Self::Linear => "linear",
            Self::Cosine => "cosine",
        })
    }
}

/// Contrastive-weight scale tuned per model family; `None` for unknown models.
pub fn default_scale(model: &str) -> Option<f64> {
    let m = model.to_ascii_lowercase();
    if m.contains("pixtral") {
        Some(1.6)
    } else if m.contains("phi") || m.contains("gemma") {
        Some(0.4)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    /// Target value (linear, constant) or scale `C` (cosine).
    #[serde(alias = "C", alias = "target")]
    pub scale: f64,
    pub total_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleRow {
    pub step: u64,
    pub progress: f64,
    pub w_n: f64,
    pub w_c: f64,
}

impl ScheduleConfig {
    pub fn new(kind: ScheduleKind, scale: f64, total_steps: u64) -> Result<Self, ObjectiveError> {
        let cfg = Self {
            kind,
            scale,
            total_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if self.total_steps == 0 {
            return Err(ObjectiveError::NoSteps);
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(ObjectiveError::Negative {
                name: "scale",
                value: self.scale,
            });
        }
        Ok(())
    }

    /// Training progress `(step + 1) / total_steps`.
    pub fn progress(&self, step: u64) -> Result<f64, ObjectiveError> {
        self.validate()?;
        if step >= self.total_steps {
            return Err(ObjectiveError::StepOutOfRange {
                step,
                total: self.total_steps,
            });
        }
        Ok((step + 1) as f64 / self.total_steps as f64)
    }

    pub fn weights(&self, step: u64) -> Result<(f64, f64), ObjectiveError> {
        schedule_weights(self, step)
    }

    /// Every step's weights, in order.
    pub fn curve(&self) -> Result<Vec<ScheduleRow>, ObjectiveError> {
        (0..self.total_steps)
            .map(|step| {
                let (w_n, w_c) = self.weights(step)?;
                Ok(ScheduleRow {
                    step,
                    progress: self.progress(step)?,
                    w_n,
                    w_c,
                })
            })
            .collect()
    }
}

/// Loss weights `(w_n, w_c)` at a 0-indexed step.
pub fn schedule_weights(config: &ScheduleConfig, step: u64) -> Result<(f64, f64), ObjectiveError> {
    let p = config.progress(step)?;
    let c = config.scale;
    Ok(match config.kind {
        ScheduleKind::Constant => (1.0, c),
        ScheduleKind::Linear => (1.0, p * c),
        ScheduleKind::Cosine => {
            // cos(πp/2) written as sin(π(1-p)/2) so the final step is exactly zero
            let decay = (FRAC_PI_2 * (1.0 - p)).sin();
            (1.0 - decay, decay * (2.0 * p).min(1.0) * c)
        }
    })
}
