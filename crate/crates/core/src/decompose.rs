//! Locates the reasoning bottleneck for each generative method: accuracy
//! against the vision-stage ceiling and final-stage separability, plus the
//! dependence of its answers on each probe's answers.

use thiserror::Error;

use crate::embedding::{EmbeddingStore, Pooling, Stage};
use crate::probe::{self, BongardSample, Context, PredictionSet, ProbeError, ProbeRun, ProbeSpec};
use crate::stats::{
    aggregate_report, chi2_dependence, classify_taxonomy, compare, EvalReport, EvalRow, MethodResult, RowLabels,
    StatsError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecomposeError {
    #[error("no generative predictions to evaluate")]
    NoMethods,
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// The probe runs shared by every method in a row.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRuns {
    pub lsc: ProbeRun,
    pub fin: Option<ProbeRun>,
}

impl ProbeRuns {
    /// Runs the ceiling probe, and the batched mean-pooled final-stage probe
    /// when the store has final-stage embeddings.
    pub fn compute(store: &EmbeddingStore, samples: &[BongardSample]) -> Result<Self, ProbeError> {
        let lsc = probe::probe_accuracy(store, samples, ProbeSpec::LSC)?;
        let fin = if store.has_stage(Stage::Final) {
            let spec = ProbeSpec::new(Stage::Final, Context::Batched, Pooling::Mean);
            Some(probe::probe_accuracy(store, samples, spec)?)
        } else {
            None
        };
        Ok(Self { lsc, fin })
    }
}

/// Restricts `gen` to the given samples, failing if any is missing.
fn aligned(gen: &PredictionSet, samples: &[BongardSample]) -> Result<PredictionSet, ProbeError> {
    let items = samples
        .iter()
        .map(|s| {
            gen.get(&s.sample_id)
                .map(|p| (s.sample_id.clone(), p))
                .ok_or_else(|| ProbeError::MissingPrediction {
                    method: gen.method.clone(),
                    sample_id: s.sample_id.clone(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PredictionSet::new(gen.method.clone(), items))
}

pub fn evaluate_method(
    runs: &ProbeRuns,
    samples: &[BongardSample],
    gen: &PredictionSet,
    yates: bool,
) -> Result<MethodResult, DecomposeError> {
    let gen = aligned(gen, samples)?;
    let estimate = gen.accuracy(samples)?;
    let lsc = &runs.lsc.estimate;
    let fin = runs.fin.as_ref().map(|r| &r.estimate);
    Ok(MethodResult {
        method: gen.method.clone(),
        invalid: gen.invalid_count() as u64,
        vs_lsc: compare(&estimate, lsc),
        vs_final: fin.map(|f| compare(&estimate, f)),
        taxonomy: fin.map(|f| classify_taxonomy(&estimate, lsc, f)).transpose()?,
        dependence_vision: chi2_dependence(&runs.lsc.predictions(), &gen, yates)?,
        dependence_final: runs
            .fin
            .as_ref()
            .map(|r| chi2_dependence(&r.predictions(), &gen, yates))
            .transpose()?,
        gen: estimate,
    })
}

/// One results row: both probes and every generative method.
pub fn decompose_row(
    store: &EmbeddingStore,
    samples: &[BongardSample],
    gens: &[&PredictionSet],
    labels: RowLabels,
    yates: bool,
) -> Result<EvalRow, DecomposeError> {
    if gens.is_empty() {
        return Err(DecomposeError::NoMethods);
    }
    let runs = ProbeRuns::compute(store, samples)?;
    let methods = gens
        .iter()
        .map(|g| evaluate_method(&runs, samples, g, yates))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalRow {
        labels,
        lsc: runs.lsc.estimate,
        fin: runs.fin.map(|r| r.estimate),
        methods,
    })
}

/// A single-row report.
pub fn decompose(
    store: &EmbeddingStore,
    samples: &[BongardSample],
    gens: &[&PredictionSet],
    labels: RowLabels,
    yates: bool,
) -> Result<EvalReport, DecomposeError> {
    Ok(aggregate_report(vec![decompose_row(store, samples, gens, labels, yates)?])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::Prediction;
    use crate::stats::{ComparisonOutcome, Direction};
    use crate::synth::{generate, FinalTransform, SynthConfig};

    fn labels() -> RowLabels {
        RowLabels {
            model: None,
            dataset: "synthetic".into(),
            prompt: None,
        }
    }

    #[test]
    fn copying_the_probe_is_a_bottleneck_with_positive_dependence() {
        let ds = generate(&SynthConfig {
            gen_agreement: 1.0,
            ..SynthConfig::new(3, 16, 300, 2.0)
        })
        .unwrap();
        let report = decompose(&ds.store, &ds.samples, &[&ds.gen_predictions], labels(), false).unwrap();
        let m = &report.rows[0].methods[0];
        assert_eq!(m.gen.p_hat, report.rows[0].lsc.p_hat);
        assert_eq!(m.vs_lsc, ComparisonOutcome::Indistinguishable);
        assert_eq!(m.taxonomy.unwrap().to_string(), "linear_reasoning_bottleneck");
        assert_eq!(m.dependence_vision.direction, Direction::Positive);
        assert_eq!(report.tallies.overall.tests, 2);
    }

    #[test]
    fn invalid_answers_count_as_wrong_but_leave_the_table() {
        let ds = generate(&SynthConfig::new(4, 8, 40, 1.0)).unwrap();
        let mut gen = ds.gen_predictions.clone();
        for id in ["s00000", "s00001"] {
            gen.predictions.insert(id.into(), Prediction::Invalid);
        }
        let row = decompose_row(&ds.store, &ds.samples, &[&gen], labels(), false).unwrap();
        let m = &row.methods[0];
        assert_eq!(m.invalid, 2);
        assert_eq!(m.gen.n, 40);
        assert_eq!(m.dependence_vision.table.total(), 38);
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let ds = generate(&SynthConfig::new(4, 8, 10, 1.0)).unwrap();
        let mut gen = ds.gen_predictions.clone();
        gen.predictions.remove("s00003");
        assert!(matches!(
            decompose(&ds.store, &ds.samples, &[&gen], labels(), false),
            Err(DecomposeError::Probe(ProbeError::MissingPrediction { .. }))
        ));
        assert_eq!(
            decompose(&ds.store, &ds.samples, &[], labels(), false),
            Err(DecomposeError::NoMethods)
        );
    }

    #[test]
    fn collapsed_final_stage_gives_post_representation_reasoning() {
        let ds = generate(&SynthConfig {
            gen_agreement: 0.0,
            gen_skill: 0.97,
            final_transform: FinalTransform::Collapse { strength: 1.0 },
            ..SynthConfig::new(8, 16, 500, 2.0)
        })
        .unwrap();
        let report = decompose(&ds.store, &ds.samples, &[&ds.gen_predictions], labels(), false).unwrap();
        let m = &report.rows[0].methods[0];
        assert_eq!(m.taxonomy.unwrap().to_string(), "surpassed + post_representation_reasoning");
    }

    #[test]
    fn vision_only_store_has_no_taxonomy() {
        let ds = generate(&SynthConfig::new(2, 8, 20, 1.0)).unwrap();
        let mut store = EmbeddingStore::new();
        for r in ds.store.records(Stage::Vision) {
            store.insert(r.clone()).unwrap();
        }
        let row = decompose_row(&store, &ds.samples, &[&ds.gen_predictions], labels(), false).unwrap();
        assert!(row.fin.is_none());
        assert!(row.methods[0].taxonomy.is_none());
        assert!(row.methods[0].dependence_final.is_none());
    }
}
