//! Command-line surface. Results go to standard output or `--out`;
//! diagnostics go to standard error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::decompose;
use crate::embedding::{Pooling, Stage};
use crate::io::{self, DatasetContents};
use crate::objective::{gradcheck, ScheduleConfig, ScheduleKind, DEFAULT_TAU};
use crate::probe::{self, Context, ProbeResult, ProbeSpec};
use crate::stats::{AccuracyEstimate, EvalReport, RowLabels};
use crate::synth::{self, SynthConfig};
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "lsc", version, about = "Linear separability ceiling diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StageArg {
    Vision,
    Final,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ContextArg {
    Batched,
    Single,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PoolingArg {
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Md,
    Csv,
    Scatter,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScheduleKindArg {
    Constant,
    Linear,
    Cosine,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CurveFormat {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Accuracy of one probe configuration.
    Probe {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "vision")]
        stage: StageArg,
        #[arg(long, value_enum, default_value = "batched")]
        context: ContextArg,
        #[arg(long, value_enum, default_value = "mean")]
        pooling: PoolingArg,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Ceiling, final-stage probe, taxonomy and dependence tests per
    /// generative method.
    Decompose {
        #[arg(long)]
        manifest: PathBuf,
        /// Method name from the manifest; repeatable. Defaults to all.
        #[arg(long = "gen-preds")]
        gen_preds: Vec<String>,
        /// Apply the continuity correction to the chi-squared statistic.
        #[arg(long)]
        yates: bool,
        /// Row label; overrides the manifest's `model`.
        #[arg(long)]
        model: Option<String>,
        /// Row label; overrides the manifest's `prompt_strategy`.
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Render one or more decompose reports.
    Report {
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "md")]
        format: ReportFormat,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients of the similarity
    /// loss on random instances.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = gradcheck::DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
    },
    /// Loss weights at every training step.
    Schedule {
        #[arg(long, value_enum)]
        kind: ScheduleKindArg,
        /// Contrastive weight scale or target.
        #[arg(long = "C")]
        scale: f64,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value = "-")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: CurveFormat,
    },
    /// Load a manifest and everything it references, and summarize it.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Vision => Stage::Vision,
            StageArg::Final => Stage::Final,
        }
    }
}

impl From<ContextArg> for Context {
    fn from(c: ContextArg) -> Self {
        match c {
            ContextArg::Batched => Context::Batched,
            ContextArg::Single => Context::Single,
        }
    }
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Mean => Pooling::Mean,
            PoolingArg::Max => Pooling::Max,
        }
    }
}

impl From<ScheduleKindArg> for ScheduleKind {
    fn from(k: ScheduleKindArg) -> Self {
        match k {
            ScheduleKindArg::Constant => ScheduleKind::Constant,
            ScheduleKindArg::Linear => ScheduleKind::Linear,
            ScheduleKindArg::Cosine => ScheduleKind::Cosine,
        }
    }
}

#[derive(Debug, Serialize)]
struct ProbeOutput {
    dataset_name: String,
    method: String,
    stage: Stage,
    context: Context,
    pooling: Pooling,
    accuracy: AccuracyEstimate,
    results: Vec<ProbeResult>,
}

#[derive(Debug, Serialize)]
struct SynthMeta {
    config: SynthConfig,
    bayes_accuracy: f64,
    oracle_vision_accuracy: f64,
    oracle_final_accuracy: f64,
}

#[derive(Debug, Serialize)]
struct ValidateSummary {
    dataset_name: String,
    dim: usize,
    stages: Vec<Stage>,
    samples: usize,
    records: usize,
    methods: Vec<String>,
}

fn schedule_csv(cfg: &ScheduleConfig) -> Result<String, Error> {
    let mut out = String::from("step,p,w_n,w_c\n");
    for r in cfg.curve()? {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.progress, r.w_n, r.w_c));
    }
    Ok(out)
}

fn report_text(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Md => report.to_markdown(),
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Scatter => report.to_scatter_csv(),
        ReportFormat::Json => io::to_json(report),
    }
}

fn read_synth_config(path: &Path) -> Result<SynthConfig, Error> {
    let bytes = std::fs::read(path).map_err(|e| io::IoError::Io {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    serde_json::from_slice(&bytes).map_err(|e| {
        io::IoError::Json {
            path: path.to_owned(),
            message: e.to_string(),
        }
        .into()
    })
}

/// Executes a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Probe {
            manifest,
            stage,
            context,
            pooling,
            out,
        } => {
            let ds = io::load_dataset(&manifest)?;
            let spec = ProbeSpec::new(stage.into(), context.into(), pooling.into());
            let run = probe::probe_accuracy(&ds.store, &ds.samples, spec)?;
            let output = ProbeOutput {
                dataset_name: ds.manifest.dataset_name,
                method: spec.label(),
                stage: spec.stage,
                context: spec.context,
                pooling: spec.pooling,
                accuracy: run.estimate,
                results: run.results,
            };
            io::write_output(&out, &io::to_json(&output))?;
        }
        Command::Decompose {
            manifest,
            gen_preds,
            yates,
            model,
            prompt,
            out,
        } => {
            let ds = io::load_dataset(&manifest)?;
            let names: Vec<String> = if gen_preds.is_empty() {
                ds.predictions.keys().cloned().collect()
            } else {
                gen_preds
            };
            let gens = names
                .iter()
                .map(|n| {
                    ds.predictions.get(n).ok_or_else(|| {
                        Error::Invalid(format!("manifest {} has no predictions named `{n}`", manifest.display()))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let labels = RowLabels {
                model: model.or(ds.manifest.model.clone()),
                dataset: ds.manifest.dataset_name.clone(),
                prompt: prompt.or(ds.manifest.prompt_strategy.clone()),
            };
            let report = decompose::decompose(&ds.store, &ds.samples, &gens, labels, yates)?;
            io::write_output(&out, &io::to_json(&report))?;
        }
        Command::Report { inputs, format, out } => {
            let reports = inputs.iter().map(io::read_report).collect::<Result<Vec<_>, _>>()?;
            let merged = EvalReport::merge(reports)?;
            io::write_output(&out, &report_text(&merged, format))?;
        }
        Command::Synth { config, out } => {
            let cfg = read_synth_config(&config)?;
            let ds = synth::generate(&cfg)?;
            io::write_dataset(
                &out,
                &ds.store,
                &ds.samples,
                &DatasetContents {
                    dataset_name: &cfg.dataset_name,
                    predictions: vec![&ds.gen_predictions],
                    ..Default::default()
                },
            )?;
            let meta = SynthMeta {
                bayes_accuracy: ds.bayes_accuracy,
                oracle_vision_accuracy: ds.oracle_accuracy(Stage::Vision),
                oracle_final_accuracy: ds.oracle_accuracy(Stage::Final),
                config: cfg,
            };
            io::write_output(&out.join("synth_meta.json"), &io::to_json(&meta))?;
        }
        Command::Gradcheck {
            trials,
            seed,
            step,
            tolerance,
            tau,
        } => {
            let report = gradcheck::run(trials, seed, step, tolerance, tau)?;
            io::write_output(Path::new("-"), &io::to_json(&report))?;
            if !report.passed() {
                eprintln!(
                    "gradcheck: {} of {} trials exceeded relative error {} (worst {:.3e} at trial {})",
                    report.failures, report.trials, report.tolerance, report.max_relative_error, report.worst_trial
                );
                return Ok(1);
            }
        }
        Command::Schedule {
            kind,
            scale,
            steps,
            out,
            format,
        } => {
            let cfg = ScheduleConfig::new(kind.into(), scale, steps)?;
            let text = match format {
                CurveFormat::Csv => schedule_csv(&cfg)?,
                CurveFormat::Json => io::to_json(&cfg.curve()?),
            };
            io::write_output(&out, &text)?;
        }
        Command::Validate { manifest } => {
            let ds = io::load_dataset(&manifest)?;
            let summary = ValidateSummary {
                dataset_name: ds.manifest.dataset_name.clone(),
                dim: ds.manifest.dim,
                stages: ds.manifest.stages.clone(),
                samples: ds.samples.len(),
                records: ds.store.len(),
                methods: ds.predictions.keys().cloned().collect(),
            };
            io::write_output(Path::new("-"), &io::to_json(&summary))?;
        }
    }
    Ok(0)
}

/// Parses arguments, runs, reports errors on standard error, and returns the
/// exit code. Usage errors exit with 1.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
