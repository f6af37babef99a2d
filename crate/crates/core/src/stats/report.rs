use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{AccuracyEstimate, ComparisonOutcome, DependenceResult, Direction, StatsError, TaxonomyLabel};

/// Identifies one evaluated configuration (a row of the results table).
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowLabels {
    #[serde(default)]
    pub model: Option<String>,
    pub dataset: String,
    #[serde(default)]
    pub prompt: Option<String>,
}

impl RowLabels {
    fn key(&self) -> String {
        format!(
            "{}/{}/{}",
            self.model.as_deref().unwrap_or("-"),
            self.dataset,
            self.prompt.as_deref().unwrap_or("-")
        )
    }
}

/// One generative method evaluated against the probes of its row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub gen: AccuracyEstimate,
    /// Unparseable generations, counted as wrong in `gen`.
    pub invalid: u64,
    pub vs_lsc: ComparisonOutcome,
    pub vs_final: Option<ComparisonOutcome>,
    /// Requires a final-stage probe.
    pub taxonomy: Option<TaxonomyLabel>,
    pub dependence_vision: DependenceResult,
    pub dependence_final: Option<DependenceResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub labels: RowLabels,
    pub lsc: AccuracyEstimate,
    #[serde(rename = "final")]
    pub fin: Option<AccuracyEstimate>,
    pub methods: Vec<MethodResult>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub tests: u64,
    pub significant: u64,
    pub inverse: u64,
}

impl Tally {
    fn add(&mut self, d: &DependenceResult) {
        self.tests += 1;
        self.significant += d.significant as u64;
        self.inverse += d.is_inverse() as u64;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tallies {
    pub overall: Tally,
    pub vision: Tally,
    #[serde(rename = "final")]
    pub fin: Tally,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub tallies: Tallies,
}

/// One `(LSC, acc_gen)` point for scatter plots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterPoint {
    pub labels: RowLabels,
    pub method: String,
    pub lsc: f64,
    pub acc_gen: f64,
}

/// Sorts rows by their labels and tallies significant and inverse
/// dependences. Methods keep their order within each row.
pub fn aggregate_report(rows: Vec<EvalRow>) -> Result<EvalReport, StatsError> {
    let mut seen = BTreeSet::new();
    for row in &rows {
        if !seen.insert(row.labels.clone()) {
            return Err(StatsError::DuplicateRow(row.labels.key()));
        }
        let mut methods = BTreeSet::new();
        for m in &row.methods {
            if !methods.insert(m.method.as_str()) {
                return Err(StatsError::DuplicateRow(format!("{}#{}", row.labels.key(), m.method)));
            }
        }
    }
    let mut rows = rows;
    rows.sort_by(|a, b| a.labels.cmp(&b.labels));
    let mut tallies = Tallies::default();
    for row in &rows {
        for m in &row.methods {
            tallies.vision.add(&m.dependence_vision);
            tallies.overall.add(&m.dependence_vision);
            if let Some(d) = &m.dependence_final {
                tallies.fin.add(d);
                tallies.overall.add(d);
            }
        }
    }
    Ok(EvalReport { rows, tallies })
}

impl EvalReport {
    /// Merges several reports into one, rejecting repeated rows.
    pub fn merge(reports: impl IntoIterator<Item = EvalReport>) -> Result<Self, StatsError> {
        aggregate_report(reports.into_iter().flat_map(|r| r.rows).collect())
    }

    pub fn scatter(&self) -> Vec<ScatterPoint> {
        self.rows
            .iter()
            .flat_map(|row| {
                row.methods.iter().map(move |m| ScatterPoint {
                    labels: row.labels.clone(),
                    method: m.method.clone(),
                    lsc: row.lsc.p_hat,
                    acc_gen: m.gen.p_hat,
                })
            })
            .collect()
    }

    /// Method names in first-appearance order across rows.
    fn method_columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = Vec::new();
        for m in self.rows.iter().flat_map(|r| &r.methods) {
            if !cols.contains(&m.method) {
                cols.push(m.method.clone());
            }
        }
        cols
    }

    /// Superscript tags: the upper-cased initial of each method, or the full
    /// name when initials collide.
    fn method_tags(&self) -> BTreeMap<String, String> {
        let cols = self.method_columns();
        let initial = |m: &str| m.chars().next().map(|c| c.to_uppercase().to_string()).unwrap_or_default();
        let initials: Vec<String> = cols.iter().map(|m| initial(m)).collect();
        let unique = initials.iter().collect::<BTreeSet<_>>().len() == initials.len();
        cols.iter()
            .zip(initials)
            .map(|(m, i)| (m.clone(), if unique { i } else { m.clone() }))
            .collect()
    }

    /// Markdown results table: one column per generative method, then the
    /// vision and final probe accuracies annotated with the methods they
    /// significantly depend on (`-` marks inverse dependence).
    pub fn to_markdown(&self) -> String {
        let cols = self.method_columns();
        let tags = self.method_tags();
        let mut out = String::new();
        let mut header = String::from("| Model | Dataset | Prompt strategy |");
        let mut rule = String::from("|---|---|---|");
        for c in &cols {
            let _ = write!(header, " {c} acc (%) |");
            rule.push_str("---|");
        }
        header.push_str(" Sim. acc (vision, %) | Sim. acc (final, %) |");
        rule.push_str("---|---|");
        let _ = writeln!(out, "{header}");
        let _ = writeln!(out, "{rule}");

        for row in &self.rows {
            let l = &row.labels;
            let _ = write!(
                out,
                "| {} | {} | {} |",
                l.model.as_deref().unwrap_or("-"),
                l.dataset,
                l.prompt.as_deref().unwrap_or("-")
            );
            for c in &cols {
                match row.methods.iter().find(|m| &m.method == c) {
                    Some(m) => {
                        let _ = write!(out, " {} |", m.gen);
                    }
                    None => out.push_str(" - |"),
                }
            }
            let annotate = |pick: &dyn Fn(&MethodResult) -> Option<&DependenceResult>| {
                let marks: Vec<String> = row
                    .methods
                    .iter()
                    .filter_map(|m| {
                        let d = pick(m)?;
                        let tag = &tags[&m.method];
                        match d.direction {
                            Direction::Positive => Some(tag.clone()),
                            Direction::Inverse => Some(format!("-{tag}")),
                            Direction::None => None,
                        }
                    })
                    .collect();
                if marks.is_empty() {
                    String::new()
                } else {
                    format!("<sup>{}</sup>", marks.join(","))
                }
            };
            let vision = annotate(&|m| Some(&m.dependence_vision));
            let _ = write!(out, " {}{} |", row.lsc, vision);
            match &row.fin {
                Some(f) => {
                    let fin = annotate(&|m| m.dependence_final.as_ref());
                    let _ = writeln!(out, " {f}{fin} |");
                }
                None => out.push_str(" - |\n"),
            }
        }

        let t = &self.tallies;
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "Significant dependence (vision): {} of {}, inverse: {}",
            t.vision.significant, t.vision.tests, t.vision.inverse
        );
        let _ = writeln!(
            out,
            "Significant dependence (final): {} of {}, inverse: {}",
            t.fin.significant, t.fin.tests, t.fin.inverse
        );
        out
    }

    /// One line per (row, method).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "model,dataset,prompt,method,gen_acc,gen_me,invalid,lsc_acc,lsc_me,final_acc,final_me,\
             vs_lsc,vs_final,bottleneck_class,mechanism,vision_chi2,vision_p,vision_direction,\
             final_chi2,final_p,final_direction\n",
        );
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for row in &self.rows {
            for m in &row.methods {
                let l = &row.labels;
                let fields = [
                    csv_field(l.model.as_deref().unwrap_or("")),
                    csv_field(&l.dataset),
                    csv_field(l.prompt.as_deref().unwrap_or("")),
                    csv_field(&m.method),
                    super::sig6::round(m.gen.p_hat).to_string(),
                    super::sig6::round(m.gen.me).to_string(),
                    m.invalid.to_string(),
                    super::sig6::round(row.lsc.p_hat).to_string(),
                    super::sig6::round(row.lsc.me).to_string(),
                    opt(row.fin.as_ref().map(|f| super::sig6::round(f.p_hat))),
                    opt(row.fin.as_ref().map(|f| super::sig6::round(f.me))),
                    m.vs_lsc.as_str().to_owned(),
                    m.vs_final.map(|c| c.as_str().to_owned()).unwrap_or_default(),
                    m.taxonomy
                        .map(|t| enum_name(&t.bottleneck_class()))
                        .unwrap_or_default(),
                    m.taxonomy
                        .and_then(|t| t.mechanism())
                        .map(|x| enum_name(&x))
                        .unwrap_or_default(),
                    m.dependence_vision.chi2.to_string(),
                    m.dependence_vision.p_value.to_string(),
                    enum_name(&m.dependence_vision.direction),
                    opt(m.dependence_final.as_ref().map(|d| d.chi2)),
                    opt(m.dependence_final.as_ref().map(|d| d.p_value)),
                    m.dependence_final
                        .as_ref()
                        .map(|d| enum_name(&d.direction))
                        .unwrap_or_default(),
                ];
                out.push_str(&fields.join(","));
                out.push('\n');
            }
        }
        out
    }

    /// `(LSC, acc_gen)` pairs as CSV.
    pub fn to_scatter_csv(&self) -> String {
        let mut out = String::from("model,dataset,prompt,method,lsc,acc_gen\n");
        for p in self.scatter() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                csv_field(p.labels.model.as_deref().unwrap_or("")),
                csv_field(&p.labels.dataset),
                csv_field(p.labels.prompt.as_deref().unwrap_or("")),
                csv_field(&p.method),
                super::sig6::round(p.lsc),
                super::sig6::round(p.acc_gen),
            );
        }
        out
    }
}

fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::new(),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ContingencyTable;

    fn est(p: f64) -> AccuracyEstimate {
        AccuracyEstimate::from_proportion("x", p, 500).unwrap()
    }

    fn method(name: &str, table: ContingencyTable) -> MethodResult {
        MethodResult {
            method: name.into(),
            gen: est(0.6),
            invalid: 0,
            vs_lsc: ComparisonOutcome::Indistinguishable,
            vs_final: None,
            taxonomy: None,
            dependence_vision: DependenceResult::from_table(table, false),
            dependence_final: None,
        }
    }

    fn row(dataset: &str, methods: Vec<MethodResult>) -> EvalRow {
        EvalRow {
            labels: RowLabels {
                model: Some("m".into()),
                dataset: dataset.into(),
                prompt: None,
            },
            lsc: est(0.8),
            fin: None,
            methods,
        }
    }

    #[test]
    fn empty_report() {
        let r = aggregate_report(vec![]).unwrap();
        assert!(r.rows.is_empty());
        assert_eq!(r.tallies, Tallies::default());
    }

    #[test]
    fn tallies_count_significant_and_inverse() {
        let pos = ContingencyTable::new(40, 10, 10, 40);
        let inv = ContingencyTable::new(10, 40, 40, 10);
        let r = aggregate_report(vec![row("b", vec![method("direct", pos)]), row("a", vec![method("direct", inv)])])
            .unwrap();
        assert_eq!(r.tallies.vision.significant, 2);
        assert_eq!(r.tallies.vision.inverse, 1);
        assert_eq!(r.tallies.overall.tests, 2);
        assert_eq!(r.rows[0].labels.dataset, "a");
    }

    #[test]
    fn duplicate_rows_rejected() {
        let t = ContingencyTable::new(1, 1, 1, 1);
        let err = aggregate_report(vec![row("a", vec![method("d", t)]), row("a", vec![method("d", t)])]).unwrap_err();
        assert!(matches!(err, StatsError::DuplicateRow(_)));
        let err = aggregate_report(vec![row("a", vec![method("d", t), method("d", t)])]).unwrap_err();
        assert!(matches!(err, StatsError::DuplicateRow(_)));
    }

    #[test]
    fn tags_fall_back_to_names_on_collision() {
        let t = ContingencyTable::new(40, 10, 10, 40);
        let r = aggregate_report(vec![row("a", vec![method("cot", t), method("chain", t)])]).unwrap();
        let md = r.to_markdown();
        assert!(md.contains("<sup>cot,chain</sup>"), "{md}");
    }
}
