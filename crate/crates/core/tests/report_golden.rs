use lsc::stats::{
    aggregate_report, classify_taxonomy, compare, AccuracyEstimate, ContingencyTable, DependenceResult, EvalReport,
    EvalRow, MethodResult, RowLabels,
};

const GOLDEN: &str = include_str!("golden/baseline_table.md");

fn est(p: f64, me: f64) -> AccuracyEstimate {
    AccuracyEstimate::from_reported("x", p / 100.0, me / 100.0, 500).unwrap()
}

/// `+` significant positive, `-` significant inverse, `.` independent.
fn dep(mark: char) -> DependenceResult {
    let t = match mark {
        '+' => ContingencyTable::new(200, 50, 50, 200),
        '-' => ContingencyTable::new(50, 200, 200, 50),
        _ => ContingencyTable::new(125, 125, 125, 125),
    };
    DependenceResult::from_table(t, false)
}

fn method(name: &str, gen: (f64, f64), lsc: &AccuracyEstimate, fin: &AccuracyEstimate, marks: &str) -> MethodResult {
    let mut m = marks.chars();
    let gen = est(gen.0, gen.1);
    MethodResult {
        method: name.into(),
        invalid: 0,
        vs_lsc: compare(&gen, lsc),
        vs_final: Some(compare(&gen, fin)),
        taxonomy: Some(classify_taxonomy(&gen, lsc, fin).unwrap()),
        dependence_vision: dep(m.next().unwrap()),
        dependence_final: Some(dep(m.next().unwrap())),
        gen,
    }
}

/// Rows of the Phi / OpenWorld block with their superscript patterns.
fn fixture() -> EvalReport {
    let rows = [
        ("Interleaved", (59.0, 4.3), (80.6, 3.5), (84.0, 3.2), (76.4, 3.7), "+-", ".."),
        ("Interleaved query first", (52.4, 4.4), (68.0, 4.1), (84.0, 3.2), (66.0, 4.2), "++", ".+"),
        ("Labeled", (79.4, 3.5), (78.8, 3.6), (84.0, 3.2), (78.2, 3.6), "..", ".."),
        ("Labeled query first", (57.2, 4.3), (64.0, 4.2), (84.0, 3.2), (65.0, 4.2), "++", ".+"),
    ];
    let rows = rows
        .into_iter()
        .map(|(prompt, direct, cot, lsc, fin, d_marks, c_marks)| {
            let lsc = est(lsc.0, lsc.1);
            let fin = est(fin.0, fin.1);
            EvalRow {
                labels: RowLabels {
                    model: Some("Phi".into()),
                    dataset: "OpenWorld".into(),
                    prompt: Some(prompt.into()),
                },
                methods: vec![
                    method("Direct", direct, &lsc, &fin, d_marks),
                    method("CoT", cot, &lsc, &fin, c_marks),
                ],
                lsc,
                fin: Some(fin),
            }
        })
        .collect();
    aggregate_report(rows).unwrap()
}

#[test]
fn markdown_matches_golden() {
    assert_eq!(fixture().to_markdown(), GOLDEN);
}

#[test]
fn superscripts_follow_the_published_pattern() {
    let md = fixture().to_markdown();
    let line = |prompt: &str| md.lines().find(|l| l.contains(&format!("| {prompt} |"))).unwrap().to_owned();
    assert!(line("Interleaved").ends_with("| 84.0 ± 3.2<sup>D</sup> | 76.4 ± 3.7<sup>-D</sup> |"));
    assert!(line("Interleaved query first").ends_with("| 84.0 ± 3.2<sup>D</sup> | 66.0 ± 4.2<sup>D,C</sup> |"));
    assert!(line("Labeled").ends_with("| 84.0 ± 3.2 | 78.2 ± 3.6 |"));
    assert!(line("Labeled query first").ends_with("| 84.0 ± 3.2<sup>D</sup> | 65.0 ± 4.2<sup>D,C</sup> |"));
}

#[test]
fn json_round_trip_preserves_rendering() {
    let report = fixture();
    let back: EvalReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(back.to_markdown(), GOLDEN);
    assert_eq!(back.to_csv(), report.to_csv());
}
