//! Plain-text tables and CSV for the analysis and simulation reports.
//!
//! The JSON forms come straight from the library's `Serialize` impls; this
//! module only handles the human-readable and spreadsheet-friendly shapes.
//! CSV cells use the shortest round-trip float representation so that no
//! precision is lost relative to the JSON report.

use mptrial::sim::oracle::TruthTable;
use mptrial::sim::replicate::MonteCarloSummary;
use mptrial::{ComparatorReport, EstimateReport};
use serde::Serialize;

/// Everything one `analyze` invocation produced, in request order.
#[derive(Debug, Serialize)]
pub struct AnalysisBundle {
    pub n_participants: usize,
    pub n_records: usize,
    /// Records dropped by the missing-outcome policy.
    pub n_dropped: usize,
    pub level: f64,
    pub contrasts: Vec<EstimateReport>,
    pub comparators: Vec<ComparatorReport>,
}

struct ResultLine {
    method: String,
    comparison: String,
    estimate: f64,
    se: f64,
    ci: [f64; 2],
    n_participants: usize,
    n_person_episodes: Option<usize>,
    noninferior: Option<bool>,
}

impl AnalysisBundle {
    fn lines(&self) -> Vec<ResultLine> {
        let mut lines: Vec<ResultLine> = self
            .contrasts
            .iter()
            .map(|r| ResultLine {
                method: r.method.to_string(),
                comparison: r.comparison.clone(),
                estimate: r.estimate,
                se: r.se,
                ci: r.ci,
                n_participants: r.n_participants,
                n_person_episodes: Some(r.n_person_episodes),
                noninferior: r.noninferiority.as_ref().map(|t| t.declared),
            })
            .collect();
        lines.extend(self.comparators.iter().map(|r| ResultLine {
            method: r.method.to_string(),
            comparison: r.comparison.clone(),
            estimate: r.estimate,
            se: r.se,
            ci: r.ci,
            n_participants: r.n_participants,
            n_person_episodes: None,
            noninferior: r.noninferiority.as_ref().map(|t| t.declared),
        }));
        lines
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "dataset: {} participants, {} person-episodes",
            self.n_participants, self.n_records
        );
        if self.n_dropped > 0 {
            out.push_str(&format!(" ({} dropped for missing outcomes)", self.n_dropped));
        }
        out.push('\n');
        let pct = self.level * 100.0;
        let lines = self.lines();
        let has_ni = lines.iter().any(|l| l.noninferior.is_some());
        let mut header =
            vec!["method".into(), "comparison".into(), "estimate".into(), "se".into(),
                 format!("{pct}% CI"), "n".into()];
        if has_ni {
            header.push("noninferior".into());
        }
        let rows: Vec<Vec<String>> = lines
            .iter()
            .map(|l| {
                let mut row = vec![
                    l.method.clone(),
                    l.comparison.clone(),
                    format!("{:.4}", l.estimate),
                    format!("{:.4}", l.se),
                    format!("[{:.4}, {:.4}]", l.ci[0], l.ci[1]),
                    l.n_participants.to_string(),
                ];
                if has_ni {
                    row.push(match l.noninferior {
                        Some(true) => "yes".into(),
                        Some(false) => "no".into(),
                        None => String::new(),
                    });
                }
                row
            })
            .collect();
        out.push_str(&aligned(&header, &rows));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("method,comparison,estimate,se,ci_lo,ci_hi,n_participants,n_person_episodes,noninferior\n");
        for l in self.lines() {
            let ep = l.n_person_episodes.map(|n| n.to_string()).unwrap_or_default();
            let ni = match l.noninferior {
                Some(true) => "yes",
                Some(false) => "no",
                None => "",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                l.method, l.comparison, l.estimate, l.se, l.ci[0], l.ci[1], l.n_participants,
                ep, ni
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }
}

pub fn summary_text(summary: &MonteCarloSummary) -> String {
    let mut out = format!(
        "n={} scenario={} seed={} reps={} (truth from {} draws)\n",
        summary.n, summary.scenario, summary.seed, summary.reps, summary.truth_draws
    );
    let header: Vec<String> =
        ["method", "comparison", "truth", "bias", "sd", "mean_se", "cp", "reps"]
            .map(String::from)
            .to_vec();
    let rows: Vec<Vec<String>> = summary
        .rows
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                r.comparison.clone(),
                format!("{:.4}", r.truth),
                format!("{:.4}", r.bias),
                r.sd.map(|s| format!("{s:.4}")).unwrap_or_default(),
                format!("{:.4}", r.mean_se),
                format!("{:.3}", r.cp),
                r.reps_used.to_string(),
            ]
        })
        .collect();
    out.push_str(&aligned(&header, &rows));
    for (cell, msg) in &summary.failure_notes {
        out.push_str(&format!("note: {cell}: {msg}\n"));
    }
    out
}

pub fn truths_text(table: &TruthTable) -> String {
    let mut out = format!(
        "scenario={} seed={} draws={}\n",
        table.scenario, table.seed, table.draws
    );
    let header: Vec<String> = ["estimand", "truth", "mc_se"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = table
        .truths
        .iter()
        .map(|(k, t)| vec![k.clone(), format!("{:.6}", t.value), format!("{:.6}", t.mc_se)])
        .collect();
    out.push_str(&aligned(&header, &rows));
    out
}

/// Left-align the first two columns, right-align the rest, pad with spaces.
fn aligned(header: &[String], rows: &[Vec<String>]) -> String {
    let ncol = header.len();
    let mut width = vec![0usize; ncol];
    for row in std::iter::once(header).chain(rows.iter().map(|r| &r[..])) {
        for (c, cell) in row.iter().enumerate() {
            width[c] = width[c].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in std::iter::once(header).chain(rows.iter().map(|r| &r[..])) {
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                out.push_str("  ");
            }
            let pad = width[c] - cell.chars().count();
            if c < 2 {
                out.push_str(cell);
                if c + 1 < ncol {
                    out.push_str(&" ".repeat(pad));
                }
            } else {
                out.push_str(&" ".repeat(pad));
                out.push_str(cell);
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_pads_numeric_columns_on_the_left() {
        let header: Vec<String> = ["a", "b", "value"].map(String::from).to_vec();
        let rows = vec![
            vec!["x".into(), "long-label".into(), "1.5".into()],
            vec!["longer".into(), "y".into(), "-10.25".into()],
        ];
        let text = aligned(&header, &rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let w = lines[0].len();
        assert!(lines.iter().all(|l| l.len() == w), "{text}");
        assert!(lines[1].ends_with("1.5"));
        assert!(lines[2].ends_with("-10.25"));
    }

    #[test]
    fn empty_bundle_renders_header_only() {
        let bundle = AnalysisBundle {
            n_participants: 0,
            n_records: 0,
            n_dropped: 0,
            level: 0.95,
            contrasts: vec![],
            comparators: vec![],
        };
        assert_eq!(bundle.to_csv().lines().count(), 1);
        assert!(bundle.to_text().contains("0 participants"));
        let v: serde_json::Value = serde_json::from_str(&bundle.to_json()).unwrap();
        assert_eq!(v["contrasts"], serde_json::json!([]));
    }
}
