//! Replication studies: operating characteristics of every estimator over
//! repeated draws of the same trial design.
//!
//! Each replication generates a dataset and runs the full analysis pipeline
//! for a fixed grid of cells: the five contrast estimators on all episodes
//! and on the first episode only, plus the three single-substudy comparators,
//! for both treatment-versus-control comparisons. Replications are
//! independent and may run in parallel; aggregation always walks them in
//! replication order, so summaries are bit-identical for any worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use std::collections::BTreeMap;

use serde::Serialize;

use super::generate::{generate_trial, SimConfig};
use super::oracle::{comparison_label, substudy_of, truth_key, TruthScope, TruthTable, COMPARISONS};
use crate::analyze::{analyze_comparator, analyze_contrast, AnalysisOptions};
use crate::comparators::Comparator;
use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::num::{mean, sample_variance};
use crate::scheme::{AssignmentScheme, EpisodeScope};
use crate::sim::generate::default_scheme;

/// Covariates handed to the working models and covariate-adjusted
/// comparators. Deliberately omits the categorical eligibility driver, so all
/// outcome models are misspecified.
pub const ADJUSTMENT_COVARIATES: [&str; 2] = ["x_c", "x_b"];

/// Monte Carlo operating characteristics of one analysis cell.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    /// Estimator label: `"ipw"`, `"ipw_ep1"`, `"anova"`, ...
    pub method: String,
    /// `"2v1"` or `"3v1"`.
    pub comparison: String,
    pub truth: f64,
    pub bias: f64,
    /// Monte Carlo standard deviation of the estimates; `None` below two
    /// successful replications.
    pub sd: Option<f64>,
    pub mean_se: f64,
    /// Empirical coverage of the nominal confidence interval.
    pub cp: f64,
    pub reps_used: u32,
    pub failures: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloSummary {
    pub n: u64,
    pub scenario: u8,
    pub seed: u64,
    pub reps: u32,
    pub truth_draws: u64,
    pub rows: Vec<SummaryRow>,
    /// First error message seen per failing cell (`"method/comparison"`).
    pub failure_notes: BTreeMap<String, String>,
}

enum CellKind {
    Contrast { method: Method, first_episode_only: bool },
    Comparator { kind: Comparator },
}

struct CellSpec {
    label: String,
    arm_j: &'static str,
    arm_k: &'static str,
    comparison: String,
    truth: f64,
    kind: CellKind,
}

fn build_grid(truths: &TruthTable) -> Result<Vec<CellSpec>> {
    let mut cells = Vec::new();
    for (j, k) in COMPARISONS {
        let comparison = comparison_label(j, k);
        for (first_only, suffix) in [(false, ""), (true, "_ep1")] {
            let scope = if first_only { TruthScope::Episode(1) } else { TruthScope::Pooled };
            let truth = truths.value(&truth_key(&comparison, scope))?;
            for method in Method::ALL {
                cells.push(CellSpec {
                    label: format!("{}{suffix}", method.name()),
                    arm_j: j,
                    arm_k: k,
                    comparison: comparison.clone(),
                    truth,
                    kind: CellKind::Contrast { method, first_episode_only: first_only },
                });
            }
        }
        let truth = truths.value(&truth_key(&comparison, TruthScope::Substudy))?;
        for kind in Comparator::ALL {
            cells.push(CellSpec {
                label: kind.name().to_string(),
                arm_j: j,
                arm_k: k,
                comparison: comparison.clone(),
                truth,
                kind: CellKind::Comparator { kind },
            });
        }
    }
    Ok(cells)
}

struct CellResult {
    estimate: f64,
    se: f64,
    covered: bool,
}

fn options_for(first_episode_only: bool) -> AnalysisOptions {
    AnalysisOptions {
        episodes: if first_episode_only {
            EpisodeScope::Episodes(vec![1])
        } else {
            EpisodeScope::All
        },
        covariates: ADJUSTMENT_COVARIATES.iter().map(|c| c.to_string()).collect(),
        ..AnalysisOptions::default()
    }
}

fn run_one(
    cfg: &SimConfig,
    scheme: &AssignmentScheme,
    cells: &[CellSpec],
    rep: u64,
) -> Result<Vec<std::result::Result<CellResult, String>>> {
    let rs = generate_trial(cfg, rep)?;
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        let report = match &cell.kind {
            CellKind::Contrast { method, first_episode_only } => {
                let options = options_for(*first_episode_only);
                analyze_contrast(&rs, scheme, *method, cell.arm_j, cell.arm_k, &options)
                    .map(|r| (r.estimate, r.se, r.ci))
            }
            CellKind::Comparator { kind } => {
                let options = options_for(false);
                analyze_comparator(
                    &rs,
                    *kind,
                    Some(substudy_of(cell.arm_j)),
                    cell.arm_j,
                    cell.arm_k,
                    &options,
                )
                .map(|r| (r.estimate, r.se, r.ci))
            }
        };
        out.push(match report {
            Ok((estimate, se, ci)) => Ok(CellResult {
                estimate,
                se,
                covered: ci[0] <= cell.truth && cell.truth <= ci[1],
            }),
            Err(e) => Err(e.to_string()),
        });
    }
    Ok(out)
}

/// Run `cfg.reps` replications of the configured study and summarize each
/// analysis cell against the supplied truth table.
///
/// A replication that fails for one cell (say, an empty stratum for a
/// stratified estimator) is excluded from that cell only; the failure is
/// counted and its first message kept.
pub fn run_replications(cfg: &SimConfig, truths: &TruthTable) -> Result<MonteCarloSummary> {
    cfg.validate()?;
    if cfg.reps == 0 {
        return Err(Error::validation("config: reps must be at least 1"));
    }
    let scheme = default_scheme();
    let cells = build_grid(truths)?;

    #[cfg(feature = "parallel")]
    let per_rep: Vec<Vec<std::result::Result<CellResult, String>>> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|rep| run_one(cfg, &scheme, &cells, rep))
        .collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let per_rep: Vec<Vec<std::result::Result<CellResult, String>>> = (0..cfg.reps as u64)
        .map(|rep| run_one(cfg, &scheme, &cells, rep))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(cells.len());
    let mut failure_notes = BTreeMap::new();
    for (ci, cell) in cells.iter().enumerate() {
        let mut estimates = Vec::with_capacity(per_rep.len());
        let mut ses = Vec::with_capacity(per_rep.len());
        let mut covered = 0u32;
        let mut failures = 0u32;
        for rep_cells in &per_rep {
            match &rep_cells[ci] {
                Ok(r) => {
                    estimates.push(r.estimate);
                    ses.push(r.se);
                    covered += r.covered as u32;
                }
                Err(msg) => {
                    failures += 1;
                    failure_notes
                        .entry(format!("{}/{}", cell.label, cell.comparison))
                        .or_insert_with(|| msg.clone());
                }
            }
        }
        let used = estimates.len() as u32;
        rows.push(SummaryRow {
            method: cell.label.clone(),
            comparison: cell.comparison.clone(),
            truth: cell.truth,
            bias: if used > 0 { mean(&estimates) - cell.truth } else { f64::NAN },
            sd: sample_variance(&estimates).map(f64::sqrt),
            mean_se: if used > 0 { mean(&ses) } else { f64::NAN },
            cp: if used > 0 { covered as f64 / used as f64 } else { f64::NAN },
            reps_used: used,
            failures,
        });
    }

    Ok(MonteCarloSummary {
        n: cfg.n,
        scenario: cfg.scenario,
        seed: cfg.seed,
        reps: cfg.reps,
        truth_draws: truths.draws,
        rows,
        failure_notes,
    })
}

/// Render a summary as CSV with one row per analysis cell.
pub fn summary_to_csv(summary: &MonteCarloSummary) -> String {
    let mut out = String::from("method,comparison,truth,bias,sd,mean_se,cp,reps_used\n");
    for r in &summary.rows {
        let sd = r.sd.map(|s| s.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.method, r.comparison, r.truth, r.bias, sd, r.mean_se, r.cp, r.reps_used
        ));
    }
    out
}

/// Run `f` on a dedicated pool of `workers` threads (`None` = the default
/// pool). Without the `parallel` feature everything runs on the caller's
/// thread and `workers` is ignored.
#[cfg(feature = "parallel")]
pub fn with_worker_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::validation(format!("worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_worker_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let _ = workers;
    Ok(f())
}
