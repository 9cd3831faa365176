//! One-call analysis pipeline: estimate → influence → variance → interval →
//! decision, packaged into serializable reports with audit counts.

use serde::Serialize;

use crate::comparators::{substudy_comparator, Comparator};
use crate::data::RecordSet;
use crate::error::{Error, Result};
use crate::estimators::{estimate_arm_mean, ArmMeanEstimate, ContrastEstimate, Method};
use crate::inference::{
    cluster_robust_variance, confidence_interval, influence_table, noninferiority_test,
    wald_interval, ClusterScope, NoninferiorityTest, VarianceReport,
};
use crate::scheme::{AssignmentScheme, EpisodeScope};
use crate::working::{fit_working_model, FittedWorkingModel, OutcomeModel, Pooling};

/// Options shared by every contrast analysis in a run.
#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub episodes: EpisodeScope,
    /// Covariates for the working models (augmented methods) and the
    /// substudy comparators. Empty = intercept-only working models.
    pub covariates: Vec<String>,
    pub pooling: Pooling,
    /// Two-sided confidence level.
    pub level: f64,
    /// Non-inferiority margin; when set, every report carries the decision.
    pub margin: Option<f64>,
    pub cluster_scope: ClusterScope,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            episodes: EpisodeScope::All,
            covariates: Vec::new(),
            pooling: Pooling::PerEpisode,
            level: 0.95,
            margin: None,
            cluster_scope: ClusterScope::Contributing,
        }
    }
}

/// Per-stratum audit counts for the stratified methods, both directions.
#[derive(Debug, Clone, Serialize)]
pub struct StratumReport {
    pub pi_j: f64,
    pub pi_k: f64,
    pub n: usize,
    pub n_j: usize,
    pub n_k: usize,
}

/// Per-episode audit counts and component estimates.
#[derive(Debug, Clone, Serialize)]
pub struct PerEpisodeReport {
    pub episode: u32,
    pub n_members: usize,
    pub n_treated_j: usize,
    pub n_treated_k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_jk: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_kj: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strata: Option<Vec<StratumReport>>,
}

/// Full inference report for one method × comparison.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub method: Method,
    /// "jvk", e.g. "2v1".
    pub comparison: String,
    pub estimate: f64,
    pub se: f64,
    pub ci: [f64; 2],
    pub level: f64,
    pub n_participants: usize,
    pub n_person_episodes: usize,
    pub per_episode: Vec<PerEpisodeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noninferiority: Option<NoninferiorityTest>,
    #[serde(skip)]
    pub variance: Option<VarianceReport>,
}

fn merge_per_episode(
    theta_jk: &ArmMeanEstimate,
    theta_kj: &ArmMeanEstimate,
) -> Vec<PerEpisodeReport> {
    theta_jk
        .per_episode
        .iter()
        .zip(&theta_kj.per_episode)
        .map(|(cj, ck)| {
            debug_assert_eq!(cj.episode, ck.episode);
            let strata = cj.strata.as_ref().map(|sj| {
                sj.iter()
                    .map(|s| {
                        // the reverse direction partitions the same members by
                        // the swapped pair (π_k, π_j)
                        let n_k = ck
                            .strata
                            .as_ref()
                            .and_then(|sk| {
                                sk.iter().find(|r| {
                                    r.pi_j.to_bits() == s.pi_k.to_bits()
                                        && r.pi_k.to_bits() == s.pi_j.to_bits()
                                })
                            })
                            .map(|r| r.n_treated)
                            .unwrap_or(0);
                        StratumReport { pi_j: s.pi_j, pi_k: s.pi_k, n: s.n, n_j: s.n_treated, n_k }
                    })
                    .collect()
            });
            PerEpisodeReport {
                episode: cj.episode,
                n_members: cj.n_members,
                n_treated_j: cj.n_treated,
                n_treated_k: ck.n_treated,
                theta_jk: cj.estimate,
                theta_kj: ck.estimate,
                strata,
            }
        })
        .collect()
}

/// The fitted working models behind an augmented contrast (one per
/// direction), kept so influence values use exactly the estimate's μ̂.
pub struct ContrastFit {
    pub contrast: ContrastEstimate,
    pub model_j: Option<FittedWorkingModel>,
    pub model_k: Option<FittedWorkingModel>,
}

/// Estimate a contrast, keeping the fitted working models for inference.
pub fn fit_contrast(
    rs: &RecordSet,
    scheme: &AssignmentScheme,
    method: Method,
    j: &str,
    k: &str,
    options: &AnalysisOptions,
) -> Result<ContrastFit> {
    let (model_j, model_k) = if method.is_augmented() {
        (
            Some(fit_working_model(
                rs, scheme, j, k, j, &options.covariates, &options.episodes, options.pooling,
            )?),
            Some(fit_working_model(
                rs, scheme, j, k, k, &options.covariates, &options.episodes, options.pooling,
            )?),
        )
    } else {
        (None, None)
    };
    fn as_dyn(m: &Option<FittedWorkingModel>) -> Option<&dyn OutcomeModel> {
        m.as_ref().map(|m| m as &dyn OutcomeModel)
    }
    let theta_jk =
        estimate_arm_mean(method, rs, scheme, j, k, &options.episodes, as_dyn(&model_j))?;
    let theta_kj =
        estimate_arm_mean(method, rs, scheme, k, j, &options.episodes, as_dyn(&model_k))?;
    Ok(ContrastFit {
        contrast: ContrastEstimate {
            method,
            arm_j: j.to_string(),
            arm_k: k.to_string(),
            value: theta_jk.value - theta_kj.value,
            theta_jk,
            theta_kj,
        },
        model_j,
        model_k,
    })
}

/// Full pipeline for one method × comparison: point estimate,
/// cluster-robust SE, confidence interval, and (optionally) the
/// non-inferiority decision.
pub fn analyze_contrast(
    rs: &RecordSet,
    scheme: &AssignmentScheme,
    method: Method,
    j: &str,
    k: &str,
    options: &AnalysisOptions,
) -> Result<EstimateReport> {
    let fit = fit_contrast(rs, scheme, method, j, k, options)?;
    let tbl = influence_table(
        rs,
        scheme,
        &fit.contrast,
        fit.model_j.as_ref().map(|m| m as &dyn OutcomeModel),
        fit.model_k.as_ref().map(|m| m as &dyn OutcomeModel),
        options.cluster_scope,
    )?;
    let variance = cluster_robust_variance(&tbl)?;
    let ci = confidence_interval(&fit.contrast, &variance, options.level)?;
    let noninferiority = options
        .margin
        .map(|margin| noninferiority_test(&fit.contrast, &variance, margin, options.level))
        .transpose()?;
    Ok(EstimateReport {
        method,
        comparison: fit.contrast.comparison(),
        estimate: fit.contrast.value,
        se: variance.se,
        ci: [ci.0, ci.1],
        level: options.level,
        n_participants: tbl.n,
        n_person_episodes: fit.contrast.theta_jk.n_person_episodes,
        per_episode: merge_per_episode(&fit.contrast.theta_jk, &fit.contrast.theta_kj),
        noninferiority,
        variance: Some(variance),
    })
}

/// Report for a within-substudy comparator.
#[derive(Debug, Clone, Serialize)]
pub struct ComparatorReport {
    pub method: Comparator,
    pub comparison: String,
    pub substudy: String,
    pub estimate: f64,
    pub se: f64,
    pub ci: [f64; 2],
    pub level: f64,
    pub n_participants: usize,
    pub n_treated: usize,
    pub n_control: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noninferiority: Option<NoninferiorityTest>,
}

/// Run a substudy comparator. When `substudy` is `None` the unique substudy
/// containing records of both arms is used; zero or several candidates is an
/// error asking for an explicit label.
pub fn analyze_comparator(
    rs: &RecordSet,
    kind: Comparator,
    substudy: Option<&str>,
    treated: &str,
    control: &str,
    options: &AnalysisOptions,
) -> Result<ComparatorReport> {
    let label = match substudy {
        Some(s) => s.to_string(),
        None => {
            let mut candidates: Vec<String> = Vec::new();
            let mut labels: Vec<&str> =
                rs.records().iter().filter_map(|r| r.substudy.as_deref()).collect();
            labels.sort();
            labels.dedup();
            for s in labels {
                let has = |arm: &str| {
                    rs.records()
                        .iter()
                        .any(|r| r.substudy.as_deref() == Some(s) && r.arm == arm)
                };
                if has(treated) && has(control) {
                    candidates.push(s.to_string());
                }
            }
            match candidates.len() {
                1 => candidates.pop().unwrap(),
                0 => {
                    return Err(Error::validation(format!(
                        "no substudy contains both arm '{treated}' and arm '{control}'"
                    )))
                }
                _ => {
                    return Err(Error::validation(format!(
                        "arms '{treated}' and '{control}' appear together in several substudies \
                         ({}); specify one",
                        candidates.join(", ")
                    )))
                }
            }
        }
    };
    let est = substudy_comparator(kind, rs, &label, treated, control, &options.covariates)?;
    let ci = wald_interval(est.value, est.se, options.level)?;
    let noninferiority = match options.margin {
        Some(margin) => {
            let z = (est.value - margin) / est.se;
            Some(NoninferiorityTest {
                margin,
                level: options.level,
                lower: ci.0,
                z: z.is_finite().then_some(z),
                declared: ci.0 > margin,
            })
        }
        None => None,
    };
    Ok(ComparatorReport {
        method: kind,
        comparison: format!("{treated}v{control}"),
        substudy: label,
        estimate: est.value,
        se: est.se,
        ci: [ci.0, ci.1],
        level: options.level,
        n_participants: est.n,
        n_treated: est.n_treated,
        n_control: est.n_control,
        noninferiority,
    })
}
