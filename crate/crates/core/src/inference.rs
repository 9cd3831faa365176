//! Influence values, cluster-robust variance, confidence intervals, and the
//! non-inferiority decision.
//!
//! Each estimator has a per-participant influence value: the participant's
//! episode-level contributions are computed with empirical plug-ins (episode
//! membership rates, within-stratum arm means, working-model predictions and
//! their stratum averages, and the point estimate itself), summed within the
//! participant, and scaled by n / n_jk. Because re-enrollment episodes of one
//! participant land in the same row, the sample variance of these rows is a
//! cluster-robust variance for the estimator — no model for within-person
//! correlation is needed.
//!
//! Every column of influence values sums to zero by construction (the
//! plug-ins make the identity algebraic, not asymptotic); tests assert it.

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::RecordSet;
use crate::error::{Error, Result};
use crate::estimators::{ArmMeanEstimate, ContrastEstimate, Method};
use crate::num::{kahan_sum, sample_covariance, sample_variance, KahanSum};
use crate::scheme::{derive_strata, prepare_comparison, AssignmentScheme, EpisodeScope};
use crate::working::OutcomeModel;

/// Which participants count toward n in the influence-value scaling and the
/// variance denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterScope {
    /// Participants contributing at least one person-episode to the
    /// comparison's eligibility populations (the default).
    Contributing,
    /// Every participant in the record set; non-contributors get zero rows.
    /// Because influence columns sum to zero, the two scopes differ only by
    /// a Bessel-type factor sqrt[(n_all−n_c)/(n_all·(n_c−1)) + 1]-ish that is
    /// negligible at realistic sizes; both are exposed for auditability.
    AllParticipants,
}

/// One direction's influence values φ̂_jk, one row per participant.
#[derive(Debug, Clone)]
pub struct InfluenceColumn {
    pub method: Method,
    pub arm: String,
    pub other: String,
    pub participants: Vec<String>,
    pub phi: Vec<f64>,
    pub n: usize,
}

/// Both directions of a contrast on a shared participant index.
#[derive(Debug, Clone)]
pub struct InfluenceTable {
    pub method: Method,
    pub arm_j: String,
    pub arm_k: String,
    pub participants: Vec<String>,
    pub phi_jk: Vec<f64>,
    pub phi_kj: Vec<f64>,
    pub n: usize,
}

/// Per-participant raw sums of episode contributions for one direction,
/// before the n/n_jk scaling. Participants with no contribution are absent.
fn raw_participant_sums(
    rs: &RecordSet,
    scheme: &AssignmentScheme,
    estimate: &ArmMeanEstimate,
    model: Option<&dyn OutcomeModel>,
) -> Result<BTreeMap<String, f64>> {
    let j = estimate.arm.as_str();
    let k = estimate.other.as_str();
    let scope = EpisodeScope::Episodes(estimate.episodes.clone());
    let prepared = prepare_comparison(scheme, rs, j, k, &scope)?;
    if prepared.n_jk != estimate.n_person_episodes
        || prepared.participants.len() != estimate.n_participants
    {
        return Err(Error::estimation(format!(
            "influence values: data does not match the estimate \
             (n_person_episodes {} vs {}, participants {} vs {})",
            prepared.n_jk,
            estimate.n_person_episodes,
            prepared.participants.len(),
            estimate.n_participants
        )));
    }
    if estimate.method.is_augmented() && model.is_none() {
        return Err(Error::estimation(format!(
            "influence values for {} require the working model used by the estimate",
            estimate.method
        )));
    }
    let theta = estimate.value;

    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut add = |participant: &str, value: f64| {
        *sums.entry(participant.to_string()).or_insert(0.0) += value;
    };

    for pop in &prepared.pops {
        match estimate.method {
            Method::Ipw => {
                for (pos, &idx) in pop.members.iter().enumerate() {
                    let rec = &rs.records()[idx];
                    let mut psi = -theta;
                    if rec.arm == j {
                        psi += outcome(rs, idx)? / pop.pi_j[pos];
                    }
                    add(&rec.participant, psi);
                }
            }
            Method::Sipw => {
                for (pos, &idx) in pop.members.iter().enumerate() {
                    let rec = &rs.records()[idx];
                    let psi = if rec.arm == j {
                        (outcome(rs, idx)? - theta) / pop.pi_j[pos]
                    } else {
                        0.0
                    };
                    add(&rec.participant, psi);
                }
            }
            Method::Aipw => {
                let model = model.expect("checked above");
                for (pos, &idx) in pop.members.iter().enumerate() {
                    let rec = &rs.records()[idx];
                    let mu = model.predict(pop.episode, rec)?;
                    let mut psi = mu - theta;
                    if rec.arm == j {
                        psi += (outcome(rs, idx)? - mu) / pop.pi_j[pos];
                    }
                    add(&rec.participant, psi);
                }
            }
            Method::Ps | Method::Aps => {
                let strata = derive_strata(pop);
                for stratum in &strata {
                    // Empirical within-stratum quantities: the arm-j outcome
                    // mean, the treated share, and (for the augmented form)
                    // the all-member mean of μ̂.
                    let mut y_sum = KahanSum::new();
                    let mut mu_sum = KahanSum::new();
                    let mut n_treated = 0usize;
                    for &pos in &stratum.members {
                        let idx = pop.members[pos];
                        let rec = &rs.records()[idx];
                        if estimate.method == Method::Aps {
                            let model = model.expect("checked above");
                            mu_sum.add(model.predict(pop.episode, rec)?);
                        }
                        if rec.arm == j {
                            y_sum.add(outcome(rs, idx)?);
                            n_treated += 1;
                        }
                    }
                    if n_treated == 0 {
                        return Err(Error::estimation(format!(
                            "empty-arm stratum: comparison ({j}, {k}), episode {}, stratum {} \
                             (π_j = {}, π_k = {}): no arm-{j} records",
                            pop.episode, stratum.id, stratum.pi_j, stratum.pi_k
                        )));
                    }
                    let n_h = stratum.members.len() as f64;
                    let inv_pjh = n_h / n_treated as f64;
                    let y_bar = y_sum.value() / n_treated as f64;
                    let mu_bar = mu_sum.value() / n_h;
                    for &pos in &stratum.members {
                        let idx = pop.members[pos];
                        let rec = &rs.records()[idx];
                        let psi = match estimate.method {
                            Method::Ps => {
                                let mut psi = y_bar - theta;
                                if rec.arm == j {
                                    psi += inv_pjh * (outcome(rs, idx)? - y_bar);
                                }
                                psi
                            }
                            Method::Aps => {
                                let model = model.expect("checked above");
                                let mu = model.predict(pop.episode, rec)?;
                                let mut psi = y_bar + mu - mu_bar - theta;
                                if rec.arm == j {
                                    psi += inv_pjh * (outcome(rs, idx)? - mu + mu_bar - y_bar);
                                }
                                psi
                            }
                            _ => unreachable!(),
                        };
                        add(&rec.participant, psi);
                    }
                }
            }
        }
    }
    Ok(sums)
}

fn outcome(rs: &RecordSet, idx: usize) -> Result<f64> {
    let rec = &rs.records()[idx];
    rec.outcome.ok_or_else(|| {
        Error::estimation(format!("{}: missing outcome in analysis population", rec.locator()))
    })
}

fn scope_participants(
    rs: &RecordSet,
    contributing: Vec<String>,
    cluster_scope: ClusterScope,
) -> Vec<String> {
    match cluster_scope {
        ClusterScope::Contributing => contributing,
        ClusterScope::AllParticipants => rs.participants().map(str::to_string).collect(),
    }
}

/// Influence values for one arm-mean estimate: the participant-summed
/// episode contributions scaled by n / n_jk.
pub fn influence_values(
    rs: &RecordSet,
    scheme: &AssignmentScheme,
    estimate: &ArmMeanEstimate,
    model: Option<&dyn OutcomeModel>,
    cluster_scope: ClusterScope,
) -> Result<InfluenceColumn> {
    let sums = raw_participant_sums(rs, scheme, estimate, model)?;
    let participants =
        scope_participants(rs, sums.keys().cloned().collect(), cluster_scope);
    let n = participants.len();
    let scale = n as f64 / estimate.n_person_episodes as f64;
    let phi: Vec<f64> =
        participants.iter().map(|p| scale * sums.get(p).copied().unwrap_or(0.0)).collect();
    Ok(InfluenceColumn {
        method: estimate.method,
        arm: estimate.arm.clone(),
        other: estimate.other.clone(),
        participants,
        phi,
        n,
    })
}

/// Influence values for both directions of a contrast, on one shared
/// participant index. The two directions have the same eligibility
/// populations (membership is symmetric in (j,k)), so the contributing set is
/// shared and the rows line up by construction.
pub fn influence_table(
    rs: &RecordSet,
    scheme: &AssignmentScheme,
    contrast: &ContrastEstimate,
    model_j: Option<&dyn OutcomeModel>,
    model_k: Option<&dyn OutcomeModel>,
    cluster_scope: ClusterScope,
) -> Result<InfluenceTable> {
    let sums_jk = raw_participant_sums(rs, scheme, &contrast.theta_jk, model_j)?;
    let sums_kj = raw_participant_sums(rs, scheme, &contrast.theta_kj, model_k)?;
    let mut contributing: Vec<String> =
        sums_jk.keys().chain(sums_kj.keys()).cloned().collect();
    contributing.sort();
    contributing.dedup();
    let participants = scope_participants(rs, contributing, cluster_scope);
    let n = participants.len();
    let scale_jk = n as f64 / contrast.theta_jk.n_person_episodes as f64;
    let scale_kj = n as f64 / contrast.theta_kj.n_person_episodes as f64;
    let phi_jk: Vec<f64> =
        participants.iter().map(|p| scale_jk * sums_jk.get(p).copied().unwrap_or(0.0)).collect();
    let phi_kj: Vec<f64> =
        participants.iter().map(|p| scale_kj * sums_kj.get(p).copied().unwrap_or(0.0)).collect();
    Ok(InfluenceTable {
        method: contrast.method,
        arm_j: contrast.arm_j.clone(),
        arm_k: contrast.arm_k.clone(),
        participants,
        phi_jk,
        phi_kj,
        n,
    })
}

/// Cluster-robust variance summary for (θ̂_jk, θ̂_kj) and their contrast.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub n: usize,
    /// Estimated Var(θ̂_jk): sample variance of φ̂_jk divided by n.
    pub var_jk: f64,
    pub var_kj: f64,
    /// Estimated Cov(θ̂_jk, θ̂_kj).
    pub cov: f64,
    /// Var of the contrast from per-participant differences φ̂_jk − φ̂_kj.
    pub contrast_var: f64,
    /// The same quantity as the quadratic form var_jk + var_kj − 2·cov;
    /// algebraically equal to `contrast_var`, emitted for auditability.
    pub quad_contrast_var: f64,
    /// sqrt(contrast_var).
    pub se: f64,
}

pub fn cluster_robust_variance(tbl: &InfluenceTable) -> Result<VarianceReport> {
    let n = tbl.n;
    if n < 2 {
        return Err(Error::estimation(format!(
            "cluster-robust variance needs at least 2 participants (got {n})"
        )));
    }
    let nf = n as f64;
    let undefined = || Error::estimation("variance undefined");
    let var_jk = sample_variance(&tbl.phi_jk).ok_or_else(undefined)? / nf;
    let var_kj = sample_variance(&tbl.phi_kj).ok_or_else(undefined)? / nf;
    let cov = sample_covariance(&tbl.phi_jk, &tbl.phi_kj).ok_or_else(undefined)? / nf;
    let diffs: Vec<f64> =
        tbl.phi_jk.iter().zip(&tbl.phi_kj).map(|(a, b)| a - b).collect();
    let contrast_var = sample_variance(&diffs).ok_or_else(undefined)? / nf;
    let quad_contrast_var = var_jk + var_kj - 2.0 * cov;
    Ok(VarianceReport {
        n,
        var_jk,
        var_kj,
        cov,
        contrast_var,
        quad_contrast_var,
        se: contrast_var.max(0.0).sqrt(),
    })
}

fn z_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::validation(format!("confidence level {level} outside (0, 1)")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}

/// Wald interval value ± z·se at the given two-sided level.
pub fn wald_interval(value: f64, se: f64, level: f64) -> Result<(f64, f64)> {
    let z = z_quantile(level)?;
    Ok((value - z * se, value + z * se))
}

/// Normal-quantile confidence interval for a contrast.
pub fn confidence_interval(
    contrast: &ContrastEstimate,
    var: &VarianceReport,
    level: f64,
) -> Result<(f64, f64)> {
    wald_interval(contrast.value, var.se, level)
}

/// Outcome of a non-inferiority comparison against a fixed margin.
#[derive(Debug, Clone, Serialize)]
pub struct NoninferiorityTest {
    pub margin: f64,
    pub level: f64,
    /// Lower bound of the two-sided CI at `level`.
    pub lower: f64,
    /// One-sided statistic (contrast − margin) / SE; `None` when SE = 0.
    pub z: Option<f64>,
    /// True iff `lower` is strictly greater than `margin`.
    pub declared: bool,
}

pub fn noninferiority_test(
    contrast: &ContrastEstimate,
    var: &VarianceReport,
    margin: f64,
    level: f64,
) -> Result<NoninferiorityTest> {
    if !margin.is_finite() {
        return Err(Error::validation("non-inferiority margin must be finite"));
    }
    let (lower, _) = confidence_interval(contrast, var, level)?;
    let z = (contrast.value - margin) / var.se;
    Ok(NoninferiorityTest {
        margin,
        level,
        lower,
        z: z.is_finite().then_some(z),
        declared: lower > margin,
    })
}

/// Diagnostic: maximum |column sum| of the influence table, relative to the
/// column's value scale. Tests pin this near zero; exposed so callers can
/// audit it too.
pub fn influence_sum_residual(tbl: &InfluenceTable) -> f64 {
    let scale = |v: &[f64]| {
        v.iter().map(|x| x.abs()).fold(0.0f64, f64::max).max(1.0)
    };
    let s_jk = kahan_sum(tbl.phi_jk.iter().copied()).abs() / (tbl.n as f64 * scale(&tbl.phi_jk));
    let s_kj = kahan_sum(tbl.phi_kj.iter().copied()).abs() / (tbl.n as f64 * scale(&tbl.phi_kj));
    s_jk.max(s_kj)
}
