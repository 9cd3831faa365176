//! The five arm-mean estimators and their contrasts.
//!
//! Every estimator targets θ_jk: the per-episode added effect of arm `j`
//! averaged over the episode populations concurrently eligible for both `j`
//! and `k`, with episode weights |I_jkt| / n_jk. All five are design-based —
//! weights and strata come from the known randomization probabilities, never
//! from fitted propensities — and the augmented pair (AIPW, APS) stays
//! consistent under arbitrary misspecification of the outcome model.
//!
//! Summation is compensated and member order is record order, so a given
//! dataset produces bit-identical estimates regardless of thread count or
//! evaluation order elsewhere in a run.

use serde::Serialize;

use crate::data::RecordSet;
use crate::error::{Error, Result};
use crate::num::KahanSum;
use crate::scheme::{
    derive_strata, prepare_comparison, AssignmentScheme, EpisodeScope, Prepared,
};
use crate::working::{fit_working_model, OutcomeModel, Pooling, ZeroModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ipw,
    Sipw,
    Aipw,
    Ps,
    Aps,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ipw, Method::Sipw, Method::Aipw, Method::Ps, Method::Aps];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ipw => "ipw",
            Method::Sipw => "sipw",
            Method::Aipw => "aipw",
            Method::Ps => "ps",
            Method::Aps => "aps",
        }
    }

    /// Whether the method consumes an outcome working model.
    pub fn is_augmented(self) -> bool {
        matches!(self, Method::Aipw | Method::Aps)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ipw" => Ok(Method::Ipw),
            "sipw" => Ok(Method::Sipw),
            "aipw" => Ok(Method::Aipw),
            "ps" => Ok(Method::Ps),
            "aps" => Ok(Method::Aps),
            other => Err(Error::validation(format!("unknown method '{other}'"))),
        }
    }
}

/// Within-stratum counts reported for the stratified estimators.
#[derive(Debug, Clone, Serialize)]
pub struct StratumCount {
    pub id: usize,
    pub pi_j: f64,
    pub pi_k: f64,
    pub n: usize,
    pub n_treated: usize,
}

/// One episode's contribution to an arm-mean estimate.
#[derive(Debug, Clone, Serialize)]
pub struct EpisodeComponent {
    pub episode: u32,
    pub n_members: usize,
    pub n_treated: usize,
    /// Episode-specific estimate θ̂_jkt; `None` when undefined for this
    /// method on this episode (no members, or no treated members for the
    /// ratio form) — flagged rather than silently folded in.
    pub estimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strata: Option<Vec<StratumCount>>,
}

/// θ̂_jk for one method: the arm-`j` mean over the (j,k)-eligible populations.
#[derive(Debug, Clone, Serialize)]
pub struct ArmMeanEstimate {
    pub method: Method,
    pub arm: String,
    pub other: String,
    pub episodes: Vec<u32>,
    pub value: f64,
    pub n_person_episodes: usize,
    pub n_participants: usize,
    pub per_episode: Vec<EpisodeComponent>,
}

/// θ̂_jk − θ̂_kj with both components retained.
#[derive(Debug, Clone, Serialize)]
pub struct ContrastEstimate {
    pub method: Method,
    pub arm_j: String,
    pub arm_k: String,
    pub value: f64,
    pub theta_jk: ArmMeanEstimate,
    pub theta_kj: ArmMeanEstimate,
}

impl ContrastEstimate {
    /// Comparison label, e.g. "2v1" for arm 2 versus arm 1.
    pub fn comparison(&self) -> String {
        format!("{}v{}", self.arm_j, self.arm_k)
    }
}

fn check_nonempty(prepared: &Prepared, j: &str, k: &str) -> Result<()> {
    if prepared.n_jk == 0 {
        return Err(Error::estimation(format!(
            "eligibility population for ({j}, {k}) is empty at every requested episode"
        )));
    }
    Ok(())
}

fn finish(
    method: Method,
    prepared: Prepared,
    j: &str,
    k: &str,
    total: f64,
    per_episode: Vec<EpisodeComponent>,
) -> ArmMeanEstimate {
    ArmMeanEstimate {
        method,
        arm: j.to_string(),
        other: k.to_string(),
        episodes: prepared.pops.iter().map(|p| p.episode).collect(),
        value: total,
        n_person_episodes: prepared.n_jk,
        n_participants: prepared.participants.len(),
        per_episode,
    }
}

/// θ̂_jk^ipw = (1/n_jk) Σ_t Σ_{i∈I_jkt} I(A_{i,t}=j) Y_{i,t} / π_j^t(Z_{i,t}).
pub fn estimate_ipw(
    rs: &RecordSet,
    scheme: &AssignmentScheme,
    j: &str,
    k: &str,
    scope: &EpisodeScope,
) -> Result<ArmMeanEstimate> {
    let prepared = prepare_comparison(scheme, rs, j, k, scope)?;
    check_nonempty(&prepared, j, k)?;
    let mut total = KahanSum::new();
    let mut per_episode = Vec::new();
    for pop in &prepared.pops {
        let mut episode_sum = KahanSum::new();
        let mut n_treated = 0usize;
        for (pos, &idx) in pop.members.iter().enumerate() {
            let rec = &rs.records()[idx];
            if rec.arm == j {
                episode_sum.add(outcome(rs, idx)? / pop.pi_j[pos]);
                n_treated += 1;
            }
        }
        total.add(episode_sum.value());
        per_episode.push(EpisodeComponent {
            episode: pop.episode,
            n_members: pop.size(),
            n_treated,
            estimate: (pop.size() > 0).then(|| episode_sum.value() / pop.size() as f64),
            strata: None,
        });
    }
    let value = total.value() / prepared.n_jk as f64;
    Ok(finish(Method::Ipw, prepared, j, k, value, per_episode))
}

/// θ̂_jk^sipw: the ipw numerator divided by the summed weights — one global
/// ratio across episodes, not a per-episode ratio.
pub fn estimate_sipw(
    rs: &RecordSet,
    scheme: &AssignmentScheme,
    j: &str,
    k: &str,
    scope: &EpisodeScope,
) -> Result<ArmMeanEstimate> {
    let prepared = prepare_comparison(scheme, rs, j, k, scope)?;
    check_nonempty(&prepared, j, k)?;
    let mut num = KahanSum::new();
    let mut den = KahanSum::new();
    let mut per_episode = Vec::new();
    for pop in &prepared.pops {
        let mut num_t = KahanSum::new();
        let mut den_t = KahanSum::new();
        let mut n_treated = 0usize;
        for (pos, &idx) in pop.members.iter().enumerate() {
            let rec = &rs.records()[idx];
            if rec.arm == j {
                let w = 1.0 / pop.pi_j[pos];
                num_t.add(w * outcome(rs, idx)?);
                den_t.add(w);
                n_treated += 1;
            }
        }
        num.add(num_t.value());
        den.add(den_t.value());
        per_episode.push(EpisodeComponent {
            episode: pop.episode,
            n_members: pop.size(),
            n_treated,
            estimate: (den_t.value() > 0.0).then(|| num_t.value() / den_t.value()),
            strata: None,
        });
    }
    if den.value() <= 0.0 {
        return Err(Error::estimation(format!(
            "no treated units: no arm-{j} records in the ({j}, {k}) eligibility populations"
        )));
    }
    let value = num.value() / den.value();
    Ok(finish(Method::Sipw, prepared, j, k, value, per_episode))
}

/// θ̂_jk^aipw = (1/n_jk) Σ_t Σ_i [ I(A=j)(Y − μ̂)/π_j + μ̂ ].
pub fn estimate_aipw(
    rs: &RecordSet,
    scheme: &AssignmentScheme,
    j: &str,
    k: &str,
    scope: &EpisodeScope,
    model: &dyn OutcomeModel,
) -> Result<ArmMeanEstimate> {
    let prepared = prepare_comparison(scheme, rs, j, k, scope)?;
    check_nonempty(&prepared, j, k)?;
    let mut total = KahanSum::new();
    let mut per_episode = Vec::new();
    for pop in &prepared.pops {
        let mut episode_sum = KahanSum::new();
        let mut n_treated = 0usize;
        for (pos, &idx) in pop.members.iter().enumerate() {
            let rec = &rs.records()[idx];
            let mu = model.predict(pop.episode, rec)?;
            let mut term = mu;
            if rec.arm == j {
                term += (outcome(rs, idx)? - mu) / pop.pi_j[pos];
                n_treated += 1;
            }
            episode_sum.add(term);
        }
        total.add(episode_sum.value());
        per_episode.push(EpisodeComponent {
            episode: pop.episode,
            n_members: pop.size(),
            n_treated,
            estimate: (pop.size() > 0).then(|| episode_sum.value() / pop.size() as f64),
            strata: None,
        });
    }
    let value = total.value() / prepared.n_jk as f64;
    Ok(finish(Method::Aipw, prepared, j, k, value, per_episode))
}

/// Within-stratum sums shared by the stratified estimators.
struct StratumSums {
    n: usize,
    n_treated: usize,
    /// Σ over treated members of (Y − μ̂).
    resid_sum: f64,
    /// Σ over treated members of Y.
    y_sum: f64,
}

fn stratum_sums(
    rs: &RecordSet,
    pop: &crate::scheme::EcePopulation,
    members: &[usize],
    j: &str,
    model: &dyn OutcomeModel,
) -> Result<StratumSums> {
    let mut resid = KahanSum::new();
    let mut ysum = KahanSum::new();
    let mut n_treated = 0usize;
    for &pos in members {
        let idx = pop.members[pos];
        let rec = &rs.records()[idx];
        if rec.arm == j {
            let y = outcome(rs, idx)?;
            let mu = model.predict(pop.episode, rec)?;
            resid.add(y - mu);
            ysum.add(y);
            n_treated += 1;
        }
    }
    Ok(StratumSums { n: members.len(), n_treated, resid_sum: resid.value(), y_sum: ysum.value() })
}

fn estimate_stratified(
    method: Method,
    rs: &RecordSet,
    scheme: &AssignmentScheme,
    j: &str,
    k: &str,
    scope: &EpisodeScope,
    model: &dyn OutcomeModel,
) -> Result<ArmMeanEstimate> {
    let prepared = prepare_comparison(scheme, rs, j, k, scope)?;
    check_nonempty(&prepared, j, k)?;
    let mut total = KahanSum::new();
    let mut per_episode = Vec::new();
    for pop in &prepared.pops {
        let strata = derive_strata(pop);
        let mut episode_sum = KahanSum::new();
        let mut n_treated_all = 0usize;
        let mut counts = Vec::with_capacity(strata.len());
        for stratum in &strata {
            let sums = stratum_sums(rs, pop, &stratum.members, j, model)?;
            if sums.n_treated == 0 {
                return Err(Error::estimation(format!(
                    "empty-arm stratum: comparison ({j}, {k}), episode {}, stratum {} \
                     (π_j = {}, π_k = {}): no arm-{j} records",
                    pop.episode, stratum.id, stratum.pi_j, stratum.pi_k
                )));
            }
            let scale = sums.n as f64 / sums.n_treated as f64;
            match method {
                Method::Ps => episode_sum.add(scale * sums.y_sum),
                Method::Aps => episode_sum.add(scale * sums.resid_sum),
                _ => unreachable!("stratified path"),
            }
            n_treated_all += sums.n_treated;
            counts.push(StratumCount {
                id: stratum.id,
                pi_j: stratum.pi_j,
                pi_k: stratum.pi_k,
                n: sums.n,
                n_treated: sums.n_treated,
            });
        }
        if method == Method::Aps {
            // + Σ_{i ∈ I_jkt} μ̂(X_i) over all members, treated or not
            for &idx in &pop.members {
                episode_sum.add(model.predict(pop.episode, &rs.records()[idx])?);
            }
        }
        total.add(episode_sum.value());
        per_episode.push(EpisodeComponent {
            episode: pop.episode,
            n_members: pop.size(),
            n_treated: n_treated_all,
            estimate: (pop.size() > 0).then(|| episode_sum.value() / pop.size() as f64),
            strata: Some(counts),
        });
    }
    let value = total.value() / prepared.n_jk as f64;
    Ok(finish(method, prepared, j, k, value, per_episode))
}

/// θ̂_jk^ps: within each (π_j, π_k) stratum, the arm-j mean weighted by the
/// stratum size, summed over strata and episodes, divided by n_jk.
pub fn estimate_ps(
    rs: &RecordSet,
    scheme: &AssignmentScheme,
    j: &str,
    k: &str,
    scope: &EpisodeScope,
) -> Result<ArmMeanEstimate> {
    estimate_stratified(Method::Ps, rs, scheme, j, k, scope, &ZeroModel)
}

/// θ̂_jk^aps: the stratified estimator applied to residuals Y − μ̂ plus the
/// population mean of μ̂. Invariant to μ̂ → μ̂ + c.
pub fn estimate_aps(
    rs: &RecordSet,
    scheme: &AssignmentScheme,
    j: &str,
    k: &str,
    scope: &EpisodeScope,
    model: &dyn OutcomeModel,
) -> Result<ArmMeanEstimate> {
    estimate_stratified(Method::Aps, rs, scheme, j, k, scope, model)
}

fn outcome(rs: &RecordSet, idx: usize) -> Result<f64> {
    let rec = &rs.records()[idx];
    rec.outcome.ok_or_else(|| {
        Error::estimation(format!(
            "{}: missing outcome in analysis population (apply a missingness policy first)",
            rec.locator()
        ))
    })
}

/// Dispatch on method; `model` is required for the augmented methods and
/// ignored otherwise.
pub fn estimate_arm_mean(
    method: Method,
    rs: &RecordSet,
    scheme: &AssignmentScheme,
    j: &str,
    k: &str,
    scope: &EpisodeScope,
    model: Option<&dyn OutcomeModel>,
) -> Result<ArmMeanEstimate> {
    fn need<'a>(
        method: Method,
        m: Option<&'a dyn OutcomeModel>,
    ) -> Result<&'a dyn OutcomeModel> {
        m.ok_or_else(|| {
            Error::estimation(format!("method {method} requires an outcome working model"))
        })
    }
    match method {
        Method::Ipw => estimate_ipw(rs, scheme, j, k, scope),
        Method::Sipw => estimate_sipw(rs, scheme, j, k, scope),
        Method::Aipw => estimate_aipw(rs, scheme, j, k, scope, need(method, model)?),
        Method::Ps => estimate_ps(rs, scheme, j, k, scope),
        Method::Aps => estimate_aps(rs, scheme, j, k, scope, need(method, model)?),
    }
}

/// θ̂_jk − θ̂_kj. For the augmented methods this fits one working model per
/// direction (arm j within the (j,k) populations, arm k within the (k,j)
/// populations) using the given covariates and pooling.
pub fn estimate_contrast(
    method: Method,
    rs: &RecordSet,
    scheme: &AssignmentScheme,
    j: &str,
    k: &str,
    scope: &EpisodeScope,
    covariates: &[String],
    pooling: Pooling,
) -> Result<ContrastEstimate> {
    let (theta_jk, theta_kj) = if method.is_augmented() {
        let model_j = fit_working_model(rs, scheme, j, k, j, covariates, scope, pooling)?;
        let model_k = fit_working_model(rs, scheme, j, k, k, covariates, scope, pooling)?;
        (
            estimate_arm_mean(method, rs, scheme, j, k, scope, Some(&model_j))?,
            estimate_arm_mean(method, rs, scheme, k, j, scope, Some(&model_k))?,
        )
    } else {
        (
            estimate_arm_mean(method, rs, scheme, j, k, scope, None)?,
            estimate_arm_mean(method, rs, scheme, k, j, scope, None)?,
        )
    };
    Ok(ContrastEstimate {
        method,
        arm_j: j.to_string(),
        arm_k: k.to_string(),
        value: theta_jk.value - theta_kj.value,
        theta_jk,
        theta_kj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_records, DataSchema};
    use crate::scheme::parse_scheme;
    use approx::assert_abs_diff_eq;

    fn uniform_scheme() -> AssignmentScheme {
        let json = r#"{"arms": ["1", "2"],
            "rows": [{"episode": "any", "z": {}, "p": {"1": "0.5", "2": "0.5"}}]}"#;
        parse_scheme(json.as_bytes()).unwrap()
    }

    fn records(csv: &str) -> RecordSet {
        let schema_json = r#"{
            "participant_id": "pid", "episode": "episode", "arm": "arm", "outcome": "y",
            "covariates": {"x": {"role": "x", "type": "numeric"}}
        }"#;
        let schema = DataSchema::from_reader(schema_json.as_bytes()).unwrap();
        parse_records(csv.as_bytes(), &schema).unwrap().0
    }

    #[test]
    fn two_unit_toy_gives_four() {
        let rs = records("pid,episode,arm,y,x\na,1,1,4.0,0\nb,1,2,1.0,0\n");
        let scheme = uniform_scheme();
        let scope = EpisodeScope::All;
        let ipw = estimate_ipw(&rs, &scheme, "1", "2", &scope).unwrap();
        assert_eq!(ipw.value, 4.0);
        assert_eq!(ipw.n_person_episodes, 2);
        assert_eq!(ipw.n_participants, 2);
        let sipw = estimate_sipw(&rs, &scheme, "1", "2", &scope).unwrap();
        assert_eq!(sipw.value, 4.0);
        // contrast: θ̂_21 = (1/2)(1/0.5) = 1 → contrast θ̂_12 − θ̂_21 = 3
        let c = estimate_contrast(Method::Ipw, &rs, &scheme, "1", "2", &scope, &[], Pooling::PerEpisode)
            .unwrap();
        assert_eq!(c.value, 3.0);
        assert_eq!(c.comparison(), "1v2");
    }

    #[test]
    fn sipw_with_no_treated_units_errors() {
        let rs = records("pid,episode,arm,y,x\na,1,2,4.0,0\nb,1,2,1.0,0\n");
        let err = estimate_sipw(&rs, &uniform_scheme(), "1", "2", &EpisodeScope::All).unwrap_err();
        assert!(err.to_string().contains("no treated units"), "{err}");
    }

    #[test]
    fn sipw_with_constant_probability_is_the_arm_mean() {
        let rs = records(
            "pid,episode,arm,y,x\na,1,1,2.0,0\nb,1,1,5.0,0\nc,1,2,9.0,0\nd,1,1,-1.0,0\n",
        );
        let est = estimate_sipw(&rs, &uniform_scheme(), "1", "2", &EpisodeScope::All).unwrap();
        assert_abs_diff_eq!(est.value, (2.0 + 5.0 - 1.0) / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn ps_single_stratum_is_the_arm_mean() {
        let rs = records("pid,episode,arm,y,x\na,1,1,2.0,0\nb,1,1,6.0,0\nc,1,2,9.0,0\n");
        let est = estimate_ps(&rs, &uniform_scheme(), "1", "2", &EpisodeScope::All).unwrap();
        assert_abs_diff_eq!(est.value, 4.0, epsilon = 1e-15);
        let strata = est.per_episode[0].strata.as_ref().unwrap();
        assert_eq!(strata.len(), 1);
        assert_eq!(strata[0].n, 3);
        assert_eq!(strata[0].n_treated, 2);
    }

    #[test]
    fn empty_arm_stratum_error_names_the_cell() {
        // two z-groups; group g=b has only arm-2 records
        let schema_json = r#"{
            "participant_id": "pid", "episode": "episode", "arm": "arm", "outcome": "y",
            "covariates": {"g": {"role": "z", "type": "categorical"}}
        }"#;
        let schema = DataSchema::from_reader(schema_json.as_bytes()).unwrap();
        let csv = "pid,episode,arm,y,g\na,1,1,1.0,a\nb,1,2,2.0,a\nc,1,2,3.0,b\nd,1,2,4.0,b\n";
        let (rs, _) = parse_records(csv.as_bytes(), &schema).unwrap();
        let scheme_json = r#"{"arms": ["1", "2"], "rows": [
            {"episode": "any", "z": {"g": "a"}, "p": {"1": "0.5", "2": "0.5"}},
            {"episode": "any", "z": {"g": "b"}, "p": {"1": "0.25", "2": "0.75"}}]}"#;
        let scheme = parse_scheme(scheme_json.as_bytes()).unwrap();
        let err = estimate_ps(&rs, &scheme, "1", "2", &EpisodeScope::All).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("empty-arm stratum"), "{msg}");
        assert!(msg.contains("episode 1"), "{msg}");
        assert!(msg.contains("(1, 2)"), "{msg}");
        assert!(msg.contains("no arm-1 records"), "{msg}");
    }

    #[test]
    fn zero_model_reduces_augmented_to_plain() {
        let rs = records(
            "pid,episode,arm,y,x\n\
             a,1,1,2.0,1\nb,1,2,5.0,2\nc,1,1,3.5,0\n\
             a,2,2,1.0,1\nc,2,1,7.0,3\n",
        );
        let scheme = uniform_scheme();
        let scope = EpisodeScope::All;
        let ipw = estimate_ipw(&rs, &scheme, "1", "2", &scope).unwrap();
        let aipw = estimate_aipw(&rs, &scheme, "1", "2", &scope, &ZeroModel).unwrap();
        assert_eq!(ipw.value, aipw.value);
        let ps = estimate_ps(&rs, &scheme, "1", "2", &scope).unwrap();
        let aps = estimate_aps(&rs, &scheme, "1", "2", &scope, &ZeroModel).unwrap();
        assert_eq!(ps.value, aps.value);
    }

    #[test]
    fn per_episode_decomposition_is_exact_for_ipw_and_ps() {
        let rs = records(
            "pid,episode,arm,y,x\n\
             a,1,1,2.0,1\nb,1,2,5.0,2\nc,1,1,3.5,0\nd,1,2,1.0,4\n\
             a,2,2,1.0,1\nc,2,1,7.0,3\nd,2,1,0.5,2\n",
        );
        let scheme = uniform_scheme();
        for est in [
            estimate_ipw(&rs, &scheme, "1", "2", &EpisodeScope::All).unwrap(),
            estimate_ps(&rs, &scheme, "1", "2", &EpisodeScope::All).unwrap(),
        ] {
            let weighted: f64 = est
                .per_episode
                .iter()
                .map(|c| c.n_members as f64 * c.estimate.unwrap())
                .sum();
            let recomposed = weighted / est.n_person_episodes as f64;
            assert_abs_diff_eq!(recomposed, est.value, epsilon = 1e-12 * est.value.abs().max(1.0));
        }
    }

    #[test]
    fn empty_population_errors() {
        let rs = records("pid,episode,arm,y,x\na,1,1,4.0,0\n");
        let err =
            estimate_ipw(&rs, &uniform_scheme(), "1", "2", &EpisodeScope::Episodes(vec![2]))
                .unwrap_err();
        assert!(err.to_string().contains("empty"), "{err}");
    }

    #[test]
    fn method_parsing_round_trips() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("owl".parse::<Method>().is_err());
    }
}
