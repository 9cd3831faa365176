//! Acceptance gate: nine end-to-end criteria covering statistical
//! correctness (bias, efficiency, coverage), algebraic identities, two
//! independent oracles (assignment enumeration and a participant bootstrap),
//! and bitwise determinism.
//!
//! Each criterion prints one PASS/FAIL line (visible with
//! `cargo test --test acceptance -- --show-output`). The three replication
//! studies and the large-draw truth tables are shared across criteria via
//! lazy statics, so the whole gate costs three 1000-replication studies plus
//! two 10^7-draw truth integrations.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mptrial::sim::generate::{default_scheme, generate_trial, write_trial_csv, SimConfig};
use mptrial::sim::oracle::{truth_oracle, TruthTable};
use mptrial::sim::replicate::{
    run_replications, summary_to_csv, with_worker_pool, MonteCarloSummary, SummaryRow,
};
use mptrial::{
    analyze_contrast, assignment_prob, estimate_aipw, estimate_aps, estimate_contrast,
    estimate_ipw, estimate_ps, estimate_sipw, influence_values, parse_scheme, AnalysisOptions,
    ClusterScope, EpisodeScope, EpisodeRecord, Method, Pooling, RecordSet, ZeroModel,
};
use mptrial::working::ShiftedModel;

/// Fixed study seed, chosen once in advance.
const SEED: u64 = 20260814;
const REPS: u32 = 1000;
const TRUTH_DRAWS: u64 = 10_000_000;

struct Study {
    truths: TruthTable,
    summary: MonteCarloSummary,
}

fn study(n: u64, scenario: u8) -> Study {
    let cfg = SimConfig { n, scenario, seed: SEED, reps: REPS, ..SimConfig::default() };
    let truths = truth_oracle(&cfg, TRUTH_DRAWS).expect("truth oracle");
    let summary = run_replications(&cfg, &truths).expect("replication study");
    Study { truths, summary }
}

static SC1_600: LazyLock<Study> = LazyLock::new(|| study(600, 1));
static SC2_600: LazyLock<Study> = LazyLock::new(|| study(600, 2));
static SC1_1200: LazyLock<MonteCarloSummary> = LazyLock::new(|| {
    let cfg = SimConfig { n: 1200, scenario: 1, seed: SEED, reps: REPS, ..SimConfig::default() };
    // truths are population quantities: independent of n
    run_replications(&cfg, &SC1_600.truths).expect("replication study")
});

fn row<'a>(summary: &'a MonteCarloSummary, method: &str, comparison: &str) -> &'a SummaryRow {
    summary
        .rows
        .iter()
        .find(|r| r.method == method && r.comparison == comparison)
        .unwrap_or_else(|| panic!("no summary row for {method}/{comparison}"))
}

/// Evaluate one criterion: print its PASS/FAIL line, then assert.
fn gate(label: &str, checks: Vec<(String, bool)>) {
    let failures: Vec<&str> =
        checks.iter().filter(|(_, ok)| !ok).map(|(what, _)| what.as_str()).collect();
    let verdict = if failures.is_empty() { "PASS" } else { "FAIL" };
    println!("acceptance {label}: {verdict}");
    for f in &failures {
        println!("  failed: {f}");
    }
    assert!(failures.is_empty(), "{label}: {} failed condition(s): {failures:#?}", failures.len());
}

const PROPOSED: [&str; 5] = ["ipw", "sipw", "aipw", "ps", "aps"];

#[test]
fn criterion_1_operating_characteristics_scenario_1() {
    // reference Monte Carlo SDs for this design at n=600, comparison 2v1
    let reference_sd =
        [("ipw", 0.206), ("sipw", 0.171), ("aipw", 0.143), ("ps", 0.155), ("aps", 0.129)];
    let s = &SC1_600.summary;
    let mut checks = Vec::new();
    for (method, sd_ref) in reference_sd {
        let r = row(s, method, "2v1");
        let sd = r.sd.expect("sd with 1000 reps");
        checks.push((
            format!("{method}: |bias| = {:.4} <= 0.02", r.bias.abs()),
            r.bias.abs() <= 0.02,
        ));
        checks.push((
            format!("{method}: sd = {sd:.4} within 15% of {sd_ref}"),
            (sd / sd_ref - 1.0).abs() <= 0.15,
        ));
        checks.push((
            format!("{method}: |mean se - sd|/sd = {:.4} <= 0.1", (r.mean_se - sd).abs() / sd),
            (r.mean_se - sd).abs() / sd <= 0.1,
        ));
        checks.push((
            format!("{method}: coverage = {:.4} in [0.93, 0.965]", r.cp),
            (0.93..=0.965).contains(&r.cp),
        ));
        checks.push((
            format!("{method}: reps used = {} >= 995", r.reps_used),
            r.reps_used >= 995,
        ));
    }
    gate("criterion 1 (scenario-1 operating characteristics, n=600)", checks);
}

#[test]
fn criterion_2_scenario_2_robustness() {
    // re-enrollment driven by the latent effect must not bias the estimators
    let s = &SC2_600.summary;
    let checks = PROPOSED
        .iter()
        .map(|method| {
            let r = row(s, method, "2v1");
            (format!("{method}: |bias| = {:.4} <= 0.03", r.bias.abs()), r.bias.abs() <= 0.03)
        })
        .collect();
    gate("criterion 2 (scenario-2 robustness to latent-driven re-enrollment)", checks);
}

#[test]
fn criterion_3_truth_oracle_values() {
    let t = &SC1_600.truths;
    let expected = [
        ("2v1", -3.928),
        ("3v1", 0.826),
        ("2v1@ep1", -4.305),
        ("3v1@ep1", 0.773),
        ("2v1@substudy", -3.673),
        ("3v1@substudy", 0.937),
    ];
    let checks = expected
        .iter()
        .map(|(key, want)| {
            let got = t.value(key).expect("truth entry");
            (format!("{key}: truth = {got:.4} within 0.03 of {want}"), (got - want).abs() <= 0.03)
        })
        .collect();
    gate("criterion 3 (truth oracle reproduces reference contrasts)", checks);
}

#[test]
fn criterion_4_efficiency_orderings() {
    let s = &SC1_600.summary;
    let mut checks = Vec::new();
    for comparison in ["2v1", "3v1"] {
        let sd = |m: &str| row(s, m, comparison).sd.expect("sd");
        for (better, worse) in [("sipw", "ipw"), ("aipw", "sipw"), ("aps", "ps")] {
            checks.push((
                format!("{comparison}: sd({better}) = {:.4} < sd({worse}) = {:.4}", sd(better), sd(worse)),
                sd(better) < sd(worse),
            ));
        }
        for method in ["sipw", "aipw", "ps", "aps"] {
            let pooled = sd(method);
            let ep1 = row(s, &format!("{method}_ep1"), comparison).sd.expect("sd");
            checks.push((
                format!("{comparison}: pooled sd({method}) = {pooled:.4} <= 0.93 × episode-1 sd {ep1:.4}"),
                pooled <= 0.93 * ep1,
            ));
        }
    }
    gate("criterion 4 (pooling and augmentation efficiency orderings)", checks);
}

#[test]
fn criterion_5_sample_size_scaling() {
    let base = &SC1_600.summary;
    let scaled = &SC1_1200;
    let mut checks = Vec::new();
    for r in &base.rows {
        let sd600 = r.sd.expect("sd");
        let sd1200 = row(scaled, &r.method, &r.comparison).sd.expect("sd");
        let ratio = sd1200 / (sd600 / 2f64.sqrt());
        checks.push((
            format!("{}/{}: sd ratio to 1/sqrt(2) scaling = {ratio:.4}", r.method, r.comparison),
            (ratio - 1.0).abs() <= 0.15,
        ));
    }
    gate("criterion 5 (sd scales as 1/sqrt(n) from n=600 to n=1200)", checks);
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[test]
fn criterion_6_algebraic_identities() {
    // large enough that every stratum holds both arms with this seed
    let cfg = SimConfig { n: 400, scenario: 1, seed: SEED, reps: 1, ..SimConfig::default() };
    let rs = generate_trial(&cfg, 0).expect("trial");
    let scheme = default_scheme();
    let scope = EpisodeScope::All;
    let covariates: Vec<String> = ["x_c", "x_b"].iter().map(|s| s.to_string()).collect();
    let mut checks = Vec::new();

    for (j, k) in [("2", "1"), ("3", "1")] {
        // augmentation with a zero model reduces exactly to the base method
        let ipw = estimate_ipw(&rs, &scheme, j, k, &scope).unwrap();
        let aipw0 = estimate_aipw(&rs, &scheme, j, k, &scope, &ZeroModel).unwrap();
        checks.push((
            format!("({j},{k}): aipw(0) == ipw, rel err {:.2e}", rel_err(aipw0.value, ipw.value)),
            rel_err(aipw0.value, ipw.value) <= 1e-12,
        ));
        let ps = estimate_ps(&rs, &scheme, j, k, &scope).unwrap();
        let aps0 = estimate_aps(&rs, &scheme, j, k, &scope, &ZeroModel).unwrap();
        checks.push((
            format!("({j},{k}): aps(0) == ps, rel err {:.2e}", rel_err(aps0.value, ps.value)),
            rel_err(aps0.value, ps.value) <= 1e-12,
        ));

        // the augmented stratified estimator ignores constant shifts of μ̂
        let model =
            mptrial::fit_working_model(&rs, &scheme, j, k, j, &covariates, &scope, Pooling::PerEpisode)
                .unwrap();
        let aps = estimate_aps(&rs, &scheme, j, k, &scope, &model).unwrap();
        let shifted = ShiftedModel { inner: &model, shift: 41.25 };
        let aps_shift = estimate_aps(&rs, &scheme, j, k, &scope, &shifted).unwrap();
        checks.push((
            format!("({j},{k}): aps(μ̂+c) == aps(μ̂), rel err {:.2e}", rel_err(aps_shift.value, aps.value)),
            rel_err(aps_shift.value, aps.value) <= 1e-12,
        ));

        // influence values sum to zero for every method
        for method in Method::ALL {
            let contrast =
                estimate_contrast(method, &rs, &scheme, j, k, &scope, &covariates, Pooling::PerEpisode)
                    .unwrap();
            let model_j;
            let model_for: Option<&dyn mptrial::OutcomeModel> = if method.is_augmented() {
                model_j = mptrial::fit_working_model(
                    &rs, &scheme, j, k, j, &covariates, &scope, Pooling::PerEpisode,
                )
                .unwrap();
                Some(&model_j)
            } else {
                None
            };
            let col =
                influence_values(&rs, &scheme, &contrast.theta_jk, model_for, ClusterScope::Contributing)
                    .unwrap();
            let total: f64 = col.phi.iter().sum();
            let scale: f64 = col.phi.iter().map(|p| p.abs()).sum::<f64>().max(1.0);
            checks.push((
                format!("({j},{k}) {method}: influence column sums to 0, |Σφ|/Σ|φ| = {:.2e}", total.abs() / scale),
                total.abs() / scale <= 1e-12,
            ));
        }

        // per-episode decomposition: the estimate is the population-share
        // weighted mean of the per-episode components
        for (label, est) in
            [("ipw", estimate_ipw(&rs, &scheme, j, k, &scope).unwrap()), ("ps", ps.clone())]
        {
            let n_jk = est.n_person_episodes as f64;
            let mixed: f64 = est
                .per_episode
                .iter()
                .map(|c| c.n_members as f64 / n_jk * c.estimate.expect("episode estimate"))
                .sum();
            checks.push((
                format!("({j},{k}) {label}: per-episode decomposition, rel err {:.2e}", rel_err(mixed, est.value)),
                rel_err(mixed, est.value) <= 1e-12,
            ));
        }
    }

    // translation equivariance: shifting every outcome by Δ shifts the arm
    // means by exactly Δ (models refit on the shifted data)
    let delta = 7.5;
    let shifted_records: Vec<EpisodeRecord> = rs
        .records()
        .iter()
        .cloned()
        .map(|mut r| {
            r.outcome = r.outcome.map(|y| y + delta);
            r
        })
        .collect();
    let rs_shift = RecordSet::from_records(shifted_records).unwrap();
    let (j, k) = ("2", "1");
    for method in [Method::Sipw, Method::Aipw, Method::Ps, Method::Aps] {
        let base =
            estimate_contrast(method, &rs, &scheme, j, k, &scope, &covariates, Pooling::PerEpisode)
                .unwrap();
        let moved =
            estimate_contrast(method, &rs_shift, &scheme, j, k, &scope, &covariates, Pooling::PerEpisode)
                .unwrap();
        let err = (moved.theta_jk.value - base.theta_jk.value - delta).abs();
        checks.push((
            format!("{method}: translation equivariance, |θ(y+Δ) − θ(y) − Δ| = {err:.2e}"),
            err <= 1e-10,
        ));
    }

    gate("criterion 6 (algebraic identities at 1e-12)", checks);
}

/// A two-group, eight-slot design small enough to enumerate every assignment
/// vector: six first-episode units (three per probability group) and two
/// second-episode slots.
struct EnumerationDesign {
    records: Vec<EpisodeRecord>,
    /// (record position, π of arm "1", potential outcomes (arm 1, arm 2)).
    slots: Vec<(usize, f64, [f64; 2])>,
}

fn enumeration_design() -> EnumerationDesign {
    let mut records = Vec::new();
    let mut slots = Vec::new();
    let mut unit = |pid: &str, episode: u32, group: &str, pi1: f64, y: [f64; 2]| {
        let mut z = BTreeMap::new();
        z.insert("g".to_string(), group.to_string());
        slots.push((records.len(), pi1, y));
        records.push(EpisodeRecord {
            participant: pid.to_string(),
            episode,
            substudy: None,
            arm: "1".to_string(), // placeholder, overwritten per world
            outcome: None,
            z,
            x: BTreeMap::new(),
        });
    };
    unit("u1", 1, "a", 0.5, [1.0, 3.5]);
    unit("u2", 1, "a", 0.5, [0.5, 2.5]);
    unit("u3", 1, "a", 0.5, [-1.5, 4.0]);
    unit("u4", 1, "b", 0.75, [2.25, 0.75]);
    unit("u5", 1, "b", 0.75, [3.0, -0.5]);
    unit("u6", 1, "b", 0.75, [-2.0, 1.25]);
    unit("u1", 2, "a", 0.5, [2.0, -1.0]);
    unit("u4", 2, "a", 0.5, [1.5, 2.5]);
    EnumerationDesign { records, slots }
}

#[test]
fn criterion_7_enumeration_oracle() {
    let design = enumeration_design();
    let scheme = parse_scheme(
        r#"{"arms": ["1", "2"], "rows": [
            {"episode": "any", "z": {"g": "a"}, "p": {"1": "0.5", "2": "0.5"}},
            {"episode": "any", "z": {"g": "b"}, "p": {"1": "0.75", "2": "0.25"}}
        ]}"#
        .as_bytes(),
    )
    .unwrap();
    let scope = EpisodeScope::All;
    let n_slots = design.slots.len();
    let n_jk = n_slots as f64;

    // fixed membership: the truth is the plain mean of each potential column
    let truth_1: f64 = design.slots.iter().map(|(_, _, y)| y[0]).sum::<f64>() / n_jk;
    let truth_2: f64 = design.slots.iter().map(|(_, _, y)| y[1]).sum::<f64>() / n_jk;

    let mut e_ipw_1 = 0.0;
    let mut e_ipw_2 = 0.0;
    let mut e_contrast = 0.0;
    let mut sipw_weighted_num = 0.0; // Σ_worlds P · den(world) · θ̂_sipw(world)
    let mut sipw_weighted_den = 0.0;
    let mut ps_value = 0.0; // Σ over worlds with no empty-arm stratum
    let mut ps_mass = 0.0;
    let mut total_mass = 0.0;

    for world in 0u32..(1 << n_slots) {
        let mut records = design.records.clone();
        let mut prob = 1.0;
        let mut sipw_den = 0.0;
        for (slot, &(pos, pi1, y)) in design.slots.iter().enumerate() {
            let arm1 = (world >> slot) & 1 == 1;
            prob *= if arm1 { pi1 } else { 1.0 - pi1 };
            records[pos].arm = if arm1 { "1" } else { "2" }.to_string();
            records[pos].outcome = Some(if arm1 { y[0] } else { y[1] });
            if arm1 {
                sipw_den += 1.0 / pi1;
            }
        }
        total_mass += prob;
        let rs = RecordSet::from_records(records).unwrap();

        let ipw_1 = estimate_ipw(&rs, &scheme, "1", "2", &scope).unwrap().value;
        let ipw_2 = estimate_ipw(&rs, &scheme, "2", "1", &scope).unwrap().value;
        e_ipw_1 += prob * ipw_1;
        e_ipw_2 += prob * ipw_2;
        e_contrast += prob
            * estimate_contrast(Method::Ipw, &rs, &scheme, "1", "2", &scope, &[], Pooling::PerEpisode)
                .unwrap()
                .value;

        if sipw_den > 0.0 {
            let sipw = estimate_sipw(&rs, &scheme, "1", "2", &scope).unwrap().value;
            sipw_weighted_num += prob * sipw_den * sipw;
            sipw_weighted_den += prob * sipw_den;
        }

        if let Ok(ps) = estimate_ps(&rs, &scheme, "1", "2", &scope) {
            ps_value += prob * ps.value;
            ps_mass += prob;
        }
    }

    let ps_conditional = ps_value / ps_mass;
    // the SIPW fixed point: E[den·θ̂] / E[den] equals the truth because
    // den·θ̂ is exactly the weighted outcome sum
    let sipw_fixed_point = sipw_weighted_num / sipw_weighted_den / truth_1;

    let checks = vec![
        (format!("assignment probabilities sum to 1 ({total_mass})"), (total_mass - 1.0).abs() <= 1e-12),
        (
            format!("E[ipw arm-1 mean] = {e_ipw_1:.12} == {truth_1:.12}"),
            (e_ipw_1 - truth_1).abs() <= 1e-10,
        ),
        (
            format!("E[ipw arm-2 mean] = {e_ipw_2:.12} == {truth_2:.12}"),
            (e_ipw_2 - truth_2).abs() <= 1e-10,
        ),
        (
            format!("E[ipw contrast] matches {:.12}", truth_1 - truth_2),
            (e_contrast - (truth_1 - truth_2)).abs() <= 1e-10,
        ),
        (
            format!("sipw estimating-equation fixed point = truth (ratio {sipw_fixed_point:.12})"),
            (sipw_fixed_point - 1.0).abs() <= 1e-10,
        ),
        (
            format!("E[ps | non-degenerate strata] = {ps_conditional:.12} == {truth_1:.12}"),
            (ps_conditional - truth_1).abs() <= 1e-10,
        ),
        (format!("ps conditioning mass {ps_mass:.4} < 1"), ps_mass < 1.0),
    ];
    gate("criterion 7 (enumeration oracle on an 8-slot design)", checks);
}

#[test]
fn criterion_8_bootstrap_variance_oracle() {
    let cfg = SimConfig { n: 50, scenario: 1, seed: SEED, reps: 1, ..SimConfig::default() };
    let rs = generate_trial(&cfg, 0).expect("trial");
    let scheme = default_scheme();
    assert!(rs.max_episode() == 2, "the variance-oracle dataset should include re-enrollment");
    let (j, k) = ("2", "1");

    // per-participant sufficient statistics, derived independently of the
    // estimator code: membership and weights straight from the scheme
    #[derive(Default, Clone)]
    struct Pieces {
        num_j: f64,
        num_k: f64,
        den_j: f64,
        den_k: f64,
        members: f64,
    }
    let mut pieces: BTreeMap<&str, Pieces> = BTreeMap::new();
    for rec in rs.records() {
        let pi_j = assignment_prob(&scheme, &rec.z, rec.episode, j).unwrap();
        let pi_k = assignment_prob(&scheme, &rec.z, rec.episode, k).unwrap();
        if pi_j <= 0.0 || pi_k <= 0.0 {
            continue;
        }
        let p = pieces.entry(rec.participant.as_str()).or_default();
        p.members += 1.0;
        let y = rec.outcome.unwrap();
        if rec.arm == j {
            p.num_j += y / pi_j;
            p.den_j += 1.0 / pi_j;
        } else if rec.arm == k {
            p.num_k += y / pi_k;
            p.den_k += 1.0 / pi_k;
        }
    }
    let all: Vec<Pieces> = rs
        .participants()
        .map(|pid| pieces.get(pid).cloned().unwrap_or_default())
        .collect();

    let ipw_of = |sample: &[&Pieces]| {
        let m: f64 = sample.iter().map(|p| p.members).sum();
        let nj: f64 = sample.iter().map(|p| p.num_j).sum();
        let nk: f64 = sample.iter().map(|p| p.num_k).sum();
        (nj - nk) / m
    };
    let sipw_of = |sample: &[&Pieces]| {
        let dj: f64 = sample.iter().map(|p| p.den_j).sum();
        let dk: f64 = sample.iter().map(|p| p.den_k).sum();
        if dj <= 0.0 || dk <= 0.0 {
            return None;
        }
        let nj: f64 = sample.iter().map(|p| p.num_j).sum();
        let nk: f64 = sample.iter().map(|p| p.num_k).sum();
        Some(nj / dj - nk / dk)
    };

    // sanity: the sufficient statistics reproduce the estimators exactly
    let full: Vec<&Pieces> = all.iter().collect();
    let ipw_full = estimate_contrast(Method::Ipw, &rs, &scheme, j, k, &EpisodeScope::All, &[], Pooling::PerEpisode)
        .unwrap()
        .value;
    assert!((ipw_of(&full) - ipw_full).abs() < 1e-12);
    let sipw_full =
        estimate_contrast(Method::Sipw, &rs, &scheme, j, k, &EpisodeScope::All, &[], Pooling::PerEpisode)
            .unwrap()
            .value;
    assert!((sipw_of(&full).unwrap() - sipw_full).abs() < 1e-12);

    // participant-level bootstrap
    let resamples = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut ipw_stats = Vec::with_capacity(resamples);
    let mut sipw_stats = Vec::with_capacity(resamples);
    let mut degenerate = 0u32;
    for _ in 0..resamples {
        let sample: Vec<&Pieces> =
            (0..all.len()).map(|_| &all[rng.random_range(0..all.len())]).collect();
        ipw_stats.push(ipw_of(&sample));
        match sipw_of(&sample) {
            Some(v) => sipw_stats.push(v),
            None => degenerate += 1,
        }
    }

    let sd = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
    };
    let boot_ipw = sd(&ipw_stats);
    let boot_sipw = sd(&sipw_stats);

    let options = AnalysisOptions::default();
    let se_ipw = analyze_contrast(&rs, &scheme, Method::Ipw, j, k, &options).unwrap().se;
    let se_sipw = analyze_contrast(&rs, &scheme, Method::Sipw, j, k, &options).unwrap().se;

    let checks = vec![
        (
            format!("ipw: influence se {se_ipw:.4} within 10% of bootstrap {boot_ipw:.4}"),
            (se_ipw / boot_ipw - 1.0).abs() <= 0.10,
        ),
        (
            format!("sipw: influence se {se_sipw:.4} within 10% of bootstrap {boot_sipw:.4}"),
            (se_sipw / boot_sipw - 1.0).abs() <= 0.10,
        ),
        (format!("degenerate resamples: {degenerate} < 20"), degenerate < 20),
    ];
    gate("criterion 8 (bootstrap variance oracle, 10^5 resamples)", checks);
}

#[test]
fn criterion_9_bitwise_determinism() {
    let cfg = SimConfig { n: 150, scenario: 2, seed: SEED, reps: 4, ..SimConfig::default() };
    let truths = truth_oracle(&cfg, 70_000).expect("oracle"); // crosses a chunk boundary

    let dataset = |()| {
        let rs = generate_trial(&cfg, 1).unwrap();
        let mut buf = Vec::new();
        write_trial_csv(&rs, &mut buf).unwrap();
        buf
    };
    let summary = || summary_to_csv(&run_replications(&cfg, &truths).unwrap());

    let base_data = dataset(());
    let base_summary = summary();
    let truths_again = truth_oracle(&cfg, 70_000).expect("oracle");

    let mut checks = vec![
        ("dataset bytes identical across runs".to_string(), dataset(()) == base_data),
        ("summary bytes identical across runs".to_string(), summary() == base_summary),
        (
            "truth table identical across runs".to_string(),
            truths_again.to_json() == truths.to_json(),
        ),
    ];
    for workers in [1usize, 2, 3] {
        let s = with_worker_pool(Some(workers), || {
            summary_to_csv(&run_replications(&cfg, &truths).unwrap())
        })
        .unwrap();
        checks.push((format!("summary bytes identical with {workers} worker(s)"), s == base_summary));
    }
    gate("criterion 9 (bitwise determinism across runs and worker counts)", checks);
}
