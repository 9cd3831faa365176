//! Synthetic master-protocol trials with participant re-enrollment.
//!
//! The design has two substudies sharing a control arm: "HS" randomizes arms
//! 1 and 2, "DA" randomizes arms 1 and 3. A categorical covariate drives
//! eligibility (level 0: HS only, level 1: DA only, level 2: both), and only
//! dual-eligible participants may re-enroll for a second episode, which always
//! takes place in the other substudy. Assignment follows [`default_scheme`];
//! within a substudy the two arms are always 1:1.
//!
//! Randomness is consumed through fixed per-participant streams (see
//! [`super::rng`]), so datasets are reproducible draw-for-draw.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::rng::{Domain, Purpose, TrialRng};
use crate::data::{DataSchema, EpisodeRecord, RecordSet, XValue};
use crate::error::{Error, Result};
use crate::scheme::AssignmentScheme;

/// Additive treatment effect for one potential-outcome index: the outcome gets
/// `beta * x_cat + delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Effect {
    pub beta: f64,
    pub delta: f64,
}

/// How to keep the skewed continuous covariate inside its bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Truncation {
    /// Redraw until the value lands inside the bounds.
    #[default]
    Rejection,
    /// Draw once and clip to the bounds.
    Clamp,
}

/// Data-generating constants. Every field has a default matching the
/// benchmark design; configuration files only list what they override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    /// P(binary covariate = 1).
    pub p_binary: f64,
    /// P(categorical covariate = 0, 1, 2); levels gate substudy eligibility.
    pub p_cat: [f64; 3],
    /// Log-scale mean of the continuous covariate, per categorical level.
    pub lognormal_mu: [f64; 3],
    /// Log-scale spread of the continuous covariate.
    pub lognormal_sigma: f64,
    /// Interpret `lognormal_sigma` as a variance instead of a standard
    /// deviation.
    pub sigma_is_variance: bool,
    pub truncation: Truncation,
    /// Bounds for the continuous covariate.
    pub truncation_bounds: [f64; 2],
    /// P(entry wave = 2); wave-2 dual-eligible participants are assigned to
    /// the substudies 3:1 instead of 1:1.
    pub p_ew2: f64,
    /// Scenario 1: marginal re-enrollment probability among the eligible.
    pub reenroll_rate: f64,
    /// Scenario 2: re-enrollment probability is `1 / (1 + exp(gamma + U))`
    /// with `U` the participant's latent effect.
    pub gamma: f64,
    /// First-episode effects, keyed by arm ("1", "2", "3").
    pub effects_first: BTreeMap<String, Effect>,
    /// Second-episode effects, keyed by "first arm,second arm" (e.g. "2,1").
    pub effects_second: BTreeMap<String, Effect>,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        let effects_first = [
            ("1", Effect { beta: 0.2, delta: 0.0 }),
            ("2", Effect { beta: -1.0, delta: -2.0 }),
            ("3", Effect { beta: -0.5, delta: 2.0 }),
        ];
        let effects_second = [
            ("1,1", Effect { beta: 0.2, delta: 0.0 }),
            ("1,2", Effect { beta: -0.4, delta: -1.5 }),
            ("1,3", Effect { beta: -0.15, delta: 1.5 }),
            ("2,1", Effect { beta: -0.4, delta: -1.0 }),
            ("2,3", Effect { beta: -0.75, delta: 1.0 }),
            ("3,1", Effect { beta: -0.15, delta: 0.5 }),
            ("3,2", Effect { beta: -0.75, delta: -0.5 }),
        ];
        GeneratorParams {
            p_binary: 0.5,
            p_cat: [0.03, 0.24, 0.73],
            lognormal_mu: [3.25, 3.1, 3.0],
            lognormal_sigma: 0.4,
            sigma_is_variance: false,
            truncation: Truncation::Rejection,
            truncation_bounds: [12.0, 70.0],
            p_ew2: 1.0 / 6.0,
            reenroll_rate: 0.58,
            gamma: -0.39,
            effects_first: effects_first.map(|(k, v)| (k.to_string(), v)).into(),
            effects_second: effects_second.map(|(k, v)| (k.to_string(), v)).into(),
        }
    }
}

/// A full simulation-study configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Participants per replication.
    pub n: u64,
    /// Re-enrollment mechanism: 1 = completely random, 2 = latent-dependent.
    pub scenario: u8,
    pub seed: u64,
    /// Number of dataset replications.
    pub reps: u32,
    pub generator: GeneratorParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { n: 600, scenario: 1, seed: 0, reps: 1000, generator: GeneratorParams::default() }
    }
}

/// Keys of `effects_second` that the mechanism can actually reach: the second
/// episode is always in the other substudy, so e.g. "2,2" never occurs.
const REACHABLE_SECOND: [&str; 7] = ["1,1", "1,2", "1,3", "2,1", "2,3", "3,1", "3,2"];

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::validation(msg));
        if self.n == 0 {
            return bad("config: n must be at least 1".into());
        }
        if self.scenario != 1 && self.scenario != 2 {
            return bad(format!("config: scenario must be 1 or 2 (got {})", self.scenario));
        }
        let g = &self.generator;
        for (name, p) in
            [("p_binary", g.p_binary), ("p_ew2", g.p_ew2), ("reenroll_rate", g.reenroll_rate)]
        {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("config: {name} must lie in [0, 1] (got {p})"));
            }
        }
        if g.p_cat.iter().any(|p| *p < 0.0) || (g.p_cat.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("config: p_cat must be nonnegative and sum to 1 (got {:?})", g.p_cat));
        }
        if !(g.lognormal_sigma > 0.0) || g.lognormal_mu.iter().any(|m| !m.is_finite()) {
            return bad("config: lognormal parameters must be finite with positive spread".into());
        }
        let [lo, hi] = g.truncation_bounds;
        if !(0.0 < lo && lo < hi && hi.is_finite()) {
            return bad(format!("config: truncation bounds must satisfy 0 < lo < hi (got [{lo}, {hi}])"));
        }
        if !g.gamma.is_finite() {
            return bad("config: gamma must be finite".into());
        }
        for arm in ["1", "2", "3"] {
            if !g.effects_first.contains_key(arm) {
                return bad(format!("config: effects_first is missing arm \"{arm}\""));
            }
        }
        for key in REACHABLE_SECOND {
            if !g.effects_second.contains_key(key) {
                return bad(format!("config: effects_second is missing reachable pair \"{key}\""));
            }
        }
        let finite = |e: &Effect| e.beta.is_finite() && e.delta.is_finite();
        if g.effects_first.values().chain(g.effects_second.values()).any(|e| !finite(e)) {
            return bad("config: effects must be finite".into());
        }
        Ok(())
    }

    pub fn from_json<R: std::io::Read>(reader: R) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_reader(reader)
            .map_err(|e| Error::validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The benchmark assignment scheme as JSON, exactly as `analyze` consumes it.
pub fn default_scheme_json() -> &'static str {
    r#"{
  "arms": ["1", "2", "3"],
  "rows": [
    {"episode": 1, "z": {"HS": "1", "DA": "0"}, "p": {"1": "0.5", "2": "0.5"}},
    {"episode": 1, "z": {"HS": "0", "DA": "1"}, "p": {"1": "0.5", "3": "0.5"}},
    {"episode": 1, "z": {"HS": "1", "DA": "1", "EW": "1"}, "p": {"1": "0.5", "2": "0.25", "3": "0.25"}},
    {"episode": 1, "z": {"HS": "1", "DA": "1", "EW": "2"}, "p": {"1": "0.5", "2": "0.375", "3": "0.125"}},
    {"episode": 2, "z": {"prior_substudy": "DA"}, "p": {"1": "0.5", "2": "0.5"}},
    {"episode": 2, "z": {"prior_substudy": "HS"}, "p": {"1": "0.5", "3": "0.5"}}
  ]
}
"#
}

/// The benchmark assignment scheme: two substudies sharing arm 1, episode-1
/// probabilities stratified by eligibility and entry wave, episode-2
/// probabilities keyed on the prior substudy.
pub fn default_scheme() -> AssignmentScheme {
    crate::scheme::parse_scheme(default_scheme_json().as_bytes())
        .expect("the built-in scheme is valid")
}

/// Column schema of generated datasets, as JSON.
pub fn default_schema_json() -> &'static str {
    r#"{
  "participant_id": "pid",
  "episode": "episode",
  "substudy": "substudy",
  "arm": "arm",
  "outcome": "y",
  "covariates": {
    "HS": {"role": "z", "type": "categorical"},
    "DA": {"role": "z", "type": "categorical"},
    "EW": {"role": "z", "type": "categorical"},
    "prior_substudy": {"role": "z", "type": "categorical", "history_derived": true},
    "x_b": {"role": "x", "type": "numeric"},
    "x_c": {"role": "x", "type": "numeric"},
    "x_cat": {"role": "x", "type": "categorical"}
  }
}
"#
}

/// Column schema of generated datasets.
pub fn default_schema() -> DataSchema {
    DataSchema::from_reader(default_schema_json().as_bytes())
        .expect("the built-in schema is valid")
}

fn partner_arm(substudy: &str) -> &'static str {
    if substudy == "HS" {
        "2"
    } else {
        "3"
    }
}

fn other_substudy(substudy: &str) -> &'static str {
    if substudy == "HS" {
        "DA"
    } else {
        "HS"
    }
}

fn arm_slot(arm: &str) -> usize {
    match arm {
        "1" => 0,
        "2" => 1,
        _ => 2,
    }
}

/// Everything simulated for one participant, including the potential outcomes
/// the observed data reveal only partially.
#[derive(Debug, Clone)]
pub struct Draw {
    pub index: u64,
    /// Latent participant effect, shared by all outcomes.
    pub u: f64,
    pub x_b: u8,
    pub x_cat: u8,
    pub ew: u8,
    pub x_c1: f64,
    /// Second-episode value of the continuous covariate (first value plus a
    /// uniform increment); meaningful only if re-enrolled.
    pub x_c2: f64,
    pub substudy1: &'static str,
    pub arm1: &'static str,
    /// First-episode potential outcomes for arms 1, 2, 3.
    pub y1: [f64; 3],
    pub reenrolled: bool,
    pub substudy2: Option<&'static str>,
    pub arm2: Option<&'static str>,
    /// Second-episode potential outcomes for the second substudy's arms,
    /// ordered (shared arm "1", substudy-specific arm), given the realized
    /// first-episode arm.
    pub y2: Option<[f64; 2]>,
}

impl Draw {
    pub fn hs_eligible(&self) -> bool {
        self.x_cat != 1
    }

    pub fn da_eligible(&self) -> bool {
        self.x_cat != 0
    }

    /// Positive first-episode assignment probability for `arm`.
    pub fn first_episode_eligible(&self, arm: &str) -> bool {
        match arm {
            "1" => true,
            "2" => self.hs_eligible(),
            _ => self.da_eligible(),
        }
    }

    pub fn y1_for(&self, arm: &str) -> f64 {
        self.y1[arm_slot(arm)]
    }

    /// Second-episode potential outcome for `arm`, if the participant
    /// re-enrolled into a substudy containing that arm.
    pub fn y2_for(&self, arm: &str) -> Option<f64> {
        let substudy = self.substudy2?;
        let y2 = self.y2?;
        if arm == "1" {
            Some(y2[0])
        } else if arm == partner_arm(substudy) {
            Some(y2[1])
        } else {
            None
        }
    }

    pub fn y_observed1(&self) -> f64 {
        self.y1_for(self.arm1)
    }

    pub fn y_observed2(&self) -> Option<f64> {
        self.y2_for(self.arm2?)
    }
}

/// Validated sampler for one configuration, with effect tables unpacked for
/// the hot loop.
pub struct Sampler {
    scenario: u8,
    params: GeneratorParams,
    sigma: f64,
    first: [Effect; 3],
    /// Indexed by (first arm, second arm); unreachable pairs stay `None`.
    second: [[Option<Effect>; 3]; 3],
}

impl Sampler {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let g = cfg.generator.clone();
        let sigma =
            if g.sigma_is_variance { g.lognormal_sigma.sqrt() } else { g.lognormal_sigma };
        let first = ["1", "2", "3"].map(|a| g.effects_first[a]);
        let mut second = [[None; 3]; 3];
        for (key, eff) in &g.effects_second {
            if let Some((a1, a2)) = key.split_once(',') {
                if ["1", "2", "3"].contains(&a1) && ["1", "2", "3"].contains(&a2) {
                    second[arm_slot(a1)][arm_slot(a2)] = Some(*eff);
                }
            }
        }
        Ok(Sampler { scenario: cfg.scenario, params: g, sigma, first, second })
    }

    fn draw_continuous(&self, rng: &mut impl Rng, cat: u8) -> Result<f64> {
        let mu = self.params.lognormal_mu[cat as usize];
        let [lo, hi] = self.params.truncation_bounds;
        match self.params.truncation {
            Truncation::Clamp => {
                let z: f64 = rng.sample(StandardNormal);
                Ok((mu + self.sigma * z).exp().clamp(lo, hi))
            }
            Truncation::Rejection => {
                for _ in 0..10_000 {
                    let z: f64 = rng.sample(StandardNormal);
                    let x = (mu + self.sigma * z).exp();
                    if (lo..=hi).contains(&x) {
                        return Ok(x);
                    }
                }
                Err(Error::validation(format!(
                    "config: truncation bounds [{lo}, {hi}] carry almost no mass under the \
                     continuous covariate's distribution"
                )))
            }
        }
    }

    fn second_effect(&self, arm1: &str, arm2: &str) -> Effect {
        // validate() guarantees every reachable pair is present
        self.second[arm_slot(arm1)][arm_slot(arm2)].expect("reachable effect pair")
    }

    /// Simulate participant `index` of one replication.
    pub fn draw(&self, rng: &TrialRng, index: u64) -> Result<Draw> {
        let g = &self.params;

        let cov = &mut rng.stream(index, Purpose::Covariates);
        let x_b = (cov.random::<f64>() < g.p_binary) as u8;
        let x_cat = {
            let u: f64 = cov.random();
            if u < g.p_cat[0] {
                0
            } else if u < g.p_cat[0] + g.p_cat[1] {
                1
            } else {
                2
            }
        };
        let x_c1 = self.draw_continuous(cov, x_cat)?;
        let ew = if cov.random::<f64>() < g.p_ew2 { 2 } else { 1 };
        let x_c2 = x_c1 + cov.random::<f64>();

        let u_latent: f64 = rng.stream(index, Purpose::Latent).sample(StandardNormal);

        let assign = &mut rng.stream(index, Purpose::Assign);
        let substudy1 = match x_cat {
            0 => "HS",
            1 => "DA",
            _ => {
                // dual-eligible: substudy odds depend on the entry wave, arms
                // within a substudy stay 1:1 (matches the published scheme)
                let p_hs = if ew == 2 { 0.75 } else { 0.5 };
                if assign.random::<f64>() < p_hs {
                    "HS"
                } else {
                    "DA"
                }
            }
        };
        let arm1 = if assign.random::<f64>() < 0.5 { "1" } else { partner_arm(substudy1) };

        let reenrolled = x_cat == 2 && {
            let p = match self.scenario {
                1 => g.reenroll_rate,
                _ => 1.0 / (1.0 + (g.gamma + u_latent).exp()),
            };
            rng.stream(index, Purpose::Reenroll).random::<f64>() < p
        };
        let (substudy2, arm2) = if reenrolled {
            let s2 = other_substudy(substudy1);
            let a2 = if rng.stream(index, Purpose::Episode2).random::<f64>() < 0.5 {
                "1"
            } else {
                partner_arm(s2)
            };
            (Some(s2), Some(a2))
        } else {
            (None, None)
        };

        let base1 = 0.5 * x_b as f64 + 0.1 * x_c1 + u_latent;
        let catf = x_cat as f64;
        let noise = &mut rng.stream(index, Purpose::Outcome);
        let mut y1 = [0.0; 3];
        for (slot, y) in y1.iter_mut().enumerate() {
            let eps: f64 = noise.sample(StandardNormal);
            let eff = self.first[slot];
            *y = base1 + eff.beta * catf + eff.delta + eps;
        }
        let y2 = substudy2.map(|s2| {
            let base2 = 0.5 * x_b as f64 + 0.1 * x_c2 + u_latent;
            ["1", partner_arm(s2)].map(|a2| {
                let eps: f64 = noise.sample(StandardNormal);
                let eff = self.second_effect(arm1, a2);
                base2 + eff.beta * catf + eff.delta + eps
            })
        });

        Ok(Draw {
            index,
            u: u_latent,
            x_b,
            x_cat,
            ew,
            x_c1,
            x_c2,
            substudy1,
            arm1,
            y1,
            reenrolled,
            substudy2,
            arm2,
            y2,
        })
    }
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

fn records_of(draw: &Draw, out: &mut Vec<EpisodeRecord>) {
    let pid = format!("p{:07}", draw.index);
    let mut z = BTreeMap::new();
    z.insert("HS".to_string(), flag(draw.hs_eligible()));
    z.insert("DA".to_string(), flag(draw.da_eligible()));
    z.insert("EW".to_string(), draw.ew.to_string());
    let mut x = BTreeMap::new();
    x.insert("x_b".to_string(), XValue::Numeric(draw.x_b as f64));
    x.insert("x_c".to_string(), XValue::Numeric(draw.x_c1));
    x.insert("x_cat".to_string(), XValue::Categorical(draw.x_cat.to_string()));

    out.push(EpisodeRecord {
        participant: pid.clone(),
        episode: 1,
        substudy: Some(draw.substudy1.to_string()),
        arm: draw.arm1.to_string(),
        outcome: Some(draw.y_observed1()),
        z: z.clone(),
        x: x.clone(),
    });

    if draw.reenrolled {
        z.insert("prior_substudy".to_string(), draw.substudy1.to_string());
        x.insert("x_c".to_string(), XValue::Numeric(draw.x_c2));
        out.push(EpisodeRecord {
            participant: pid,
            episode: 2,
            substudy: draw.substudy2.map(str::to_string),
            arm: draw.arm2.expect("re-enrolled participants have a second arm").to_string(),
            outcome: draw.y_observed2(),
            z,
            x,
        });
    }
}

/// Generate replication `replication` of the configured trial.
pub fn generate_trial(cfg: &SimConfig, replication: u64) -> Result<RecordSet> {
    Ok(generate_trial_with_draws(cfg, replication)?.0)
}

/// Generate a trial and also return the latent per-participant draws
/// (potential outcomes, latent effects, re-enrollment decisions).
pub fn generate_trial_with_draws(cfg: &SimConfig, replication: u64) -> Result<(RecordSet, Vec<Draw>)> {
    let sampler = Sampler::new(cfg)?;
    let rng = TrialRng::new(cfg.seed, replication, Domain::Replication);
    let mut draws = Vec::with_capacity(cfg.n as usize);
    let mut records = Vec::with_capacity(cfg.n as usize * 2);
    for i in 0..cfg.n {
        let draw = sampler.draw(&rng, i)?;
        records_of(&draw, &mut records);
        draws.push(draw);
    }
    Ok((RecordSet::from_records(records)?, draws))
}

/// Write a generated dataset as CSV under [`default_schema`].
pub fn write_trial_csv<W: Write>(rs: &RecordSet, out: W) -> Result<()> {
    crate::data::write_records(rs, &default_schema(), out)
}
