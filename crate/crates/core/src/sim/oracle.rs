//! Monte Carlo computation of true estimand values.
//!
//! The estimands are ratios of population means (episode contrasts weighted
//! by eligibility-population size), so each is computed as a ratio estimator
//! over independent mechanism draws, with a delta-method Monte Carlo standard
//! error. Draws use the [`Domain::Oracle`] stream family and are processed in
//! fixed-size chunks merged in order, so results are bit-identical regardless
//! of thread count.

use std::collections::BTreeMap;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{Draw, Sampler, SimConfig};
use super::rng::{Domain, TrialRng};
use crate::error::{Error, Result};
use crate::num::KahanSum;

/// The two treatment-versus-shared-control comparisons of the benchmark
/// design.
pub const COMPARISONS: [(&str, &str); 2] = [("2", "1"), ("3", "1")];

pub fn comparison_label(arm_j: &str, arm_k: &str) -> String {
    format!("{arm_j}v{arm_k}")
}

/// The substudy in which a comparison's non-control arm is randomized.
pub fn substudy_of(arm_j: &str) -> &'static str {
    if arm_j == "2" {
        "HS"
    } else {
        "DA"
    }
}

/// Which population a truth value refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthScope {
    /// All episodes, weighted by eligibility-population size.
    Pooled,
    Episode(u32),
    /// Person-episodes enrolled in the comparison's substudy.
    Substudy,
}

pub fn truth_key(comparison: &str, scope: TruthScope) -> String {
    match scope {
        TruthScope::Pooled => comparison.to_string(),
        TruthScope::Episode(t) => format!("{comparison}@ep{t}"),
        TruthScope::Substudy => format!("{comparison}@substudy"),
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TruthValue {
    pub value: f64,
    /// Monte Carlo standard error of `value`.
    pub mc_se: f64,
}

/// True contrast values for one configuration, keyed by
/// [`truth_key`] (e.g. `"2v1"`, `"2v1@ep1"`, `"2v1@substudy"`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthTable {
    pub draws: u64,
    pub seed: u64,
    pub scenario: u8,
    pub truths: BTreeMap<String, TruthValue>,
}

impl TruthTable {
    pub fn get(&self, key: &str) -> Option<&TruthValue> {
        self.truths.get(key)
    }

    pub fn value(&self, key: &str) -> Result<f64> {
        self.truths
            .get(key)
            .map(|t| t.value)
            .ok_or_else(|| Error::validation(format!("truth table has no entry '{key}'")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("truth tables serialize")
    }

    pub fn from_json<R: std::io::Read>(reader: R) -> Result<Self> {
        serde_json::from_reader(reader)
            .map_err(|e| Error::validation(format!("truth table: {e}")))
    }
}

const SCOPES: usize = 4; // pooled, episode 1, episode 2, substudy
const CELLS: usize = COMPARISONS.len() * SCOPES;
const CHUNK: u64 = 65_536;

/// Running sums for one ratio estimator: numerator and denominator totals
/// plus the second moments needed for its Monte Carlo standard error.
#[derive(Clone)]
struct CellAcc {
    c: KahanSum,
    m: KahanSum,
    cc: KahanSum,
    cm: KahanSum,
    mm: KahanSum,
}

impl CellAcc {
    fn new() -> Self {
        CellAcc {
            c: KahanSum::new(),
            m: KahanSum::new(),
            cc: KahanSum::new(),
            cm: KahanSum::new(),
            mm: KahanSum::new(),
        }
    }

    fn add(&mut self, c: f64, m: f64) {
        if m == 0.0 {
            return;
        }
        self.c.add(c);
        self.m.add(m);
        self.cc.add(c * c);
        self.cm.add(c * m);
        self.mm.add(m * m);
    }

    fn export(&self) -> [f64; 5] {
        [self.c.value(), self.m.value(), self.cc.value(), self.cm.value(), self.mm.value()]
    }
}

fn accumulate(draw: &Draw, cells: &mut [CellAcc; CELLS]) {
    for (ci, (j, k)) in COMPARISONS.iter().enumerate() {
        let base = ci * SCOPES;
        let substudy = substudy_of(j);

        let member1 = draw.first_episode_eligible(j) && draw.first_episode_eligible(k);
        let diff1 = if member1 { draw.y1_for(j) - draw.y1_for(k) } else { 0.0 };
        // at episode 2 both arms are available exactly when the second
        // substudy is the one containing arm j
        let diff2 = match (draw.y2_for(j), draw.y2_for(k)) {
            (Some(yj), Some(yk)) => Some(yj - yk),
            _ => None,
        };
        let m1 = member1 as u32 as f64;
        let m2 = diff2.is_some() as u32 as f64;

        cells[base].add(diff1 + diff2.unwrap_or(0.0), m1 + m2);
        cells[base + 1].add(diff1, m1);
        cells[base + 2].add(diff2.unwrap_or(0.0), m2);

        let in1 = draw.substudy1 == substudy;
        let in2 = draw.substudy2 == Some(substudy);
        let cs = if in1 { draw.y1_for(j) - draw.y1_for(k) } else { 0.0 } +
            if in2 { diff2.unwrap_or(0.0) } else { 0.0 };
        cells[base + 3].add(cs, in1 as u32 as f64 + in2 as u32 as f64);
    }
}

fn chunk_sums(sampler: &Sampler, rng: &TrialRng, lo: u64, hi: u64) -> Result<[[f64; 5]; CELLS]> {
    let mut cells: [CellAcc; CELLS] = std::array::from_fn(|_| CellAcc::new());
    for i in lo..hi {
        let draw = sampler.draw(rng, i)?;
        accumulate(&draw, &mut cells);
    }
    Ok(std::array::from_fn(|i| cells[i].export()))
}

/// Estimate every truth value for `cfg` from `draws` independent mechanism
/// draws.
///
/// The dataset size `cfg.n` plays no role here; truths are population
/// quantities of the mechanism (which the scenario is part of: re-enrollment
/// behavior changes the episode weights).
pub fn truth_oracle(cfg: &SimConfig, draws: u64) -> Result<TruthTable> {
    if draws == 0 {
        return Err(Error::validation("truth oracle: draws must be at least 1"));
    }
    let sampler = Sampler::new(cfg)?;
    let rng = TrialRng::new(cfg.seed, 0, Domain::Oracle);

    let ranges: Vec<(u64, u64)> =
        (0..draws).step_by(CHUNK as usize).map(|lo| (lo, (lo + CHUNK).min(draws))).collect();

    #[cfg(feature = "parallel")]
    let partials: Vec<[[f64; 5]; CELLS]> = ranges
        .par_iter()
        .map(|&(lo, hi)| chunk_sums(&sampler, &rng, lo, hi))
        .collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<[[f64; 5]; CELLS]> = ranges
        .iter()
        .map(|&(lo, hi)| chunk_sums(&sampler, &rng, lo, hi))
        .collect::<Result<_>>()?;

    // merge partial sums in chunk order: bit-identical for any thread count
    let mut totals: Vec<[KahanSum; 5]> =
        (0..CELLS).map(|_| std::array::from_fn(|_| KahanSum::new())).collect();
    for part in &partials {
        for (cell, stats) in part.iter().enumerate() {
            for (s, &v) in stats.iter().enumerate() {
                totals[cell][s].add(v);
            }
        }
    }

    let mut truths = BTreeMap::new();
    for (ci, (j, k)) in COMPARISONS.iter().enumerate() {
        let label = comparison_label(j, k);
        for (si, scope) in
            [TruthScope::Pooled, TruthScope::Episode(1), TruthScope::Episode(2), TruthScope::Substudy]
                .into_iter()
                .enumerate()
        {
            let [c, m, cc, cm, mm] = std::array::from_fn(|s| totals[ci * SCOPES + si][s].value());
            if m <= 0.0 {
                return Err(Error::estimation(format!(
                    "truth oracle: no draws entered comparison {label} for {:?}",
                    scope
                )));
            }
            let value = c / m;
            // delta-method: Var(R) ≈ Σ(c_i − R·m_i)² / (Σm)²
            let ss = (cc - 2.0 * value * cm + value * value * mm).max(0.0);
            truths.insert(
                truth_key(&label, scope),
                TruthValue { value, mc_se: ss.sqrt() / m },
            );
        }
    }
    Ok(TruthTable { draws, seed: cfg.seed, scenario: cfg.scenario, truths })
}
