//! Assignment schemes: per-(episode, z-pattern) randomization probability
//! tables, concurrent-eligibility populations, and probability-pair strata.
//!
//! A scheme is a list of non-overlapping rows. Each row constrains the episode
//! and a subset of z-columns (exact string equality, or the wildcard "any")
//! and supplies one probability per arm. Matching is exact-one: zero matching
//! rows is an "uncovered z-pattern" error and two or more is an "ambiguous
//! scheme" error — silent precedence between overlapping rows would hide
//! configuration bugs.

use std::collections::BTreeMap;
use std::io::Read;

use serde_json::Value;

use crate::data::RecordSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeSelector {
    Any,
    At(u32),
}

impl EpisodeSelector {
    fn matches(self, t: u32) -> bool {
        match self {
            Self::Any => true,
            Self::At(e) => e == t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ZMatch {
    Any,
    Level(String),
}

/// One scheme row: an (episode, z) pattern and a probability per arm.
/// Arms absent from the probability map get probability 0.
#[derive(Debug, Clone)]
pub struct SchemeRow {
    pub episode: EpisodeSelector,
    pub z: BTreeMap<String, ZMatch>,
    pub probs: BTreeMap<String, f64>,
}

impl SchemeRow {
    fn matches(&self, t: u32, z: &BTreeMap<String, String>) -> bool {
        if !self.episode.matches(t) {
            return false;
        }
        self.z.iter().all(|(name, pat)| match pat {
            ZMatch::Any => true,
            ZMatch::Level(level) => z.get(name).is_some_and(|v| v == level),
        })
    }
}

/// A validated randomization table: arm labels plus matching rows.
#[derive(Debug, Clone)]
pub struct AssignmentScheme {
    arms: Vec<String>,
    rows: Vec<SchemeRow>,
}

impl AssignmentScheme {
    pub fn new(arms: Vec<String>, rows: Vec<SchemeRow>) -> Result<Self> {
        if arms.is_empty() {
            return Err(Error::validation("scheme: no arms declared"));
        }
        let mut sorted = arms.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != arms.len() {
            return Err(Error::validation("scheme: duplicate arm label"));
        }
        if rows.is_empty() {
            return Err(Error::validation("scheme: no rows"));
        }
        for (i, row) in rows.iter().enumerate() {
            let mut sum = 0.0;
            for (arm, &p) in &row.probs {
                if !arms.iter().any(|a| a == arm) {
                    return Err(Error::validation(format!(
                        "scheme row {}: probability for undeclared arm '{arm}'",
                        i + 1
                    )));
                }
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::validation(format!(
                        "scheme row {}: probability {p} for arm '{arm}' outside [0,1]",
                        i + 1
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::validation(format!(
                    "scheme row {} does not sum to 1 (sum = {sum})",
                    i + 1
                )));
            }
        }
        Ok(Self { arms, rows })
    }

    pub fn arms(&self) -> &[String] {
        &self.arms
    }

    pub fn has_arm(&self, arm: &str) -> bool {
        self.arms.iter().any(|a| a == arm)
    }

    pub fn rows(&self) -> &[SchemeRow] {
        &self.rows
    }

    /// The unique row matching (t, z).
    fn match_row(&self, t: u32, z: &BTreeMap<String, String>) -> Result<&SchemeRow> {
        let mut found: Option<usize> = None;
        for (i, row) in self.rows.iter().enumerate() {
            if row.matches(t, z) {
                if let Some(first) = found {
                    return Err(Error::validation(format!(
                        "ambiguous scheme: rows {} and {} both match episode {t}, z = {}",
                        first + 1,
                        i + 1,
                        format_z(z)
                    )));
                }
                found = Some(i);
            }
        }
        match found {
            Some(i) => Ok(&self.rows[i]),
            None => Err(Error::validation(format!(
                "uncovered z-pattern: no scheme row matches episode {t}, z = {}",
                format_z(z)
            ))),
        }
    }

    /// Probability of assignment to `arm` under the unique matching row.
    pub fn probability(&self, t: u32, z: &BTreeMap<String, String>, arm: &str) -> Result<f64> {
        if !self.has_arm(arm) {
            return Err(Error::validation(format!("unknown arm '{arm}'")));
        }
        let row = self.match_row(t, z)?;
        Ok(row.probs.get(arm).copied().unwrap_or(0.0))
    }
}

fn format_z(z: &BTreeMap<String, String>) -> String {
    if z.is_empty() {
        return "{}".into();
    }
    let parts: Vec<String> = z.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{{{}}}", parts.join(", "))
}

/// Parse a scheme file: JSON object
/// `{ "arms": [...], "rows": [ { "episode": 1 | "any",
///    "z": {"name": "level" | "any"}, "p": {"arm": "0.375", ...} } ] }`.
/// Probabilities may be decimal strings (preferred; parsed once, reused
/// bit-identically everywhere) or JSON numbers.
pub fn parse_scheme<R: Read>(reader: R) -> Result<AssignmentScheme> {
    let root: Value =
        serde_json::from_reader(reader).map_err(|e| Error::validation(format!("scheme: {e}")))?;
    let obj = root
        .as_object()
        .ok_or_else(|| Error::validation("scheme: top level must be an object"))?;

    let arms: Vec<String> = obj
        .get("arms")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::validation("scheme: missing 'arms' array"))?
        .iter()
        .map(|v| match v {
            Value::String(s) => Ok(s.clone()),
            other => Err(Error::validation(format!("scheme: arm label {other} is not a string"))),
        })
        .collect::<Result<_>>()?;

    let raw_rows = obj
        .get("rows")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::validation("scheme: missing 'rows' array"))?;

    let mut rows = Vec::with_capacity(raw_rows.len());
    for (i, raw) in raw_rows.iter().enumerate() {
        let row_no = i + 1;
        let row = raw
            .as_object()
            .ok_or_else(|| Error::validation(format!("scheme row {row_no}: not an object")))?;

        let episode = match row.get("episode") {
            None => EpisodeSelector::Any,
            Some(Value::String(s)) if s == "any" => EpisodeSelector::Any,
            Some(Value::Number(n)) => {
                let t = n
                    .as_u64()
                    .filter(|&t| t >= 1)
                    .ok_or_else(|| Error::validation(format!("scheme row {row_no}: bad episode {n}")))?;
                EpisodeSelector::At(t as u32)
            }
            Some(other) => {
                return Err(Error::validation(format!("scheme row {row_no}: bad episode {other}")))
            }
        };

        let mut z = BTreeMap::new();
        if let Some(zv) = row.get("z") {
            let zobj = zv
                .as_object()
                .ok_or_else(|| Error::validation(format!("scheme row {row_no}: 'z' not an object")))?;
            for (name, val) in zobj {
                let pat = match val {
                    Value::String(s) if s == "any" => ZMatch::Any,
                    Value::String(s) => ZMatch::Level(s.clone()),
                    other => {
                        return Err(Error::validation(format!(
                            "scheme row {row_no}: z '{name}' value {other} is not a string"
                        )))
                    }
                };
                z.insert(name.clone(), pat);
            }
        }

        let pv = row
            .get("p")
            .and_then(Value::as_object)
            .ok_or_else(|| Error::validation(format!("scheme row {row_no}: missing 'p' object")))?;
        let mut probs = BTreeMap::new();
        for (arm, val) in pv {
            let p = match val {
                Value::String(s) => s.trim().parse::<f64>().map_err(|_| {
                    Error::validation(format!("scheme row {row_no}: bad probability '{s}'"))
                })?,
                Value::Number(n) => n
                    .as_f64()
                    .ok_or_else(|| Error::validation(format!("scheme row {row_no}: bad probability {n}")))?,
                other => {
                    return Err(Error::validation(format!(
                        "scheme row {row_no}: probability {other} is neither string nor number"
                    )))
                }
            };
            probs.insert(arm.clone(), p);
        }

        rows.push(SchemeRow { episode, z, probs });
    }

    AssignmentScheme::new(arms, rows)
}

/// Assignment probability π_arm^t(z) under the scheme.
pub fn assignment_prob(
    scheme: &AssignmentScheme,
    z: &BTreeMap<String, String>,
    t: u32,
    arm: &str,
) -> Result<f64> {
    scheme.probability(t, z, arm)
}

/// Check every record against the scheme: known arm, exactly one matching
/// row, and positive probability for the arm actually assigned.
pub fn validate_records(scheme: &AssignmentScheme, rs: &RecordSet) -> Result<()> {
    for rec in rs.records() {
        if !scheme.has_arm(&rec.arm) {
            return Err(Error::validation(format!(
                "{}: arm '{}' is not in the scheme",
                rec.locator(),
                rec.arm
            )));
        }
        let p = scheme.probability(rec.episode, &rec.z, &rec.arm).map_err(|e| {
            // keep a single "validation:" prefix when re-wrapping
            let msg = match e {
                Error::Validation(m) => m,
                other => other.to_string(),
            };
            Error::validation(format!("{}: {msg}", rec.locator()))
        })?;
        if p <= 0.0 {
            return Err(Error::validation(format!(
                "{}: assigned arm '{}' has zero probability under the scheme",
                rec.locator(),
                rec.arm
            )));
        }
    }
    Ok(())
}

/// The episode-t population concurrently eligible for arms (j, k): records at
/// episode t with strictly positive assignment probability for both arms.
#[derive(Debug, Clone)]
pub struct EcePopulation {
    pub arm_j: String,
    pub arm_k: String,
    pub episode: u32,
    /// Record indices into the source [`RecordSet`], in record order.
    pub members: Vec<usize>,
    /// π_j^t per member, aligned with `members`.
    pub pi_j: Vec<f64>,
    /// π_k^t per member, aligned with `members`.
    pub pi_k: Vec<f64>,
}

impl EcePopulation {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

pub fn ece_population(
    scheme: &AssignmentScheme,
    rs: &RecordSet,
    j: &str,
    k: &str,
    t: u32,
) -> Result<EcePopulation> {
    if j == k {
        return Err(Error::validation(format!("compared arms must differ (got '{j}' twice)")));
    }
    for arm in [j, k] {
        if !scheme.has_arm(arm) {
            return Err(Error::validation(format!("unknown arm '{arm}'")));
        }
    }
    let slice = rs.episode_slice(t);
    let mut members = Vec::new();
    let mut pi_j = Vec::new();
    let mut pi_k = Vec::new();
    for &idx in &slice.indices {
        let rec = &rs.records()[idx];
        let pj = scheme
            .probability(t, &rec.z, j)
            .map_err(|e| Error::validation(format!("{}: {e}", rec.locator())))?;
        let pk = scheme.probability(t, &rec.z, k)?;
        if pj > 0.0 && pk > 0.0 {
            members.push(idx);
            pi_j.push(pj);
            pi_k.push(pk);
        }
    }
    Ok(EcePopulation {
        arm_j: j.to_string(),
        arm_k: k.to_string(),
        episode: t,
        members,
        pi_j,
        pi_k,
    })
}

/// One probability-pair stratum within an ECE population.
#[derive(Debug, Clone)]
pub struct Stratum {
    /// 1-based id, assigned in ascending lexicographic order of (π_j, π_k).
    pub id: usize,
    pub pi_j: f64,
    pub pi_k: f64,
    /// Positions into `pop.members` (not record indices).
    pub members: Vec<usize>,
}

/// Partition an ECE population by exact equality of the (π_j, π_k) pair.
///
/// Equality is bitwise: all members of a stratum matched the same scheme row,
/// so their probabilities are the same parsed values. Stratum ids are assigned
/// in lexicographic order of the pair, which makes repeated derivations (and
/// derivations on permuted inputs) agree.
pub fn derive_strata(pop: &EcePopulation) -> Vec<Stratum> {
    let mut groups: BTreeMap<(u64, u64), Vec<usize>> = BTreeMap::new();
    for pos in 0..pop.members.len() {
        let key = (pop.pi_j[pos].to_bits(), pop.pi_k[pos].to_bits());
        groups.entry(key).or_default().push(pos);
    }
    // Probabilities live in [0,1], so the IEEE bit pattern of each coordinate
    // is monotone in the value and the BTreeMap key order is already the
    // lexicographic (π_j, π_k) order.
    groups
        .into_iter()
        .enumerate()
        .map(|(i, ((bj, bk), members))| Stratum {
            id: i + 1,
            pi_j: f64::from_bits(bj),
            pi_k: f64::from_bits(bk),
            members,
        })
        .collect()
}

/// Which episodes a comparison runs over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EpisodeScope {
    /// Every episode present in the data.
    All,
    /// An explicit subset (deduplicated, ascending).
    Episodes(Vec<u32>),
}

impl EpisodeScope {
    pub fn resolve(&self, rs: &RecordSet) -> Result<Vec<u32>> {
        match self {
            Self::All => Ok((1..=rs.max_episode()).collect()),
            Self::Episodes(list) => {
                if list.is_empty() {
                    return Err(Error::validation("episode scope: empty episode list"));
                }
                if list.iter().any(|&t| t == 0) {
                    return Err(Error::validation("episode scope: episodes start at 1"));
                }
                let mut v = list.clone();
                v.sort_unstable();
                v.dedup();
                Ok(v)
            }
        }
    }
}

/// Everything the estimators need for one (j, k) comparison: per-episode ECE
/// populations, the total person-episode count n_jk, and the sorted list of
/// participants contributing at least one person-episode.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub pops: Vec<EcePopulation>,
    pub n_jk: usize,
    pub participants: Vec<String>,
}

pub(crate) fn prepare_comparison(
    scheme: &AssignmentScheme,
    rs: &RecordSet,
    j: &str,
    k: &str,
    scope: &EpisodeScope,
) -> Result<Prepared> {
    let episodes = scope.resolve(rs)?;
    let mut pops = Vec::with_capacity(episodes.len());
    let mut n_jk = 0usize;
    let mut participants: Vec<String> = Vec::new();
    for &t in &episodes {
        let pop = ece_population(scheme, rs, j, k, t)?;
        n_jk += pop.size();
        for &idx in &pop.members {
            participants.push(rs.records()[idx].participant.clone());
        }
        pops.push(pop);
    }
    participants.sort();
    participants.dedup();
    Ok(Prepared { pops, n_jk, participants })
}
