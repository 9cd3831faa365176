//! Person-episode trial records: CSV ingestion driven by a sidecar schema,
//! structural validation, outcome-missingness policy, and episode views.
//!
//! A record is one (participant, episode) row. Episodes of a participant must
//! form a gap-free prefix 1..T_i; estimators rely on that invariant to index
//! treatment histories. z-columns drive randomization-scheme matching and are
//! compared as exact trimmed strings; x-columns feed working models.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Analysis covariate value.
#[derive(Debug, Clone, PartialEq)]
pub enum XValue {
    Numeric(f64),
    Categorical(String),
}

/// One person-episode row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub participant: String,
    pub episode: u32,
    pub substudy: Option<String>,
    pub arm: String,
    /// `None` until a missingness policy has been applied.
    pub outcome: Option<f64>,
    /// Randomization covariates (scheme-matching keys), exact strings.
    pub z: BTreeMap<String, String>,
    /// Working-model covariates.
    pub x: BTreeMap<String, XValue>,
}

impl EpisodeRecord {
    pub fn locator(&self) -> String {
        format!("participant '{}', episode {}", self.participant, self.episode)
    }
}

/// Immutable, validated collection of records.
///
/// Record order is input order; the participant index is sorted, so every
/// iteration the estimators perform is deterministic.
#[derive(Debug, Clone)]
pub struct RecordSet {
    records: Vec<EpisodeRecord>,
    by_participant: BTreeMap<String, Vec<usize>>,
    max_episode: u32,
    arms: Vec<String>,
}

impl RecordSet {
    pub fn from_records(records: Vec<EpisodeRecord>) -> Result<Self> {
        let mut by_participant: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut max_episode = 0u32;
        let mut arms: BTreeSet<String> = BTreeSet::new();

        for (idx, rec) in records.iter().enumerate() {
            if rec.participant.is_empty() {
                return Err(Error::validation(format!("row {}: empty participant id", idx + 1)));
            }
            if rec.arm.is_empty() {
                return Err(Error::validation(format!("{}: empty arm", rec.locator())));
            }
            if rec.episode == 0 {
                return Err(Error::validation(format!(
                    "participant '{}': episode numbers start at 1",
                    rec.participant
                )));
            }
            if let Some(y) = rec.outcome {
                if !y.is_finite() {
                    return Err(Error::validation(format!("{}: non-finite outcome", rec.locator())));
                }
            }
            for (name, value) in &rec.x {
                if let XValue::Numeric(v) = value {
                    if !v.is_finite() {
                        return Err(Error::validation(format!(
                            "{}: non-finite covariate '{}'",
                            rec.locator(),
                            name
                        )));
                    }
                }
            }
            max_episode = max_episode.max(rec.episode);
            arms.insert(rec.arm.clone());
            by_participant.entry(rec.participant.clone()).or_default().push(idx);
        }

        for (pid, idxs) in &mut by_participant {
            idxs.sort_by_key(|&i| records[i].episode);
            let mut seen = BTreeSet::new();
            for (pos, &i) in idxs.iter().enumerate() {
                let t = records[i].episode;
                if !seen.insert(t) {
                    return Err(Error::validation(format!(
                        "duplicate (participant, episode): ('{pid}', {t})"
                    )));
                }
                if t as usize != pos + 1 {
                    return Err(Error::validation(format!(
                        "episode gap: participant '{pid}' has episode {t} without episode {}",
                        pos + 1
                    )));
                }
            }
        }

        Ok(Self {
            records,
            by_participant,
            max_episode,
            arms: arms.into_iter().collect(),
        })
    }

    pub fn records(&self) -> &[EpisodeRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_participants(&self) -> usize {
        self.by_participant.len()
    }

    /// Participant ids in sorted order.
    pub fn participants(&self) -> impl Iterator<Item = &str> {
        self.by_participant.keys().map(|s| s.as_str())
    }

    /// Record indices for one participant, episode-sorted.
    pub fn participant_records(&self, participant: &str) -> &[usize] {
        self.by_participant.get(participant).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn max_episode(&self) -> u32 {
        self.max_episode
    }

    /// Distinct arm labels observed in the data, sorted.
    pub fn arms_observed(&self) -> &[String] {
        &self.arms
    }

    /// View of records at episode `t`. Empty views are allowed.
    pub fn episode_slice(&self, t: u32) -> EpisodeSlice<'_> {
        let indices = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.episode == t)
            .map(|(i, _)| i)
            .collect();
        EpisodeSlice { set: self, episode: t, indices }
    }
}

/// Borrowed per-episode view; one record per participant by construction.
#[derive(Debug)]
pub struct EpisodeSlice<'a> {
    set: &'a RecordSet,
    pub episode: u32,
    pub indices: Vec<usize>,
}

impl<'a> EpisodeSlice<'a> {
    pub fn records(&self) -> impl Iterator<Item = &'a EpisodeRecord> + '_ {
        self.indices.iter().map(|&i| &self.set.records()[i])
    }

    pub fn n_participants(&self) -> usize {
        self.indices.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Z,
    X,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Categorical,
    Numeric,
}

fn is_false(b: &bool) -> bool {
    !b
}

/// Declared role and type of one non-core CSV column.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub role: Role,
    #[serde(rename = "type")]
    pub column_type: ColumnType,
    /// A z-column whose episode-t value (t ≥ 2) is the participant's episode
    /// t−1 substudy label. Filled by the parser when the cell is absent or
    /// empty; such a column may be omitted from the CSV entirely.
    #[serde(default, skip_serializing_if = "is_false")]
    pub history_derived: bool,
}

/// Sidecar schema: names the core columns and classifies the rest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSchema {
    pub participant_id: String,
    pub episode: String,
    pub arm: String,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substudy: Option<String>,
    #[serde(default)]
    pub covariates: BTreeMap<String, ColumnSpec>,
}

impl DataSchema {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let schema: DataSchema = serde_json::from_reader(reader)
            .map_err(|e| Error::validation(format!("schema: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    fn core_columns(&self) -> Vec<&str> {
        let mut cols = vec![
            self.participant_id.as_str(),
            self.episode.as_str(),
            self.arm.as_str(),
            self.outcome.as_str(),
        ];
        if let Some(s) = &self.substudy {
            cols.push(s.as_str());
        }
        cols
    }

    fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in self.core_columns() {
            if c.is_empty() {
                return Err(Error::validation("schema: empty core column name"));
            }
            if !seen.insert(c.to_string()) {
                return Err(Error::validation(format!("schema: column '{c}' used for two roles")));
            }
        }
        for (name, spec) in &self.covariates {
            if !seen.insert(name.clone()) {
                return Err(Error::validation(format!(
                    "schema: column '{name}' is both a core column and a covariate"
                )));
            }
            if spec.history_derived && spec.role != Role::Z {
                return Err(Error::validation(format!(
                    "schema: history-derived column '{name}' must have role 'z'"
                )));
            }
        }
        Ok(())
    }
}

/// Parse/validation summary returned alongside a successfully built set.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    pub dropped_count: usize,
    pub n_records: usize,
    pub n_participants: usize,
    pub n_missing_outcome: usize,
}

fn parse_outcome(raw: &str, line: usize) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() || raw == "NA" {
        return Ok(None);
    }
    let y: f64 = raw
        .parse()
        .map_err(|_| Error::validation(format!("line {line}: bad outcome '{raw}'")))?;
    if !y.is_finite() {
        return Err(Error::validation(format!("line {line}: non-finite outcome")));
    }
    Ok(Some(y))
}

/// Read delimited text with a header row into a validated [`RecordSet`].
pub fn parse_records<R: Read>(source: R, schema: &DataSchema) -> Result<(RecordSet, ValidationReport)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::validation(format!("header: {e}")))?
        .clone();

    let mut col_index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        if col_index.insert(h, i).is_some() {
            return Err(Error::validation(format!("duplicate column '{h}'")));
        }
        if h != schema.participant_id
            && h != schema.episode
            && h != schema.arm
            && h != schema.outcome
            && schema.substudy.as_deref() != Some(h)
            && !schema.covariates.contains_key(h)
        {
            return Err(Error::validation(format!("column '{h}' not described by the schema")));
        }
    }
    let require = |name: &str| -> Result<usize> {
        col_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::validation(format!("missing required column '{name}'")))
    };
    let pid_col = require(&schema.participant_id)?;
    let episode_col = require(&schema.episode)?;
    let arm_col = require(&schema.arm)?;
    let outcome_col = require(&schema.outcome)?;
    let substudy_col = match &schema.substudy {
        Some(name) => Some(require(name)?),
        None => None,
    };
    let mut covariate_cols: BTreeMap<&String, Option<usize>> = BTreeMap::new();
    for (name, spec) in &schema.covariates {
        match col_index.get(name.as_str()) {
            Some(&i) => {
                covariate_cols.insert(name, Some(i));
            }
            None if spec.history_derived => {
                covariate_cols.insert(name, None);
            }
            None => return Err(Error::validation(format!("missing covariate column '{name}'"))),
        }
    }

    let mut records = Vec::new();
    let mut report = ValidationReport::default();
    for (row_idx, row) in reader.records().enumerate() {
        let line = row_idx + 2; // header is line 1
        let row = row.map_err(|e| Error::validation(format!("line {line}: {e}")))?;
        let get = |col: usize| row.get(col).unwrap_or("").trim();

        let episode: u32 = get(episode_col)
            .parse()
            .map_err(|_| Error::validation(format!("line {line}: bad episode '{}'", get(episode_col))))?;
        let substudy = substudy_col
            .map(|c| get(c))
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        let outcome = parse_outcome(get(outcome_col), line)?;
        if outcome.is_none() {
            report.n_missing_outcome += 1;
        }

        let mut z = BTreeMap::new();
        let mut x = BTreeMap::new();
        for (name, spec) in &schema.covariates {
            let raw = match covariate_cols[name] {
                Some(c) => get(c),
                None => "",
            };
            if raw.is_empty() {
                if spec.history_derived {
                    continue; // filled from history below
                }
                return Err(Error::validation(format!(
                    "line {line}: missing value for covariate '{name}'"
                )));
            }
            match spec.role {
                Role::Z => {
                    if spec.column_type == ColumnType::Numeric && raw.parse::<f64>().is_err() {
                        return Err(Error::validation(format!(
                            "line {line}: z-column '{name}' declared numeric but value is '{raw}'"
                        )));
                    }
                    z.insert(name.clone(), raw.to_string());
                }
                Role::X => {
                    let value = match spec.column_type {
                        ColumnType::Numeric => XValue::Numeric(raw.parse().map_err(|_| {
                            Error::validation(format!("line {line}: bad numeric value '{raw}' for '{name}'"))
                        })?),
                        ColumnType::Categorical => XValue::Categorical(raw.to_string()),
                    };
                    x.insert(name.clone(), value);
                }
            }
        }

        records.push(EpisodeRecord {
            participant: get(pid_col).to_string(),
            episode,
            substudy,
            arm: get(arm_col).to_string(),
            outcome,
            z,
            x,
        });
    }

    fill_history_derived(&mut records, schema)?;

    let rs = RecordSet::from_records(records)?;
    report.n_records = rs.len();
    report.n_participants = rs.n_participants();
    Ok((rs, report))
}

/// Fill absent history-derived z-values from the previous episode's substudy.
fn fill_history_derived(records: &mut [EpisodeRecord], schema: &DataSchema) -> Result<()> {
    let derived: Vec<&String> = schema
        .covariates
        .iter()
        .filter(|(_, s)| s.history_derived)
        .map(|(n, _)| n)
        .collect();
    if derived.is_empty() {
        return Ok(());
    }
    let mut substudy_at: BTreeMap<(String, u32), Option<String>> = BTreeMap::new();
    for rec in records.iter() {
        substudy_at.insert((rec.participant.clone(), rec.episode), rec.substudy.clone());
    }
    for rec in records.iter_mut() {
        for name in &derived {
            if rec.episode < 2 || rec.z.contains_key(*name) {
                continue;
            }
            // A missing prior *row* is an episode-gap error that the record-set
            // constructor reports with a clearer message; only a present row
            // without a substudy is our problem.
            let Some(prior) = substudy_at.get(&(rec.participant.clone(), rec.episode - 1)) else {
                continue;
            };
            let prior = prior.clone().ok_or_else(|| {
                Error::validation(format!(
                    "{}: cannot derive '{}': no episode-{} substudy",
                    rec.locator(),
                    name,
                    rec.episode - 1
                ))
            })?;
            rec.z.insert((*name).clone(), prior);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingnessPolicy {
    /// Drop records with a missing outcome; dropping episode t drops the
    /// participant's episodes > t too, preserving the prefix invariant.
    CompleteCaseRecord,
    /// Refuse to proceed if any outcome is missing.
    Fail,
}

impl std::str::FromStr for MissingnessPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete-case" | "complete-case-record" => Ok(Self::CompleteCaseRecord),
            "fail" => Ok(Self::Fail),
            other => Err(Error::validation(format!("unknown missingness policy '{other}'"))),
        }
    }
}

pub fn apply_missingness_policy(
    rs: &RecordSet,
    policy: MissingnessPolicy,
) -> Result<(RecordSet, ValidationReport)> {
    let missing: Vec<&EpisodeRecord> =
        rs.records().iter().filter(|r| r.outcome.is_none()).collect();

    if policy == MissingnessPolicy::Fail {
        if missing.is_empty() {
            let mut report = ValidationReport::default();
            report.n_records = rs.len();
            report.n_participants = rs.n_participants();
            return Ok((rs.clone(), report));
        }
        let locs: Vec<String> = missing.iter().map(|r| r.locator()).collect();
        return Err(Error::validation(format!(
            "missing outcomes with policy=fail: {}",
            locs.join("; ")
        )));
    }

    // First missing episode per participant; everything from there on drops.
    let mut cut: BTreeMap<&str, u32> = BTreeMap::new();
    for rec in &missing {
        match cut.entry(rec.participant.as_str()) {
            Entry::Vacant(e) => {
                e.insert(rec.episode);
            }
            Entry::Occupied(mut e) => {
                let v = e.get_mut();
                *v = (*v).min(rec.episode);
            }
        }
    }

    let mut kept = Vec::new();
    let mut report = ValidationReport::default();
    for rec in rs.records() {
        let dropped = cut.get(rec.participant.as_str()).is_some_and(|&m| rec.episode >= m);
        if dropped {
            report.dropped_count += 1;
            report.warnings.push(format!("dropped {} (missing-outcome policy)", rec.locator()));
        } else {
            kept.push(rec.clone());
        }
    }
    let out = RecordSet::from_records(kept)?;
    report.n_records = out.len();
    report.n_participants = out.n_participants();
    report.n_missing_outcome = missing.len();
    Ok((out, report))
}

/// Serialize a record set back to CSV under the same schema.
///
/// Round-trip guarantee: `parse(write(parse(x)))` is record-wise equal to
/// `parse(x)` (numeric cells use shortest round-trip formatting).
pub fn write_records<W: Write>(rs: &RecordSet, schema: &DataSchema, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = vec![&schema.participant_id, &schema.episode];
    if let Some(s) = &schema.substudy {
        header.push(s);
    }
    header.push(&schema.arm);
    header.push(&schema.outcome);
    let covariate_names: Vec<&String> = schema.covariates.keys().collect();
    header.extend(covariate_names.iter().map(|s| s.as_str()));
    w.write_record(&header).map_err(csv_io)?;

    for rec in rs.records() {
        let mut row: Vec<String> = vec![rec.participant.clone(), rec.episode.to_string()];
        if schema.substudy.is_some() {
            row.push(rec.substudy.clone().unwrap_or_default());
        }
        row.push(rec.arm.clone());
        row.push(rec.outcome.map(|y| y.to_string()).unwrap_or_default());
        for name in &covariate_names {
            let cell = match schema.covariates[*name].role {
                Role::Z => rec.z.get(*name).cloned().unwrap_or_default(),
                Role::X => match rec.x.get(*name) {
                    Some(XValue::Numeric(v)) => v.to_string(),
                    Some(XValue::Categorical(s)) => s.clone(),
                    None => String::new(),
                },
            };
            row.push(cell);
        }
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::validation(format!("csv write: {e}"))
}
