//! Outcome working models μ̂ for the augmented estimators.
//!
//! A working model is fit on the arm-`a` members of the (j,k) eligibility
//! populations and then evaluated on *every* member, treated or not. It is
//! allowed to be arbitrarily misspecified — the augmented estimators stay
//! consistent either way; a good model only buys efficiency.

use std::collections::BTreeMap;

use crate::data::{EpisodeRecord, RecordSet};
use crate::error::{Error, Result};
use crate::linear::{fit_ols, CovariateEncoder, LinearModel};
use crate::scheme::{prepare_comparison, AssignmentScheme, EpisodeScope};

/// Prediction interface the estimators consume.
pub trait OutcomeModel {
    /// Predicted outcome for a record at the given episode.
    fn predict(&self, episode: u32, rec: &EpisodeRecord) -> Result<f64>;
}

/// μ̂ ≡ 0. Augmented estimators with this model reduce exactly to their
/// unaugmented counterparts.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroModel;

impl OutcomeModel for ZeroModel {
    fn predict(&self, _episode: u32, _rec: &EpisodeRecord) -> Result<f64> {
        Ok(0.0)
    }
}

/// A fitted model shifted by a constant; used to probe invariance of the
/// augmented stratified estimator to μ̂ → μ̂ + c.
pub struct ShiftedModel<'a, M: OutcomeModel + ?Sized> {
    pub inner: &'a M,
    pub shift: f64,
}

impl<M: OutcomeModel + ?Sized> OutcomeModel for ShiftedModel<'_, M> {
    fn predict(&self, episode: u32, rec: &EpisodeRecord) -> Result<f64> {
        Ok(self.inner.predict(episode, rec)? + self.shift)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    /// Separate fit per episode (the default).
    PerEpisode,
    /// One fit on all episodes' training records, applied to each episode.
    Pooled,
}

impl std::str::FromStr for Pooling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-episode" => Ok(Self::PerEpisode),
            "pooled" => Ok(Self::Pooled),
            other => Err(Error::validation(format!("unknown pooling '{other}'"))),
        }
    }
}

/// Linear working model for one arm within a (j,k) comparison.
#[derive(Debug, Clone)]
pub struct FittedWorkingModel {
    pub arm: String,
    pub pooling: Pooling,
    encoder: CovariateEncoder,
    /// Per-episode fits; under pooling all episodes map to the same fit.
    models: BTreeMap<u32, LinearModel>,
    /// Training-set size per episode (0 for episodes with an empty
    /// eligibility population).
    pub training_n: BTreeMap<u32, usize>,
}

impl FittedWorkingModel {
    pub fn model_for(&self, episode: u32) -> Option<&LinearModel> {
        self.models.get(&episode)
    }
}

impl OutcomeModel for FittedWorkingModel {
    fn predict(&self, episode: u32, rec: &EpisodeRecord) -> Result<f64> {
        let model = self.models.get(&episode).ok_or_else(|| {
            Error::estimation(format!("working model: no fit for episode {episode}"))
        })?;
        let mut row = Vec::with_capacity(model.names.len());
        row.push(1.0);
        row.extend(self.encoder.row(rec)?);
        Ok(model.predict_row(&row))
    }
}

/// Fit the arm-`arm` outcome model over the (j,k) eligibility populations in
/// scope. With an empty covariate list this is an intercept-only fit (the
/// within-population arm mean).
///
/// An episode whose population is nonempty but contains no arm-`arm` records
/// is an error; callers that prefer falling back to the unaugmented
/// estimator must do so explicitly.
pub fn fit_working_model(
    rs: &RecordSet,
    scheme: &AssignmentScheme,
    j: &str,
    k: &str,
    arm: &str,
    covariates: &[String],
    scope: &EpisodeScope,
    pooling: Pooling,
) -> Result<FittedWorkingModel> {
    if arm != j && arm != k {
        return Err(Error::estimation(format!(
            "working model arm '{arm}' is neither '{j}' nor '{k}'"
        )));
    }
    let prepared = prepare_comparison(scheme, rs, j, k, scope)?;

    // Encoder levels come from every population member, so predictions are
    // defined on the whole population, not just the training arm.
    let all_members: Vec<&EpisodeRecord> = prepared
        .pops
        .iter()
        .flat_map(|pop| pop.members.iter().map(|&i| &rs.records()[i]))
        .collect();
    if all_members.is_empty() {
        return Err(Error::estimation(format!(
            "working model: empty eligibility population for ({j}, {k})"
        )));
    }
    let encoder = CovariateEncoder::build(all_members.iter().copied(), covariates)?;

    let mut training: BTreeMap<u32, Vec<&EpisodeRecord>> = BTreeMap::new();
    let mut training_n = BTreeMap::new();
    for pop in &prepared.pops {
        let recs: Vec<&EpisodeRecord> = pop
            .members
            .iter()
            .map(|&i| &rs.records()[i])
            .filter(|r| r.arm == arm)
            .collect();
        if recs.is_empty() && pop.size() > 0 {
            return Err(Error::estimation(format!(
                "no arm-{arm} records in ECE population at episode {}",
                pop.episode
            )));
        }
        training_n.insert(pop.episode, recs.len());
        if !recs.is_empty() {
            training.insert(pop.episode, recs);
        }
    }

    let fit_on = |recs: &[&EpisodeRecord]| -> Result<LinearModel> {
        let x = encoder.design(recs.iter().copied())?;
        let y: Vec<f64> = recs
            .iter()
            .map(|r| {
                r.outcome.ok_or_else(|| {
                    Error::estimation(format!("{}: missing outcome in training set", r.locator()))
                })
            })
            .collect::<Result<_>>()?;
        fit_ols(&x, &y)
    };

    let mut models = BTreeMap::new();
    match pooling {
        Pooling::PerEpisode => {
            for (&t, recs) in &training {
                models.insert(t, fit_on(recs)?);
            }
        }
        Pooling::Pooled => {
            let union: Vec<&EpisodeRecord> = training.values().flatten().copied().collect();
            if union.is_empty() {
                return Err(Error::estimation(format!(
                    "no arm-{arm} records in ECE population at any episode in scope"
                )));
            }
            let model = fit_on(&union)?;
            for &t in training.keys() {
                models.insert(t, model.clone());
            }
        }
    }

    Ok(FittedWorkingModel { arm: arm.to_string(), pooling, encoder, models, training_n })
}
