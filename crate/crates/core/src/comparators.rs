//! Single-substudy comparators: the traditional estimators that use only the
//! records randomized within one substudy, ignoring concurrent eligibility
//! and re-enrollment structure.
//!
//! All three are regressions with a treatment indicator, differing in how
//! covariates enter; the reported contrast is always a marginal treated-vs-
//! control mean difference, and its standard error is the
//! heteroskedasticity-robust (HC1) sandwich. No clustering is applied: a
//! participant appears at most once inside a substudy (validated here), so
//! rows are independent.

use serde::Serialize;

use crate::data::{EpisodeRecord, RecordSet};
use crate::error::{Error, Result};
use crate::linear::{fit_ols, hc1_covariance, CovariateEncoder, DesignMatrix};
use crate::num::mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    /// Difference in arm means (no covariates).
    Anova,
    /// Treatment coefficient from Y ~ 1 + D + X.
    Ancova,
    /// Y ~ 1 + D + Xc + D·Xc with covariates centered at the pooled mean;
    /// the D coefficient is then the contrast averaged over the pooled
    /// covariate distribution, robust to heterogeneous slopes.
    Anhecova,
}

impl Comparator {
    pub const ALL: [Comparator; 3] = [Comparator::Anova, Comparator::Ancova, Comparator::Anhecova];

    pub fn name(self) -> &'static str {
        match self {
            Comparator::Anova => "anova",
            Comparator::Ancova => "ancova",
            Comparator::Anhecova => "anhecova",
        }
    }
}

impl std::fmt::Display for Comparator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Comparator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anova" => Ok(Comparator::Anova),
            "ancova" => Ok(Comparator::Ancova),
            "anhecova" => Ok(Comparator::Anhecova),
            other => Err(Error::validation(format!("unknown comparator '{other}'"))),
        }
    }
}

/// A within-substudy treated-vs-control contrast with its robust SE.
#[derive(Debug, Clone, Serialize)]
pub struct ComparatorEstimate {
    pub comparator: Comparator,
    pub substudy: String,
    pub treated: String,
    pub control: String,
    pub value: f64,
    pub se: f64,
    pub n: usize,
    pub n_treated: usize,
    pub n_control: usize,
}

/// Estimate the treated-vs-control contrast within one substudy.
///
/// Uses every record whose substudy label matches and whose arm is one of the
/// two compared arms, across all episodes; a participant contributing two
/// such records is an error (substudy membership is per-enrollment, so this
/// indicates either a data problem or a design this estimator does not
/// cover).
pub fn substudy_comparator(
    kind: Comparator,
    rs: &RecordSet,
    substudy: &str,
    treated: &str,
    control: &str,
    covariates: &[String],
) -> Result<ComparatorEstimate> {
    if treated == control {
        return Err(Error::validation(format!("compared arms must differ (got '{treated}' twice)")));
    }
    let records: Vec<&EpisodeRecord> = rs
        .records()
        .iter()
        .filter(|r| r.substudy.as_deref() == Some(substudy))
        .filter(|r| r.arm == treated || r.arm == control)
        .collect();

    let mut seen = std::collections::BTreeSet::new();
    for rec in &records {
        if !seen.insert(rec.participant.as_str()) {
            return Err(Error::validation(format!(
                "participant '{}' appears more than once in substudy '{substudy}'",
                rec.participant
            )));
        }
    }

    let n_treated = records.iter().filter(|r| r.arm == treated).count();
    let n_control = records.len() - n_treated;
    if n_treated == 0 || n_control == 0 {
        return Err(Error::estimation(format!(
            "substudy '{substudy}': empty arm (treated n = {n_treated}, control n = {n_control})"
        )));
    }

    let y: Vec<f64> = records
        .iter()
        .map(|r| {
            r.outcome.ok_or_else(|| {
                Error::estimation(format!("{}: missing outcome in substudy analysis", r.locator()))
            })
        })
        .collect::<Result<_>>()?;
    let d: Vec<f64> = records.iter().map(|r| if r.arm == treated { 1.0 } else { 0.0 }).collect();

    let effective_covariates: &[String] =
        if kind == Comparator::Anova { &[] } else { covariates };
    let encoder = CovariateEncoder::build(records.iter().copied(), effective_covariates)?;
    let x_rows: Vec<Vec<f64>> =
        records.iter().map(|r| encoder.row(r)).collect::<Result<Vec<_>>>()?;
    let n_x = encoder.names().len();

    let mut names = vec!["(intercept)".to_string(), "treat".to_string()];
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(records.len());
    match kind {
        Comparator::Anova | Comparator::Ancova => {
            names.extend(encoder.names());
            for (i, xr) in x_rows.iter().enumerate() {
                let mut row = Vec::with_capacity(2 + n_x);
                row.push(1.0);
                row.push(d[i]);
                row.extend(xr);
                rows.push(row);
            }
        }
        Comparator::Anhecova => {
            let centers: Vec<f64> = (0..n_x)
                .map(|c| {
                    let col: Vec<f64> = x_rows.iter().map(|r| r[c]).collect();
                    mean(&col)
                })
                .collect();
            for base in encoder.names() {
                names.push(base.clone());
            }
            for base in encoder.names() {
                names.push(format!("treat:{base}"));
            }
            for (i, xr) in x_rows.iter().enumerate() {
                let mut row = Vec::with_capacity(2 + 2 * n_x);
                row.push(1.0);
                row.push(d[i]);
                for c in 0..n_x {
                    row.push(xr[c] - centers[c]);
                }
                for c in 0..n_x {
                    row.push(d[i] * (xr[c] - centers[c]));
                }
                rows.push(row);
            }
        }
    }

    let design = DesignMatrix::new(names, &rows)?;
    let model = fit_ols(&design, &y)?;
    let treat_idx = 1usize;
    if !model.kept.contains(&treat_idx) {
        return Err(Error::estimation(format!(
            "substudy '{substudy}': treatment indicator is collinear with the covariates"
        )));
    }
    let rc = hc1_covariance(&design, &y, &model)?;
    let se = rc
        .se_for("treat")
        .ok_or_else(|| Error::estimation("robust covariance lost the treatment column"))?;

    Ok(ComparatorEstimate {
        comparator: kind,
        substudy: substudy.to_string(),
        treated: treated.to_string(),
        control: control.to_string(),
        value: model.coef[treat_idx],
        se,
        n: records.len(),
        n_treated,
        n_control,
    })
}
