//! Analysis of platform trials in which participants can re-enroll.
//!
//! The unit of analysis is the person-episode: participant `i`'s episode `t`
//! record carries the randomization covariates in force at that enrollment,
//! the assigned arm, and the end-of-episode outcome. Arms `j` and `k` are
//! compared on the population of person-episodes that were concurrently
//! eligible for both (positive assignment probability for each), via
//! inverse-probability, stratified, and augmented estimators of the
//! per-episode added effect, with variance estimation that clusters on the
//! participant.
//!
//! Modules:
//! - [`data`]: record model, CSV/schema ingestion, missingness policy
//! - [`scheme`]: assignment-probability tables, eligibility, strata
//! - [`linear`]: least squares with column pivoting, robust covariance
//! - [`working`]: outcome working models for the augmented estimators
//! - [`estimators`]: the five arm-mean estimators and their contrasts
//! - [`comparators`]: within-substudy covariate-adjusted comparisons
//! - [`inference`]: influence values, cluster-robust variance, intervals
//! - [`analyze`]: one-call analysis pipeline producing reports
//! - [`sim`]: trial generator, truth oracle, replication harness

pub mod analyze;
pub mod comparators;
pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod linear;
pub mod num;
pub mod scheme;
pub mod sim;
pub mod working;

pub use analyze::{analyze_comparator, analyze_contrast, AnalysisOptions, ComparatorReport, EstimateReport};
pub use comparators::{substudy_comparator, Comparator};
pub use data::{
    apply_missingness_policy, parse_records, write_records, DataSchema, EpisodeRecord,
    MissingnessPolicy, RecordSet, ValidationReport, XValue,
};
pub use error::{Error, Result};
pub use estimators::{
    estimate_aipw, estimate_aps, estimate_contrast, estimate_ipw, estimate_ps, estimate_sipw,
    ArmMeanEstimate, ContrastEstimate, Method,
};
pub use inference::{
    cluster_robust_variance, confidence_interval, influence_table, influence_values, ClusterScope,
    InfluenceTable, NoninferiorityTest, VarianceReport,
};
pub use scheme::{
    assignment_prob, derive_strata, ece_population, parse_scheme, AssignmentScheme, EcePopulation,
    EpisodeScope, Stratum,
};
pub use working::{fit_working_model, FittedWorkingModel, OutcomeModel, Pooling, ZeroModel};
