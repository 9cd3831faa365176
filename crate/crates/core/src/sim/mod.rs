//! Synthetic-trial generation, Monte Carlo truth computation, and replication
//! studies for the estimators in this crate.
//!
//! The generator produces master-protocol trials in which participants may
//! enroll in a second substudy after finishing their first episode. Everything
//! here is deterministic given a seed: the same configuration produces
//! byte-identical datasets, truths, and summaries regardless of how many
//! worker threads are used.

pub mod generate;
pub mod oracle;
pub mod replicate;
pub mod rng;
