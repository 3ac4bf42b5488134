//! Dataset collection, evaluation sweeps, baselines, random search and
//! report files.

pub mod dataset;
pub mod eval;
pub mod gradcheck;
pub mod report;
pub mod search;
