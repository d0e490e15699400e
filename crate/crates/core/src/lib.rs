//! Base-10 vs base-100 vs base-1000 numeral systems for learned arithmetic.
//!
//! The crate generates balanced operand-pair datasets, tokenizes them under
//! each numeral system, trains a compact decoder-only transformer from
//! scratch, scores its answers and classifies how it fails beyond the
//! trained operand lengths.

pub mod analysis;
pub mod cli;
pub mod datagen;
pub mod experiment;
pub mod fsio;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod numeral;
