//! Monte-Carlo model of time-bin entanglement swapping between two
//! independent photon-pair sources, with finite-key rate analysis.

pub mod bsm;
pub mod channel;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod finite_key;
pub mod fit;
pub mod report;
pub mod rng;
pub mod selftest;
pub mod source;
pub mod timebin;

pub use error::{Error, Result};
