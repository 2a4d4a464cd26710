//! Workbench for two-sided strategy-proof matching mechanisms.
//!
//! The crate covers the full pipeline: preference-profile enumeration and
//! permutation-group reduction ([`prefs`]), randomized matchings and
//! stability metrics ([`matching`]), a zoo of deterministic and randomized
//! mechanisms with anonymization/symmetrization transformers
//! ([`mechanisms`]), exhaustive property audits ([`audit`]), generation of
//! the instability-minimizing linear program and its MPS bridge
//! ([`lpmodel`]), a small dense simplex solver ([`solver`]), and seeded
//! Monte Carlo benchmarking ([`sim`]).

pub mod audit;
pub mod lpmodel;
pub mod matching;
pub mod mechanisms;
pub mod prefs;
pub mod sim;
pub mod solver;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid preference: {0}")]
    InvalidPreference(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("profile index {index} out of range (count {count})")]
    IndexOutOfRange { index: u64, count: u64 },
    #[error("index domain overflow for n={n}, m={m}: (m!)^n*(n!)^m exceeds 64 bits")]
    IndexOverflow { n: usize, m: usize },
    #[error("role swap requires a balanced market (n=m), got n={n}, m={m}")]
    SwapUnbalanced { n: usize, m: usize },
    #[error("market size not supported by this operation: {0}")]
    WrongSize(String),
    #[error("invalid ordering: {0}")]
    InvalidOrdering(String),
    #[error("exact enumeration domain too large: {0}")]
    EnumerationTooLarge(String),
    #[error("size gate: {0}")]
    SizeGate(String),
    #[error("tabular mechanism has no entry for profile {0}")]
    MissingTableEntry(u64),
    #[error("matrix is not doubly substochastic: {0}")]
    NotSubstochastic(String),
    #[error("invalid mechanism descriptor `{0}`: {1}")]
    BadDescriptor(String, String),
    #[error("model error: {0}")]
    Model(String),
    #[error("solution file error: {0}")]
    Solution(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("simulation config: {0}")]
    SimConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
