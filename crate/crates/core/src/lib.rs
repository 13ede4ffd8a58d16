//! Event-driven simulation and exact analysis of exclusion processes
//! (TASEP/ASEP) on finite chains with open boundaries.
//!
//! The crate provides:
//! - deterministic single-event hop maps and chain configurations ([`lattice`]),
//! - reproducible two-sided Poisson clock realizations per site ([`clocks`]),
//! - grand-coupled evolution of states and whole state sets, synchronization
//!   times and pullback attractors ([`coupling`]),
//! - exact master-equation analysis at small chain lengths ([`master`]),
//! - Monte-Carlo sweeps and power-law fits of synchronization times
//!   ([`experiments`]),
//! - SVG rendering of trajectories and phase-diagram summaries ([`render`]).

pub mod clocks;
pub mod coupling;
pub mod experiments;
pub mod lattice;
pub mod master;
pub mod render;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("site index {index} out of range for n={n}")]
    IndexOutOfRange { index: i64, n: usize },
    #[error("n={n} exceeds cap {cap} for this operation")]
    TooLarge { n: usize, cap: usize },
    #[error("degenerate window [{a}, {b})")]
    DegenerateWindow { a: f64, b: f64 },
    #[error("invalid rate {0}")]
    InvalidRate(f64),
    #[error("requested interval is not contained in the stream window")]
    WindowViolation,
    #[error("event times must be strictly increasing")]
    UnsortedTimes,
    #[error("times and sites have different lengths")]
    LengthMismatch,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("stationary class is not unique or the solve failed")]
    Singular,
    #[error("pullback sets did not stabilize within t_max")]
    NotSettled,
    #[error("not enough data points: {0}")]
    InsufficientData(String),
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// SplitMix64 finalizer, used for seed derivation throughout the crate.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a sequence of context words.
/// The derivation is order-sensitive, so (seed, [a, b]) != (seed, [b, a]).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = mix64(base);
    for &p in parts {
        h = mix64(h ^ mix64(p));
    }
    h
}
