//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contraction dimension mismatch: a leg {a_leg} (dim {a_dim}) vs b leg {b_leg} (dim {b_dim})")]
    ContractMismatch {
        a_leg: usize,
        a_dim: usize,
        b_leg: usize,
        b_dim: usize,
    },

    #[error("shape {shape:?} implies {expected} elements, data has {got}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("matrix is not Hermitian: deviation {dev:.3e} exceeds {tol:.3e}")]
    NotHermitian { dev: f64, tol: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("leg index {index} out of range for rank-{rank} tensor")]
    LegOutOfRange { index: usize, rank: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("candidate set spans only {achieved} dimensions, {needed} required")]
    RankDeficient { achieved: usize, needed: usize },

    #[error("{n} sites not decomposable as D*{k}^m with 1 <= D <= 4; valid sizes near it: {valid:?}")]
    BadLatticeSize { n: usize, k: usize, valid: Vec<usize> },

    #[error("block estimate is non-physical beyond repair tolerance: {0}")]
    NonPhysical(String),

    #[error("layer sweep did not converge; best objective deficit {deficit:.3e}")]
    NoConvergence { deficit: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("bad container file: {0}")]
    BadContainer(String),
}
