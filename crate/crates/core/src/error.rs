use std::io;

use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("flow type error: {0}")]
    FlowType(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("kernel connectivity error: {} particle(s) are similar to no landmark (first: {:?})", .orphans.len(), &.orphans[..orphan_preview(.orphans)])]
    Connectivity { orphans: Vec<usize> },

    #[error(
        "kernel graph has multiple components (second eigenvalue {second:.12} is 1 within 1e-8); \
         diffusion geometry over disconnected particle sets is not supported"
    )]
    MultiComponent { second: f64 },

    #[error("degenerate neighborhood at particle {particle}: {found} neighbor(s), need at least {needed}")]
    DegenerateNeighborhood {
        particle: usize,
        found: usize,
        needed: usize,
    },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

fn orphan_preview(orphans: &[usize]) -> usize {
    orphans.len().min(16)
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
