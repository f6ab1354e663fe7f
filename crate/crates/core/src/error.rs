use thiserror::Error;

use crate::symbol_calc::EllipticityCertificate;

#[derive(Debug, Error)]
pub enum WorkbenchError {
    #[error("invalid group: {0}")]
    InvalidGroup(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("rank mismatch: {0}")]
    RankMismatch(String),

    #[error("cutoff {cutoff} is below the coefficient bandwidth {bandwidth}")]
    CutoffTooSmall { cutoff: usize, bandwidth: usize },

    #[error("the identity element has no Diophantine margin")]
    IdentityElement,

    #[error("at least 4 quadrature points are required, got {0}")]
    TooFewQuadraturePoints(usize),

    #[error("symbol is not elliptic (s_min = {:.3e})", .0.s_min)]
    NotElliptic(Box<EllipticityCertificate>),

    #[error("symbol inversion failed: {0}")]
    Inversion(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("idempotent restoration failed: {0}")]
    Idempotent(String),

    #[error("chern character is not closed: |d ch| = {0:.3e}")]
    NotClosed(f64),

    #[error("isolated fixed point has an eigenvalue 1 on the normal bundle (det = {0:.3e})")]
    DegenerateFixedPoint(f64),

    #[error("numerical index is unstable: {0}")]
    Unstable(String),

    #[error("pairing {value} is {distance:.3} away from the nearest integer")]
    NotNearInteger { value: f64, distance: f64 },

    #[error("{0}")]
    Config(String),
}

pub type Result<T, E = WorkbenchError> = std::result::Result<T, E>;
