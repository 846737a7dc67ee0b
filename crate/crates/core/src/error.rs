use thiserror::Error;

use crate::baselines::BaselineError;
use crate::decomposition::DecompositionError;
use crate::io::ParseError;
use crate::model::ModelError;
use crate::relaxation::RelaxationError;
use crate::rounding::RoundingError;
use crate::runtime::RuntimeError;
use crate::sideconstraints::SideConstraintError;
use crate::simplex::SimplexError;

/// Any failure surfaced by a solve.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Relaxation(#[from] RelaxationError),
    #[error(transparent)]
    Simplex(#[from] SimplexError),
    #[error(transparent)]
    Decomposition(#[from] DecompositionError),
    #[error(transparent)]
    SideConstraint(#[from] SideConstraintError),
    #[error(transparent)]
    Rounding(#[from] RoundingError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("unknown backend '{name}' (available: {available})")]
    UnknownBackend { name: String, available: String },
    #[error("{backend}: {message}")]
    Backend { backend: String, message: String },
}
