//! MAP inference for discrete pairwise Markov random fields through the
//! edge-variable LP relaxation, solved directly or by Dantzig-Wolfe column
//! generation with parallel or distributed pricing.

pub mod backends;
pub mod baselines;
pub mod decomposition;
mod error;
pub mod io;
pub mod model;
pub mod problem;
pub mod relaxation;
pub mod rounding;
pub mod runtime;
pub mod sideconstraints;
pub mod simplex;

pub use error::Error;
