use thiserror::Error;

use crate::zip::ZipParams;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter domain error: {0}")]
    ParameterDomain(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("EM did not converge within {iterations} iterations (last iterate p={:.6}, mu={:.6})", last.p(), last.mu())]
    NonConvergence { last: ZipParams, iterations: usize },

    #[error("degenerate replicates: {0}")]
    DegenerateReplicates(String),
}
