use alloc::boxed::Box;

use crate::partition::CapacityWeights;
use crate::transport::TransportSolution;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(&'static str),
    #[error("density is zero on every grid cell")]
    AllZeroDensity,
    #[error("density is negative at cell {cell}")]
    NegativeDensity { cell: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("particle {0} lies outside the domain")]
    ParticleOutsideDomain(usize),
    #[error("particle {0} lies outside the shrunken domain of the kernel")]
    ParticleTooCloseToBoundary(usize),
    #[error("grids do not share a domain")]
    GridMismatch,
    #[error("problem too large for the exact solver ({size} > {limit})")]
    TooLarge { size: usize, limit: usize },
    #[error("site {site} cannot be given positive mass")]
    CapacityUnreachable { site: usize },
    #[error("capacity weights did not reach tolerance (max residual {})", best.max_residual())]
    MaxIterExceeded { best: Box<CapacityWeights> },
    #[error("entropic solver did not converge (marginal error {marginal_error:e})")]
    NotConverged {
        marginal_error: f64,
        iterate: Box<TransportSolution>,
    },
    #[error("step size {tau} violates the strict bound {bound}")]
    StepTooLarge { tau: f64, bound: f64 },
}
