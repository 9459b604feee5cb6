use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Iteration record carried by divergence and non-convergence errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryPoint {
    pub iteration: usize,
    pub energy: f64,
    pub residual_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Caller violated a precondition (bad index, wrong sector, support violation...).
    Usage(String),
    /// A dense problem would exceed the configured determinant cap.
    Resource { dimension: usize, cap: usize },
    /// Intermediate normalization impossible: reference coefficient vanishes.
    DegenerateReference,
    /// Møller–Plesset denominator below threshold.
    DegenerateDenominator { denominator: f64 },
    /// The one-body mean-field operator is not diagonal in the given orbitals.
    NonCanonical { max_off_diagonal: f64 },
    /// Selected eigenvector has negligible reference weight.
    IntruderState { reference_weight: f64 },
    /// Selected root is complex; both members of the pair are reported.
    NonRealRoot { re: f64, im: f64 },
    /// Amplitude iteration diverged.
    Divergence { history: Vec<HistoryPoint> },
    /// Numerical procedure failed to converge (series, SCF, eigensolver).
    Numeric(String),
    /// Time propagation left the configured amplitude bound.
    Instability { time: f64, norm: f64 },
    /// Error raised inside a flow block.
    Block { block: usize, source: alloc::boxed::Box<Error> },
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn in_block(self, block: usize) -> Self {
        Error::Block { block, source: alloc::boxed::Box::new(self) }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::Resource { dimension, cap } => {
                write!(f, "dimension {dimension} exceeds determinant cap {cap}")
            }
            Error::DegenerateReference => {
                write!(f, "reference coefficient is zero; intermediate normalization impossible")
            }
            Error::DegenerateDenominator { denominator } => {
                write!(f, "degenerate perturbation denominator {denominator:e}")
            }
            Error::NonCanonical { max_off_diagonal } => {
                write!(f, "orbitals are not canonical (largest off-diagonal mean-field element {max_off_diagonal:e})")
            }
            Error::IntruderState { reference_weight } => {
                write!(f, "intruder state: reference weight {reference_weight:e} of selected root")
            }
            Error::NonRealRoot { re, im } => {
                write!(f, "selected root is complex: {re} ± {im}i")
            }
            Error::Divergence { history } => {
                write!(f, "amplitude iteration diverged after {} iterations", history.len())
            }
            Error::Numeric(msg) => write!(f, "numerical failure: {msg}"),
            Error::Instability { time, norm } => {
                write!(f, "amplitude norm {norm:e} exceeded bound at t = {time}")
            }
            Error::Block { block, source } => write!(f, "block {block}: {source}"),
        }
    }
}

impl core::error::Error for Error {}
