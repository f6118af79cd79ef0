use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not agree.
    DimensionMismatch(String),
    /// A matrix expected to be positive definite failed to factor.
    NotPositiveDefinite(String),
    /// A NaN or infinity appeared.
    NonFinite(String),
    /// A state trajectory left the divergence guard.
    Divergence { step: usize, norm: f64 },
    /// A scheduling vector is not in the probability simplex.
    SimplexViolation(String),
    /// Facet offsets violate the configuration constraints `E q <= 0`.
    ConfigViolation { max_violation: f64 },
    /// A vertex-facet submatrix of a template is singular.
    SingularVertex { vertex: usize },
    /// Two vertices of a template share the same incident facets.
    DuplicateIncidence { first: usize, second: usize },
    /// An optimization problem has no feasible point.
    Infeasible(String),
    /// Bad argument value.
    InvalidArgument(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch(s) => write!(f, "dimension mismatch: {s}"),
            Error::NotPositiveDefinite(s) => {
                write!(f, "matrix {s} is not positive definite after regularization")
            }
            Error::NonFinite(s) => write!(f, "non-finite value: {s}"),
            Error::Divergence { step, norm } => {
                write!(f, "simulation diverged at step {step} (state norm {norm:e})")
            }
            Error::SimplexViolation(s) => write!(f, "simplex violation: {s}"),
            Error::ConfigViolation { max_violation } => write!(
                f,
                "facet offsets violate the configuration constraints (max violation {max_violation:e})"
            ),
            Error::SingularVertex { vertex } => {
                write!(f, "facet submatrix of vertex {vertex} is singular or ill-conditioned")
            }
            Error::DuplicateIncidence { first, second } => {
                write!(f, "vertices {first} and {second} have identical incidence lists")
            }
            Error::Infeasible(s) => write!(f, "infeasible: {s}"),
            Error::InvalidArgument(s) => write!(f, "invalid argument: {s}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! ensure_dims {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::Error::DimensionMismatch(alloc::format!($($arg)+)));
        }
    };
}
pub(crate) use ensure_dims;
