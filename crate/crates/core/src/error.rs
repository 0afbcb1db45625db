//! Error type shared by all modules.

use alloc::string::String;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Weight system has no polarizing vector, so the moment polytope is
    /// unbounded and lattice enumeration is meaningless.
    UnpolarizedWeightSystem,
    /// Kempf–Ness iteration detected divergence for a non-stable point.
    UnstablePoint,
    /// Grassmannian datum with rank-deficient Z.
    UnstableMatrixPoint,
    /// Chain datum whose linkwise normal equations are singular.
    UnstableChainPoint,
    /// A symmetric-function Hessian failed its positive-definiteness check.
    MetricNotStrictlyConvex,
    /// Query point lies outside the moment polytope.
    OutsidePolytope,
    /// Vertex of the polytope violates the unimodular lattice-basis condition.
    NonUnimodularVertex,
    /// Input point expected on the zero level set was not, within tolerance.
    OffLevelSet { residual: f64, tol: f64 },
    /// Zero vector where a nonzero one is required.
    ZeroVector,
    /// Adaptive quadrature exhausted its budget; carries the achieved error
    /// estimate alongside the requested target.
    QuadratureBudget { achieved: f64, target: f64 },
    /// Structural problem with the input data (dimensions, spans, signs).
    InvalidInput(String),
    /// Numerical failure with context.
    Numerical(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::UnpolarizedWeightSystem => write!(f, "unpolarized weight system"),
            Error::UnstablePoint => write!(f, "unstable point"),
            Error::UnstableMatrixPoint => write!(f, "unstable matrix point"),
            Error::UnstableChainPoint => write!(f, "unstable chain point"),
            Error::MetricNotStrictlyConvex => write!(f, "metric not strictly convex here"),
            Error::OutsidePolytope => write!(f, "point outside the moment polytope"),
            Error::NonUnimodularVertex => {
                write!(f, "vertex weights do not form a lattice basis")
            }
            Error::OffLevelSet { residual, tol } => write!(
                f,
                "point is off the level set: residual {residual:.3e} exceeds tolerance {tol:.3e}"
            ),
            Error::ZeroVector => write!(f, "zero vector has no Kempf-Ness minimizer"),
            Error::QuadratureBudget { achieved, target } => write!(
                f,
                "quadrature budget exhausted: achieved error {achieved:.3e}, target {target:.3e}"
            ),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
