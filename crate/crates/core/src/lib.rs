//! Multiscale finite element methods for the semiclassical Schrödinger equation
//!
//! The library solves
//!
//! ```text
//! i eps d_t psi = -(eps^2/2) lap psi + v1(x) psi + v2(x, t) psi
//! ```
//!
//! on the periodic unit interval or square, where `v1` carries fine-scale
//! oscillations and `v2` is a smooth, separable, time-dependent drive.  The
//! workflow mirrors the usual offline/online split:
//!
//! * [`mesh`] builds nested uniform periodic meshes and nodal patches,
//! * [`fem`] assembles P1 stiffness, mass and potential matrices,
//! * [`potential`] holds the catalog of multiscale potentials and drives,
//! * [`basis`] constructs energy-minimizing multiscale basis functions by
//!   solving constrained quadratic programs on patches,
//! * [`enrichment`] augments the basis with snapshots of the drive chosen
//!   greedily,
//! * [`evolution`] integrates the projected system with Crank-Nicolson,
//! * [`observables`] extracts densities, energies and relative errors,
//! * [`reference`] produces cached fine-grid reference solutions.
//!
//! Everything is deterministic: meshes, assembly, basis solves and time
//! stepping perform the same floating-point operations for the same inputs.

pub mod basis;
pub mod container;
pub mod enrichment;
pub mod evolution;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod observables;
pub mod potential;
pub mod reference;

use std::fmt;

/// Errors shared by every stage of the pipeline.
///
/// Variants carry enough context to act on: which precondition failed, which
/// entity (mesh size, dof, time step) triggered it, and where applicable a
/// hint about the likely fix.
#[derive(Debug)]
pub enum Error {
    /// Mesh construction or mesh pairing rejected its input.
    Mesh(String),
    /// A field evaluation produced NaN/inf during assembly or projection.
    NonFinite(String),
    /// An operator expected to be positive definite was not.
    Indefinite(String),
    /// The constraint block of a saddle-point system lost rank; typically the
    /// patch is too small for the number of overlapping coarse vertices.
    RankDeficient(String),
    /// A set of basis vectors is numerically dependent.
    DegenerateBasis(String),
    /// A linear solve inside the time stepper broke down.
    SolverBreakdown { step: usize, detail: String },
    /// Invalid time-stepping parameters (zero/non-finite dt, T not a
    /// multiple of dt, ...).
    TimeGrid(String),
    /// Invalid configuration value outside the other categories.
    Config(String),
    /// Reference-norm denominator is zero; relative errors are undefined.
    ZeroReferenceNorm,
    /// Underlying I/O failure (cache and container files).
    Io(std::io::Error),
    /// A container or cache file is malformed or fails its checksum.
    Corrupt(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Mesh(msg) => write!(f, "mesh error: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Indefinite(msg) => write!(f, "indefinite operator: {msg}"),
            Error::RankDeficient(msg) => write!(f, "rank-deficient constraints: {msg}"),
            Error::DegenerateBasis(msg) => write!(f, "degenerate basis: {msg}"),
            Error::SolverBreakdown { step, detail } => {
                write!(f, "linear solver breakdown at step {step}: {detail}")
            }
            Error::TimeGrid(msg) => write!(f, "time grid error: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::ZeroReferenceNorm => write!(f, "reference norm is zero"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Corrupt(msg) => write!(f, "corrupt file: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
