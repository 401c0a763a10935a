//! Small dense-free linear algebra kernels used throughout the solver.
//!
//! The meshes are periodic, so every operator couples dof 0 with dof n-1.
//! Under the fold ordering of [`fold`] those wrap couplings land next to the
//! diagonal and all systems become narrowly banded; [`banded`] then provides
//! the direct solvers, and [`csr`] the compressed sparse storage produced by
//! assembly.

pub mod banded;
pub mod csr;
pub mod fold;

pub use banded::{BandedCholesky, BandedLu, BandedStorage};
pub use csr::CsrMatrix;

use num_complex::Complex64;

/// Scalar types accepted by the banded LU solver.
pub trait Scalar:
    Copy
    + PartialEq
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
{
    const ZERO: Self;
    const ONE: Self;

    /// Magnitude used for pivot selection.
    fn modulus(self) -> f64;
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    const ZERO: Self = Complex64::new(0.0, 0.0);
    const ONE: Self = Complex64::new(1.0, 0.0);

    fn modulus(self) -> f64 {
        self.norm()
    }
}
