//! The model potentials: a static multiscale landscape `v1` plus a separable
//! time-dependent drive `v2(x, t) = sum_n s_n(t) w_n(x)`.
//!
//! Separability is what makes the time stepping cheap — every spatial factor
//! is assembled into a matrix once and time enters only through the scalar
//! coefficients `s_n(t)` — so the catalog stores drives in that split form.
//!
//! Four named problems ship with the crate: a Mathieu-type periodic lattice
//! (`ex1`), a multiplicative two-scale potential (`ex2`), a layered landscape
//! with different lattice constants on each half of the cell (`ex3`), and a
//! 2D checkerboard with mismatched scales on and off the diagonal blocks
//! (`ex4`).  All are driven by a linear-in-space field with an oscillating
//! amplitude.

use crate::fem::ScalarField;
use crate::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::TAU;
use std::sync::Arc;

/// Scalar amplitude `s(t)` of one drive term.
#[derive(Clone)]
pub struct TimeFactor(Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl TimeFactor {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        TimeFactor(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        (self.0)(t)
    }
}

impl std::fmt::Debug for TimeFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TimeFactor(..)")
    }
}

/// One separable drive term `s(t) w(x)`.
#[derive(Debug, Clone)]
pub struct DriveTerm {
    pub spatial: ScalarField,
    pub factor: TimeFactor,
}

/// A complete potential: `v(x, t) = v1(x) + sum_n s_n(t) w_n(x)`.
#[derive(Debug, Clone)]
pub struct PotentialSpec {
    pub label: String,
    pub dim: usize,
    /// Semiclassical parameter; also the small scale of `v1`.
    pub epsilon: f64,
    pub v1: ScalarField,
    pub terms: Vec<DriveTerm>,
    /// Period of every `s_n`; snapshot grids are laid out over one period.
    pub drive_period: f64,
}

/// Labels accepted by [`catalog`].
pub const EXAMPLES: [&str; 4] = ["ex1", "ex2", "ex3", "ex4"];

/// Optional parameter overrides for [`catalog`].
#[derive(Debug, Clone, Default)]
pub struct CatalogOverrides {
    pub epsilon: Option<f64>,
    pub e0: Option<f64>,
    /// The checkerboard's diagonal blocks use `sin + 1` times a bare cosine;
    /// turning this on lifts the cosine by one as well, which makes the two
    /// block families structurally symmetric.
    pub checkerboard_first_branch_plus_one: bool,
}

impl PotentialSpec {
    /// The drive alone at a point.
    pub fn v2(&self, x: f64, y: f64, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|term| term.factor.eval(t) * term.spatial.eval(x, y))
            .sum()
    }

    /// Full potential `v1 + v2` at a point.
    pub fn total(&self, x: f64, y: f64, t: f64) -> f64 {
        self.v1.eval(x, y) + self.v2(x, y, t)
    }

    /// Default sampling resolution for sup norms (points per axis, endpoints
    /// included).
    pub fn default_sup_grid(dim: usize) -> usize {
        if dim == 1 {
            4096
        } else {
            512
        }
    }

    /// Sampled `sup_x |v2(x, t)|` on an inclusive grid.
    pub fn v2_sup_norm(&self, t: f64, grid: usize) -> f64 {
        let coeff: Vec<f64> = self.terms.iter().map(|term| term.factor.eval(t)).collect();
        sup_over_grid(self.dim, grid, |x, y| {
            self.terms
                .iter()
                .zip(&coeff)
                .map(|(term, c)| c * term.spatial.eval(x, y))
                .sum()
        })
    }

    /// Sampled `sup_x |v2(x, ta) - v2(x, tb)|` on an inclusive grid.
    pub fn v2_sup_distance(&self, ta: f64, tb: f64, grid: usize) -> f64 {
        let coeff: Vec<f64> = self
            .terms
            .iter()
            .map(|term| term.factor.eval(ta) - term.factor.eval(tb))
            .collect();
        sup_over_grid(self.dim, grid, |x, y| {
            self.terms
                .iter()
                .zip(&coeff)
                .map(|(term, c)| c * term.spatial.eval(x, y))
                .sum()
        })
    }

    /// Sampled bound for `sup_{x, t} |v1 + v2|` over one drive period.
    pub fn v0_estimate(&self) -> f64 {
        let grid = if self.dim == 1 { 2049 } else { 257 };
        let steps = 128;
        let mut m = 0.0f64;
        for k in 0..=steps {
            let t = k as f64 * self.drive_period / steps as f64;
            m = m.max(sup_over_grid(self.dim, grid, |x, y| self.total(x, y, t)));
        }
        m
    }
}

/// Max of `|f|` over the inclusive lattice `{i / (grid - 1)}` (per axis).
fn sup_over_grid(dim: usize, grid: usize, f: impl Fn(f64, f64) -> f64) -> f64 {
    assert!(grid >= 2, "sup grid needs at least the two endpoints");
    let denom = (grid - 1) as f64;
    let mut m = 0.0f64;
    if dim == 1 {
        for i in 0..grid {
            m = m.max(f(i as f64 / denom, 0.0).abs());
        }
    } else {
        for j in 0..grid {
            let y = j as f64 / denom;
            for i in 0..grid {
                m = m.max(f(i as f64 / denom, y).abs());
            }
        }
    }
    m
}

/// Builds one of the named model potentials; see [`EXAMPLES`].
pub fn catalog(label: &str, opts: &CatalogOverrides) -> Result<PotentialSpec> {
    let e0 = opts.e0.unwrap_or(20.0);
    match label {
        "ex1" => {
            let eps = opts.epsilon.unwrap_or(1.0 / 32.0);
            Ok(PotentialSpec {
                label: label.to_string(),
                dim: 1,
                epsilon: eps,
                v1: ScalarField::new(move |x, _| (TAU * x / eps).cos()),
                terms: vec![DriveTerm {
                    spatial: ScalarField::new(move |x, _| e0 * x),
                    factor: TimeFactor::new(|t| (TAU * t).sin()),
                }],
                drive_period: 1.0,
            })
        }
        "ex2" => {
            let eps = opts.epsilon.unwrap_or(1.0 / 32.0);
            let denom = f64::exp(2.0) - 1.0;
            Ok(PotentialSpec {
                label: label.to_string(),
                dim: 1,
                epsilon: eps,
                v1: ScalarField::new(move |x, _| (2.0 * x * x).sin() * (TAU * x / eps).sin()),
                terms: vec![DriveTerm {
                    spatial: ScalarField::new(move |x, _| e0 * x),
                    factor: TimeFactor::new(move |t| {
                        ((2.0 * (TAU * t).sin()).exp() - 1.0) / denom
                    }),
                }],
                drive_period: 1.0,
            })
        }
        "ex3" => {
            let eps = opts.epsilon.unwrap_or(1.0 / 32.0);
            // The second lattice constant scales with the first: the stock
            // parameters are 1/32 and 1/24.
            let eps2 = 4.0 * eps / 3.0;
            Ok(PotentialSpec {
                label: label.to_string(),
                dim: 1,
                epsilon: eps,
                v1: ScalarField::new(move |x, _| {
                    let envelope = 2.0 * (x - 0.5) * (x - 0.5) - 0.5;
                    if x <= 0.5 {
                        envelope + 0.5 * (TAU * x / eps).cos()
                    } else {
                        envelope + 0.5 * (TAU * x / eps2).cos() + 0.5
                    }
                }),
                terms: vec![DriveTerm {
                    spatial: ScalarField::new(move |x, _| e0 * x),
                    // Triangular wave with period 1/2: ramps to 1 at 1/4,
                    // back to 0 at 1/2.
                    factor: TimeFactor::new(|t| {
                        let tau = t.rem_euclid(0.5);
                        if tau <= 0.25 {
                            4.0 * tau
                        } else {
                            2.0 - 4.0 * tau
                        }
                    }),
                }],
                drive_period: 0.5,
            })
        }
        "ex4" => {
            let eps = opts.epsilon.unwrap_or(1.0 / 8.0);
            let eps2 = 4.0 * eps / 3.0;
            let lift = if opts.checkerboard_first_branch_plus_one {
                1.0
            } else {
                0.0
            };
            Ok(PotentialSpec {
                label: label.to_string(),
                dim: 2,
                epsilon: eps,
                v1: ScalarField::new(move |x, y| {
                    let diagonal = (x <= 0.5 && y <= 0.5) || (x >= 0.5 && y >= 0.5);
                    if diagonal {
                        ((TAU * x / eps2).sin() + 1.0) * ((TAU * y / eps2).cos() + lift)
                    } else {
                        (TAU * x / eps).sin() * ((TAU * y / eps).cos() + 1.0)
                    }
                }),
                terms: vec![DriveTerm {
                    spatial: ScalarField::new(move |x, y| e0 * (x + y)),
                    factor: TimeFactor::new(|t| (TAU * t).sin()),
                }],
                drive_period: 1.0,
            })
        }
        other => Err(Error::Config(format!(
            "unknown potential '{other}'; expected one of {EXAMPLES:?}"
        ))),
    }
}

/// Default width of the initial wave packet.
pub const DEFAULT_SIGMA: f64 = 0.2;

/// Normalized Gaussian centered at the middle of the unit cell.
pub fn gaussian_packet(dim: usize, sigma: f64) -> impl Fn(f64, f64) -> Complex64 {
    let inv = 1.0 / (4.0 * sigma * sigma);
    let amp = (1.0 / (TAU * sigma * sigma)).powf(0.25);
    move |x, y| {
        let mut a = amp * (-(x - 0.5) * (x - 0.5) * inv).exp();
        if dim == 2 {
            a *= amp * (-(y - 0.5) * (y - 0.5) * inv).exp();
        }
        Complex64::new(a, 0.0)
    }
}
