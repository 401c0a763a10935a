//! P1 finite element assembly on periodic meshes.
//!
//! Stiffness and mass use exact local matrices.  Potential terms are
//! integrated with fixed interior quadrature rules — 5-point Gauss per
//! interval, 7-point degree-5 rule per triangle — chosen so that strongly
//! oscillatory coefficients are still integrated accurately on meshes that
//! resolve the oscillation, and so that no rule point ever lands on the
//! periodic seam where non-periodic drives like `x` would be ambiguous.
//!
//! Also home to [`p1_embedding`], the exact transfer from a coarse P1 space
//! into any nested refinement: on these criss-cross grids a coarse hat is
//! piecewise linear on the fine triangles, so nodal interpolation is an
//! isometry for both mass and stiffness forms.

use crate::linalg::{csr, CsrMatrix};
use crate::mesh::{refinement_ratio, Elements, Mesh};
use crate::potential::{PotentialSpec, TimeFactor};
use crate::{Error, Result};
use nalgebra::DVector;
use num_complex::Complex64;
use std::sync::Arc;

/// Real scalar field on the unit cell, `(x, y) -> f64` (`y` ignored in 1D).
#[derive(Clone)]
pub struct ScalarField(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>);

impl ScalarField {
    pub fn new(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        ScalarField::new(move |_, _| c)
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.0)(x, y)
    }
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ScalarField(..)")
    }
}

/// 5-point Gauss-Legendre nodes and weights on [-1, 1] (degree 9).
pub(crate) const GAUSS5: [(f64, f64); 5] = [
    (-0.906179845938663993, 0.236926885056189088),
    (-0.538469310105683091, 0.478628670499366468),
    (0.0, 0.568888888888888889),
    (0.538469310105683091, 0.478628670499366468),
    (0.906179845938663993, 0.236926885056189088),
];

/// 7-point degree-5 triangle rule: barycentric coordinates and weights
/// normalized to sum 1.
pub(crate) const TRI7: [([f64; 3], f64); 7] = [
    ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
    (
        [0.059715871789769820, 0.470142064105115090, 0.470142064105115090],
        0.132394152788506181,
    ),
    (
        [0.470142064105115090, 0.059715871789769820, 0.470142064105115090],
        0.132394152788506181,
    ),
    (
        [0.470142064105115090, 0.470142064105115090, 0.059715871789769820],
        0.132394152788506181,
    ),
    (
        [0.797426985353087322, 0.101286507323456339, 0.101286507323456339],
        0.125939180544827153,
    ),
    (
        [0.101286507323456339, 0.797426985353087322, 0.101286507323456339],
        0.125939180544827153,
    ),
    (
        [0.101286507323456339, 0.101286507323456339, 0.797426985353087322],
        0.125939180544827153,
    ),
];

/// Assembles the P1 stiffness matrix `S_ij = (grad phi_j, grad phi_i)`.
pub fn assemble_stiffness(mesh: &Mesh) -> CsrMatrix {
    let n = mesh.n_dofs();
    let mut triplets = Vec::new();
    match mesh.elements() {
        Elements::Intervals(elems) => {
            let k = 1.0 / mesh.h();
            for dofs in elems {
                let local = [[k, -k], [-k, k]];
                for a in 0..2 {
                    for b in 0..2 {
                        triplets.push((dofs[a], dofs[b], local[a][b]));
                    }
                }
            }
        }
        Elements::Triangles(elems) => {
            for (e, dofs) in elems.iter().enumerate() {
                let c = mesh.element_coords(e);
                let area = mesh.element_measure(e);
                // Gradient coefficients of barycentric functions.
                let b = [c[1][1] - c[2][1], c[2][1] - c[0][1], c[0][1] - c[1][1]];
                let g = [c[2][0] - c[1][0], c[0][0] - c[2][0], c[1][0] - c[0][0]];
                for a in 0..3 {
                    for d in 0..3 {
                        let v = (b[a] * b[d] + g[a] * g[d]) / (4.0 * area);
                        triplets.push((dofs[a], dofs[d], v));
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &triplets)
}

/// Assembles the P1 mass matrix `M_ij = (phi_j, phi_i)`.
pub fn assemble_mass(mesh: &Mesh) -> CsrMatrix {
    let n = mesh.n_dofs();
    let mut triplets = Vec::new();
    match mesh.elements() {
        Elements::Intervals(elems) => {
            let h = mesh.h();
            for dofs in elems {
                let local = [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]];
                for a in 0..2 {
                    for b in 0..2 {
                        triplets.push((dofs[a], dofs[b], local[a][b]));
                    }
                }
            }
        }
        Elements::Triangles(elems) => {
            for (e, dofs) in elems.iter().enumerate() {
                let area = mesh.element_measure(e);
                for a in 0..3 {
                    for d in 0..3 {
                        let v = area / if a == d { 6.0 } else { 12.0 };
                        triplets.push((dofs[a], dofs[d], v));
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &triplets)
}

/// Assembles the weighted mass matrix `V_ij = (v phi_j, phi_i)` by quadrature.
///
/// Fails if `v` evaluates to NaN or infinity at any quadrature point.
pub fn assemble_potential(mesh: &Mesh, v: &ScalarField) -> Result<CsrMatrix> {
    let n = mesh.n_dofs();
    let mut triplets = Vec::new();
    match mesh.elements() {
        Elements::Intervals(elems) => {
            let h = mesh.h();
            for (e, dofs) in elems.iter().enumerate() {
                let x0 = mesh.element_coords(e)[0][0];
                let mut local = [[0.0; 2]; 2];
                for &(xi, w) in &GAUSS5 {
                    let s = 0.5 * (xi + 1.0);
                    let x = x0 + h * s;
                    let val = v.eval(x, 0.0);
                    if !val.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "potential value {val} at quadrature point x = {x}"
                        )));
                    }
                    let shape = [1.0 - s, s];
                    let wq = 0.5 * h * w * val;
                    for a in 0..2 {
                        for b in 0..2 {
                            local[a][b] += wq * shape[a] * shape[b];
                        }
                    }
                }
                for a in 0..2 {
                    for b in 0..2 {
                        triplets.push((dofs[a], dofs[b], local[a][b]));
                    }
                }
            }
        }
        Elements::Triangles(elems) => {
            for (e, dofs) in elems.iter().enumerate() {
                let c = mesh.element_coords(e);
                let area = mesh.element_measure(e);
                let mut local = [[0.0; 3]; 3];
                for &(lam, w) in &TRI7 {
                    let x = lam[0] * c[0][0] + lam[1] * c[1][0] + lam[2] * c[2][0];
                    let y = lam[0] * c[0][1] + lam[1] * c[1][1] + lam[2] * c[2][1];
                    let val = v.eval(x, y);
                    if !val.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "potential value {val} at quadrature point ({x}, {y})"
                        )));
                    }
                    let wq = area * w * val;
                    for a in 0..3 {
                        for b in 0..3 {
                            local[a][b] += wq * lam[a] * lam[b];
                        }
                    }
                }
                for a in 0..3 {
                    for b in 0..3 {
                        triplets.push((dofs[a], dofs[b], local[a][b]));
                    }
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(n, n, &triplets))
}

/// Nodal interpolation of a complex-valued function onto mesh vertices.
pub fn project_function(
    mesh: &Mesh,
    f: impl Fn(f64, f64) -> Complex64,
) -> Result<DVector<Complex64>> {
    let mut out = DVector::from_element(mesh.n_dofs(), Complex64::new(0.0, 0.0));
    for v in 0..mesh.n_dofs() {
        let p = mesh.vertex_coord(v);
        let val = f(p[0], p[1]);
        if !val.re.is_finite() || !val.im.is_finite() {
            return Err(Error::NonFinite(format!(
                "function value {val} at vertex ({}, {})",
                p[0], p[1]
            )));
        }
        out[v] = val;
    }
    Ok(out)
}

/// Interpolation matrix from a coarse P1 space into a nested fine one.
///
/// Column `j` holds the fine nodal values of the coarse hat at vertex `j`;
/// because the fine mesh refines the coarse one exactly, `E c` *is* the
/// coarse function, not an approximation of it.
pub fn p1_embedding(fine: &Mesh, coarse: &Mesh) -> Result<CsrMatrix> {
    let r = refinement_ratio(fine, coarse)?;
    let nc = coarse.n();
    let rf = r as f64;
    let mut triplets = Vec::new();
    match fine.dim() {
        1 => {
            for d in 0..fine.n_dofs() {
                let (c, a) = (d / r, d % r);
                if a == 0 {
                    triplets.push((d, c, 1.0));
                } else {
                    let s = a as f64 / rf;
                    triplets.push((d, c, 1.0 - s));
                    triplets.push((d, (c + 1) % nc, s));
                }
            }
        }
        _ => {
            let nf = fine.n();
            let cdof = |x: usize, y: usize| (y % nc) * nc + (x % nc);
            for d in 0..fine.n_dofs() {
                let (xf, yf) = (d % nf, d / nf);
                let (cx, a) = (xf / r, xf % r);
                let (cy, b) = (yf / r, yf % r);
                let (sa, sb) = (a as f64 / rf, b as f64 / rf);
                let mut push = |vx: usize, vy: usize, w: f64| {
                    if w != 0.0 {
                        triplets.push((d, cdof(vx, vy), w));
                    }
                };
                if b <= a {
                    // Lower triangle (ll, lr, ur) of the containing cell.
                    push(cx, cy, 1.0 - sa);
                    push(cx + 1, cy, sa - sb);
                    push(cx + 1, cy + 1, sb);
                } else {
                    // Upper triangle (ll, ur, ul).
                    push(cx, cy, 1.0 - sb);
                    push(cx + 1, cy + 1, sa);
                    push(cx, cy + 1, sb - sa);
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(fine.n_dofs(), coarse.n_dofs(), &triplets))
}

/// Everything assembled once per (mesh, potential) pair.
///
/// The drive is separable, so its spatial factors are assembled offline and
/// time enters only through scalar coefficients; see [`quadratic_part`].
///
/// [`quadratic_part`]: FineOperators::quadratic_part
#[derive(Debug, Clone)]
pub struct FineOperators {
    pub mesh: Arc<Mesh>,
    pub epsilon: f64,
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    pub v1: CsrMatrix,
    pub v2_blocks: Vec<CsrMatrix>,
    pub time_factors: Vec<TimeFactor>,
    /// Sampled bound for `sup_x,t |v1 + v2|`, used by sanity checks.
    pub v0_estimate: f64,
}

impl FineOperators {
    pub fn assemble(mesh: &Arc<Mesh>, spec: &PotentialSpec) -> Result<FineOperators> {
        if mesh.dim() != spec.dim {
            return Err(Error::Mesh(format!(
                "mesh is {}D but potential is {}D",
                mesh.dim(),
                spec.dim
            )));
        }
        let stiffness = assemble_stiffness(mesh);
        let mass = assemble_mass(mesh);
        let v1 = assemble_potential(mesh, &spec.v1)?;
        let mut v2_blocks = Vec::with_capacity(spec.terms.len());
        let mut time_factors = Vec::with_capacity(spec.terms.len());
        for term in &spec.terms {
            v2_blocks.push(assemble_potential(mesh, &term.spatial)?);
            time_factors.push(term.factor.clone());
        }
        Ok(FineOperators {
            mesh: Arc::clone(mesh),
            epsilon: spec.epsilon,
            stiffness,
            mass,
            v1,
            v2_blocks,
            time_factors,
            v0_estimate: spec.v0_estimate(),
        })
    }

    /// Scalar drive coefficients at time `t`.
    pub fn drive_coefficients(&self, t: f64) -> Vec<f64> {
        self.time_factors.iter().map(|s| s.eval(t)).collect()
    }

    /// The energy operator `(eps^2/2) S + V1 + sum_n s_n(t) V2_n`.
    pub fn quadratic_part(&self, t: f64) -> CsrMatrix {
        let half_eps2 = 0.5 * self.epsilon * self.epsilon;
        let coeff = self.drive_coefficients(t);
        let mut terms: Vec<(f64, &CsrMatrix)> =
            vec![(half_eps2, &self.stiffness), (1.0, &self.v1)];
        for (c, m) in coeff.iter().zip(&self.v2_blocks) {
            terms.push((*c, m));
        }
        csr::linear_combination(&terms)
    }

    /// The potential operator `V1 + sum_n s_n(t) V2_n`.
    pub fn potential_matrix(&self, t: f64) -> CsrMatrix {
        let coeff = self.drive_coefficients(t);
        let mut terms: Vec<(f64, &CsrMatrix)> = vec![(1.0, &self.v1)];
        for (c, m) in coeff.iter().zip(&self.v2_blocks) {
            terms.push((*c, m));
        }
        csr::linear_combination(&terms)
    }

    /// Total energy `(eps^2/2) <grad psi, grad psi> + <v psi, psi>` at `t`.
    pub fn energy(&self, psi: &[Complex64], t: f64) -> f64 {
        let half_eps2 = 0.5 * self.epsilon * self.epsilon;
        let mut e = half_eps2 * self.stiffness.hermitian_form(psi) + self.v1.hermitian_form(psi);
        for (c, m) in self.drive_coefficients(t).iter().zip(&self.v2_blocks) {
            e += c * m.hermitian_form(psi);
        }
        e
    }

    /// Squared L2 norm `<psi, psi>` through the mass form.
    pub fn mass_form(&self, psi: &[Complex64]) -> f64 {
        self.mass.hermitian_form(psi)
    }
}
