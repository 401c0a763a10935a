//! Crank–Nicolson time integration on a projected basis.
//!
//! The semi-discrete problem is `i eps M dc/dt = B(t) c` with
//! `B(t) = (eps^2/2) S + V1 + sum_n s_n(t) V2_n`.  Projection onto any basis
//! preserves that affine structure, so the spatial blocks are congruence
//! transforms computed once and each step only recombines them with fresh
//! scalar drive factors.  The step solves
//!
//! `(i eps M - dt/2 B(t_mid)) c_next = (i eps M + dt/2 B(t_mid)) c`
//!
//! at the interval midpoint.  Both matrices share the real symmetric `B`, so
//! every step preserves the mass form `c^H M c` exactly — the scheme's main
//! structural selling point — while energy may drift under driving.
//!
//! Solver layout is picked from the basis: fine-grid identity systems and
//! localized coarse systems are banded after an index fold that tames the
//! periodic wrap; enriched spaces add a dense border block for the handful of
//! globally supported functions; everything else falls back to dense LU.

use crate::basis::{Localization, MultiscaleBasis};
use crate::enrichment::EnrichedSpace;
use crate::fem::FineOperators;
use crate::linalg::fold::{bandwidth_under, fold_positions};
use crate::linalg::{self, BandedStorage, CsrMatrix};
use crate::potential::TimeFactor;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

/// Basis coefficients tagged with their time stamp.
#[derive(Debug, Clone)]
pub struct WaveState {
    pub coeffs: DVector<Complex64>,
    pub t: f64,
}

impl WaveState {
    pub fn new(coeffs: DVector<Complex64>, t: f64) -> Self {
        WaveState { coeffs, t }
    }
}

/// The space a system is projected onto.
#[derive(Clone, Copy)]
pub enum BasisRef<'a> {
    /// No projection: the fine-grid system itself.
    FineIdentity,
    Multiscale(&'a MultiscaleBasis),
    Enriched(&'a EnrichedSpace),
}

impl<'a> BasisRef<'a> {
    /// All basis columns in layout order, `None` for the identity.
    fn columns(&self) -> Option<Vec<&'a Vec<f64>>> {
        match self {
            BasisRef::FineIdentity => None,
            BasisRef::Multiscale(b) => Some(b.columns.iter().collect()),
            BasisRef::Enriched(s) => Some(s.all_columns().collect()),
        }
    }

    /// Count of leading columns with compact patch support (candidates for
    /// the banded block) and the localization they were built with.
    fn banded_prefix(&self) -> Option<(usize, usize)> {
        let (basis, prefix) = match self {
            BasisRef::FineIdentity => return None,
            BasisRef::Multiscale(b) => (*b, b.columns.len()),
            BasisRef::Enriched(s) => (&s.base, s.base.columns.len()),
        };
        match basis.options.localization {
            Localization::Patch { .. } => Some((prefix, basis.coarse_n)),
            Localization::Global => None,
        }
    }
}

/// Spatial blocks of the projected system.
#[derive(Debug, Clone)]
pub enum SystemMatrices {
    Dense {
        mass: DMatrix<f64>,
        stiffness: DMatrix<f64>,
        v1: DMatrix<f64>,
        v2_blocks: Vec<DMatrix<f64>>,
    },
    Sparse {
        mass: CsrMatrix,
        stiffness: CsrMatrix,
        v1: CsrMatrix,
        v2_blocks: Vec<CsrMatrix>,
    },
}

/// How the per-step complex system is factored.
#[derive(Debug, Clone)]
pub enum SolverPlan {
    Dense,
    /// All unknowns banded under the relabeling `slot_of`.
    Banded { slot_of: Vec<usize>, bw: usize },
    /// Leading `split` unknowns banded, the rest a dense border.
    Bordered {
        split: usize,
        slot_of: Vec<usize>,
        bw: usize,
    },
}

/// A basis-projected Hamiltonian system ready for time stepping.
#[derive(Debug, Clone)]
pub struct CoarseSystem {
    pub matrices: SystemMatrices,
    pub time_factors: Vec<TimeFactor>,
    pub epsilon: f64,
    pub dim: usize,
    pub plan: SolverPlan,
}

/// `B^T X B` for fine matrix `X` and basis columns `B`, symmetrized to kill
/// the roundoff asymmetry a congruence transform picks up.
fn project_block(columns: &[&Vec<f64>], x: &CsrMatrix) -> DMatrix<f64> {
    let k = columns.len();
    let n = x.nrows();
    let w: Vec<Vec<f64>> = columns
        .par_iter()
        .map(|col| {
            let mut out = vec![0.0; n];
            x.matvec(col, &mut out);
            out
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|i| {
            (0..k)
                .map(|j| columns[i].iter().zip(&w[j]).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    let p = DMatrix::from_fn(k, k, |i, j| rows[i][j]);
    let pt = p.transpose();
    (p + pt) * 0.5
}

/// Union sparsity bandwidths of a set of dense blocks under a relabeling,
/// looking only at exact nonzeros (compactly supported bases give exact
/// zeros outside patch overlaps).
fn dense_bandwidth(blocks: &[&DMatrix<f64>], slot_of: &[usize], split: usize) -> usize {
    let mut bw = 0usize;
    for b in blocks {
        for i in 0..split {
            for j in 0..split {
                if b[(i, j)] != 0.0 {
                    bw = bw.max(slot_of[i].abs_diff(slot_of[j]));
                }
            }
        }
    }
    bw
}

/// Projects the fine operators onto a basis.
///
/// With the fine identity the blocks are shared as sparse matrices and the
/// solver works in a fold order that keeps the periodic wrap inside the band.
/// Projected systems are stored dense; the solver plan still exploits patch
/// support when the basis has it.
pub fn project_system(ops: &FineOperators, basis: BasisRef) -> Result<CoarseSystem> {
    let time_factors = ops.time_factors.clone();
    let epsilon = ops.epsilon;
    let Some(columns) = basis.columns() else {
        let n = ops.mass.nrows();
        let natural: Vec<usize> = (0..n).collect();
        let fold = fold_positions(ops.mesh.dim(), ops.mesh.n());
        let union = {
            let mut terms: Vec<(f64, &CsrMatrix)> = vec![
                (1.0, &ops.mass),
                (1.0, &ops.stiffness),
                (1.0, &ops.v1),
            ];
            for b in &ops.v2_blocks {
                terms.push((1.0, b));
            }
            linalg::csr::linear_combination(&terms)
        };
        let (slot_of, bw) = {
            let nb = bandwidth_under(&natural, &union);
            let fb = bandwidth_under(&fold, &union);
            if fb < nb {
                (fold, fb)
            } else {
                (natural, nb)
            }
        };
        return Ok(CoarseSystem {
            matrices: SystemMatrices::Sparse {
                mass: ops.mass.clone(),
                stiffness: ops.stiffness.clone(),
                v1: ops.v1.clone(),
                v2_blocks: ops.v2_blocks.clone(),
            },
            time_factors,
            epsilon,
            dim: n,
            plan: SolverPlan::Banded { slot_of, bw },
        });
    };

    let dim = columns.len();
    let mass = project_block(&columns, &ops.mass);
    checked_mass_cholesky(&mass)?;
    let stiffness = project_block(&columns, &ops.stiffness);
    let v1 = project_block(&columns, &ops.v1);
    let v2_blocks: Vec<DMatrix<f64>> = ops
        .v2_blocks
        .iter()
        .map(|b| project_block(&columns, b))
        .collect();

    let plan = match basis.banded_prefix() {
        Some((split, coarse_n)) if split > 8 => {
            let dims = match basis {
                BasisRef::Multiscale(b) => b.dim,
                BasisRef::Enriched(s) => s.base.dim,
                BasisRef::FineIdentity => unreachable!(),
            };
            let mut slot_of = fold_positions(dims, coarse_n);
            slot_of.truncate(split);
            let blocks: Vec<&DMatrix<f64>> = [&mass, &stiffness, &v1]
                .into_iter()
                .chain(v2_blocks.iter())
                .collect();
            let bw = dense_bandwidth(&blocks, &slot_of, split);
            if 2 * bw + 1 < split {
                if split == dim {
                    SolverPlan::Banded { slot_of, bw }
                } else {
                    SolverPlan::Bordered { split, slot_of, bw }
                }
            } else {
                SolverPlan::Dense
            }
        }
        _ => SolverPlan::Dense,
    };

    Ok(CoarseSystem {
        matrices: SystemMatrices::Dense {
            mass,
            stiffness,
            v1,
            v2_blocks,
        },
        time_factors,
        epsilon,
        dim,
        plan,
    })
}

/// Cholesky of a projected mass matrix, rejecting one that is indefinite or
/// so ill-conditioned that its pivots collapse — the footprint of
/// (near-)dependent basis columns.  Roundoff lets a plain Cholesky slip
/// through an exactly singular Gram matrix, so the pivot ratio is checked
/// explicitly.
fn checked_mass_cholesky(mass: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let degenerate =
        || Error::DegenerateBasis("projected mass matrix is not positive definite".into());
    let chol = mass.clone().cholesky().ok_or_else(degenerate)?;
    let l = chol.l_dirty();
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for i in 0..l.nrows() {
        let d = l[(i, i)];
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    if !(dmin > 1e-7 * dmax) {
        return Err(degenerate());
    }
    Ok(chol)
}

impl CoarseSystem {
    pub fn drive_coefficients(&self, t: f64) -> Vec<f64> {
        self.time_factors.iter().map(|s| s.eval(t)).collect()
    }

    /// Dense energy operator `B(t)`; only valid for dense storage.
    fn dense_b(&self, coeffs: &[f64]) -> DMatrix<f64> {
        let SystemMatrices::Dense {
            stiffness,
            v1,
            v2_blocks,
            ..
        } = &self.matrices
        else {
            unreachable!("dense_b on sparse storage")
        };
        let mut b = stiffness * (0.5 * self.epsilon * self.epsilon);
        b += v1;
        for (c, blk) in coeffs.iter().zip(v2_blocks) {
            if *c != 0.0 {
                b += blk * *c;
            }
        }
        b
    }

    fn sparse_b(&self, coeffs: &[f64]) -> CsrMatrix {
        let SystemMatrices::Sparse {
            stiffness,
            v1,
            v2_blocks,
            ..
        } = &self.matrices
        else {
            unreachable!("sparse_b on dense storage")
        };
        let mut terms: Vec<(f64, &CsrMatrix)> = vec![
            (0.5 * self.epsilon * self.epsilon, stiffness),
            (1.0, v1),
        ];
        for (c, blk) in coeffs.iter().zip(v2_blocks) {
            terms.push((*c, blk));
        }
        linalg::csr::linear_combination(&terms)
    }

    /// Squared mass norm `c^H M c` (real by symmetry).
    pub fn mass_norm_sq(&self, coeffs: &DVector<Complex64>) -> f64 {
        match &self.matrices {
            SystemMatrices::Sparse { mass, .. } => mass.hermitian_form(coeffs.as_slice()),
            SystemMatrices::Dense { mass, .. } => hermitian_dense(mass, coeffs),
        }
    }

    /// Total energy `c^H B(t) c`.
    pub fn energy(&self, coeffs: &DVector<Complex64>, t: f64) -> f64 {
        let s = self.drive_coefficients(t);
        match &self.matrices {
            SystemMatrices::Sparse { .. } => {
                self.sparse_b(&s).hermitian_form(coeffs.as_slice())
            }
            SystemMatrices::Dense { .. } => hermitian_dense(&self.dense_b(&s), coeffs),
        }
    }
}

fn hermitian_dense(m: &DMatrix<f64>, c: &DVector<Complex64>) -> f64 {
    let n = c.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (ri, ii) = (c[i].re, c[i].im);
        let row = m.row(i);
        let mut sr = 0.0;
        let mut si = 0.0;
        for j in 0..n {
            let v = row[j];
            sr += v * c[j].re;
            si += v * c[j].im;
        }
        acc += ri * sr + ii * si;
    }
    acc
}

/// One factored Crank–Nicolson step operator, reusable while the midpoint
/// drive coefficients (and dt) stay put.
enum Factorization {
    Dense(nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>),
    Banded(linalg::BandedLu<Complex64>),
    Bordered {
        a11: linalg::BandedLu<Complex64>,
        /// `A11^{-1} A12`, one solved column per border unknown.
        y: Vec<Vec<Complex64>>,
        a21: DMatrix<Complex64>,
        schur: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    },
}

struct StepCache {
    dt: f64,
    coeffs: Vec<f64>,
    fact: Factorization,
}

/// Time stepper over one coarse system; owns the factorization cache so a
/// drive that is constant (or piecewise constant) pays for one factorization
/// per plateau instead of one per step.
pub struct Propagator<'a> {
    sys: &'a CoarseSystem,
    cache: Option<StepCache>,
}

impl<'a> Propagator<'a> {
    pub fn new(sys: &'a CoarseSystem) -> Self {
        Propagator { sys, cache: None }
    }

    /// Advances one Crank–Nicolson step of signed size `dt`.
    pub fn step(&mut self, state: &WaveState, dt: f64) -> Result<WaveState> {
        assert!(dt.is_finite() && dt != 0.0, "step size must be nonzero");
        let sys = self.sys;
        let t_mid = state.t + 0.5 * dt;
        let s_mid = sys.drive_coefficients(t_mid);

        let fresh = match &self.cache {
            Some(c) => c.dt != dt || c.coeffs != s_mid,
            None => true,
        };
        if fresh {
            let fact = factor_step(sys, &s_mid, dt)?;
            self.cache = Some(StepCache {
                dt,
                coeffs: s_mid.clone(),
                fact,
            });
        }
        let fact = &self.cache.as_ref().unwrap().fact;

        let rhs = right_hand_side(sys, &s_mid, dt, &state.coeffs);
        let next = apply_inverse(sys, fact, rhs)?;
        if next.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite(format!(
                "coefficients left the finite range at t = {}",
                state.t + dt
            )));
        }
        Ok(WaveState::new(next, state.t + dt))
    }
}

/// One step without a reusable cache; see [`Propagator`] for runs.
pub fn cn_step(sys: &CoarseSystem, state: &WaveState, dt: f64) -> Result<WaveState> {
    Propagator::new(sys).step(state, dt)
}

/// `(i eps M + dt/2 B) c` — the explicit half of the step.
fn right_hand_side(
    sys: &CoarseSystem,
    s_mid: &[f64],
    dt: f64,
    c: &DVector<Complex64>,
) -> DVector<Complex64> {
    let ieps = Complex64::new(0.0, sys.epsilon);
    let half = 0.5 * dt;
    match &sys.matrices {
        SystemMatrices::Sparse { mass, .. } => {
            let b = sys.sparse_b(s_mid);
            let mut mc = vec![Complex64::new(0.0, 0.0); sys.dim];
            let mut bc = vec![Complex64::new(0.0, 0.0); sys.dim];
            mass.matvec_complex(c.as_slice(), &mut mc);
            b.matvec_complex(c.as_slice(), &mut bc);
            DVector::from_fn(sys.dim, |i, _| ieps * mc[i] + half * bc[i])
        }
        SystemMatrices::Dense { mass, .. } => {
            let b = sys.dense_b(s_mid);
            let n = sys.dim;
            let mut out = DVector::from_element(n, Complex64::new(0.0, 0.0));
            for i in 0..n {
                let mrow = mass.row(i);
                let brow = b.row(i);
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    acc += (ieps * mrow[j] + half * brow[j]) * c[j];
                }
                out[i] = acc;
            }
            out
        }
    }
}

/// Factors `i eps M - dt/2 B(t_mid)` under the system's solver plan.
fn factor_step(sys: &CoarseSystem, s_mid: &[f64], dt: f64) -> Result<Factorization> {
    let ieps = Complex64::new(0.0, sys.epsilon);
    let half = Complex64::new(-0.5 * dt, 0.0);
    match (&sys.matrices, &sys.plan) {
        (SystemMatrices::Sparse { mass, .. }, SolverPlan::Banded { slot_of, bw }) => {
            let b = sys.sparse_b(s_mid);
            let mut storage = BandedStorage::new(sys.dim, *bw, *bw);
            for (i, j, v) in mass.iter() {
                storage.add(slot_of[i], slot_of[j], ieps * v);
            }
            for (i, j, v) in b.iter() {
                storage.add(slot_of[i], slot_of[j], half * v);
            }
            Ok(Factorization::Banded(storage.factor()?))
        }
        (SystemMatrices::Dense { mass, .. }, plan) => {
            let b = sys.dense_b(s_mid);
            let n = sys.dim;
            let entry = |i: usize, j: usize| ieps * mass[(i, j)] + half * b[(i, j)];
            match plan {
                SolverPlan::Dense => {
                    let l = DMatrix::from_fn(n, n, entry);
                    Ok(Factorization::Dense(l.lu()))
                }
                SolverPlan::Banded { slot_of, bw } => {
                    let lu = banded_from_dense(n, slot_of, *bw, &entry)?;
                    Ok(Factorization::Banded(lu))
                }
                SolverPlan::Bordered { split, slot_of, bw } => {
                    let split = *split;
                    let a11 = banded_from_dense(split, slot_of, *bw, &entry)?;
                    let nb = n - split;
                    // Border columns solved through the banded block.
                    let mut y = Vec::with_capacity(nb);
                    for jb in 0..nb {
                        let mut col = vec![Complex64::new(0.0, 0.0); split];
                        for i in 0..split {
                            col[slot_of[i]] = entry(i, split + jb);
                        }
                        a11.solve(&mut col);
                        y.push(col);
                    }
                    let a21 = DMatrix::from_fn(nb, split, |ib, j| entry(split + ib, j));
                    let mut schur = DMatrix::from_fn(nb, nb, |ib, jb| {
                        entry(split + ib, split + jb)
                    });
                    for ib in 0..nb {
                        for jb in 0..nb {
                            let mut dot = Complex64::new(0.0, 0.0);
                            for k in 0..split {
                                dot += a21[(ib, k)] * y[jb][slot_of[k]];
                            }
                            schur[(ib, jb)] -= dot;
                        }
                    }
                    Ok(Factorization::Bordered {
                        a11,
                        y,
                        a21,
                        schur: schur.lu(),
                    })
                }
            }
        }
        _ => unreachable!("sparse storage always pairs with a banded plan"),
    }
}

fn banded_from_dense(
    n: usize,
    slot_of: &[usize],
    bw: usize,
    entry: &dyn Fn(usize, usize) -> Complex64,
) -> Result<linalg::BandedLu<Complex64>> {
    let mut index_at = vec![0usize; n];
    for (i, &s) in slot_of.iter().take(n).enumerate() {
        index_at[s] = i;
    }
    let mut storage = BandedStorage::new(n, bw, bw);
    for si in 0..n {
        let lo = si.saturating_sub(bw);
        let hi = (si + bw).min(n - 1);
        for sj in lo..=hi {
            storage.add(si, sj, entry(index_at[si], index_at[sj]));
        }
    }
    storage.factor()
}

fn apply_inverse(
    sys: &CoarseSystem,
    fact: &Factorization,
    rhs: DVector<Complex64>,
) -> Result<DVector<Complex64>> {
    match (fact, &sys.plan) {
        (Factorization::Dense(lu), _) => lu
            .solve(&rhs)
            .ok_or_else(|| Error::SolverBreakdown {
                step: 0,
                detail: "dense step matrix is singular".into(),
            }),
        (Factorization::Banded(lu), SolverPlan::Banded { slot_of, .. }) => {
            let mut b = vec![Complex64::new(0.0, 0.0); sys.dim];
            for (i, &s) in slot_of.iter().enumerate() {
                b[s] = rhs[i];
            }
            lu.solve(&mut b);
            Ok(DVector::from_fn(sys.dim, |i, _| b[slot_of[i]]))
        }
        (
            Factorization::Bordered { a11, y, a21, schur },
            SolverPlan::Bordered { split, slot_of, .. },
        ) => {
            let split = *split;
            let nb = sys.dim - split;
            let mut w = vec![Complex64::new(0.0, 0.0); split];
            for i in 0..split {
                w[slot_of[i]] = rhs[i];
            }
            a11.solve(&mut w);
            let mut r2 = DVector::from_fn(nb, |ib, _| rhs[split + ib]);
            for ib in 0..nb {
                let mut dot = Complex64::new(0.0, 0.0);
                for k in 0..split {
                    dot += a21[(ib, k)] * w[slot_of[k]];
                }
                r2[ib] -= dot;
            }
            let x2 = schur.solve(&r2).ok_or_else(|| Error::SolverBreakdown {
                step: 0,
                detail: "border Schur matrix is singular".into(),
            })?;
            let mut out = DVector::from_element(sys.dim, Complex64::new(0.0, 0.0));
            for i in 0..split {
                let mut xi = w[slot_of[i]];
                for jb in 0..nb {
                    xi -= y[jb][slot_of[i]] * x2[jb];
                }
                out[i] = xi;
            }
            for jb in 0..nb {
                out[split + jb] = x2[jb];
            }
            Ok(out)
        }
        _ => unreachable!("factorization kind always matches the plan"),
    }
}

/// Integrates from `psi0.t` to `t_end` in uniform steps of `dt`.
///
/// The observer fires at step 0, every `observe_every` steps (0 disables the
/// mid-run calls), and at the final step.  The step count must reproduce
/// `t_end` exactly: `(t_end - t0)/dt` has to be an integer to within 1e-9.
pub fn evolve(
    sys: &CoarseSystem,
    psi0: &WaveState,
    dt: f64,
    t_end: f64,
    observe_every: usize,
    mut observer: impl FnMut(usize, &WaveState),
) -> Result<WaveState> {
    let span = t_end - psi0.t;
    let ratio = span / dt;
    let n_steps = ratio.round();
    if (ratio - n_steps).abs() > 1e-9 {
        return Err(Error::TimeGrid(format!(
            "({t_end} - {})/{dt} = {ratio} is not an integer step count",
            psi0.t
        )));
    }
    let n_steps = n_steps as usize;
    observer(0, psi0);
    if n_steps == 0 {
        return Ok(psi0.clone());
    }
    let mut prop = Propagator::new(sys);
    let mut state = psi0.clone();
    for k in 1..=n_steps {
        state = prop.step(&state, dt).map_err(|e| match e {
            Error::SolverBreakdown { detail, .. } => Error::SolverBreakdown { step: k, detail },
            other => other,
        })?;
        // Pin the stamp to the grid; accumulated addition drifts.
        state.t = psi0.t + k as f64 * dt;
        if k == n_steps || (observe_every > 0 && k % observe_every == 0) {
            observer(k, &state);
        }
    }
    Ok(state)
}

/// L2-optimal basis coefficients for a fine-grid state: solves
/// `(B^T M B) c = B^T M psi`.
pub fn project_initial_to_basis(
    psi0: &DVector<Complex64>,
    basis: BasisRef,
    ops: &FineOperators,
) -> Result<WaveState> {
    let Some(columns) = basis.columns() else {
        return Ok(WaveState::new(psi0.clone(), 0.0));
    };
    let gram = project_block(&columns, &ops.mass);
    let chol = checked_mass_cholesky(&gram)?;
    let n = ops.mass.nrows();
    let mut mpsi = vec![Complex64::new(0.0, 0.0); n];
    ops.mass.matvec_complex(psi0.as_slice(), &mut mpsi);
    let k = columns.len();
    let mut re = DVector::zeros(k);
    let mut im = DVector::zeros(k);
    for (j, col) in columns.iter().enumerate() {
        let mut ar = 0.0;
        let mut ai = 0.0;
        for (c, m) in col.iter().zip(&mpsi) {
            ar += c * m.re;
            ai += c * m.im;
        }
        re[j] = ar;
        im[j] = ai;
    }
    let re = chol.solve(&re);
    let im = chol.solve(&im);
    Ok(WaveState::new(
        DVector::from_fn(k, |i, _| Complex64::new(re[i], im[i])),
        0.0,
    ))
}

/// Fine-grid wavefunction `sum_k c_k phi_k`.
pub fn reconstruct(basis: BasisRef, coeffs: &DVector<Complex64>, fine_n: usize) -> DVector<Complex64> {
    match basis.columns() {
        None => coeffs.clone(),
        Some(columns) => {
            let mut out = DVector::from_element(fine_n, Complex64::new(0.0, 0.0));
            for (c, col) in coeffs.iter().zip(columns) {
                if c.re != 0.0 || c.im != 0.0 {
                    for (o, v) in out.iter_mut().zip(col) {
                        *o += c * v;
                    }
                }
            }
            out
        }
    }
}
