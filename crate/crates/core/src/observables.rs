//! Physical observables and error norms on fine-grid wavefunctions.
//!
//! Everything here is a pure function of reconstructed fine-grid states:
//! position density at the vertices, energy density per element, total mass
//! and energy traces along a run, and the relative L2/H1 errors that the
//! experiment tables report.  The H1 norm is the unweighted
//! `(|grad psi|^2 + |psi|^2)^(1/2)` — no semiclassical factor — so it grows
//! as the wavelength shrinks; that is intentional and matches what the
//! error tables track.

use crate::fem::{FineOperators, GAUSS5, TRI7};
use crate::linalg::CsrMatrix;
use crate::mesh::{Elements, Mesh};
use crate::potential::PotentialSpec;
use crate::{Error, Result};
use num_complex::Complex64;

/// One row of an error table.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub method: String,
    pub t: f64,
    pub epsilon: f64,
    /// Coarse mesh size; the fine reference itself reports its own h.
    pub h: f64,
    pub dt: f64,
    pub basis_dim: usize,
    pub rel_l2: f64,
    pub rel_h1: f64,
}

/// Pointwise position density `|psi|^2` at the fine vertices.
pub fn position_density(psi: &[Complex64]) -> Vec<f64> {
    psi.iter().map(|z| z.norm_sqr()).collect()
}

/// Energy density per element: the constant `(eps^2/2) |grad psi_h|^2` plus
/// the element average of `v |psi_h|^2`, sampled with the same quadrature
/// the assembly uses so that element sums reproduce the assembled total
/// energy exactly.
pub fn energy_density(
    psi: &[Complex64],
    mesh: &Mesh,
    spec: &PotentialSpec,
    t: f64,
) -> Result<Vec<f64>> {
    let half_eps2 = 0.5 * spec.epsilon * spec.epsilon;
    let mut out = Vec::with_capacity(mesh.n_elements());
    match mesh.elements() {
        Elements::Intervals(elems) => {
            let h = mesh.h();
            for (e, dofs) in elems.iter().enumerate() {
                let (pa, pb) = (psi[dofs[0]], psi[dofs[1]]);
                let grad2 = ((pb - pa) / h).norm_sqr();
                let x0 = mesh.element_coords(e)[0][0];
                let mut pot = 0.0;
                for &(xi, w) in &GAUSS5 {
                    let s = 0.5 * (xi + 1.0);
                    let x = x0 + h * s;
                    let val = potential_value(spec, x, 0.0, t)?;
                    let amp = pa * (1.0 - s) + pb * s;
                    pot += 0.5 * w * val * amp.norm_sqr();
                }
                out.push(half_eps2 * grad2 + pot);
            }
        }
        Elements::Triangles(elems) => {
            for (e, dofs) in elems.iter().enumerate() {
                let c = mesh.element_coords(e);
                let area = mesh.element_measure(e);
                let b = [c[1][1] - c[2][1], c[2][1] - c[0][1], c[0][1] - c[1][1]];
                let g = [c[2][0] - c[1][0], c[0][0] - c[2][0], c[1][0] - c[0][0]];
                let mut gx = Complex64::new(0.0, 0.0);
                let mut gy = Complex64::new(0.0, 0.0);
                for a in 0..3 {
                    let scale = 1.0 / (2.0 * area);
                    gx += psi[dofs[a]] * (b[a] * scale);
                    gy += psi[dofs[a]] * (g[a] * scale);
                }
                let grad2 = gx.norm_sqr() + gy.norm_sqr();
                let mut pot = 0.0;
                for &(lam, w) in &TRI7 {
                    let x = lam[0] * c[0][0] + lam[1] * c[1][0] + lam[2] * c[2][0];
                    let y = lam[0] * c[0][1] + lam[1] * c[1][1] + lam[2] * c[2][1];
                    let val = potential_value(spec, x, y, t)?;
                    let amp = psi[dofs[0]] * lam[0] + psi[dofs[1]] * lam[1] + psi[dofs[2]] * lam[2];
                    pot += w * val * amp.norm_sqr();
                }
                out.push(half_eps2 * grad2 + pot);
            }
        }
    }
    Ok(out)
}

fn potential_value(spec: &PotentialSpec, x: f64, y: f64, t: f64) -> Result<f64> {
    let val = spec.total(x, y, t);
    if !val.is_finite() {
        return Err(Error::NonFinite(format!(
            "potential value {val} at ({x}, {y}, t = {t})"
        )));
    }
    Ok(val)
}

/// Relative L2 and H1 errors of `num` against `reference`, both living on
/// the fine mesh behind `stiffness` and `mass`.
pub fn relative_errors(
    num: &[Complex64],
    reference: &[Complex64],
    stiffness: &CsrMatrix,
    mass: &CsrMatrix,
) -> Result<(f64, f64)> {
    assert_eq!(num.len(), reference.len(), "states on a shared mesh");
    let diff: Vec<Complex64> = num.iter().zip(reference).map(|(a, b)| a - b).collect();
    let l2_ref = mass.hermitian_form(reference);
    let h1_ref = l2_ref + stiffness.hermitian_form(reference);
    if l2_ref <= 0.0 || h1_ref <= 0.0 {
        return Err(Error::ZeroReferenceNorm);
    }
    let l2 = (mass.hermitian_form(&diff) / l2_ref).sqrt();
    let h1 = ((mass.hermitian_form(&diff) + stiffness.hermitian_form(&diff)) / h1_ref).sqrt();
    Ok((l2, h1))
}

/// One sampled point of a conservation trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
}

/// Total mass and energy along reconstructed fine-grid snapshots.
pub fn mass_and_energy_trace(
    snapshots: &[(f64, Vec<Complex64>)],
    ops: &FineOperators,
) -> Vec<TraceRow> {
    snapshots
        .iter()
        .map(|(t, psi)| TraceRow {
            t: *t,
            mass: ops.mass_form(psi),
            energy: ops.energy(psi, *t),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{evolve, project_system, BasisRef, WaveState};
    use crate::fem::{project_function, ScalarField};
    use crate::potential::{catalog, gaussian_packet, CatalogOverrides, PotentialSpec};
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use std::f64::consts::TAU;
    use std::sync::Arc;

    #[test]
    fn density_ignores_phase_and_matches_the_packet_peak() {
        let ones = vec![Complex64::new(1.0, 0.0); 10];
        assert!(position_density(&ones).iter().all(|&n| n == 1.0));

        let mesh = Mesh::uniform_periodic(1, 64).unwrap();
        let phased = DVector::from_fn(64, |i, _| {
            let [x, _] = mesh.vertex_coord(i);
            Complex64::from_polar(1.0, 12.0 * x * x - 3.0 * x)
        });
        for n in position_density(phased.as_slice()) {
            assert_abs_diff_eq!(n, 1.0, epsilon = 1e-14);
        }

        let sigma: f64 = 0.2;
        let psi = project_function(&mesh, &gaussian_packet(1, sigma)).unwrap();
        let n = position_density(psi.as_slice());
        // Vertex 32 sits exactly at the packet center x = 1/2.
        let expect = 1.0 / (TAU * sigma * sigma).sqrt();
        assert_abs_diff_eq!(n[32], expect, epsilon = 1e-12);
        assert!(n.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn flat_state_in_free_space_has_zero_energy_density() {
        let mesh = Mesh::uniform_periodic(1, 32).unwrap();
        let spec = PotentialSpec {
            label: "free".into(),
            dim: 1,
            epsilon: 0.5,
            v1: ScalarField::constant(0.0),
            terms: vec![],
            drive_period: 1.0,
        };
        let psi = vec![Complex64::new(1.0, 0.0); 32];
        for e in energy_density(&psi, &mesh, &spec, 0.0).unwrap() {
            assert_abs_diff_eq!(e, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn plane_wave_energy_density_matches_the_discrete_symbol() {
        // e = (eps^2/2) |grad psi_h|^2 with the interpolated plane wave:
        // |grad|^2 = (2 - 2 cos(k h))/h^2 on every element, approaching the
        // continuum 2 pi^2 as the mesh refines.
        let n = 1024;
        let eps = 1.0 / 32.0;
        let mesh = Mesh::uniform_periodic(1, n).unwrap();
        let spec = PotentialSpec {
            label: "free".into(),
            dim: 1,
            epsilon: eps,
            v1: ScalarField::constant(0.0),
            terms: vec![],
            drive_period: 1.0,
        };
        let k = TAU / eps;
        let psi: Vec<Complex64> = (0..n)
            .map(|i| Complex64::from_polar(1.0, k * i as f64 / n as f64))
            .collect();
        let h = 1.0 / n as f64;
        let expect = 0.5 * eps * eps * (2.0 - 2.0 * (k * h).cos()) / (h * h);
        let dens = energy_density(&psi, &mesh, &spec, 0.0).unwrap();
        for e in &dens {
            assert_abs_diff_eq!(*e, expect, epsilon = 1e-10 * expect);
        }
        let continuum = 2.0 * std::f64::consts::PI * std::f64::consts::PI;
        assert!((expect - continuum).abs() < 0.01 * continuum);
    }

    #[test]
    fn element_energies_sum_to_the_assembled_total() {
        use rand::{Rng, SeedableRng};
        let spec = catalog("ex1", &CatalogOverrides::default()).unwrap();
        let mesh = Arc::new(Mesh::uniform_periodic(1, 96).unwrap());
        let ops = FineOperators::assemble(&mesh, &spec).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let psi: Vec<Complex64> = (0..96)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let t = 0.37;
        let dens = energy_density(&psi, &mesh, &spec, t).unwrap();
        let total: f64 = dens
            .iter()
            .enumerate()
            .map(|(e, d)| d * mesh.element_measure(e))
            .sum();
        let assembled = ops.energy(&psi, t);
        assert_abs_diff_eq!(total, assembled, epsilon = 1e-10 * assembled.abs());

        // Same consistency on a 2D example.
        let spec2 = catalog("ex4", &CatalogOverrides::default()).unwrap();
        let mesh2 = Arc::new(Mesh::uniform_periodic(2, 16).unwrap());
        let ops2 = FineOperators::assemble(&mesh2, &spec2).unwrap();
        let psi2: Vec<Complex64> = (0..mesh2.n_dofs())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let dens2 = energy_density(&psi2, &mesh2, &spec2, t).unwrap();
        let total2: f64 = dens2
            .iter()
            .enumerate()
            .map(|(e, d)| d * mesh2.element_measure(e))
            .sum();
        let assembled2 = ops2.energy(&psi2, t);
        assert_abs_diff_eq!(total2, assembled2, epsilon = 1e-10 * assembled2.abs());
    }

    #[test]
    fn relative_errors_have_the_obvious_fixed_points() {
        let mesh = Mesh::uniform_periodic(1, 64).unwrap();
        let s = crate::fem::assemble_stiffness(&mesh);
        let m = crate::fem::assemble_mass(&mesh);
        let psi = project_function(&mesh, &gaussian_packet(1, 0.2)).unwrap();
        let (l2, h1) = relative_errors(psi.as_slice(), psi.as_slice(), &s, &m).unwrap();
        assert_eq!((l2, h1), (0.0, 0.0));

        let twice: Vec<Complex64> = psi.iter().map(|z| 2.0 * z).collect();
        let (l2, h1) = relative_errors(&twice, psi.as_slice(), &s, &m).unwrap();
        assert_abs_diff_eq!(l2, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(h1, 1.0, epsilon = 1e-14);

        let zero = vec![Complex64::new(0.0, 0.0); 64];
        assert!(matches!(
            relative_errors(psi.as_slice(), &zero, &s, &m),
            Err(Error::ZeroReferenceNorm)
        ));
    }

    #[test]
    fn high_mode_perturbation_blows_up_in_h1_by_its_wavenumber() {
        // Reference = constant, perturbation = single Fourier mode: both are
        // exact eigenvectors of the circulant forms, so the H1/L2 ratio has
        // a closed form in the discrete symbols.
        let n = 2048;
        let mode = 32.0;
        let mesh = Mesh::uniform_periodic(1, n).unwrap();
        let s = crate::fem::assemble_stiffness(&mesh);
        let m = crate::fem::assemble_mass(&mesh);
        let reference = vec![Complex64::new(1.0, 0.0); n];
        let num: Vec<Complex64> = (0..n)
            .map(|i| {
                let x = i as f64 / n as f64;
                reference[i] + 1e-3 * Complex64::from_polar(1.0, TAU * mode * x)
            })
            .collect();
        let (l2, h1) = relative_errors(&num, &reference, &s, &m).unwrap();
        let h = 1.0 / n as f64;
        let theta = TAU * mode * h;
        let lam_s = (2.0 - 2.0 * theta.cos()) / h;
        let lam_m = h * (2.0 + theta.cos()) / 3.0;
        let expect = ((lam_s + lam_m) / lam_m).sqrt();
        assert_abs_diff_eq!(h1 / l2, expect, epsilon = 1e-9 * expect);
        // Well-resolved mode: the ratio is close to the wavenumber itself.
        assert!((h1 / l2 - TAU * mode).abs() < 0.02 * TAU * mode);
    }

    #[test]
    fn nodal_quadratures_tie_back_to_the_matrix_forms() {
        // For piecewise-linear psi_h both composite rules have exact
        // corrections in the stiffness form:
        //   trapezoid(|psi_h|^2) = M-form + h^2/6 S-form
        //   midpoint (|psi_h|^2) = M-form - h^2/12 S-form
        let n = 256;
        let mesh = Mesh::uniform_periodic(1, n).unwrap();
        let s = crate::fem::assemble_stiffness(&mesh);
        let m = crate::fem::assemble_mass(&mesh);
        let psi = project_function(&mesh, &gaussian_packet(1, 0.2)).unwrap();
        let h = 1.0 / n as f64;
        let m_form = m.hermitian_form(psi.as_slice());
        let s_form = s.hermitian_form(psi.as_slice());

        let trapezoid: f64 = psi.iter().map(|z| z.norm_sqr() * h).sum();
        assert_abs_diff_eq!(
            trapezoid,
            m_form + h * h / 6.0 * s_form,
            epsilon = 1e-12 * m_form
        );
        let midpoint: f64 = (0..n)
            .map(|i| {
                let mid = 0.5 * (psi[i] + psi[(i + 1) % n]);
                mid.norm_sqr() * h
            })
            .sum();
        assert_abs_diff_eq!(
            midpoint,
            m_form - h * h / 12.0 * s_form,
            epsilon = 1e-12 * m_form
        );
        // The density trace integrates back to the total mass.
        let density_total: f64 = position_density(psi.as_slice())
            .iter()
            .map(|d| d * h)
            .sum();
        assert_abs_diff_eq!(density_total, trapezoid, epsilon = 1e-13);
    }

    #[test]
    fn traces_show_flat_mass_and_driven_energy() {
        let spec = catalog("ex1", &CatalogOverrides::default()).unwrap();
        let mesh = Arc::new(Mesh::uniform_periodic(1, 128).unwrap());
        let ops = FineOperators::assemble(&mesh, &spec).unwrap();
        let sys = project_system(&ops, BasisRef::FineIdentity).unwrap();
        let psi0 = project_function(&mesh, &gaussian_packet(1, 0.2)).unwrap();
        let mut snaps: Vec<(f64, Vec<Complex64>)> = Vec::new();
        evolve(
            &sys,
            &WaveState::new(psi0, 0.0),
            1.0 / 64.0,
            0.5,
            4,
            |_, s| snaps.push((s.t, s.coeffs.as_slice().to_vec())),
        )
        .unwrap();
        let trace = mass_and_energy_trace(&snaps, &ops);
        let m0 = trace[0].mass;
        let mass_dev = trace
            .iter()
            .map(|r| (r.mass - m0).abs() / m0)
            .fold(0.0, f64::max);
        assert!(mass_dev < 1e-10, "mass drift {mass_dev:.2e}");
        let e0 = trace[0].energy;
        let energy_dev = trace
            .iter()
            .map(|r| (r.energy - e0).abs() / e0.abs())
            .fold(0.0, f64::max);
        assert!(energy_dev > 1e-3, "drive should move energy, saw {energy_dev:.2e}");

        // Undriven twin: energy flat too.
        let static_spec = PotentialSpec {
            terms: Vec::<crate::potential::DriveTerm>::new(),
            ..catalog("ex1", &CatalogOverrides::default()).unwrap()
        };
        let ops = FineOperators::assemble(&mesh, &static_spec).unwrap();
        let sys = project_system(&ops, BasisRef::FineIdentity).unwrap();
        let psi0 = project_function(&mesh, &gaussian_packet(1, 0.2)).unwrap();
        let mut snaps: Vec<(f64, Vec<Complex64>)> = Vec::new();
        evolve(
            &sys,
            &WaveState::new(psi0, 0.0),
            1.0 / 64.0,
            0.5,
            4,
            |_, s| snaps.push((s.t, s.coeffs.as_slice().to_vec())),
        )
        .unwrap();
        let trace = mass_and_energy_trace(&snaps, &ops);
        let e0 = trace[0].energy;
        let dev = trace
            .iter()
            .map(|r| (r.energy - e0).abs() / e0.abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-10, "undriven energy drift {dev:.2e}");
    }
}
