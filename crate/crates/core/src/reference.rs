//! Fully resolved Crank–Nicolson runs on a single mesh, with an on-disk cache.
//!
//! Converged fine-grid trajectories are what every coarse method gets measured
//! against, and at reference resolutions they dominate the wall time of an
//! experiment, so [`solve_reference`] memoizes them: one checksummed container
//! file per (potential, initial state, grid) fingerprint.  A stale or damaged
//! file downgrades to a recompute, never to wrong numbers.  The same
//! integration without the cache, [`solve_fem`], doubles as the plain-P1
//! comparator when pointed at a coarse mesh.

use crate::container::{read_container, write_container};
use crate::evolution::{evolve, project_system, BasisRef, WaveState};
use crate::fem::{assemble_mass, assemble_stiffness, p1_embedding, project_function, FineOperators};
use crate::mesh::Mesh;
use crate::observables::relative_errors;
use crate::potential::PotentialSpec;
use crate::{Error, Result};
use nalgebra::DVector;
use num_complex::Complex64;
use serde_json::json;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// One run's discretization: mesh resolution, step size, horizon, and the
/// times at which states are kept.
#[derive(Debug, Clone)]
pub struct RunGrid {
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Each entry must land on the `dt` grid within `[0, t_end]`.
    pub times: Vec<f64>,
}

/// A solved run: the mesh it lives on and one state per requested time.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub mesh: Arc<Mesh>,
    pub times: Vec<f64>,
    pub states: Vec<DVector<Complex64>>,
    /// True when the states were decoded from a cache file instead of stepped.
    pub from_cache: bool,
}

impl Trajectory {
    /// The state stored for time `t` (exact match against `times`).
    pub fn state_at(&self, t: f64) -> Option<&DVector<Complex64>> {
        self.times.iter().position(|&s| s == t).map(|i| &self.states[i])
    }
}

/// Deterministic pseudo-random probe points, used to fingerprint the actual
/// potential and initial-state *functions* rather than trusting labels.
fn probe_point(j: usize, period: f64) -> (f64, f64, f64) {
    let walk = |start: f64, stride: f64| (start + j as f64 * stride).fract();
    (
        walk(0.118, 0.618_033_988_749_894_9),
        walk(0.271, 0.754_877_666_246_692_8),
        walk(0.042, 0.569_840_290_998_053_7) * period,
    )
}

/// Content hash naming the cache file for one (potential, init, grid) triple.
///
/// Everything that changes the trajectory goes in: the label and scalar
/// parameters, the grid, and sampled values of `v1`, `v2`, and the initial
/// state, so an overridden amplitude can never alias an older file.
pub fn cache_key(
    spec: &PotentialSpec,
    init: &impl Fn(f64, f64) -> Complex64,
    grid: &RunGrid,
) -> String {
    let mut h = Sha256::new();
    h.update(b"trajectory-v1\0");
    h.update(spec.label.as_bytes());
    h.update([0u8, spec.dim as u8]);
    for v in [spec.epsilon, spec.drive_period, grid.dt, grid.t_end] {
        h.update(v.to_le_bytes());
    }
    h.update((grid.n as u64).to_le_bytes());
    h.update((grid.times.len() as u64).to_le_bytes());
    for &t in &grid.times {
        h.update(t.to_le_bytes());
    }
    for j in 0..17 {
        let (x, y, t) = probe_point(j, spec.drive_period);
        let y = if spec.dim == 1 { 0.0 } else { y };
        h.update(spec.v1.eval(x, y).to_le_bytes());
        h.update(spec.v2(x, y, t).to_le_bytes());
        let z = init(x, y);
        h.update(z.re.to_le_bytes());
        h.update(z.im.to_le_bytes());
    }
    let digest = h.finalize();
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Path of the cache file for `key` under `dir`.
pub fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.wavebox"))
}

/// Maps each requested time to its step index, rejecting off-grid requests.
fn step_slots(grid: &RunGrid) -> Result<HashMap<usize, Vec<usize>>> {
    let total = grid.t_end / grid.dt;
    let n_steps = total.round();
    if (total - n_steps).abs() > 1e-9 {
        return Err(Error::TimeGrid(format!(
            "{} / {} = {total} is not an integer step count",
            grid.t_end, grid.dt
        )));
    }
    let mut slots: HashMap<usize, Vec<usize>> = HashMap::new();
    for (pos, &t) in grid.times.iter().enumerate() {
        let ratio = t / grid.dt;
        let k = ratio.round();
        if (ratio - k).abs() > 1e-9 || k < 0.0 || k > n_steps {
            return Err(Error::TimeGrid(format!(
                "snapshot time {t} is off the dt = {} grid of [0, {}]",
                grid.dt, grid.t_end
            )));
        }
        slots.entry(k as usize).or_default().push(pos);
    }
    Ok(slots)
}

/// Crank–Nicolson on the full P1 space of a fresh `grid.n` mesh.
///
/// This is both the reference integrator (at fine `n`) and the standard-FEM
/// comparator (at coarse `n`); the two differ only in resolution.
pub fn solve_fem(
    spec: &PotentialSpec,
    init: &impl Fn(f64, f64) -> Complex64,
    grid: &RunGrid,
) -> Result<Trajectory> {
    let mesh = Arc::new(Mesh::uniform_periodic(spec.dim, grid.n)?);
    let ops = FineOperators::assemble(&mesh, spec)?;
    let sys = project_system(&ops, BasisRef::FineIdentity)?;
    let slots = step_slots(grid)?;
    let psi0 = project_function(&mesh, |x, y| init(x, y))?;
    let mut states: Vec<Option<DVector<Complex64>>> = vec![None; grid.times.len()];
    evolve(
        &sys,
        &WaveState::new(psi0, 0.0),
        grid.dt,
        grid.t_end,
        1,
        |k, state| {
            if let Some(positions) = slots.get(&k) {
                for &p in positions {
                    states[p] = Some(state.coeffs.clone());
                }
            }
        },
    )?;
    let states = states
        .into_iter()
        .map(|s| s.expect("step_slots only admits steps the walk visits"))
        .collect();
    Ok(Trajectory {
        mesh,
        times: grid.times.clone(),
        states,
        from_cache: false,
    })
}

/// Like [`solve_fem`], but consults (and fills) a cache directory first.
///
/// Cache hits are bit-exact replays of the original run.  A corrupt or
/// mismatched file is logged and recomputed over; `cache_dir: None` always
/// integrates.
pub fn solve_reference(
    spec: &PotentialSpec,
    init: &impl Fn(f64, f64) -> Complex64,
    grid: &RunGrid,
    cache_dir: Option<&Path>,
) -> Result<Trajectory> {
    let Some(dir) = cache_dir else {
        return solve_fem(spec, init, grid);
    };
    let path = cache_path(dir, &cache_key(spec, init, grid));
    if path.exists() {
        match try_decode(&path, spec, grid) {
            Ok(traj) => return Ok(traj),
            Err(e) => log::warn!(
                "discarding cache file {}: {e}; recomputing",
                path.display()
            ),
        }
    }
    let traj = solve_fem(spec, init, grid)?;
    let n_dofs = traj.mesh.n_dofs();
    let mut payload = Vec::with_capacity(2 * n_dofs * traj.states.len());
    for state in &traj.states {
        for z in state.iter() {
            payload.push(z.re);
            payload.push(z.im);
        }
    }
    let header = json!({
        "kind": "trajectory",
        "example": spec.label,
        "dim": spec.dim,
        "epsilon": spec.epsilon,
        "n": grid.n,
        "n_dofs": n_dofs,
        "dt": grid.dt,
        "t_end": grid.t_end,
        "times": grid.times,
        "layout": "states by time, re/im interleaved",
    });
    write_container(&path, &header, &payload)?;
    Ok(traj)
}

/// Decodes a cache file, checking that its header matches the request.
///
/// The content hash in the file name should already guarantee the match; the
/// header check is a second lock against protocol drift between versions.
fn try_decode(path: &Path, spec: &PotentialSpec, grid: &RunGrid) -> Result<Trajectory> {
    let (header, payload) = read_container(path)?;
    let mesh = Arc::new(Mesh::uniform_periodic(spec.dim, grid.n)?);
    let n_dofs = mesh.n_dofs();
    let stored_times: Vec<f64> = header["times"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_f64()).collect())
        .unwrap_or_default();
    let consistent = header["kind"] == "trajectory"
        && header["n_dofs"].as_u64() == Some(n_dofs as u64)
        && header["dt"].as_f64() == Some(grid.dt)
        && stored_times == grid.times
        && payload.len() == 2 * n_dofs * grid.times.len();
    if !consistent {
        return Err(Error::Corrupt(format!(
            "header does not describe the requested run ({} values for {} times)",
            payload.len(),
            grid.times.len()
        )));
    }
    let states = (0..grid.times.len())
        .map(|s| {
            let base = 2 * n_dofs * s;
            DVector::from_fn(n_dofs, |i, _| {
                Complex64::new(payload[base + 2 * i], payload[base + 2 * i + 1])
            })
        })
        .collect();
    Ok(Trajectory {
        mesh,
        times: grid.times.clone(),
        states,
        from_cache: true,
    })
}

/// Distance between a run at `grid` and one at twice the resolution in both
/// mesh and step, measured at `t_end` on the finer mesh.
///
/// Returns `(rel_l2, rel_h1)`.  This is the empirical handle on how converged
/// a would-be reference grid actually is; record it next to the cache with
/// [`annotate_margin`].
pub fn self_convergence_margin(
    spec: &PotentialSpec,
    init: &impl Fn(f64, f64) -> Complex64,
    grid: &RunGrid,
) -> Result<(f64, f64)> {
    let at_end = |n: usize, dt: f64| RunGrid {
        n,
        dt,
        t_end: grid.t_end,
        times: vec![grid.t_end],
    };
    let coarse = solve_fem(spec, init, &at_end(grid.n, grid.dt))?;
    let fine = solve_fem(spec, init, &at_end(2 * grid.n, grid.dt / 2.0))?;
    let embed = p1_embedding(&fine.mesh, &coarse.mesh)?;
    let mut lifted = vec![Complex64::new(0.0, 0.0); fine.mesh.n_dofs()];
    embed.matvec_complex(coarse.states[0].as_slice(), &mut lifted);
    relative_errors(
        &lifted,
        fine.states[0].as_slice(),
        &assemble_stiffness(&fine.mesh),
        &assemble_mass(&fine.mesh),
    )
}

/// Stamps a measured self-convergence margin into an existing cache file.
pub fn annotate_margin(path: &Path, rel_l2: f64, rel_h1: f64) -> Result<()> {
    let (mut header, payload) = read_container(path)?;
    header["self_convergence"] = json!({ "rel_l2": rel_l2, "rel_h1": rel_h1 });
    write_container(path, &header, &payload)
}
