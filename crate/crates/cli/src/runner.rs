//! Executes a validated [`Plan`]: reference run, method cells, CSV artifacts.
//!
//! Each (method, coarse mesh) pair is an independent *cell* — offline basis
//! construction, online time stepping, error measurement against the shared
//! reference.  Cells run in parallel and a failing cell is recorded rather
//! than fatal, so one sick configuration still yields every other column of
//! the study.  All outputs are deterministic: rerunning a config reproduces
//! the CSV files byte for byte (wall times live only in the manifest).

use crate::config::{EnrichMode, ExperimentConfig, Method, Plan, ReferenceConfig};
use msfem::basis::{build_basis, BuildOptions, Localization};
use msfem::enrichment::{enrich, select_times, snapshot_times, EnrichOptions, EnrichedSpace, SelectionMode};
use msfem::evolution::{
    evolve, project_initial_to_basis, project_system, reconstruct, BasisRef, WaveState,
};
use msfem::fem::{assemble_mass, assemble_stiffness, p1_embedding, project_function, FineOperators};
use msfem::mesh::Mesh;
use msfem::observables::{energy_density, position_density, relative_errors};
use msfem::potential::{gaussian_packet, DEFAULT_SIGMA};
use msfem::reference::{cache_key, solve_reference, RunGrid, Trajectory};
use nalgebra::DVector;
use num_complex::Complex64;
use serde_json::json;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Reference cache directory; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
    /// Overrides the config's worker count.
    pub workers: Option<usize>,
}

/// What `run` leaves behind, beyond the files on disk.
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest_path: PathBuf,
    pub failures: Vec<String>,
}

/// One error-series sample of a cell.
struct SeriesPoint {
    t: f64,
    rel_l2: f64,
    rel_h1: f64,
    mass: f64,
    energy: f64,
}

/// Everything a finished cell contributes to the artifacts.
struct CellReport {
    method: Method,
    coarse_n: usize,
    level: usize,
    basis_dim: usize,
    fallback_count: usize,
    selected_times: Vec<f64>,
    kept_counts: Vec<usize>,
    offline_s: f64,
    online_s: f64,
    max_mass_drift: f64,
    /// (t, mass, energy) at every `trace_stride`-th step.
    trace: Vec<(f64, f64, f64)>,
    series: Vec<SeriesPoint>,
    /// |psi|^2 and energy density on the shared fine mesh at T.
    profile_density: Vec<f64>,
    profile_energy: Vec<f64>,
}

/// Time evolution under observation: per-step mass drift, strided trace
/// rows, and full coefficient snapshots at the series times.
struct Observed {
    final_state: WaveState,
    snapshots: Vec<(f64, DVector<Complex64>, f64, f64)>,
    trace: Vec<(f64, f64, f64)>,
    max_mass_drift: f64,
}

fn observe_run(
    sys: &msfem::evolution::CoarseSystem,
    start: &WaveState,
    config: &ExperimentConfig,
    series: &[f64],
) -> msfem::Result<Observed> {
    let dt = config.dt;
    let n_steps = (config.t_end / dt).round() as usize;
    let slots: HashMap<usize, usize> = series
        .iter()
        .enumerate()
        .map(|(i, &t)| ((t / dt).round() as usize, i))
        .collect();
    let mut snapshots: Vec<Option<(f64, DVector<Complex64>, f64, f64)>> = vec![None; series.len()];
    let mut trace = Vec::new();
    let mut m0 = 0.0;
    let mut drift = 0.0f64;
    let final_state = evolve(sys, start, dt, config.t_end, 1, |k, state| {
        let mass = sys.mass_norm_sq(&state.coeffs);
        if k == 0 {
            m0 = mass;
        } else if m0 > 0.0 {
            drift = drift.max((mass - m0).abs() / m0);
        }
        let on_stride = k % config.trace_stride == 0 || k == n_steps;
        let slot = slots.get(&k).copied();
        if on_stride || slot.is_some() {
            let energy = sys.energy(&state.coeffs, state.t);
            if on_stride {
                trace.push((state.t, mass, energy));
            }
            if let Some(i) = slot {
                snapshots[i] = Some((state.t, state.coeffs.clone(), mass, energy));
            }
        }
    })?;
    let snapshots = snapshots
        .into_iter()
        .map(|s| s.expect("validated series times all lie on the step grid"))
        .collect();
    Ok(Observed {
        final_state,
        snapshots,
        trace,
        max_mass_drift: drift,
    })
}

fn enrichment_options(config: &ExperimentConfig, level: usize) -> EnrichOptions {
    EnrichOptions {
        build: BuildOptions {
            localization: Localization::Patch { level },
            ..BuildOptions::default()
        },
        keep_fraction: config.enrichment.keep_fraction,
        drop_tol: config.enrichment.drop_tol,
    }
}

fn selection_mode(config: &ExperimentConfig) -> SelectionMode {
    match config.enrichment.mode {
        EnrichMode::None => SelectionMode::None,
        EnrichMode::OneStep => SelectionMode::OneStep,
        EnrichMode::Greedy => SelectionMode::Greedy {
            delta: config.enrichment.delta,
        },
    }
}

/// Snapshot selection plus enrichment, as one offline step.
pub fn build_enriched_space(
    plan: &Plan,
    ops: &FineOperators,
    coarse: &Mesh,
    level: usize,
) -> msfem::Result<EnrichedSpace> {
    let candidates = snapshot_times(0.0, plan.spec.drive_period, plan.config.enrichment.snapshots);
    let selection = select_times(&plan.spec, &candidates, &selection_mode(&plan.config));
    enrich(ops, coarse, &selection, &enrichment_options(&plan.config, level))
}

/// Serializes the enrichment blocks of a space into one container file.
pub fn save_blocks(space: &EnrichedSpace, path: &Path) -> msfem::Result<()> {
    let n_fine: usize = space.base.columns.first().map_or(0, |c| c.len());
    let mut payload = Vec::new();
    for block in &space.blocks {
        for f in &block.functions {
            payload.extend_from_slice(f);
        }
    }
    let header = json!({
        "kind": "enrichment-blocks",
        "n_fine": n_fine,
        "times": space.blocks.iter().map(|b| b.time).collect::<Vec<_>>(),
        "counts": space.kept_counts(),
    });
    msfem::container::write_container(path, &header, &payload)
}

/// The reference trajectory plus everything the manifest reports about it.
struct ReferenceRun {
    trajectory: Trajectory,
    wall_s: f64,
    cache_key: Option<String>,
    max_mass_drift: Option<f64>,
    basis_dim: Option<usize>,
}

fn compute_reference(
    plan: &Plan,
    ops: &FineOperators,
    fine_mesh: &Arc<Mesh>,
    opts: &RunOptions,
) -> anyhow::Result<ReferenceRun> {
    let spec = &plan.spec;
    let init = gaussian_packet(spec.dim, DEFAULT_SIGMA);
    let clock = Instant::now();
    match &plan.config.reference {
        ReferenceConfig::Fine { n, dt } => {
            let grid = RunGrid {
                n: *n,
                dt: *dt,
                t_end: plan.config.t_end,
                times: plan.series.clone(),
            };
            let key = opts.cache_dir.as_ref().map(|_| cache_key(spec, &init, &grid));
            let trajectory = solve_reference(spec, &init, &grid, opts.cache_dir.as_deref())?;
            Ok(ReferenceRun {
                trajectory,
                wall_s: clock.elapsed().as_secs_f64(),
                cache_key: key,
                max_mass_drift: None,
                basis_dim: None,
            })
        }
        ReferenceConfig::Enmsfem { coarse } => {
            let coarse_mesh = Mesh::uniform_periodic(spec.dim, *coarse)?;
            let level = plan
                .config
                .l_star
                .unwrap_or_else(|| (*coarse as f64).log2().ceil() as usize);
            let space = build_enriched_space(plan, ops, &coarse_mesh, level)?;
            let basis = BasisRef::Enriched(&space);
            let sys = project_system(ops, basis)?;
            let psi0 = project_function(fine_mesh, &init)?;
            let start = project_initial_to_basis(&psi0, basis, ops)?;
            let observed = observe_run(&sys, &start, &plan.config, &plan.series)?;
            let states = observed
                .snapshots
                .iter()
                .map(|(_, c, _, _)| reconstruct(basis, c, fine_mesh.n_dofs()))
                .collect();
            Ok(ReferenceRun {
                trajectory: Trajectory {
                    mesh: Arc::clone(fine_mesh),
                    times: plan.series.clone(),
                    states,
                    from_cache: false,
                },
                wall_s: clock.elapsed().as_secs_f64(),
                cache_key: None,
                max_mass_drift: Some(observed.max_mass_drift),
                basis_dim: Some(space.dimension()),
            })
        }
    }
}

struct CellContext<'a> {
    plan: &'a Plan,
    ops: &'a FineOperators,
    fine_mesh: &'a Arc<Mesh>,
    psi0_fine: &'a DVector<Complex64>,
    reference: &'a Trajectory,
    ref_stiffness: &'a msfem::linalg::csr::CsrMatrix,
    ref_mass: &'a msfem::linalg::csr::CsrMatrix,
}

fn run_cell(ctx: &CellContext, method: Method, coarse_n: usize, level: usize) -> msfem::Result<CellReport> {
    let plan = ctx.plan;
    let spec = &plan.spec;
    let config = &plan.config;
    let t_end = config.t_end;

    let offline = Instant::now();
    // Offline stage: whatever must exist before the first time step.
    let (sys, start, held_basis, held_space, coarse_mesh, basis_dim, fallback, selected, kept);
    match method {
        Method::Fem => {
            let mesh = Arc::new(Mesh::uniform_periodic(spec.dim, coarse_n)?);
            let ops_c = FineOperators::assemble(&mesh, spec)?;
            sys = project_system(&ops_c, BasisRef::FineIdentity)?;
            let psi0 = project_function(&mesh, gaussian_packet(spec.dim, DEFAULT_SIGMA))?;
            basis_dim = mesh.n_dofs();
            start = WaveState::new(psi0, 0.0);
            coarse_mesh = Some(mesh);
            held_basis = None;
            held_space = None;
            fallback = 0;
            selected = Vec::new();
            kept = Vec::new();
        }
        Method::Msfem => {
            let mesh = Mesh::uniform_periodic(spec.dim, coarse_n)?;
            let opts = BuildOptions {
                localization: Localization::Patch { level },
                ..BuildOptions::default()
            };
            let basis = build_basis(ctx.ops, &mesh, 0.0, &opts)?;
            basis_dim = basis.columns.len();
            fallback = basis.fallback_count;
            held_basis = Some(basis);
            let basis_ref = BasisRef::Multiscale(held_basis.as_ref().unwrap());
            sys = project_system(ctx.ops, basis_ref)?;
            start = project_initial_to_basis(ctx.psi0_fine, basis_ref, ctx.ops)?;
            coarse_mesh = None;
            held_space = None;
            selected = Vec::new();
            kept = Vec::new();
        }
        Method::Enmsfem => {
            let mesh = Mesh::uniform_periodic(spec.dim, coarse_n)?;
            let space = build_enriched_space(plan, ctx.ops, &mesh, level)?;
            basis_dim = space.dimension();
            fallback = space.base.fallback_count;
            selected = space.blocks.iter().map(|b| b.time).collect();
            kept = space.kept_counts();
            held_space = Some(space);
            let basis_ref = BasisRef::Enriched(held_space.as_ref().unwrap());
            sys = project_system(ctx.ops, basis_ref)?;
            start = project_initial_to_basis(ctx.psi0_fine, basis_ref, ctx.ops)?;
            coarse_mesh = None;
            held_basis = None;
        }
    }
    let offline_s = offline.elapsed().as_secs_f64();

    let online = Instant::now();
    let observed = observe_run(&sys, &start, config, &plan.series)?;
    let online_s = online.elapsed().as_secs_f64();

    // Every method reports on two meshes: the shared fine mesh (profiles)
    // and the reference mesh (errors).
    let basis_ref = match method {
        Method::Fem => BasisRef::FineIdentity,
        Method::Msfem => BasisRef::Multiscale(held_basis.as_ref().unwrap()),
        Method::Enmsfem => BasisRef::Enriched(held_space.as_ref().unwrap()),
    };
    let to_fine = coarse_mesh
        .as_ref()
        .map(|m| p1_embedding(ctx.fine_mesh, m))
        .transpose()?;
    let on_fine = |coeffs: &DVector<Complex64>| -> DVector<Complex64> {
        match &to_fine {
            Some(e) => {
                let mut out = vec![Complex64::new(0.0, 0.0); ctx.fine_mesh.n_dofs()];
                e.matvec_complex(coeffs.as_slice(), &mut out);
                DVector::from_vec(out)
            }
            None => reconstruct(basis_ref, coeffs, ctx.fine_mesh.n_dofs()),
        }
    };
    let to_ref = p1_embedding(&ctx.reference.mesh, ctx.fine_mesh)?;

    let mut series = Vec::with_capacity(plan.series.len());
    for ((t, coeffs, mass, energy), ref_state) in
        observed.snapshots.iter().zip(&ctx.reference.states)
    {
        let fine_state = on_fine(coeffs);
        let mut lifted = vec![Complex64::new(0.0, 0.0); ctx.reference.mesh.n_dofs()];
        to_ref.matvec_complex(fine_state.as_slice(), &mut lifted);
        let (rel_l2, rel_h1) = relative_errors(&lifted, ref_state.as_slice(), ctx.ref_stiffness, ctx.ref_mass)?;
        series.push(SeriesPoint {
            t: *t,
            rel_l2,
            rel_h1,
            mass: *mass,
            energy: *energy,
        });
    }

    let final_fine = on_fine(&observed.final_state.coeffs);
    let profile_density = position_density(final_fine.as_slice());
    let profile_energy = energy_density(final_fine.as_slice(), ctx.fine_mesh, spec, t_end)?;

    Ok(CellReport {
        method,
        coarse_n,
        level,
        basis_dim,
        fallback_count: fallback,
        selected_times: selected,
        kept_counts: kept,
        offline_s,
        online_s,
        max_mass_drift: observed.max_mass_drift,
        trace: observed.trace,
        series,
        profile_density,
        profile_energy,
    })
}

/// Formats a computed value for CSV: full double precision, fixed layout.
fn sci(v: f64) -> String {
    format!("{v:.12e}")
}

fn write_lines(path: &Path, lines: &[String]) -> anyhow::Result<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))
}

pub fn run_experiment(plan: &Plan, opts: &RunOptions) -> anyhow::Result<RunOutcome> {
    let config = &plan.config;
    let spec = &plan.spec;
    std::fs::create_dir_all(&config.output)?;

    let fine_mesh = Arc::new(Mesh::uniform_periodic(spec.dim, config.fine)?);
    let ops = FineOperators::assemble(&fine_mesh, spec)?;
    let psi0_fine = project_function(&fine_mesh, gaussian_packet(spec.dim, DEFAULT_SIGMA))?;

    log::info!("computing the reference trajectory");
    let reference = compute_reference(plan, &ops, &fine_mesh, opts)?;
    let ref_stiffness = assemble_stiffness(&reference.trajectory.mesh);
    let ref_mass = assemble_mass(&reference.trajectory.mesh);

    let ctx = CellContext {
        plan,
        ops: &ops,
        fine_mesh: &fine_mesh,
        psi0_fine: &psi0_fine,
        reference: &reference.trajectory,
        ref_stiffness: &ref_stiffness,
        ref_mass: &ref_mass,
    };

    let cells: Vec<(Method, usize, usize)> = config
        .methods
        .iter()
        .flat_map(|&m| {
            config
                .coarse
                .iter()
                .zip(&plan.levels)
                .map(move |(&nc, &level)| (m, nc, level))
        })
        .collect();

    let workers = opts.workers.or(config.workers).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    log::info!("running {} cells", cells.len());
    let results: Vec<Result<CellReport, (Method, usize, String)>> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|&(m, nc, level)| {
                run_cell(&ctx, m, nc, level).map_err(|e| (m, nc, e.to_string()))
            })
            .collect()
    });

    let example = spec.label.as_str();
    let mut vs_h = vec!["method,example,epsilon,H,l_star,dt,t,rel_L2,rel_H1,mass,energy".to_string()];
    let mut vs_t = vec![vs_h[0].clone()];
    let mut trace_csv = vec!["method,H,t,mass,energy".to_string()];
    let mut profiles = vec!["method,H,x,y,density,energy_density".to_string()];
    let mut cell_manifest = Vec::new();
    let mut failures = Vec::new();

    for result in &results {
        let cell = match result {
            Ok(c) => c,
            Err((m, nc, e)) => {
                failures.push(format!("{} at 1/{nc}: {e}", m.tag()));
                cell_manifest.push(json!({
                    "method": m.tag(),
                    "coarse_n": nc,
                    "error": e,
                }));
                continue;
            }
        };
        let h = 1.0 / cell.coarse_n as f64;
        let prefix = |t: f64| {
            format!(
                "{},{},{},{},{},{},{}",
                cell.method.tag(),
                example,
                spec.epsilon,
                h,
                if cell.method == Method::Fem { 0 } else { cell.level },
                config.dt,
                t
            )
        };
        for p in &cell.series {
            let line = format!(
                "{},{},{},{},{}",
                prefix(p.t),
                sci(p.rel_l2),
                sci(p.rel_h1),
                sci(p.mass),
                sci(p.energy)
            );
            vs_t.push(line.clone());
            if p.t == config.t_end {
                vs_h.push(line);
            }
        }
        for &(t, mass, energy) in &cell.trace {
            trace_csv.push(format!(
                "{},{},{},{},{}",
                cell.method.tag(),
                h,
                t,
                sci(mass),
                sci(energy)
            ));
        }
        for v in 0..fine_mesh.n_dofs() {
            let p = fine_mesh.vertex_coord(v);
            profiles.push(format!(
                "{},{},{},{},{},{}",
                cell.method.tag(),
                h,
                p[0],
                p[1],
                sci(cell.profile_density[v]),
                sci(cell.profile_energy[v])
            ));
        }
        let last = cell.series.last();
        cell_manifest.push(json!({
            "method": cell.method.tag(),
            "coarse_n": cell.coarse_n,
            "H": h,
            "l_star": cell.level,
            "basis_dim": cell.basis_dim,
            "fallback_count": cell.fallback_count,
            "selected_times": cell.selected_times,
            "kept_counts": cell.kept_counts,
            "offline_s": cell.offline_s,
            "online_s": cell.online_s,
            "max_mass_drift": cell.max_mass_drift,
            "final_rel_l2": last.map(|p| p.rel_l2),
            "final_rel_h1": last.map(|p| p.rel_h1),
        }));
    }

    // Reference profile rows close the file: same columns, tagged by name.
    {
        let traj = &reference.trajectory;
        let h_ref = match &config.reference {
            ReferenceConfig::Fine { n, .. } => 1.0 / *n as f64,
            ReferenceConfig::Enmsfem { coarse } => 1.0 / *coarse as f64,
        };
        let state = traj.states.last().expect("series is never empty");
        let density = position_density(state.as_slice());
        let energy = energy_density(state.as_slice(), &traj.mesh, spec, config.t_end)?;
        for v in 0..traj.mesh.n_dofs() {
            let p = traj.mesh.vertex_coord(v);
            profiles.push(format!(
                "reference,{},{},{},{},{}",
                h_ref,
                p[0],
                p[1],
                sci(density[v]),
                sci(energy[v])
            ));
        }
    }

    let out = &config.output;
    write_lines(&out.join("error_vs_H.csv"), &vs_h)?;
    write_lines(&out.join("error_vs_time.csv"), &vs_t)?;
    write_lines(&out.join("mass_energy.csv"), &trace_csv)?;
    write_lines(&out.join("density_profiles.csv"), &profiles)?;

    let manifest = json!({
        "package_version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(config)?,
        "normalized": {
            "series_times": plan.series,
            "levels": plan.levels,
            "warnings": plan.warnings,
        },
        "potential": {
            "label": spec.label,
            "dim": spec.dim,
            "epsilon": spec.epsilon,
            "drive_period": spec.drive_period,
            "v0_estimate": spec.v0_estimate(),
        },
        "reference": {
            "config": serde_json::to_value(&config.reference)?,
            "wall_s": reference.wall_s,
            "from_cache": reference.trajectory.from_cache,
            "cache_key": reference.cache_key,
            "max_mass_drift": reference.max_mass_drift,
            "basis_dim": reference.basis_dim,
            "n_dofs": reference.trajectory.mesh.n_dofs(),
        },
        "cells": cell_manifest,
        "failures": failures,
        "outputs": ["error_vs_H.csv", "error_vs_time.csv", "mass_energy.csv", "density_profiles.csv"],
    });
    let manifest_path = out.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;

    Ok(RunOutcome {
        manifest_path,
        failures,
    })
}
