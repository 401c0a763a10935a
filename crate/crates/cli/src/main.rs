use clap::{Parser, Subcommand};
use msfem_cli::config::{self, Method, ReferenceConfig};
use msfem_cli::runner::{run_experiment, RunOptions};
use msfem_cli::resolve_cache_dir;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "msfem", version, about = "Multiscale Schrödinger experiment driver")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment config end to end.
    Run {
        config: PathBuf,
        /// Accept configs marked paper_scale (hours of compute).
        #[arg(long)]
        allow_paper_scale: bool,
        /// Worker threads for the method cells (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Reference cache directory (default: $MSFEM_CACHE_DIR, then <output>/cache).
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Check a config: errors, defaults, and mesh-resolution ratios.
    Validate { config: PathBuf },
    /// Offline stage only: build the bases and serialize them.
    Basis {
        config: PathBuf,
        #[arg(long)]
        allow_paper_scale: bool,
        /// Where the basis containers go (default: <output>/bases).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Warm the reference cache for a config.
    Reference {
        config: PathBuf,
        #[arg(long)]
        allow_paper_scale: bool,
        /// Also run the doubled-resolution self-convergence check and stamp
        /// the margin into the cache file.
        #[arg(long)]
        check: bool,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
}

fn load_plan(path: &PathBuf, allow_paper_scale: bool) -> anyhow::Result<config::Plan> {
    let cfg = config::load(path)?;
    if cfg.paper_scale && !allow_paper_scale {
        anyhow::bail!(
            "{} is marked paper_scale (reference meshes near 1e5 dofs, ~1e6 \
             steps); pass --allow-paper-scale to run it anyway",
            path.display()
        );
    }
    match config::validate(&cfg) {
        Ok(plan) => Ok(plan),
        Err(errors) => {
            for e in &errors {
                eprintln!("error: {e}");
            }
            anyhow::bail!("{} problem(s) in {}", errors.len(), path.display());
        }
    }
}

fn cmd_run(
    path: PathBuf,
    allow_paper_scale: bool,
    workers: Option<usize>,
    cache_dir: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    let plan = load_plan(&path, allow_paper_scale)?;
    for w in &plan.warnings {
        eprintln!("note: {w}");
    }
    let opts = RunOptions {
        cache_dir: Some(resolve_cache_dir(cache_dir, &plan.config.output)),
        workers,
    };
    let outcome = run_experiment(&plan, &opts)?;
    println!("artifacts in {}", plan.config.output.display());
    if outcome.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &outcome.failures {
            eprintln!("failed cell: {f}");
        }
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_validate(path: PathBuf) -> anyhow::Result<ExitCode> {
    let cfg = config::load(&path)?;
    match config::validate(&cfg) {
        Ok(plan) => {
            println!("{} is valid", path.display());
            println!(
                "  potential {} ({}D, eps = {})",
                plan.spec.label, plan.spec.dim, plan.spec.epsilon
            );
            println!(
                "  methods {:?} on coarse meshes {:?} (l* = {:?})",
                plan.config.methods.iter().map(|m| m.tag()).collect::<Vec<_>>(),
                plan.config.coarse,
                plan.levels
            );
            println!("  {} error-series times, dt = {}", plan.series.len(), plan.config.dt);
            for w in &plan.warnings {
                println!("  note: {w}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(errors) => {
            for e in &errors {
                eprintln!("error: {e}");
            }
            Ok(ExitCode::FAILURE)
        }
    }
}

fn cmd_basis(path: PathBuf, allow_paper_scale: bool, out: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    use msfem::basis::{build_basis, BuildOptions, Localization};
    use msfem::fem::FineOperators;
    use msfem::mesh::Mesh;
    use std::sync::Arc;

    let plan = load_plan(&path, allow_paper_scale)?;
    let out_dir = out.unwrap_or_else(|| plan.config.output.join("bases"));
    std::fs::create_dir_all(&out_dir)?;
    let fine_mesh = Arc::new(Mesh::uniform_periodic(plan.spec.dim, plan.config.fine)?);
    let ops = FineOperators::assemble(&fine_mesh, &plan.spec)?;
    let wants_enrichment = plan.config.methods.contains(&Method::Enmsfem);
    for (&nc, &level) in plan.config.coarse.iter().zip(&plan.levels) {
        let coarse = Mesh::uniform_periodic(plan.spec.dim, nc)?;
        let clock = std::time::Instant::now();
        if wants_enrichment {
            let space = msfem_cli::runner::build_enriched_space(&plan, &ops, &coarse, level)?;
            let base_path = out_dir.join(format!("basis_1over{nc}.wavebox"));
            space.base.save(&base_path)?;
            let block_path = out_dir.join(format!("enrichment_1over{nc}.wavebox"));
            msfem_cli::runner::save_blocks(&space, &block_path)?;
            println!(
                "1/{nc}: {} base + {} enriched columns in {:.2}s -> {}",
                space.base.columns.len(),
                space.dimension() - space.base.columns.len(),
                clock.elapsed().as_secs_f64(),
                out_dir.display()
            );
        } else {
            let opts = BuildOptions {
                localization: Localization::Patch { level },
                ..BuildOptions::default()
            };
            let basis = build_basis(&ops, &coarse, 0.0, &opts)?;
            let base_path = out_dir.join(format!("basis_1over{nc}.wavebox"));
            basis.save(&base_path)?;
            println!(
                "1/{nc}: {} columns in {:.2}s -> {}",
                basis.columns.len(),
                clock.elapsed().as_secs_f64(),
                base_path.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_reference(
    path: PathBuf,
    allow_paper_scale: bool,
    check: bool,
    cache_dir: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    use msfem::potential::{gaussian_packet, DEFAULT_SIGMA};
    use msfem::reference::{annotate_margin, cache_key, cache_path, self_convergence_margin, solve_reference, RunGrid};

    let plan = load_plan(&path, allow_paper_scale)?;
    let ReferenceConfig::Fine { n, dt } = plan.config.reference else {
        println!("reference kind is enmsfem: computed within each run, nothing to cache");
        return Ok(ExitCode::SUCCESS);
    };
    let dir = resolve_cache_dir(cache_dir, &plan.config.output);
    let init = gaussian_packet(plan.spec.dim, DEFAULT_SIGMA);
    let grid = RunGrid {
        n,
        dt,
        t_end: plan.config.t_end,
        times: plan.series.clone(),
    };
    let key = cache_key(&plan.spec, &init, &grid);
    let clock = std::time::Instant::now();
    let traj = solve_reference(&plan.spec, &init, &grid, Some(&dir))?;
    println!(
        "reference {} ({} dofs, {} states) in {:.2}s, from_cache = {}",
        key,
        traj.mesh.n_dofs(),
        traj.states.len(),
        clock.elapsed().as_secs_f64(),
        traj.from_cache
    );
    if check {
        let clock = std::time::Instant::now();
        let (l2, h1) = self_convergence_margin(&plan.spec, &init, &grid)?;
        annotate_margin(&cache_path(&dir, &key), l2, h1)?;
        println!(
            "self-convergence vs doubled grid: rel_L2 = {l2:.3e}, rel_H1 = {h1:.3e} ({:.2}s)",
            clock.elapsed().as_secs_f64()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match Cli::parse().cmd {
        Cmd::Run {
            config,
            allow_paper_scale,
            workers,
            cache_dir,
        } => cmd_run(config, allow_paper_scale, workers, cache_dir),
        Cmd::Validate { config } => cmd_validate(config),
        Cmd::Basis {
            config,
            allow_paper_scale,
            out,
        } => cmd_basis(config, allow_paper_scale, out),
        Cmd::Reference {
            config,
            allow_paper_scale,
            check,
            cache_dir,
        } => cmd_reference(config, allow_paper_scale, check, cache_dir),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
