//! Experiment configuration: TOML schema, validation, and normalization.
//!
//! A config names a potential (catalog id or inline expressions), the meshes
//! and time grid, the method set, and the reference run.  [`validate`] turns
//! one into a [`Plan`] — the fully resolved inputs the runner executes —
//! aggregating every problem it finds instead of stopping at the first, so a
//! user fixes a bad file in one round trip.

use msfem::fem::ScalarField;
use msfem::potential::{catalog, CatalogOverrides, DriveTerm, PotentialSpec, TimeFactor};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fem,
    Msfem,
    Enmsfem,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Fem => "fem",
            Method::Msfem => "msfem",
            Method::Enmsfem => "enmsfem",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnrichMode {
    None,
    OneStep,
    Greedy,
}

/// How the enriched space is grown; defaults mirror the 1D experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnrichmentConfig {
    pub mode: EnrichMode,
    pub keep_fraction: f64,
    /// Greedy stop threshold; `None` falls back to a tenth of the drive peak.
    pub delta: Option<f64>,
    /// Candidate instances per drive period (plus the initial one).
    pub snapshots: usize,
    pub drop_tol: f64,
}

impl Default for EnrichmentConfig {
    fn default() -> Self {
        EnrichmentConfig {
            mode: EnrichMode::OneStep,
            keep_fraction: 0.125,
            delta: None,
            snapshots: 64,
            drop_tol: 1e-8,
        }
    }
}

/// What the errors are measured against.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase", tag = "kind")]
pub enum ReferenceConfig {
    /// Fully resolved run on its own fine mesh (cached on disk).
    Fine { n: usize, dt: f64 },
    /// Enriched method on the shared fine mesh at a finer coarse resolution —
    /// the 2D fallback where a resolved fine reference is out of reach.
    Enmsfem { coarse: usize },
}

/// One drive term as inline math expressions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveExpr {
    /// Expression in `x` (and `y` in 2D), e.g. `"20*x"`.
    pub spatial: String,
    /// Expression in `t`, e.g. `"sin(2*pi*t)"`.
    pub factor: String,
}

/// An inline potential for runs outside the catalog.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomPotential {
    pub dim: usize,
    pub epsilon: f64,
    pub drive_period: f64,
    /// Static part, an expression in `x` (and `y` in 2D).
    pub v1: String,
    #[serde(default)]
    pub v2: Vec<DriveExpr>,
}

/// One experiment file, as deserialized from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Catalog id (`ex1`..`ex4`); exclusive with `custom`.
    pub example: Option<String>,
    pub custom: Option<CustomPotential>,
    /// Override the catalog's semiclassical parameter.
    pub epsilon: Option<f64>,
    /// Override the catalog's drive amplitude.
    pub e0: Option<f64>,
    pub output: PathBuf,
    /// Coarse resolutions (vertices per side), one run per entry.
    pub coarse: Vec<usize>,
    /// Fine resolution shared by basis construction and reconstruction.
    pub fine: usize,
    /// Localization level; default is `ceil(log2(coarse))` per mesh.
    pub l_star: Option<usize>,
    pub dt: f64,
    pub t_end: f64,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub enrichment: EnrichmentConfig,
    /// Times for the error series; default is nine evenly spaced in `[0, T]`.
    #[serde(default)]
    pub series_times: Vec<f64>,
    /// Mass/energy trace row every this many steps.
    #[serde(default = "one")]
    pub trace_stride: usize,
    pub reference: ReferenceConfig,
    /// Reserved: every algorithm in this pipeline is deterministic.
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    /// Marks configs too heavy for casual runs; requires --allow-paper-scale.
    #[serde(default)]
    pub paper_scale: bool,
}

fn one() -> usize {
    1
}

/// A validated, fully resolved experiment: what the runner consumes.
#[derive(Debug)]
pub struct Plan {
    pub config: ExperimentConfig,
    pub spec: PotentialSpec,
    /// Localization level per `coarse` entry.
    pub levels: Vec<usize>,
    /// Normalized error-series times: ascending, deduplicated, ending at T.
    pub series: Vec<f64>,
    pub warnings: Vec<String>,
}

pub fn load(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

/// Parses a math expression over `x`, `y`, `t` and probes it once, so typos
/// and unknown variables surface at config time, not mid-assembly.
///
/// The parsed AST is thread-safe (unlike meval's bound closures), so the
/// evaluation builds a fresh variable context per call; these expressions
/// only run during offline assembly, where that overhead is noise.
fn compile(expr: &str, what: &str) -> Result<impl Fn(f64, f64, f64) -> f64 + Clone, String> {
    let parsed: meval::Expr = expr
        .parse()
        .map_err(|e| format!("{what}: cannot parse {expr:?}: {e}"))?;
    let eval = move |x: f64, y: f64, t: f64| {
        let mut ctx = meval::Context::new();
        ctx.var("x", x).var("y", y).var("t", t);
        parsed.eval_with_context(&ctx).unwrap_or(f64::NAN)
    };
    let probe = eval(0.37, 0.61, 0.29);
    if !probe.is_finite() {
        return Err(format!(
            "{what}: {expr:?} does not evaluate over x, y, t (check variable names)"
        ));
    }
    Ok(eval)
}

fn build_custom(custom: &CustomPotential) -> Result<PotentialSpec, Vec<String>> {
    let mut errors = Vec::new();
    if !(custom.dim == 1 || custom.dim == 2) {
        errors.push(format!("custom potential: dim must be 1 or 2, got {}", custom.dim));
    }
    if !(custom.epsilon > 0.0) {
        errors.push(format!("custom potential: epsilon must be positive, got {}", custom.epsilon));
    }
    if !(custom.drive_period > 0.0) {
        errors.push(format!(
            "custom potential: drive_period must be positive, got {}",
            custom.drive_period
        ));
    }
    let v1 = compile(&custom.v1, "v1").map_err(|e| vec![e]);
    let mut terms = Vec::new();
    for (i, term) in custom.v2.iter().enumerate() {
        let spatial = compile(&term.spatial, "v2 spatial");
        let factor = compile(&term.factor, "v2 factor");
        match (spatial, factor) {
            (Ok(s), Ok(f)) => terms.push(DriveTerm {
                spatial: ScalarField::new(move |x, y| s(x, y, 0.0)),
                factor: TimeFactor::new(move |t| f(0.0, 0.0, t)),
            }),
            (s, f) => {
                errors.extend(s.err().map(|e| format!("v2[{i}] {e}")));
                errors.extend(f.err().map(|e| format!("v2[{i}] {e}")));
            }
        }
    }
    let v1 = match v1 {
        Ok(f) => f,
        Err(e) => {
            errors.extend(e);
            return Err(errors);
        }
    };
    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(PotentialSpec {
        label: "custom".into(),
        dim: custom.dim,
        epsilon: custom.epsilon,
        v1: ScalarField::new(move |x, y| v1(x, y, 0.0)),
        terms,
        drive_period: custom.drive_period,
    })
}

fn on_grid(t: f64, dt: f64) -> bool {
    let ratio = t / dt;
    (ratio - ratio.round()).abs() <= 1e-9
}

/// Checks and normalizes a config; every problem found is reported at once.
pub fn validate(config: &ExperimentConfig) -> Result<Plan, Vec<String>> {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();

    let spec = match (&config.example, &config.custom) {
        (Some(_), Some(_)) => {
            errors.push("give either `example` or `custom`, not both".into());
            None
        }
        (None, None) => {
            errors.push("one of `example` or `custom` is required".into());
            None
        }
        (Some(id), None) => {
            let overrides = CatalogOverrides {
                epsilon: config.epsilon,
                e0: config.e0,
                ..CatalogOverrides::default()
            };
            match catalog(id, &overrides) {
                Ok(spec) => Some(spec),
                Err(e) => {
                    errors.push(e.to_string());
                    None
                }
            }
        }
        (None, Some(custom)) => {
            if config.epsilon.is_some() || config.e0.is_some() {
                errors.push("epsilon/e0 overrides apply to catalog examples only".into());
            }
            match build_custom(custom) {
                Ok(spec) => Some(spec),
                Err(list) => {
                    errors.extend(list);
                    None
                }
            }
        }
    };

    if config.methods.is_empty() {
        errors.push("methods must not be empty".into());
    }
    for (i, m) in config.methods.iter().enumerate() {
        if config.methods[..i].contains(m) {
            errors.push(format!("method {:?} listed twice", m.tag()));
        }
    }
    if config.coarse.is_empty() {
        errors.push("coarse mesh list must not be empty".into());
    }
    for &nc in &config.coarse {
        if nc < 2 {
            errors.push(format!("coarse resolution {nc} is too small"));
        } else if config.fine % nc != 0 {
            errors.push(format!(
                "fine mesh {} does not refine coarse mesh {nc}",
                config.fine
            ));
        }
    }
    if !(config.dt > 0.0) {
        errors.push(format!("dt must be positive, got {}", config.dt));
    }
    if !(config.t_end > 0.0) {
        errors.push(format!("t_end must be positive, got {}", config.t_end));
    }
    if config.dt > 0.0 && config.t_end > 0.0 && !on_grid(config.t_end, config.dt) {
        errors.push(format!(
            "dt = {} does not divide t_end = {}",
            config.dt, config.t_end
        ));
    }
    if config.trace_stride == 0 {
        errors.push("trace_stride must be at least 1".into());
    }

    let e = &config.enrichment;
    if config.methods.contains(&Method::Enmsfem) || matches!(config.reference, ReferenceConfig::Enmsfem { .. }) {
        if !(e.keep_fraction > 0.0 && e.keep_fraction <= 1.0) {
            errors.push(format!(
                "enrichment.keep_fraction must lie in (0, 1], got {}",
                e.keep_fraction
            ));
        }
        if e.snapshots == 0 {
            errors.push("enrichment.snapshots must be at least 1".into());
        }
        if let Some(d) = e.delta {
            if !(d > 0.0) {
                errors.push(format!("enrichment.delta must be positive, got {d}"));
            }
        }
    }

    match &config.reference {
        ReferenceConfig::Fine { n, dt } => {
            if n % config.fine != 0 {
                errors.push(format!(
                    "reference mesh {n} does not refine the fine mesh {}",
                    config.fine
                ));
            }
            for &nc in &config.coarse {
                if nc >= 2 && n % nc != 0 {
                    errors.push(format!("reference mesh {n} does not refine coarse mesh {nc}"));
                }
            }
            if !(*dt > 0.0) {
                errors.push(format!("reference dt must be positive, got {dt}"));
            } else if !on_grid(config.t_end, *dt) {
                errors.push(format!(
                    "reference dt = {dt} does not divide t_end = {}",
                    config.t_end
                ));
            }
        }
        ReferenceConfig::Enmsfem { coarse } => {
            if config.fine % coarse != 0 {
                errors.push(format!(
                    "fine mesh {} does not refine the reference coarse mesh {coarse}",
                    config.fine
                ));
            }
            if let Some(&max) = config.coarse.iter().max() {
                if *coarse <= max {
                    warnings.push(format!(
                        "reference coarse mesh {coarse} is no finer than the \
                         method meshes (max {max}); errors will flatten out"
                    ));
                }
            }
        }
    }

    // Normalize the error series: ascending, unique, final time present.
    let mut series = if config.series_times.is_empty() {
        (0..=8).map(|k| k as f64 * config.t_end / 8.0).collect()
    } else {
        config.series_times.clone()
    };
    series.sort_by(|a, b| a.partial_cmp(b).expect("series times must be comparable"));
    series.dedup();
    if series.last() != Some(&config.t_end) {
        series.push(config.t_end);
    }
    for &t in &series {
        if !(0.0..=config.t_end).contains(&t) {
            errors.push(format!("series time {t} lies outside [0, {}]", config.t_end));
        } else if !on_grid(t, config.dt) {
            errors.push(format!("series time {t} is off the dt = {} grid", config.dt));
        } else if let ReferenceConfig::Fine { dt, .. } = &config.reference {
            if *dt > 0.0 && !on_grid(t, *dt) {
                errors.push(format!("series time {t} is off the reference dt = {dt} grid"));
            }
        }
    }

    let levels: Vec<usize> = config
        .coarse
        .iter()
        .map(|&nc| {
            config
                .l_star
                .unwrap_or_else(|| (nc.max(2) as f64).log2().ceil() as usize)
        })
        .collect();

    if let Some(spec) = &spec {
        if spec.dim == 2 && config.fine > 192 {
            warnings.push(format!(
                "2D fine mesh {0}x{0} means dense bases of {1} entries per \
                 column; expect long offline times",
                config.fine,
                config.fine * config.fine
            ));
        }
        // Resolution report: sqrt(V0) H / eps per coarse mesh, the scale
        // separation the basis construction relies on.
        let v0 = spec.v0_estimate();
        for &nc in &config.coarse {
            if nc < 2 {
                continue;
            }
            let ratio = v0.sqrt() / (nc as f64 * spec.epsilon);
            if ratio > 4.0 {
                warnings.push(format!(
                    "coarse mesh 1/{nc}: sqrt(V0) H / eps = {ratio:.2} > 4; \
                     the basis may not resolve the potential well"
                ));
            } else {
                warnings.push(format!("coarse mesh 1/{nc}: sqrt(V0) H / eps = {ratio:.2}"));
            }
        }
    }

    let spec = match spec {
        Some(s) if errors.is_empty() => s,
        _ => return Err(errors),
    };
    Ok(Plan {
        config: config.clone(),
        spec,
        levels,
        series,
        warnings,
    })
}
