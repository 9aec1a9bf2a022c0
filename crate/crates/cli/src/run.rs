//! Subcommand orchestration and artifact emission.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use sbridge_core::bridge::{
    half_bridge_fit, marginal_diagnostics, solve_bridge, BridgeProblem, BridgeSolution,
};
use sbridge_core::flow::{
    importance_estimate, integrate_flow, interpolate_density, CrnMode, Direction, FlowField,
    ImportanceConfig,
};
use sbridge_core::fortet::{fortet_solve, oracle_interpolation, GridField};
use sbridge_core::kernels::PriorKernel;
use sbridge_core::models::PositiveModel;
use sbridge_core::reference::{fit_gaussian, fit_kde, truncate, ReferenceDensity, SupportBounds};
use sbridge_core::rng::SeedFan;
use sbridge_core::SampleSet;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, RunConfig};
use crate::io::{ingest_samples, write_csv, IngestedSamples};

/// What the process should report: exit 0 when converged, 2 when the run
/// completed without reaching its convergence criterion.
pub struct RunOutcome {
    pub converged: bool,
}

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    seed: u64,
    version: &'static str,
    converged: bool,
    warnings: Vec<String>,
    skipped_rows: BTreeMap<String, usize>,
    /// Stage wall times in seconds (informational; not a numeric artifact).
    timings: BTreeMap<String, f64>,
    /// Echo of the full configuration: every tunable that affects numbers.
    config: &'a RunConfig,
}

/// Everything needed to re-instantiate the fitted factors elsewhere.
#[derive(Serialize, Deserialize)]
pub struct SolutionDoc {
    pub seed: u64,
    pub gamma: f64,
    pub converged: bool,
    /// `φ̂₀(·, β̂)`.
    pub model0: PositiveModel,
    /// `φ₁(·, β)`.
    pub model1: PositiveModel,
    pub warnings: Vec<String>,
    pub history: Vec<HistoryRow>,
}

#[derive(Serialize, Deserialize)]
pub struct HistoryRow {
    pub objective_beta_hat: f64,
    pub objective_beta: f64,
    pub delta: f64,
    pub constraint_estimate: f64,
}

struct Stage {
    timings: BTreeMap<String, f64>,
}

impl Stage {
    fn new() -> Self {
        Self {
            timings: BTreeMap::new(),
        }
    }

    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.timings.insert(name.to_string(), start.elapsed().as_secs_f64());
        out
    }
}

pub fn run(subcommand: &str, config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    config.validate(subcommand)?;
    let seed = config.seed.expect("validated");
    let fan = SeedFan::new(seed);
    let mut stage = Stage::new();
    let mut skipped = BTreeMap::new();
    let mut warnings = Vec::new();

    // Compute everything before writing anything: an error must not leave
    // partial artifacts behind.
    let mut artifacts: Vec<(PathBuf, Artifact)> = Vec::new();
    let converged = match subcommand {
        "halfbridge" => run_halfbridge(config, &fan, &mut stage, &mut skipped, &mut artifacts)?,
        "solve" => run_solve(
            config,
            &fan,
            &mut stage,
            &mut skipped,
            &mut warnings,
            &mut artifacts,
        )?,
        "interpolate" => run_interpolate(config, &fan, &mut stage, &mut artifacts)?,
        "importance" => run_importance(config, &fan, &mut stage, &mut skipped, &mut artifacts)?,
        "fortet-grid" => run_fortet(config, &mut stage, &mut warnings, &mut artifacts)?,
        other => bail!("unknown subcommand `{other}`"),
    };

    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;
    for (name, artifact) in artifacts {
        let path = out_dir.join(name);
        match artifact {
            Artifact::Toml(text) => std::fs::write(&path, text)
                .with_context(|| format!("cannot write {}", path.display()))?,
            Artifact::Csv { header, rows } => {
                let header: Vec<&str> = header.iter().map(|h| h.as_str()).collect();
                write_csv(&path, &header, rows.into_iter())?;
            }
        }
    }
    let manifest = Manifest {
        subcommand,
        seed,
        version: env!("CARGO_PKG_VERSION"),
        converged,
        warnings,
        skipped_rows: skipped,
        timings: stage.timings,
        config,
    };
    std::fs::write(
        out_dir.join("manifest.toml"),
        toml::to_string_pretty(&manifest)?,
    )?;
    Ok(RunOutcome { converged })
}

enum Artifact {
    Toml(String),
    Csv {
        header: Vec<String>,
        rows: Vec<Vec<f64>>,
    },
}

fn build_model(
    config: &Option<ModelConfig>,
    name: &str,
    dim: usize,
    standardize_to: &SampleSet,
) -> Result<PositiveModel> {
    let cfg = config
        .as_ref()
        .ok_or_else(|| anyhow!("{name}: block required"))?;
    let mut model = cfg.build(name, dim)?;
    if cfg.standardize.unwrap_or(false) {
        let basis = model
            .basis
            .clone()
            .standardized_from(standardize_to)
            .map_err(|e| anyhow!("{name}: {e}"))?;
        model = PositiveModel::new(model.parameterization, basis);
    }
    Ok(model)
}

fn build_reference(
    config: &RunConfig,
    samples: &SampleSet,
    fan: &SeedFan,
) -> Result<ReferenceDensity> {
    let (kind, bandwidth, bounds) = match &config.reference {
        Some(r) => (
            r.kind.as_deref().unwrap_or("kde"),
            r.bandwidth()?,
            match (&r.lower, &r.upper) {
                (Some(lower), Some(upper)) => Some(SupportBounds {
                    lower: lower.clone(),
                    upper: upper.clone(),
                }),
                (None, None) => None,
                _ => bail!("reference: lower and upper must be given together"),
            },
        ),
        None => (
            "kde",
            sbridge_core::reference::Bandwidth::Silverman,
            None,
        ),
    };
    let reference = match kind {
        "kde" => fit_kde(samples, bandwidth)?,
        "gaussian" => fit_gaussian(samples)?,
        other => bail!("reference.kind: unknown `{other}`"),
    };
    Ok(match bounds {
        Some(b) => truncate(&reference, b, 10_000, &mut fan.stream("reference-truncation"))?,
        None => reference,
    })
}

fn prior_gamma(config: &RunConfig) -> Result<f64> {
    Ok(config
        .prior
        .as_ref()
        .ok_or_else(|| anyhow!("prior: block required"))?
        .gamma)
}

fn history_rows(solution: &BridgeSolution) -> Vec<HistoryRow> {
    solution
        .history
        .iter()
        .map(|h| HistoryRow {
            objective_beta_hat: h.objective_beta_hat,
            objective_beta: h.objective_beta,
            delta: h.delta,
            constraint_estimate: h.constraint_estimate,
        })
        .collect()
}

fn run_halfbridge(
    config: &RunConfig,
    fan: &SeedFan,
    stage: &mut Stage,
    skipped: &mut BTreeMap<String, usize>,
    artifacts: &mut Vec<(PathBuf, Artifact)>,
) -> Result<bool> {
    let hb = config.halfbridge.as_ref().expect("validated");
    let ingested = ingest_samples(config.io.samples1.as_ref().expect("validated"))?;
    skipped.insert("samples1".into(), ingested.skipped);
    let samples1 = ingested.samples;
    let phihat1 = hb.phihat1.build("halfbridge.phihat1")?;
    let reference = build_reference(config, &samples1, fan)?;
    let template = build_model(&config.model1, "model1", samples1.dim(), &samples1)?;
    let fitted = stage.time("fit", || {
        half_bridge_fit(
            &samples1,
            &|y: &[f64]| phihat1.density(y),
            &reference,
            &template,
            hb.n_tilde,
            &config.fit_settings(),
            &mut fan.stream("halfbridge"),
        )
        .map_err(|e| anyhow!(e))
    })?;
    #[derive(Serialize)]
    struct HalfBridgeDoc {
        seed: u64,
        n_tilde: usize,
        model1: PositiveModel,
    }
    let doc = HalfBridgeDoc {
        seed: fan.root(),
        n_tilde: hb.n_tilde,
        model1: fitted,
    };
    artifacts.push((
        "halfbridge.toml".into(),
        Artifact::Toml(toml::to_string_pretty(&doc)?),
    ));
    Ok(true)
}

fn run_solve(
    config: &RunConfig,
    fan: &SeedFan,
    stage: &mut Stage,
    skipped: &mut BTreeMap<String, usize>,
    warnings: &mut Vec<String>,
    artifacts: &mut Vec<(PathBuf, Artifact)>,
) -> Result<bool> {
    let gamma = prior_gamma(config)?;
    let in0 = ingest_samples(config.io.samples0.as_ref().expect("validated"))?;
    let in1 = ingest_samples(config.io.samples1.as_ref().expect("validated"))?;
    skipped.insert("samples0".into(), in0.skipped);
    skipped.insert("samples1".into(), in1.skipped);
    let IngestedSamples {
        samples: samples0,
        columns,
        ..
    } = in0;
    let samples1 = in1.samples;
    let reference = build_reference(config, &samples0, fan)?;
    let model0 = build_model(&config.model0, "model0", samples0.dim(), &samples0)?;
    let model1 = build_model(&config.model1, "model1", samples1.dim(), &samples1)?;
    let mut problem = BridgeProblem::new(
        samples0,
        samples1,
        PriorKernel::brownian(gamma)?,
        model0,
        model1,
        reference,
    )?;
    if let Some(s) = &config.solver {
        if let Some(v) = s.m_tilde {
            problem.m_tilde = v;
        }
        if let Some(v) = s.n_hat {
            problem.n_hat = v;
        }
    }
    let settings = config.solve_settings();
    let solution = stage.time("solve", || {
        solve_bridge(&problem, &settings, &mut fan.stream("solve")).map_err(|e| anyhow!(e))
    })?;
    warnings.extend(solution.warnings.iter().cloned());

    let doc = SolutionDoc {
        seed: fan.root(),
        gamma,
        converged: solution.converged,
        model0: solution.model0.clone(),
        model1: solution.model1.clone(),
        warnings: solution.warnings.clone(),
        history: history_rows(&solution),
    };
    artifacts.push((
        "solution.toml".into(),
        Artifact::Toml(toml::to_string_pretty(&doc)?),
    ));

    let report = stage.time("diagnostics", || {
        marginal_diagnostics(&solution, &problem, &mut fan.stream("diagnostics"))
            .map_err(|e| anyhow!(e))
    })?;
    #[derive(Serialize)]
    struct DiagnosticsDoc {
        constraint_residual: f64,
        constraint_stderr: f64,
        energy_distance: Option<f64>,
        energy_pvalue: Option<f64>,
        converged: bool,
    }
    let diag = DiagnosticsDoc {
        constraint_residual: report.constraint_residual,
        constraint_stderr: report.constraint_stderr,
        energy_distance: report.energy_distance,
        energy_pvalue: report.energy_pvalue,
        converged: report.converged,
    };
    artifacts.push((
        "diagnostics.toml".into(),
        Artifact::Toml(toml::to_string_pretty(&diag)?),
    ));

    if let Some(interp) = &config.interpolate {
        let field = flow_field_from(config, &solution)?;
        let frames = stage.time("interpolate", || {
            density_frames(&interp.times, &interp.grid.build("interpolate.grid")?, &field, fan)
        })?;
        artifacts.push(("frames.csv".into(), frames));
    }
    if let Some(flow) = &config.flow {
        let field = flow_field_from(config, &solution)?;
        let time_steps = flow.time_steps.unwrap_or(100);
        let starts = &problem.samples0;
        let trajectories = stage.time("flow", || {
            integrate_flow(
                starts,
                Direction::Forward,
                &field,
                time_steps,
                CrnMode::PerTrajectory,
                &mut fan.stream("flow"),
            )
            .map_err(|e| anyhow!(e))
        })?;
        let mut header: Vec<String> = columns.clone();
        header.extend(columns.iter().map(|c| format!("mapped_{c}")));
        let rows = trajectories
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut row = starts.point(i).to_vec();
                row.extend_from_slice(t.mapped());
                row
            })
            .collect();
        artifacts.push(("mapped.csv".into(), Artifact::Csv { header, rows }));
    }
    Ok(solution.converged)
}

fn flow_field_from(config: &RunConfig, solution: &BridgeSolution) -> Result<FlowField> {
    let mc_draws = config
        .flow
        .as_ref()
        .and_then(|f| f.mc_draws)
        .unwrap_or(1000);
    FlowField::from_solution(solution, mc_draws).map_err(|e| anyhow!(e))
}

fn density_frames(
    times: &[f64],
    grid: &sbridge_core::fortet::Grid,
    field: &FlowField,
    fan: &SeedFan,
) -> Result<Artifact> {
    let dim = grid.dim();
    let mut header = vec!["t".to_string()];
    header.extend((0..dim).map(|a| format!("z{a}")));
    header.push("rho".to_string());
    let mut rows = Vec::with_capacity(times.len() * grid.len());
    for (k, &t) in times.iter().enumerate() {
        let mut rng = fan.stream_indexed("frames", k as u64);
        for i in 0..grid.len() {
            let z = grid.point(i);
            let rho = interpolate_density(&z, t, field, &mut rng).map_err(|e| anyhow!(e))?;
            let mut row = vec![t];
            row.extend_from_slice(&z);
            row.push(rho);
            rows.push(row);
        }
    }
    Ok(Artifact::Csv { header, rows })
}

fn run_interpolate(
    config: &RunConfig,
    fan: &SeedFan,
    stage: &mut Stage,
    artifacts: &mut Vec<(PathBuf, Artifact)>,
) -> Result<bool> {
    let interp = config.interpolate.as_ref().expect("validated");
    let path = interp.solution.as_ref().expect("validated");
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read solution document {}", path.display()))?;
    let doc: SolutionDoc = toml::from_str(&text)
        .with_context(|| format!("cannot parse solution document {}", path.display()))?;
    let mc_draws = config
        .flow
        .as_ref()
        .and_then(|f| f.mc_draws)
        .unwrap_or(1000);
    let field = FlowField {
        model0: doc.model0,
        model1: doc.model1,
        gamma: doc.gamma,
        mc_draws,
        eps_abs: 1e-12,
        eps_rel: 1e-8,
    };
    let frames = stage.time("interpolate", || {
        density_frames(&interp.times, &interp.grid.build("interpolate.grid")?, &field, fan)
    })?;
    artifacts.push(("frames.csv".into(), frames));
    Ok(true)
}

fn run_importance(
    config: &RunConfig,
    fan: &SeedFan,
    stage: &mut Stage,
    skipped: &mut BTreeMap<String, usize>,
    artifacts: &mut Vec<(PathBuf, Artifact)>,
) -> Result<bool> {
    let spec = config.importance.as_ref().expect("validated");
    let gamma = prior_gamma(config)?;
    let ingested = ingest_samples(config.io.samples1.as_ref().expect("validated"))?;
    skipped.insert("samples1".into(), ingested.skipped);
    let samples1 = ingested.samples;
    let dim = samples1.dim();
    let integrand = spec.integrand.build("importance.integrand")?;
    let model0 = build_model(&config.model0, "model0", dim, &samples1)?;
    let model1 = build_model(&config.model1, "model1", dim, &samples1)?;
    let importance_config = ImportanceConfig {
        grid: spec.grid.build("importance.grid")?,
        threshold: spec.threshold,
        bridge_samples: spec.bridge_samples.unwrap_or(1000),
        mixture_components: spec.mixture_components.unwrap_or(2),
        draw_count: spec.draw_count.unwrap_or(1000),
        replications: spec.replications.unwrap_or(20),
        solve: config.solve_settings(),
        model0,
        model1,
        gamma,
        mc_draws: config.flow.as_ref().and_then(|f| f.mc_draws).unwrap_or(1000),
        time_steps: config.flow.as_ref().and_then(|f| f.time_steps).unwrap_or(100),
    };
    let report = stage.time("importance", || {
        importance_estimate(
            &|y: &[f64]| integrand.density(y),
            &samples1,
            &importance_config,
            &mut fan.stream("importance"),
        )
        .map_err(|e| anyhow!(e))
    })?;
    // plain Monte Carlo over the data, as the side-by-side comparison
    let mc_terms: Vec<f64> = samples1.iter().map(|y| integrand.density(y)).collect();
    let (mc_mean, mc_sd) = sbridge_core::stats::mean_std(&mc_terms);
    #[derive(Serialize)]
    struct ImportanceDoc {
        seed: u64,
        estimate: f64,
        stderr: f64,
        support_count: usize,
        replications: usize,
        mc_estimate: f64,
        mc_stderr: f64,
        bridge_converged: bool,
    }
    let doc = ImportanceDoc {
        seed: fan.root(),
        estimate: report.estimate,
        stderr: report.stderr,
        support_count: report.support_count,
        replications: report.replicates.len(),
        mc_estimate: mc_mean,
        mc_stderr: mc_sd / (mc_terms.len() as f64).sqrt(),
        bridge_converged: report.solution.converged,
    };
    artifacts.push((
        "importance.toml".into(),
        Artifact::Toml(toml::to_string_pretty(&doc)?),
    ));
    artifacts.push((
        "replicates.csv".into(),
        Artifact::Csv {
            header: vec!["replicate".into(), "estimate".into()],
            rows: report
                .replicates
                .iter()
                .enumerate()
                .map(|(i, &v)| vec![i as f64, v])
                .collect(),
        },
    ));
    Ok(report.solution.converged)
}

fn run_fortet(
    config: &RunConfig,
    stage: &mut Stage,
    warnings: &mut Vec<String>,
    artifacts: &mut Vec<(PathBuf, Artifact)>,
) -> Result<bool> {
    let spec = config.fortet.as_ref().expect("validated");
    let gamma = prior_gamma(config)?;
    let kernel = PriorKernel::brownian(gamma)?;
    let grid = spec.grid.build("fortet.grid")?;
    let rho0_mix = spec.rho0.build("fortet.rho0")?;
    let rho1_mix = spec.rho1.build("fortet.rho1")?;
    // normalize to unit mass on the grid; the truncation factor is reported
    let mut fields = Vec::new();
    for (name, mix) in [("rho0", &rho0_mix), ("rho1", &rho1_mix)] {
        let mut field = GridField::tabulate(grid.clone(), |z| mix.density(z));
        let mass = field.integral();
        if !(mass > 0.0) {
            bail!("fortet.{name}: zero mass on the grid");
        }
        if (mass - 1.0).abs() > 1e-3 {
            warnings.push(format!(
                "fortet.{name}: grid truncates {:.3e} of the mass; renormalized",
                1.0 - mass
            ));
        }
        for v in &mut field.values {
            *v /= mass;
        }
        fields.push(field);
    }
    let rho1 = fields.pop().expect("two fields");
    let rho0 = fields.pop().expect("two fields");
    let tol = spec.tol.unwrap_or(1e-10);
    let max_iter = spec.max_iter.unwrap_or(10_000);
    let state = stage.time("fortet", || {
        fortet_solve(&rho0, &rho1, &kernel, tol, max_iter).map_err(|e| anyhow!(e))
    })?;

    let dim = grid.dim();
    let mut header: Vec<String> = (0..dim).map(|a| format!("z{a}")).collect();
    header.extend(
        ["rho0", "rho1", "phi0", "phihat0", "phi1", "phihat1"]
            .iter()
            .map(|s| s.to_string()),
    );
    let rows = (0..grid.len())
        .map(|i| {
            let mut row = grid.point(i);
            row.extend([
                rho0.values[i],
                rho1.values[i],
                state.phi0.values[i],
                state.phihat0.values[i],
                state.phi1.values[i],
                state.phihat1.values[i],
            ]);
            row
        })
        .collect();
    artifacts.push(("state.csv".into(), Artifact::Csv { header, rows }));
    artifacts.push((
        "gaps.csv".into(),
        Artifact::Csv {
            header: vec!["iteration".into(), "hilbert_gap".into()],
            rows: state
                .hilbert_gaps
                .iter()
                .enumerate()
                .map(|(i, &g)| vec![(i + 1) as f64, g])
                .collect(),
        },
    ));
    let times = spec.times.clone().unwrap_or_else(|| vec![0.25, 0.5, 0.75]);
    let mut frame_header = vec!["t".to_string()];
    frame_header.extend((0..dim).map(|a| format!("z{a}")));
    frame_header.push("rho".to_string());
    let mut frame_rows = Vec::new();
    for &t in &times {
        let rho_t = oracle_interpolation(&state, t, &kernel).map_err(|e| anyhow!(e))?;
        for i in 0..grid.len() {
            let mut row = vec![t];
            row.extend(grid.point(i));
            row.push(rho_t.values[i]);
            frame_rows.push(row);
        }
    }
    artifacts.push((
        "frames.csv".into(),
        Artifact::Csv {
            header: frame_header,
            rows: frame_rows,
        },
    ));
    #[derive(Serialize)]
    struct FortetDoc {
        converged: bool,
        iterations: usize,
        residual_rho0: f64,
        residual_rho1: f64,
        final_hilbert_gap: Option<f64>,
    }
    let doc = FortetDoc {
        converged: state.converged,
        iterations: state.iteration,
        residual_rho0: state.residuals.0,
        residual_rho1: state.residuals.1,
        final_hilbert_gap: state.hilbert_gaps.last().copied(),
    };
    artifacts.push((
        "fortet.toml".into(),
        Artifact::Toml(toml::to_string_pretty(&doc)?),
    ));
    Ok(state.converged)
}
