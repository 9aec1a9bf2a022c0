//! TOML run configuration: parsing, defaulting, and whole-file validation.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use sbridge_core::bridge::{FitSettings, SolveSettings};
use sbridge_core::flow::GaussianMixture;
use sbridge_core::fortet::{Grid, GridAxis};
use sbridge_core::models::{BasisSpec, Parameterization, PositiveModel, Truncation};
use sbridge_core::reference::Bandwidth;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; required so no run ever falls back to wall-clock seeding.
    pub seed: Option<u64>,
    pub io: IoConfig,
    pub prior: Option<PriorConfig>,
    pub model0: Option<ModelConfig>,
    pub model1: Option<ModelConfig>,
    pub reference: Option<ReferenceConfig>,
    pub solver: Option<SolverConfig>,
    pub flow: Option<FlowConfig>,
    pub halfbridge: Option<HalfBridgeConfig>,
    pub interpolate: Option<InterpolateConfig>,
    pub importance: Option<ImportanceSpec>,
    pub fortet: Option<FortetConfig>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    pub samples0: Option<PathBuf>,
    pub samples1: Option<PathBuf>,
    /// Output directory; `--out` overrides.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Only `brownian` is configurable from the command line; other prior
    /// kinds are library-level constructions.
    pub kind: String,
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `exp-linear` or `square-linear`.
    pub parameterization: String,
    /// `monomials` or `hermite`.
    pub basis: String,
    pub count: usize,
    /// `total-degree` (default) or `per-axis`.
    pub truncation: Option<String>,
    /// Standardize basis inputs by the sample mean/deviation.
    pub standardize: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    /// `kde` (default) or `gaussian`.
    pub kind: Option<String>,
    /// `"silverman"`, a number, or a per-dimension array.
    pub bandwidth: Option<BandwidthSpec>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSpec {
    Rule(String),
    Value(f64),
    PerDim(Vec<f64>),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub outer_tol: Option<f64>,
    pub max_outer: Option<usize>,
    pub m_tilde: Option<usize>,
    pub n_hat: Option<usize>,
    pub redraw_transitions: Option<bool>,
    pub restarts: Option<usize>,
    pub perturbation: Option<f64>,
    pub grad_tol: Option<f64>,
    pub newton_max_iter: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub mc_draws: Option<usize>,
    pub time_steps: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfBridgeConfig {
    /// Reference draw count ñ of the penalty estimate.
    pub n_tilde: usize,
    /// The prior-propagated factor φ̂₁ as an explicit Gaussian mixture.
    pub phihat1: MixtureSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolateConfig {
    /// Solution document to re-instantiate (interpolate subcommand only;
    /// `solve` interpolates its own result).
    pub solution: Option<PathBuf>,
    pub times: Vec<f64>,
    pub grid: GridSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportanceSpec {
    pub integrand: MixtureSpec,
    pub grid: GridSpec,
    pub threshold: f64,
    pub bridge_samples: Option<usize>,
    pub mixture_components: Option<usize>,
    pub draw_count: Option<usize>,
    pub replications: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FortetConfig {
    pub rho0: MixtureSpec,
    pub rho1: MixtureSpec,
    pub grid: GridSpec,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    /// Interior times of the oracle interpolation frames.
    pub times: Option<Vec<f64>>,
}

/// A Gaussian mixture given by explicit parameters. `sds` is the 1D
/// shorthand for diagonal `covs`; weights default to equal.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub weights: Option<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub sds: Option<Vec<f64>>,
    pub covs: Option<Vec<Vec<Vec<f64>>>>,
}

/// One axis per entry; axes beyond the first default to the first's bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n: Vec<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        Ok(config)
    }

    /// Validate everything that can be checked without running, reporting
    /// every offending field at once.
    pub fn validate(&self, subcommand: &str) -> Result<()> {
        let mut errors = Vec::new();
        if self.seed.is_none() {
            errors.push("seed: required (wall-clock seeding is not supported)".to_string());
        }
        let needs_samples0 = matches!(subcommand, "solve");
        let needs_samples1 = matches!(subcommand, "solve" | "halfbridge" | "importance");
        if needs_samples0 {
            match &self.io.samples0 {
                None => errors.push("io.samples0: required".to_string()),
                Some(p) if !p.exists() => {
                    errors.push(format!("io.samples0: file {} does not exist", p.display()))
                }
                _ => {}
            }
        }
        if needs_samples1 {
            match &self.io.samples1 {
                None => errors.push("io.samples1: required".to_string()),
                Some(p) if !p.exists() => {
                    errors.push(format!("io.samples1: file {} does not exist", p.display()))
                }
                _ => {}
            }
        }
        if let Some(prior) = &self.prior {
            if prior.kind != "brownian" {
                errors.push(format!("prior.kind: unknown kind `{}`", prior.kind));
            }
            if !(prior.gamma > 0.0) {
                errors.push(format!("prior.gamma: must be > 0, got {}", prior.gamma));
            }
        } else if matches!(subcommand, "solve" | "importance" | "fortet-grid") {
            errors.push("prior: required".to_string());
        }
        for (name, model) in [("model0", &self.model0), ("model1", &self.model1)] {
            if let Some(m) = model {
                if !matches!(m.parameterization.as_str(), "exp-linear" | "square-linear") {
                    errors.push(format!(
                        "{name}.parameterization: `{}` is not exp-linear or square-linear",
                        m.parameterization
                    ));
                }
                if !matches!(m.basis.as_str(), "monomials" | "hermite") {
                    errors.push(format!("{name}.basis: `{}` is not monomials or hermite", m.basis));
                }
                if m.count == 0 {
                    errors.push(format!("{name}.count: must be >= 1"));
                }
                if let Some(t) = &m.truncation {
                    if !matches!(t.as_str(), "total-degree" | "per-axis") {
                        errors.push(format!(
                            "{name}.truncation: `{t}` is not total-degree or per-axis"
                        ));
                    }
                }
            }
        }
        if let Some(s) = &self.solver {
            for (field, value) in [("solver.outer_tol", s.outer_tol), ("solver.grad_tol", s.grad_tol)] {
                if let Some(v) = value {
                    if !(v > 0.0) {
                        errors.push(format!("{field}: must be > 0, got {v}"));
                    }
                }
            }
        }
        if let Some(f) = &self.fortet {
            if let Some(tol) = f.tol {
                if !(tol > 0.0) {
                    errors.push(format!("fortet.tol: must be > 0, got {tol}"));
                }
            }
        }
        match subcommand {
            "halfbridge" if self.halfbridge.is_none() => {
                errors.push("halfbridge: block required".to_string())
            }
            "importance" if self.importance.is_none() => {
                errors.push("importance: block required".to_string())
            }
            "fortet-grid" if self.fortet.is_none() => {
                errors.push("fortet: block required".to_string())
            }
            "interpolate" => {
                match &self.interpolate {
                    None => errors.push("interpolate: block required".to_string()),
                    Some(i) => {
                        match &i.solution {
                            None => errors
                                .push("interpolate.solution: required for this subcommand".to_string()),
                            Some(p) if !p.exists() => errors.push(format!(
                                "interpolate.solution: file {} does not exist",
                                p.display()
                            )),
                            _ => {}
                        }
                        if i.times.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
                            errors.push("interpolate.times: every time must lie in [0, 1]".to_string());
                        }
                    }
                }
            }
            _ => {}
        }
        if !errors.is_empty() {
            bail!("invalid configuration:\n  - {}", errors.join("\n  - "));
        }
        Ok(())
    }

    pub fn solve_settings(&self) -> SolveSettings {
        let mut settings = SolveSettings::default();
        if let Some(s) = &self.solver {
            if let Some(v) = s.outer_tol {
                settings.outer_tol = v;
            }
            if let Some(v) = s.max_outer {
                settings.max_outer = v;
            }
            if let Some(v) = s.redraw_transitions {
                settings.redraw_transitions = v;
            }
            settings.fit = self.fit_settings();
        }
        settings
    }

    pub fn fit_settings(&self) -> FitSettings {
        let mut fit = FitSettings::default();
        if let Some(s) = &self.solver {
            if let Some(v) = s.restarts {
                fit.restarts = v;
            }
            if let Some(v) = s.perturbation {
                fit.perturbation = v;
            }
            if let Some(v) = s.grad_tol {
                fit.newton.grad_tol = v;
            }
            if let Some(v) = s.newton_max_iter {
                fit.newton.max_iter = v;
            }
        }
        fit
    }
}

impl ModelConfig {
    pub fn build(&self, name: &str, dim: usize) -> Result<PositiveModel> {
        let parameterization = match self.parameterization.as_str() {
            "exp-linear" => Parameterization::ExpLinear,
            "square-linear" => Parameterization::SquareLinear,
            other => bail!("{name}.parameterization: unknown `{other}`"),
        };
        let truncation = match self.truncation.as_deref() {
            None | Some("total-degree") => Truncation::TotalDegree,
            Some("per-axis") => Truncation::PerAxis,
            Some(other) => bail!("{name}.truncation: unknown `{other}`"),
        };
        let basis = match self.basis.as_str() {
            "monomials" => BasisSpec::new(
                sbridge_core::models::BasisFamily::Monomials,
                dim,
                self.count,
                truncation,
            ),
            "hermite" => BasisSpec::hermite(dim, self.count, truncation),
            other => bail!("{name}.basis: unknown `{other}`"),
        }
        .with_context(|| format!("{name}: invalid basis"))?;
        Ok(PositiveModel::new(parameterization, basis))
    }
}

impl ReferenceConfig {
    pub fn bandwidth(&self) -> Result<Bandwidth> {
        Ok(match &self.bandwidth {
            None => Bandwidth::Silverman,
            Some(BandwidthSpec::Rule(rule)) if rule == "silverman" => Bandwidth::Silverman,
            Some(BandwidthSpec::Rule(rule)) => bail!("reference.bandwidth: unknown rule `{rule}`"),
            Some(BandwidthSpec::Value(v)) => Bandwidth::Value(*v),
            Some(BandwidthSpec::PerDim(v)) => Bandwidth::PerDim(v.clone()),
        })
    }
}

impl MixtureSpec {
    pub fn build(&self, name: &str) -> Result<GaussianMixture> {
        if self.means.is_empty() {
            bail!("{name}.means: at least one component required");
        }
        let k = self.means.len();
        let dim = self.means[0].len();
        let weights = match &self.weights {
            Some(w) => w.clone(),
            None => vec![1.0 / k as f64; k],
        };
        let means: Vec<DVector<f64>> = self
            .means
            .iter()
            .map(|m| DVector::from_column_slice(m))
            .collect();
        let covs: Vec<DMatrix<f64>> = match (&self.sds, &self.covs) {
            (Some(sds), None) => {
                if dim != 1 {
                    bail!("{name}.sds: the sds shorthand only applies to 1D mixtures");
                }
                sds.iter()
                    .map(|&s| DMatrix::from_element(1, 1, s * s))
                    .collect()
            }
            (None, Some(covs)) => covs
                .iter()
                .map(|c| {
                    let rows = c.len();
                    DMatrix::from_fn(rows, rows, |i, j| c[i][j])
                })
                .collect(),
            _ => bail!("{name}: exactly one of sds or covs must be given"),
        };
        GaussianMixture::from_params(weights, means, covs)
            .map_err(|e| anyhow::anyhow!("{name}: {e}"))
    }
}

impl GridSpec {
    pub fn build(&self, name: &str) -> Result<Grid> {
        if self.lo.len() != self.hi.len() || self.lo.len() != self.n.len() {
            bail!("{name}: lo, hi and n must have the same length");
        }
        let axes: Vec<GridAxis> = self
            .lo
            .iter()
            .zip(self.hi.iter().zip(&self.n))
            .map(|(&lo, (&hi, &n))| GridAxis { lo, hi, n })
            .collect();
        Grid::new(axes).map_err(|e| anyhow::anyhow!("{name}: {e}"))
    }
}
