//! Data-driven solvers: the half-bridge maximum-likelihood fit and the
//! full alternating loop.
//!
//! Both parameter updates share one objective shape,
//!
//! `L(β) = (1/n) Σ_j log Φ(d_j, β) − Σ_k c_k Φ(z_k, β)`,
//!
//! a log-likelihood over data points minus a weighted penalty sum whose
//! coefficients `c_k ≥ 0` are assembled from frozen Monte Carlo caches.
//! At a stationary point the penalty sum automatically equals one — it is
//! the Monte Carlo estimate of the eliminated normalization multiplier —
//! which is also the constraint-residual diagnostic reported per iteration.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{BridgeError, Result};
use crate::kernels::PriorKernel;
use crate::models::{Parameterization, PositiveModel};
use crate::optimizer::{maximize, maximize_multistart, NewtonSettings, Objective, OptimizeResult};
use crate::reference::ReferenceDensity;
use crate::stats;
use crate::types::SampleSet;

/// The two marginal sample sets, the prior, the model templates, and the
/// auxiliary sampling budget.
#[derive(Clone)]
pub struct BridgeProblem {
    pub samples0: SampleSet,
    pub samples1: SampleSet,
    pub prior: PriorKernel,
    /// Template for `φ̂₀(·, β̂)`.
    pub model0: PositiveModel,
    /// Template for `φ₁(·, β)`.
    pub model1: PositiveModel,
    /// Reference density `ρ̃₀` over the start space.
    pub ref0: ReferenceDensity,
    /// Auxiliary start-point count `m̃`.
    pub m_tilde: usize,
    /// Transition draws per auxiliary point `n̂`.
    pub n_hat: usize,
}

impl BridgeProblem {
    /// Build a problem with the default budgets `m̃ = max(m, 10³)`, `n̂ = 10`.
    pub fn new(
        samples0: SampleSet,
        samples1: SampleSet,
        prior: PriorKernel,
        model0: PositiveModel,
        model1: PositiveModel,
        ref0: ReferenceDensity,
    ) -> Result<Self> {
        let m_tilde = samples0.len().max(1000);
        let p = Self {
            samples0,
            samples1,
            prior,
            model0,
            model1,
            ref0,
            m_tilde,
            n_hat: 10,
        };
        p.validate()?;
        Ok(p)
    }

    /// Structural checks; returns warnings for degenerate-but-legal inputs.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.samples0.len() == 0 || self.samples1.len() == 0 {
            return Err(BridgeError::Config("empty sample set".into()));
        }
        if self.m_tilde == 0 || self.n_hat == 0 {
            return Err(BridgeError::Config("m_tilde and n_hat must be >= 1".into()));
        }
        if self.model0.basis.dim != self.samples0.dim() {
            return Err(BridgeError::Config(format!(
                "model0 dimension {} does not match samples0 dimension {}",
                self.model0.basis.dim,
                self.samples0.dim()
            )));
        }
        if self.model1.basis.dim != self.samples1.dim() {
            return Err(BridgeError::Config(format!(
                "model1 dimension {} does not match samples1 dimension {}",
                self.model1.basis.dim,
                self.samples1.dim()
            )));
        }
        if self.ref0.dim() != self.samples0.dim() {
            return Err(BridgeError::Config("reference density dimension mismatch".into()));
        }
        let mut warnings = Vec::new();
        if self.samples0.len() == 1 {
            warnings.push("samples0 has a single point; the fit is a one-point MLE".into());
        }
        if self.samples1.len() == 1 {
            warnings.push("samples1 has a single point; the fit is a one-point MLE".into());
        }
        Ok(warnings)
    }
}

/// Frozen auxiliary draws: `m̃` start points with their reference densities
/// and `n̂` transition endpoints per start point (flat, row `i·n̂ + j`).
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryCache {
    pub aux_x: SampleSet,
    pub aux_x_density: Vec<f64>,
    pub aux_y: SampleSet,
    /// Importance weights for proposal-sampled transitions, flat as `aux_y`.
    pub weights: Option<Vec<f64>>,
    pub n_hat: usize,
}

impl AuxiliaryCache {
    pub fn m_tilde(&self) -> usize {
        self.aux_x.len()
    }

    fn weight(&self, flat: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[flat])
    }
}

/// Draw and freeze the auxiliary samples for a whole run.
pub fn precompute_auxiliary(problem: &BridgeProblem, rng: &mut ChaCha8Rng) -> Result<AuxiliaryCache> {
    let draws = problem.ref0.sample(problem.m_tilde, rng)?;
    let mut cache = AuxiliaryCache {
        aux_x: draws.points,
        aux_x_density: draws.densities,
        aux_y: SampleSet::new(problem.samples1.dim()),
        weights: None,
        n_hat: problem.n_hat,
    };
    redraw_transitions(problem, &mut cache, rng)?;
    Ok(cache)
}

/// Refresh the transition endpoints `ŷ_i^j` in place, keeping the start
/// points fixed. Used once by `precompute_auxiliary` and per outer
/// iteration when re-randomization is requested.
pub fn redraw_transitions(
    problem: &BridgeProblem,
    cache: &mut AuxiliaryCache,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let weighted = matches!(problem.prior, PriorKernel::ClosedFormWithProposal { .. });
    let mut aux_y = SampleSet::new(problem.samples1.dim());
    let mut weights = weighted.then(Vec::new);
    for i in 0..cache.aux_x.len() {
        let x = cache.aux_x.point(i);
        for _ in 0..problem.n_hat {
            let s = problem.prior.sample_weighted(x, rng)?;
            aux_y.push(&s.point);
            if let Some(w) = weights.as_mut() {
                w.push(s.weight);
            }
        }
    }
    cache.aux_y = aux_y;
    cache.weights = weights;
    Ok(())
}

/// Optimization settings for one parameter update.
#[derive(Debug, Clone)]
pub struct FitSettings {
    pub newton: NewtonSettings,
    /// Restart count for the square-linear (non-concave) case.
    pub restarts: usize,
    /// Jitter scale of the restart starting points.
    pub perturbation: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            newton: NewtonSettings::default(),
            restarts: 8,
            perturbation: 0.25,
        }
    }
}

/// Settings of the outer alternating loop.
#[derive(Debug, Clone)]
pub struct SolveSettings {
    pub fit: FitSettings,
    /// Stop when `max(‖Δβ‖∞, ‖Δβ̂‖∞) ≤ outer_tol`.
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Redraw the transition endpoints each outer iteration instead of
    /// freezing them (the frozen default makes every step deterministic).
    pub redraw_transitions: bool,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            fit: FitSettings::default(),
            outer_tol: 1e-4,
            max_outer: 100,
            redraw_transitions: false,
        }
    }
}

/// Per-outer-iteration record.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub objective_beta_hat: f64,
    pub objective_beta: f64,
    /// `max(‖Δβ‖∞, ‖Δβ̂‖∞)` against the previous iterate.
    pub delta: f64,
    /// Monte Carlo estimate of `∫φ̂₁φ₁ dy` at the end of the iteration.
    pub constraint_estimate: f64,
}

/// A converged (or capped) bridge fit.
#[derive(Clone)]
pub struct BridgeSolution {
    /// `φ̂₀(·, β̂)`.
    pub model0: PositiveModel,
    /// `φ₁(·, β)`.
    pub model1: PositiveModel,
    pub prior: PriorKernel,
    pub cache: AuxiliaryCache,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl BridgeSolution {
    pub fn beta(&self) -> &[f64] {
        &self.model1.beta
    }

    pub fn beta_hat(&self) -> &[f64] {
        &self.model0.beta
    }
}

// ---------------------------------------------------------------------------
// shared objective assembly

/// The common objective `L(β) = (1/n)Σ log Φ(d_j) − Σ c_k Φ(z_k)` in
/// feature space: rows of precomputed basis values and penalty coefficients.
struct FitTerms {
    parameterization: Parameterization,
    k: usize,
    data_features: Vec<f64>,
    n_data: usize,
    /// Mean data feature vector (closed-form data term for exp-linear).
    data_mean: Vec<f64>,
    pen_features: Vec<f64>,
    pen_coeff: Vec<f64>,
}

const PAR_CHUNK: usize = 2048;

impl FitTerms {
    fn new(
        parameterization: Parameterization,
        k: usize,
        data_features: Vec<f64>,
        pen_features: Vec<f64>,
        pen_coeff: Vec<f64>,
    ) -> Self {
        let n_data = data_features.len() / k;
        let mut data_mean = vec![0.0; k];
        for row in data_features.chunks_exact(k) {
            for (a, f) in data_mean.iter_mut().zip(row) {
                *a += f;
            }
        }
        for a in &mut data_mean {
            *a /= n_data as f64;
        }
        Self {
            parameterization,
            k,
            data_features,
            n_data,
            data_mean,
            pen_features,
            pen_coeff,
        }
    }

    /// Closed-form starting point for the square-linear objective. Along a
    /// ray `β = t·u` the objective is `2 log t + (2/n)Σ log|u·f_j| − t²·uᵀQu`
    /// with `Q = Σ c_k f_k f_kᵀ`; replacing the mean-log data term by its
    /// log-mean upper bound `log(uᵀPu)` with `P = (1/n)Σ f_j f_jᵀ` turns the
    /// direction problem into the generalized Rayleigh quotient
    /// `uᵀPu / uᵀQu`, maximized by the top eigenvector of `(P, Q)`. The
    /// returned β is that direction at its optimal scale `t = (uᵀQu)^{-1/2}`.
    fn eigen_init(&self) -> Option<Vec<f64>> {
        let k = self.k;
        let mut p = DMatrix::<f64>::zeros(k, k);
        for row in self.data_features.chunks_exact(k) {
            for a in 0..k {
                for b in 0..k {
                    p[(a, b)] += row[a] * row[b];
                }
            }
        }
        p /= self.n_data as f64;
        let mut q = DMatrix::<f64>::zeros(k, k);
        for (row, &c) in self.pen_features.chunks_exact(k).zip(&self.pen_coeff) {
            for a in 0..k {
                for b in 0..k {
                    q[(a, b)] += c * row[a] * row[b];
                }
            }
        }
        let ridge = 1e-10 * q.trace().max(1e-300) / k as f64;
        for a in 0..k {
            q[(a, a)] += ridge;
        }
        let chol = q.clone().cholesky()?;
        let l = chol.l();
        // M = L⁻¹ P L⁻ᵀ, symmetric; its top eigenvector v gives u = L⁻ᵀ v
        let li_p = l.solve_lower_triangular(&p)?;
        let m = l.solve_lower_triangular(&li_p.transpose())?;
        let eig = m.symmetric_eigen();
        let top = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite eigenvalues"))?
            .0;
        let v = eig.eigenvectors.column(top).into_owned();
        let u = l.transpose().solve_upper_triangular(&v)?;
        let quad = (u.transpose() * &q * &u)[(0, 0)];
        if !(quad > 0.0) || !quad.is_finite() {
            return None;
        }
        let scale = quad.sqrt().recip();
        Some(u.iter().map(|x| x * scale).collect())
    }

    /// Partial (value, gradient, upper-triangular Hessian) over a penalty
    /// row range.
    fn penalty_partial(&self, beta: &[f64], rows: std::ops::Range<usize>) -> (f64, Vec<f64>, Vec<f64>) {
        let k = self.k;
        let mut value = 0.0;
        let mut grad = vec![0.0; k];
        let mut hess = vec![0.0; k * k];
        for r in rows {
            let feat = &self.pen_features[r * k..(r + 1) * k];
            let c = self.pen_coeff[r];
            let s: f64 = beta.iter().zip(feat).map(|(b, f)| b * f).sum();
            // weight of the rank-one Hessian term and the gradient factor
            let (v, g, h) = match self.parameterization {
                Parameterization::ExpLinear => {
                    let e = c * s.exp();
                    (e, e, e)
                }
                Parameterization::SquareLinear => (c * s * s, 2.0 * c * s, 2.0 * c),
            };
            value -= v;
            for a in 0..k {
                grad[a] -= g * feat[a];
                for b in a..k {
                    hess[a * k + b] -= h * feat[a] * feat[b];
                }
            }
        }
        (value, grad, hess)
    }

    fn objective(&self, beta: &[f64]) -> Objective {
        let k = self.k;
        let mut value = 0.0;
        let mut grad = vec![0.0; k];
        let mut hess = vec![0.0; k * k];

        match self.parameterization {
            Parameterization::ExpLinear => {
                // (1/n)Σ log exp(β·F) = β·F̄, a linear data term
                value += beta.iter().zip(&self.data_mean).map(|(b, f)| b * f).sum::<f64>();
                for a in 0..k {
                    grad[a] += self.data_mean[a];
                }
            }
            Parameterization::SquareLinear => {
                let inv_n = 1.0 / self.n_data as f64;
                for feat in self.data_features.chunks_exact(k) {
                    let s: f64 = beta.iter().zip(feat).map(|(b, f)| b * f).sum();
                    value += 2.0 * inv_n * s.abs().ln();
                    let g = 2.0 * inv_n / s;
                    let h = 2.0 * inv_n / (s * s);
                    for a in 0..k {
                        grad[a] += g * feat[a];
                        for b in a..k {
                            hess[a * k + b] -= h * feat[a] * feat[b];
                        }
                    }
                }
            }
        }

        let rows = self.pen_coeff.len();
        if rows > PAR_CHUNK {
            let partials: Vec<_> = (0..rows)
                .step_by(PAR_CHUNK)
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|start| self.penalty_partial(beta, start..(start + PAR_CHUNK).min(rows)))
                .collect();
            // fixed-order reduction keeps the sum deterministic
            for (v, g, h) in partials {
                value += v;
                for a in 0..k {
                    grad[a] += g[a];
                }
                for (acc, x) in hess.iter_mut().zip(&h) {
                    *acc += x;
                }
            }
        } else {
            let (v, g, h) = self.penalty_partial(beta, 0..rows);
            value += v;
            for a in 0..k {
                grad[a] += g[a];
            }
            for (acc, x) in hess.iter_mut().zip(&h) {
                *acc += x;
            }
        }

        for a in 0..k {
            for b in 0..a {
                hess[a * k + b] = hess[b * k + a];
            }
        }
        Objective {
            value,
            grad: DVector::from_vec(grad),
            hessian: Some(DMatrix::from_row_slice(k, k, &hess)),
        }
    }
}

fn features_of(model: &PositiveModel, points: &SampleSet) -> Result<Vec<f64>> {
    let k = model.basis.len();
    let mut out = Vec::with_capacity(points.len() * k);
    for p in points.iter() {
        out.extend(model.basis.eval(p)?);
    }
    Ok(out)
}

/// Starting points for one update: warm start from the current β plus, for
/// the non-concave square-linear family, jittered widest-support restarts.
fn starting_points(model: &PositiveModel, settings: &FitSettings) -> Vec<Vec<f64>> {
    match model.parameterization {
        Parameterization::ExpLinear => vec![model.beta.clone()],
        Parameterization::SquareLinear => {
            let k = model.k();
            let mut inits = Vec::with_capacity(settings.restarts + 1);
            inits.push(model.beta.clone());
            // the element of biggest effective support: highest degree in
            // the ordered basis, i.e. the last element
            let mut wide = vec![0.0; k];
            wide[k - 1] = 1.0;
            for r in 0..settings.restarts {
                let mut rng = ChaCha8Rng::seed_from_u64(0xB17D_5EED ^ r as u64);
                let jitter = if r == 0 { 0.01 } else { settings.perturbation };
                let start: Vec<f64> = wide
                    .iter()
                    .map(|w| w + jitter * rng.gen_range(-1.0..1.0))
                    .collect();
                inits.push(start);
            }
            inits
        }
    }
}

fn run_fit(
    terms: &FitTerms,
    model: &PositiveModel,
    settings: &FitSettings,
) -> Result<OptimizeResult> {
    let f = |beta: &[f64]| terms.objective(beta);
    let mut inits = starting_points(model, settings);
    match model.parameterization {
        Parameterization::ExpLinear => {
            // concave; if the warm start is degenerate there is no rescue
            maximize(&f, &inits[0], &settings.newton)
        }
        Parameterization::SquareLinear => {
            // the closed-form Rayleigh seed goes right after the warm start
            if let Some(seed) = terms.eigen_init() {
                inits.insert(1, seed);
            }
            maximize_multistart(&f, &inits, &settings.newton)
        }
    }
}

// ---------------------------------------------------------------------------
// public operations

/// Fit `φ₁` against the data `{y_j}` and an evaluable `φ̂₁`, maximizing
/// `(1/n)Σ log Φ(y_j, β) − (1/ñ)Σ φ̂₁(ỹ_k)Φ(ỹ_k, β)/ρ̃₁(ỹ_k)`
/// over `ñ` draws `ỹ_k` from the reference density `ref1`.
pub fn half_bridge_fit(
    samples1: &SampleSet,
    phihat1: &(dyn Fn(&[f64]) -> f64 + Sync),
    ref1: &ReferenceDensity,
    model1: &PositiveModel,
    n_tilde: usize,
    settings: &FitSettings,
    rng: &mut ChaCha8Rng,
) -> Result<PositiveModel> {
    if samples1.len() == 0 {
        return Err(BridgeError::Config("empty sample set".into()));
    }
    let draws = ref1.sample(n_tilde, rng)?;
    let mut coeff = Vec::with_capacity(n_tilde);
    for (idx, (p, &dens)) in draws.points.iter().zip(&draws.densities).enumerate() {
        let v = phihat1(p);
        if !(v > 0.0) || !v.is_finite() {
            return Err(BridgeError::Domain(format!(
                "phihat1 is {v} at reference draw {idx} ({p:?})"
            )));
        }
        coeff.push(v / (n_tilde as f64 * dens));
    }
    let terms = FitTerms::new(
        model1.parameterization,
        model1.k(),
        features_of(model1, samples1)?,
        features_of(model1, &draws.points)?,
        coeff,
    );
    let result = run_fit(&terms, model1, settings)?;
    model1.clone().with_beta(result.beta_star)
}

/// Reusable evaluator of one fit objective at arbitrary coefficients, for
/// diagnostics and numerical verification. The underlying data and penalty
/// terms are frozen at construction, so repeated evaluations see the same
/// function.
pub struct ObjectiveEval {
    terms: FitTerms,
}

impl ObjectiveEval {
    /// The β update objective with `β̂` frozen in `model0`.
    pub fn for_beta(
        problem: &BridgeProblem,
        cache: &AuxiliaryCache,
        model0: &PositiveModel,
        model1: &PositiveModel,
    ) -> Result<Self> {
        Ok(Self {
            terms: FitTerms::new(
                model1.parameterization,
                model1.k(),
                features_of(model1, &problem.samples1)?,
                features_of(model1, &cache.aux_y)?,
                beta_penalty_coeff(cache, model0)?,
            ),
        })
    }

    /// The β̂ update objective with `β` frozen in `model1`.
    pub fn for_beta_hat(
        problem: &BridgeProblem,
        cache: &AuxiliaryCache,
        model0: &PositiveModel,
        model1: &PositiveModel,
    ) -> Result<Self> {
        Ok(Self {
            terms: FitTerms::new(
                model0.parameterization,
                model0.k(),
                features_of(model0, &problem.samples0)?,
                features_of(model0, &cache.aux_x)?,
                beta_hat_penalty_coeff(cache, model1)?,
            ),
        })
    }

    /// The half-bridge objective over `n_tilde` fresh reference draws.
    pub fn for_half_bridge(
        samples1: &SampleSet,
        phihat1: &(dyn Fn(&[f64]) -> f64 + Sync),
        ref1: &ReferenceDensity,
        model1: &PositiveModel,
        n_tilde: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let draws = ref1.sample(n_tilde, rng)?;
        let mut coeff = Vec::with_capacity(n_tilde);
        for (p, &dens) in draws.points.iter().zip(&draws.densities) {
            coeff.push(phihat1(p) / (n_tilde as f64 * dens));
        }
        Ok(Self {
            terms: FitTerms::new(
                model1.parameterization,
                model1.k(),
                features_of(model1, samples1)?,
                features_of(model1, &draws.points)?,
                coeff,
            ),
        })
    }

    /// Value, analytic gradient and Hessian at `beta`.
    pub fn eval(&self, beta: &[f64]) -> Objective {
        self.terms.objective(beta)
    }
}

/// Penalty coefficients of the β update:
/// `c_{ij} = w_i^j · φ̂₀(x̃_i, β̂) / (m̃ n̂ ρ̃₀(x̃_i))`.
fn beta_penalty_coeff(cache: &AuxiliaryCache, model0: &PositiveModel) -> Result<Vec<f64>> {
    let scale = 1.0 / (cache.m_tilde() * cache.n_hat) as f64;
    let mut coeff = Vec::with_capacity(cache.aux_y.len());
    for i in 0..cache.m_tilde() {
        let phihat0 = model0.value(cache.aux_x.point(i))?;
        let per = scale * phihat0 / cache.aux_x_density[i];
        for j in 0..cache.n_hat {
            coeff.push(cache.weight(i * cache.n_hat + j) * per);
        }
    }
    Ok(coeff)
}

fn update_beta_inner(
    problem: &BridgeProblem,
    cache: &AuxiliaryCache,
    model0: &PositiveModel,
    model1: &PositiveModel,
    settings: &FitSettings,
) -> Result<(PositiveModel, f64)> {
    let terms = FitTerms::new(
        model1.parameterization,
        model1.k(),
        features_of(model1, &problem.samples1)?,
        features_of(model1, &cache.aux_y)?,
        beta_penalty_coeff(cache, model0)?,
    );
    let result = run_fit(&terms, model1, settings)?;
    Ok((model1.clone().with_beta(result.beta_star)?, result.objective))
}

/// One β update: maximize
/// `(1/n)Σ_j log Φ(y_j, β) − (1/(m̃n̂))Σ_{i,j} w_i^j Φ(ŷ_i^j, β) φ̂₀(x̃_i, β̂)/ρ̃₀(x̃_i)`
/// with the current `β̂` frozen in `model0`.
pub fn update_beta(
    problem: &BridgeProblem,
    cache: &AuxiliaryCache,
    model0: &PositiveModel,
    model1: &PositiveModel,
    settings: &FitSettings,
) -> Result<PositiveModel> {
    update_beta_inner(problem, cache, model0, model1, settings).map(|(m, _)| m)
}

/// Penalty coefficients of the β̂ update, collapsing the (i, j) double sum
/// onto the m̃ auxiliary start points:
/// `c_i = Σ_j w_i^j Φ(ŷ_i^j, β) / (m̃ n̂ ρ̃₀(x̃_i))`.
fn beta_hat_penalty_coeff(cache: &AuxiliaryCache, model1: &PositiveModel) -> Result<Vec<f64>> {
    let scale = 1.0 / (cache.m_tilde() * cache.n_hat) as f64;
    let mut coeff = Vec::with_capacity(cache.m_tilde());
    for i in 0..cache.m_tilde() {
        let mut acc = 0.0;
        for j in 0..cache.n_hat {
            let flat = i * cache.n_hat + j;
            acc += cache.weight(flat) * model1.value(cache.aux_y.point(flat))?;
        }
        coeff.push(scale * acc / cache.aux_x_density[i]);
    }
    Ok(coeff)
}

fn update_beta_hat_inner(
    problem: &BridgeProblem,
    cache: &AuxiliaryCache,
    model0: &PositiveModel,
    model1: &PositiveModel,
    settings: &FitSettings,
) -> Result<(PositiveModel, f64)> {
    let terms = FitTerms::new(
        model0.parameterization,
        model0.k(),
        features_of(model0, &problem.samples0)?,
        features_of(model0, &cache.aux_x)?,
        beta_hat_penalty_coeff(cache, model1)?,
    );
    let result = run_fit(&terms, model0, settings)?;
    Ok((model0.clone().with_beta(result.beta_star)?, result.objective))
}

/// One β̂ update, symmetric to `update_beta` with roles exchanged: maximize
/// `(1/m)Σ_i log Φ(x_i, β̂) − (1/(m̃n̂))Σ_{i,j} w_i^j Φ(ŷ_i^j, β) Φ(x̃_i, β̂)/ρ̃₀(x̃_i)`.
pub fn update_beta_hat(
    problem: &BridgeProblem,
    cache: &AuxiliaryCache,
    model0: &PositiveModel,
    model1: &PositiveModel,
    settings: &FitSettings,
) -> Result<PositiveModel> {
    update_beta_hat_inner(problem, cache, model0, model1, settings).map(|(m, _)| m)
}

/// Monte Carlo estimate of `∫φ̂₁(y)φ₁(y)dy` on the frozen caches, with its
/// standard error: mean over the `m̃·n̂` terms
/// `w_i^j · φ̂₀(x̃_i) Φ(ŷ_i^j, β) / ρ̃₀(x̃_i)`.
pub fn constraint_estimate(
    cache: &AuxiliaryCache,
    model0: &PositiveModel,
    model1: &PositiveModel,
) -> Result<(f64, f64)> {
    let mut terms = Vec::with_capacity(cache.aux_y.len());
    for i in 0..cache.m_tilde() {
        let phihat0 = model0.value(cache.aux_x.point(i))? / cache.aux_x_density[i];
        for j in 0..cache.n_hat {
            let flat = i * cache.n_hat + j;
            terms.push(cache.weight(flat) * phihat0 * model1.value(cache.aux_y.point(flat))?);
        }
    }
    let (mean, sd) = stats::mean_std(&terms);
    Ok((mean, sd / (terms.len() as f64).sqrt()))
}

fn initial_model(template: &PositiveModel) -> PositiveModel {
    let mut m = template.clone();
    match m.parameterization {
        // the all-zero coefficient vector is the Φ ≡ 1 gauge
        Parameterization::ExpLinear => m.beta = vec![0.0; m.k()],
        // biggest effective support: unit weight on the last (highest
        // degree) basis element
        Parameterization::SquareLinear => {
            m.beta = vec![0.0; m.k()];
            let k = m.k();
            m.beta[k - 1] = 1.0;
        }
    }
    m
}

/// Structural warm start for a square-linear model: least-squares fit of
/// the linear form `S(z) = β·f(z)` to the square root of a KDE of the
/// model's own data, evaluated at the data points. Newton refinement and
/// jittered restarts rarely recover the right nodal structure of a
/// multimodal factor on their own; this seed starts them inside the
/// correct basin. Returns `None` when the normal equations are singular.
fn shape_seed(template: &PositiveModel, samples: &SampleSet) -> Result<Option<Vec<f64>>> {
    if template.parameterization != Parameterization::SquareLinear {
        return Ok(None);
    }
    let kde = crate::reference::fit_kde(samples, crate::reference::Bandwidth::Silverman)?;
    let k = template.k();
    let mut ata = DMatrix::<f64>::zeros(k, k);
    let mut atb = DVector::<f64>::zeros(k);
    for p in samples.iter() {
        let f = template.basis.eval(p)?;
        let target = kde.eval(p).sqrt();
        for a in 0..k {
            atb[a] += f[a] * target;
            for b in 0..k {
                ata[(a, b)] += f[a] * f[b];
            }
        }
    }
    let ridge = 1e-10 * ata.trace().max(1e-300) / k as f64;
    for a in 0..k {
        ata[(a, a)] += ridge;
    }
    Ok(ata
        .lu()
        .solve(&atb)
        .map(|b| b.iter().copied().collect()))
}

/// Pin the ray of `φ₁` so the cached constraint estimate is exactly 1.
fn gauge_fix(model1: &mut PositiveModel, estimate: f64) {
    if !(estimate > 0.0) || !estimate.is_finite() {
        return;
    }
    match model1.parameterization {
        Parameterization::ExpLinear => {
            if let Some(c) = model1.basis.constant_index() {
                model1.beta[c] -= estimate.ln();
            }
        }
        Parameterization::SquareLinear => {
            let scale = estimate.sqrt().recip();
            for b in &mut model1.beta {
                *b *= scale;
            }
        }
    }
}

/// Alternate the β̂ and β updates over frozen caches until the parameter
/// delta falls below `outer_tol` or the iteration cap is reached.
pub fn solve_bridge(
    problem: &BridgeProblem,
    settings: &SolveSettings,
    rng: &mut ChaCha8Rng,
) -> Result<BridgeSolution> {
    let warnings = problem.validate()?;
    let mut cache = precompute_auxiliary(problem, rng)?;
    let mut model0 = initial_model(&problem.model0);
    let mut model1 = initial_model(&problem.model1);
    if let Some(beta) = shape_seed(&problem.model0, &problem.samples0)? {
        model0 = model0.with_beta(beta)?;
    }
    if let Some(beta) = shape_seed(&problem.model1, &problem.samples1)? {
        model1 = model1.with_beta(beta)?;
    }
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..settings.max_outer {
        if settings.redraw_transitions && !history.is_empty() {
            redraw_transitions(problem, &mut cache, rng)?;
        }
        let (m0, obj0) = update_beta_hat_inner(problem, &cache, &model0, &model1, &settings.fit)?;
        let (m1, obj1) = update_beta_inner(problem, &cache, &m0, &model1, &settings.fit)?;
        let delta = inf_diff(&m0.beta, &model0.beta).max(inf_diff(&m1.beta, &model1.beta));
        model0 = m0;
        model1 = m1;
        let (estimate, _) = constraint_estimate(&cache, &model0, &model1)?;
        history.push(IterationRecord {
            objective_beta_hat: obj0,
            objective_beta: obj1,
            delta,
            constraint_estimate: estimate,
        });
        if delta <= settings.outer_tol {
            converged = true;
            break;
        }
    }
    let (estimate, _) = constraint_estimate(&cache, &model0, &model1)?;
    gauge_fix(&mut model1, estimate);
    Ok(BridgeSolution {
        model0,
        model1,
        prior: problem.prior.clone(),
        cache,
        history,
        converged,
        warnings,
    })
}

fn inf_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `π(x, y) = Φ(x, β̂) · p(y|x) · Φ(y, β)`.
pub fn joint_density(solution: &BridgeSolution, x: &[f64], y: &[f64]) -> Result<f64> {
    let p = solution.prior.density(x, y)?;
    Ok(solution.model0.value(x)? * p * solution.model1.value(y)?)
}

#[derive(Debug, Clone)]
pub struct PosteriorSettings {
    /// Prior transition draws per conditioning point for `Z(x)` and the
    /// resampling pool.
    pub z_draws: usize,
}

impl Default for PosteriorSettings {
    fn default() -> Self {
        Self { z_draws: 1000 }
    }
}

/// The conditional `P*(y|x) = p(y|x)Φ(y, β)/Z(x)` with a self-normalized
/// importance-resampling sampler over cached prior draws.
pub struct PosteriorConditional {
    x: Vec<f64>,
    z: f64,
    prior: PriorKernel,
    model1: PositiveModel,
    pool: SampleSet,
    cumulative: Vec<f64>,
}

impl PosteriorConditional {
    /// Monte Carlo estimate of the normalization `Z(x)`.
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn density(&self, y: &[f64]) -> Result<f64> {
        Ok(self.prior.density(&self.x, y)? * self.model1.value(y)? / self.z)
    }

    /// Resample one pool draw with probability proportional to its weight.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let u: f64 = rng.gen_range(0.0..*self.cumulative.last().unwrap());
        let idx = self.cumulative.partition_point(|&c| c <= u);
        self.pool.point(idx.min(self.pool.len() - 1)).to_vec()
    }
}

/// Build the posterior conditional at `x`.
pub fn posterior_conditional(
    solution: &BridgeSolution,
    x: &[f64],
    settings: &PosteriorSettings,
    rng: &mut ChaCha8Rng,
) -> Result<PosteriorConditional> {
    if settings.z_draws == 0 {
        return Err(BridgeError::Config("z_draws must be >= 1".into()));
    }
    let mut pool = SampleSet::new(solution.model1.basis.dim);
    let mut weights = Vec::with_capacity(settings.z_draws);
    for _ in 0..settings.z_draws {
        let s = solution.prior.sample_weighted(x, rng)?;
        weights.push(s.weight * solution.model1.value(&s.point)?);
        pool.push(&s.point);
    }
    let z = weights.iter().sum::<f64>() / weights.len() as f64;
    if !(z > 0.0) || !z.is_finite() {
        return Err(BridgeError::Sampling(format!(
            "degenerate posterior at x = {x:?}: Z estimate {z}"
        )));
    }
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    Ok(PosteriorConditional {
        x: x.to_vec(),
        z,
        prior: solution.prior.clone(),
        model1: solution.model1.clone(),
        pool,
        cumulative,
    })
}

/// Convergence/validation summary of a solution.
#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    /// `|∫φ̂₁φ₁ − 1|` on the frozen caches.
    pub constraint_residual: f64,
    pub constraint_stderr: f64,
    /// Energy distance of flow-pushed `{x_i}` against `{y_j}` (Brownian
    /// prior only) and its permutation p-value.
    pub energy_distance: Option<f64>,
    pub energy_pvalue: Option<f64>,
    pub objective_deltas: Vec<(f64, f64)>,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
}

/// Diagnostics: constraint residual, pushed-sample two-sample test, and
/// per-iteration objective movement.
pub fn marginal_diagnostics(
    solution: &BridgeSolution,
    problem: &BridgeProblem,
    rng: &mut ChaCha8Rng,
) -> Result<DiagnosticsReport> {
    let (estimate, stderr) = constraint_estimate(&solution.cache, &solution.model0, &solution.model1)?;
    let (energy_distance, energy_pvalue) = if solution.prior.gamma().is_some() {
        let take = problem.samples0.len().min(200);
        let mut starts = SampleSet::new(problem.samples0.dim());
        for i in 0..take {
            starts.push(problem.samples0.point(i));
        }
        let field = crate::flow::FlowField::from_solution(solution, 300)?;
        let trajectories = crate::flow::integrate_flow(
            &starts,
            crate::flow::Direction::Forward,
            &field,
            50,
            crate::flow::CrnMode::PerTrajectory,
            rng,
        )?;
        let mut pushed = SampleSet::new(problem.samples1.dim());
        for t in &trajectories {
            pushed.push(t.mapped());
        }
        let take1 = problem.samples1.len().min(200);
        let mut target = SampleSet::new(problem.samples1.dim());
        for i in 0..take1 {
            target.push(problem.samples1.point(i));
        }
        let d = stats::energy_distance(&pushed, &target);
        let p = stats::energy_permutation_pvalue(&pushed, &target, 200, rng);
        (Some(d), Some(p))
    } else {
        (None, None)
    };
    let objective_deltas = solution
        .history
        .windows(2)
        .map(|w| {
            (
                w[1].objective_beta_hat - w[0].objective_beta_hat,
                w[1].objective_beta - w[0].objective_beta,
            )
        })
        .collect();
    Ok(DiagnosticsReport {
        constraint_residual: (estimate - 1.0).abs(),
        constraint_stderr: stderr,
        energy_distance,
        energy_pvalue,
        objective_deltas,
        converged: solution.converged,
        history: solution.history.clone(),
    })
}
