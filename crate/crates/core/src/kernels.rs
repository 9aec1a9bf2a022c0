//! Prior transition kernels.
//!
//! Three kinds are supported: the closed-form Brownian heat kernel with
//! variance parameter `gamma`, a simulated SDE integrated by Euler–Maruyama,
//! and a closed-form density paired with a sampleable proposal whose draws
//! are importance-reweighted.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{BridgeError, Result};

/// Vector field `u(x, t)`.
pub type VectorField = Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;
/// Scalar field `ν(x, t)` applied per dimension.
pub type ScalarField = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
/// Matrix field `ν(x, t)`, row-major d×d.
pub type MatrixField = Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;
/// Conditional density `p(y | x)`.
pub type CondDensity = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
/// Conditional sampler for a proposal `q(· | x)`.
pub type CondSampler = Arc<dyn Fn(&[f64], &mut ChaCha8Rng) -> Vec<f64> + Send + Sync>;

/// Diffusivity of an SDE prior. A scalar is applied uniformly to every
/// coordinate; the full matrix form multiplies the noise vector.
#[derive(Clone)]
pub enum Diffusivity {
    Scalar(ScalarField),
    Matrix(MatrixField),
}

/// Prior transition law `p(s, x, t, y)`.
#[derive(Clone)]
pub enum PriorKernel {
    Brownian {
        gamma: f64,
    },
    Sde {
        drift: VectorField,
        diffusivity: Diffusivity,
        steps: usize,
    },
    ClosedFormWithProposal {
        density: CondDensity,
        proposal_density: CondDensity,
        proposal_sampler: CondSampler,
    },
}

/// A transition draw with its importance weight relative to the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTransitionSample {
    pub point: Vec<f64>,
    pub weight: f64,
}

/// Gaussian transition density of the Wiener process with variance `gamma`:
/// `[2πγ(t−s)]^{−d/2} exp[−|x−y|² / (2γ(t−s))]`.
pub fn heat_kernel_density(x: &[f64], y: &[f64], s: f64, t: f64, gamma: f64) -> Result<f64> {
    if s >= t {
        return Err(BridgeError::Domain(format!(
            "heat kernel requires s < t, got s={s}, t={t}"
        )));
    }
    if gamma <= 0.0 {
        return Err(BridgeError::Domain(format!("gamma must be positive, got {gamma}")));
    }
    debug_assert_eq!(x.len(), y.len());
    let var = gamma * (t - s);
    let d = x.len() as f64;
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((2.0 * PI * var).powf(-d / 2.0) * (-sq / (2.0 * var)).exp())
}

impl PriorKernel {
    pub fn brownian(gamma: f64) -> Result<Self> {
        if gamma <= 0.0 {
            return Err(BridgeError::Config(format!("gamma must be positive, got {gamma}")));
        }
        Ok(PriorKernel::Brownian { gamma })
    }

    /// Unit-time transition density `p(y | x)`, when evaluable.
    pub fn density(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            PriorKernel::Brownian { gamma } => heat_kernel_density(x, y, 0.0, 1.0, *gamma),
            PriorKernel::ClosedFormWithProposal { density, .. } => Ok(density(x, y)),
            PriorKernel::Sde { .. } => Err(BridgeError::Unsupported(
                "SDE prior has no closed-form transition density".into(),
            )),
        }
    }

    pub fn has_density(&self) -> bool {
        !matches!(self, PriorKernel::Sde { .. })
    }

    /// Diffusion variance for the Brownian case.
    pub fn gamma(&self) -> Option<f64> {
        match self {
            PriorKernel::Brownian { gamma } => Some(*gamma),
            _ => None,
        }
    }

    /// One transition draw over `[s, t]` started at `x`.
    pub fn sample_transition(
        &self,
        x: &[f64],
        s: f64,
        t: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        if s >= t {
            return Err(BridgeError::Domain(format!(
                "transition sampling requires s < t, got s={s}, t={t}"
            )));
        }
        match self {
            PriorKernel::Brownian { gamma } => {
                let sd = (gamma * (t - s)).sqrt();
                Ok(x.iter()
                    .map(|&xi| xi + sd * rng.sample::<f64, _>(StandardNormal))
                    .collect())
            }
            PriorKernel::Sde {
                drift,
                diffusivity,
                steps,
            } => sde_simulate(x, drift, diffusivity, s, t, *steps, rng),
            PriorKernel::ClosedFormWithProposal {
                proposal_sampler, ..
            } => Ok(proposal_sampler(x, rng)),
        }
    }

    /// One weighted transition draw over the unit interval. The weight is 1
    /// except for the proposal-sampled closed-form case, where it is
    /// `p(y|x)/q(y|x)`.
    pub fn sample_weighted(
        &self,
        x: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<WeightedTransitionSample> {
        let point = self.sample_transition(x, 0.0, 1.0, rng)?;
        let weight = match self {
            PriorKernel::ClosedFormWithProposal {
                density,
                proposal_density,
                ..
            } => {
                let q = proposal_density(x, &point);
                if !(q > 0.0) || !q.is_finite() {
                    return Err(BridgeError::Numeric(format!(
                        "proposal density is {q} at draw {point:?} from x={x:?}"
                    )));
                }
                density(x, &point) / q
            }
            _ => 1.0,
        };
        Ok(WeightedTransitionSample { point, weight })
    }
}

/// Euler–Maruyama endpoint of `dx = u(x,t)dt + ν(x,t)dW` over `[t0, t1]`.
pub fn sde_simulate(
    x0: &[f64],
    drift: &VectorField,
    diffusivity: &Diffusivity,
    t0: f64,
    t1: f64,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(BridgeError::Config("steps must be >= 1".into()));
    }
    if t1 <= t0 {
        return Err(BridgeError::Domain(format!(
            "integration requires t1 > t0, got t0={t0}, t1={t1}"
        )));
    }
    let d = x0.len();
    let dt = (t1 - t0) / steps as f64;
    let sqrt_dt = dt.sqrt();
    let mut x = x0.to_vec();
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let u = drift(&x, t);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(BridgeError::Numeric(format!(
                "non-finite drift at step {k} (t={t}), state {x:?}"
            )));
        }
        let xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        match diffusivity {
            Diffusivity::Scalar(nu) => {
                let n = nu(&x, t);
                if !n.is_finite() {
                    return Err(BridgeError::Numeric(format!(
                        "non-finite diffusivity at step {k} (t={t}), state {x:?}"
                    )));
                }
                for i in 0..d {
                    x[i] += u[i] * dt + n * sqrt_dt * xi[i];
                }
            }
            Diffusivity::Matrix(nu) => {
                let m = nu(&x, t);
                if m.len() != d * d || m.iter().any(|v| !v.is_finite()) {
                    return Err(BridgeError::Numeric(format!(
                        "bad diffusivity matrix at step {k} (t={t})"
                    )));
                }
                for i in 0..d {
                    let mut noise = 0.0;
                    for j in 0..d {
                        noise += m[i * d + j] * xi[j];
                    }
                    x[i] += u[i] * dt + sqrt_dt * noise;
                }
            }
        }
    }
    Ok(x)
}

/// Attach importance weights `w = p(y|x) / q(y|x)` to draws from `q(·|x)`.
pub fn proposal_reweight(
    x: &[f64],
    samples_from_q: &[Vec<f64>],
    p: &CondDensity,
    q: &CondDensity,
) -> Result<Vec<WeightedTransitionSample>> {
    samples_from_q
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let qv = q(x, y);
            if !(qv > 0.0) || !qv.is_finite() {
                return Err(BridgeError::Numeric(format!(
                    "proposal density is {qv} at sample {i} ({y:?})"
                )));
            }
            Ok(WeightedTransitionSample {
                point: y.clone(),
                weight: p(x, y) / qv,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_chacha::rand_core::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn unit_heat_kernel_value() {
        let v = heat_kernel_density(&[0.0], &[0.0], 0.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(v, (2.0 * PI).powf(-0.5), max_relative = 1e-12);
    }

    #[test]
    fn forced_unit_exponent() {
        // |x−y|² = 2γ(t−s) pins the exponent at −1.
        let gamma: f64 = 0.7;
        let span: f64 = 0.9;
        let dx = (2.0 * gamma * span).sqrt();
        let v = heat_kernel_density(&[0.0], &[dx], 0.3, 0.3 + span, gamma).unwrap();
        let expect = (-1.0f64).exp() * (2.0 * PI * gamma * span).powf(-0.5);
        assert_relative_eq!(v, expect, max_relative = 1e-12);
    }

    #[test]
    fn symmetric_in_arguments() {
        let a = heat_kernel_density(&[0.3, -1.0], &[1.2, 0.4], 0.0, 2.0, 0.5).unwrap();
        let b = heat_kernel_density(&[1.2, 0.4], &[0.3, -1.0], 0.0, 2.0, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_degenerate_interval() {
        assert!(heat_kernel_density(&[0.0], &[0.0], 1.0, 1.0, 1.0).is_err());
        assert!(heat_kernel_density(&[0.0], &[0.0], 2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn normalization_by_quadrature() {
        // ∫ p(0, x, 1, y) dy = 1 within 1e-6 for fixed x.
        let gamma = 1.3;
        let x = [0.4];
        let h = 1e-3;
        let mut mass = 0.0;
        let lo = -12.0;
        let n = (24.0 / h) as usize;
        for i in 0..=n {
            let y = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            mass += w * h * heat_kernel_density(&x, &[y], 0.0, 1.0, gamma).unwrap();
        }
        assert!((mass - 1.0).abs() < 1e-6, "mass = {mass}");
    }

    #[test]
    fn chapman_kolmogorov_1d() {
        let gamma = 0.8;
        let (x, y, t) = (0.2, -0.5, 0.35);
        let h = 1e-3;
        let lo = -14.0;
        let n = (28.0 / h) as usize;
        let mut conv = 0.0;
        for i in 0..=n {
            let z = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            conv += w
                * h
                * heat_kernel_density(&[x], &[z], 0.0, t, gamma).unwrap()
                * heat_kernel_density(&[z], &[y], t, 1.0, gamma).unwrap();
        }
        let direct = heat_kernel_density(&[x], &[y], 0.0, 1.0, gamma).unwrap();
        assert!((conv - direct).abs() < 1e-6, "conv={conv}, direct={direct}");
    }

    #[test]
    fn brownian_vanishing_variance() {
        let kernel = PriorKernel::brownian(1.0).unwrap();
        let mut r = rng(1);
        let x = [0.7];
        let y = kernel.sample_transition(&x, 0.0, 1e-12, &mut r).unwrap();
        assert!((y[0] - x[0]).abs() < 1e-5);
    }

    #[test]
    fn brownian_sample_moments() {
        let kernel = PriorKernel::brownian(2.0).unwrap();
        let mut r = rng(7);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let y = kernel.sample_transition(&[0.0], 0.0, 1.0, &mut r).unwrap()[0];
            sum += y;
            sumsq += y * y;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 3.0 * (2.0 / n as f64).sqrt(), "mean = {mean}");
        assert!((var - 2.0).abs() < 0.1, "var = {var}");
    }

    #[test]
    fn sde_matches_brownian_moments() {
        let gamma: f64 = 1.5;
        let kernel = PriorKernel::Sde {
            drift: Arc::new(|x, _| vec![0.0; x.len()]),
            diffusivity: Diffusivity::Scalar(Arc::new(move |_, _| gamma.sqrt())),
            steps: 50,
        };
        let mut r = rng(11);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let y = kernel.sample_transition(&[0.0], 0.0, 1.0, &mut r).unwrap()[0];
            sum += y;
            sumsq += y * y;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 3.0 * (gamma / n as f64).sqrt(), "mean = {mean}");
        assert!((var - gamma).abs() / gamma < 0.05, "var = {var}");
    }

    #[test]
    fn sde_frozen_dynamics() {
        let drift: VectorField = Arc::new(|x, _| vec![0.0; x.len()]);
        let diff = Diffusivity::Scalar(Arc::new(|_, _| 0.0));
        let mut r = rng(3);
        let x = sde_simulate(&[1.25, -0.5], &drift, &diff, 0.0, 1.0, 17, &mut r).unwrap();
        assert_eq!(x, vec![1.25, -0.5]);
    }

    #[test]
    fn sde_deterministic_decay() {
        let drift: VectorField = Arc::new(|x, _| x.iter().map(|v| -v).collect());
        let diff = Diffusivity::Scalar(Arc::new(|_, _| 0.0));
        let mut r = rng(3);
        let x = sde_simulate(&[1.0], &drift, &diff, 0.0, 1.0, 10_000, &mut r).unwrap();
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-3, "x = {}", x[0]);
    }

    #[test]
    fn sde_endpoint_variance() {
        let drift: VectorField = Arc::new(|x, _| vec![0.0; x.len()]);
        let diff = Diffusivity::Scalar(Arc::new(|_, _| 1.0));
        let mut r = rng(13);
        let n = 100_000;
        let span = 0.6;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let x = sde_simulate(&[0.0], &drift, &diff, 0.0, span, 20, &mut r).unwrap();
            sumsq += x[0] * x[0];
        }
        let var = sumsq / n as f64;
        assert!((var - span).abs() / span < 0.05, "var = {var}");
    }

    #[test]
    fn sde_reports_nonfinite_step() {
        let drift: VectorField = Arc::new(|_, _| vec![f64::NAN]);
        let diff = Diffusivity::Scalar(Arc::new(|_, _| 0.0));
        let mut r = rng(3);
        let err = sde_simulate(&[0.0], &drift, &diff, 0.0, 1.0, 5, &mut r).unwrap_err();
        assert!(err.to_string().contains("step 0"), "{err}");
    }

    fn normal_density(mean: f64, sd: f64) -> CondDensity {
        Arc::new(move |_, y: &[f64]| {
            let z = (y[0] - mean) / sd;
            (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
        })
    }

    #[test]
    fn identical_densities_give_unit_weights() {
        let p = normal_density(0.0, 1.0);
        let q = normal_density(0.0, 1.0);
        let samples = vec![vec![0.1], vec![-2.0], vec![0.8]];
        let w = proposal_reweight(&[0.0], &samples, &p, &q).unwrap();
        for s in w {
            assert_relative_eq!(s.weight, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn normalizing_constant_ratio() {
        // p = N(0,1), q = N(0,4): at y = 0 the ratio of densities is 2.
        let p = normal_density(0.0, 1.0);
        let q = normal_density(0.0, 2.0);
        let w = proposal_reweight(&[0.0], &[vec![0.0]], &p, &q).unwrap();
        assert_relative_eq!(w[0].weight, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn mean_weight_is_one() {
        let p = normal_density(0.3, 1.0);
        let q = normal_density(0.0, 1.5);
        let mut r = rng(5);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let y = 1.5 * rng_normal(&mut r);
            let w = proposal_reweight(&[0.0], &[vec![y]], &p, &q).unwrap();
            acc += w[0].weight;
        }
        let mean = acc / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean weight = {mean}");
    }

    #[test]
    fn zero_proposal_density_names_sample() {
        let p = normal_density(0.0, 1.0);
        let q: CondDensity = Arc::new(|_, _| 0.0);
        let err = proposal_reweight(&[0.0], &[vec![1.0]], &p, &q).unwrap_err();
        assert!(err.to_string().contains("sample 0"), "{err}");
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let kernel = PriorKernel::brownian(1.0).unwrap();
        let a = kernel
            .sample_transition(&[0.0], 0.0, 1.0, &mut rng(9))
            .unwrap();
        let b = kernel
            .sample_transition(&[0.0], 0.0, 1.0, &mut rng(9))
            .unwrap();
        assert_eq!(a, b);
    }

    fn rng_normal(r: &mut ChaCha8Rng) -> f64 {
        r.sample(StandardNormal)
    }
}
