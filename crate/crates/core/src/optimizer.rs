//! Maximizers for the per-step likelihood objectives.
//!
//! Damped Newton with Armijo backtracking for the concave exp-linear case;
//! a multi-start variant of the same ascent covers the non-concave
//! square-linear case. The caller supplies value, gradient, and an optional
//! Hessian; non-finite trial points are rejected by halving the step.

use nalgebra::{DMatrix, DVector};

use crate::error::{BridgeError, Result};

/// Objective evaluation at a point: value, gradient, optional Hessian.
#[derive(Debug, Clone)]
pub struct Objective {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct NewtonSettings {
    /// Relative gradient tolerance: stop when ‖g‖∞ ≤ tol·max(1, |L|).
    pub grad_tol: f64,
    pub max_iter: usize,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_halvings: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 200,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_halvings: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub beta_star: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restart_index: usize,
}

/// Ascent direction: Newton step from the (negated) Hessian when it can be
/// factorized, with λI regularization on failure; gradient otherwise.
fn direction(grad: &DVector<f64>, hessian: Option<&DMatrix<f64>>) -> DVector<f64> {
    let Some(h) = hessian else {
        return grad.clone();
    };
    let k = h.nrows();
    let neg = -h;
    // λ escalates from a trace-scaled floor until the factorization succeeds
    let scale = (neg.trace().abs() / k as f64).max(1e-12);
    let mut lambda = 0.0;
    for _ in 0..40 {
        let reg = &neg + DMatrix::identity(k, k) * lambda;
        if let Some(chol) = reg.cholesky() {
            let d = chol.solve(grad);
            if d.dot(grad) > 0.0 && d.iter().all(|v| v.is_finite()) {
                return d;
            }
        }
        lambda = if lambda == 0.0 { 1e-8 * scale } else { lambda * 10.0 };
    }
    grad.clone()
}

/// Maximize `f` from `init` by damped Newton ascent with Armijo backtracking.
pub fn maximize(
    f: &dyn Fn(&[f64]) -> Objective,
    init: &[f64],
    settings: &NewtonSettings,
) -> Result<OptimizeResult> {
    let mut beta = DVector::from_column_slice(init);
    let mut current = f(beta.as_slice());
    if !current.value.is_finite() {
        return Err(BridgeError::Optimization(format!(
            "objective is {} at the initial point {init:?}",
            current.value
        )));
    }
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..settings.max_iter {
        let gnorm = current.grad.amax();
        if gnorm <= settings.grad_tol * current.value.abs().max(1.0) {
            converged = true;
            break;
        }
        iterations += 1;
        let dir = direction(&current.grad, current.hessian.as_ref());
        let slope = dir.dot(&current.grad);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let trial = &beta + &dir * alpha;
            let cand = f(trial.as_slice());
            if cand.value.is_finite()
                && cand.value >= current.value + settings.armijo_c * alpha * slope
            {
                accepted = Some((trial, cand));
                break;
            }
            alpha *= settings.backtrack;
        }
        match accepted {
            Some((trial, cand)) => {
                beta = trial;
                current = cand;
            }
            None => {
                // flat or noisy to machine precision; treat as converged if
                // the gradient is already small, else report the trace
                if current.grad.amax() <= 1e3 * settings.grad_tol * current.value.abs().max(1.0) {
                    converged = true;
                    break;
                }
                return Err(BridgeError::Optimization(format!(
                    "line search failed at iteration {iterations}: value {}, ‖grad‖∞ {}",
                    current.value,
                    current.grad.amax()
                )));
            }
        }
    }
    if !converged {
        let gnorm = current.grad.amax();
        converged = gnorm <= settings.grad_tol * current.value.abs().max(1.0);
    }
    Ok(OptimizeResult {
        beta_star: beta.as_slice().to_vec(),
        objective: current.value,
        grad_norm: current.grad.amax(),
        iterations,
        converged,
        restart_index: 0,
    })
}

/// Run `maximize` from several starts, keeping the best objective.
/// Ties within 1e-12 go to the lowest restart index.
pub fn maximize_multistart(
    f: &dyn Fn(&[f64]) -> Objective,
    inits: &[Vec<f64>],
    settings: &NewtonSettings,
) -> Result<OptimizeResult> {
    if inits.is_empty() {
        return Err(BridgeError::Config("no starting points supplied".into()));
    }
    let mut best: Option<OptimizeResult> = None;
    let mut last_err = None;
    for (i, init) in inits.iter().enumerate() {
        match maximize(f, init, settings) {
            Ok(mut r) => {
                r.restart_index = i;
                let better = match &best {
                    None => true,
                    Some(b) => r.objective > b.objective + 1e-12,
                };
                if better {
                    best = Some(r);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        last_err.unwrap_or_else(|| BridgeError::Optimization("all restarts failed".into()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(beta: &[f64]) -> Objective {
        // −(β−1)²
        let b = beta[0];
        Objective {
            value: -(b - 1.0) * (b - 1.0),
            grad: DVector::from_vec(vec![-2.0 * (b - 1.0)]),
            hessian: Some(DMatrix::from_vec(1, 1, vec![-2.0])),
        }
    }

    #[test]
    fn quadratic_maximum() {
        let r = maximize(&quadratic, &[0.0], &NewtonSettings::default()).unwrap();
        assert!(r.converged);
        assert!((r.beta_star[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn exponential_stationarity() {
        // c·β − e^β with c = 2 has its maximum at β = log 2.
        let f = |beta: &[f64]| {
            let b = beta[0];
            Objective {
                value: 2.0 * b - b.exp(),
                grad: DVector::from_vec(vec![2.0 - b.exp()]),
                hessian: Some(DMatrix::from_vec(1, 1, vec![-b.exp()])),
            }
        };
        let r = maximize(&f, &[0.0], &NewtonSettings::default()).unwrap();
        assert!(r.converged);
        assert!((r.beta_star[0] - 2.0f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn monotone_ascent_on_concave_objective() {
        // track accepted values through a shared log
        use std::cell::RefCell;
        let log = RefCell::new(Vec::new());
        let f = |beta: &[f64]| {
            let b = beta[0];
            let value = -(b - 3.0) * (b - 3.0) - (b - 3.0).powi(4);
            log.borrow_mut().push(value);
            Objective {
                value,
                grad: DVector::from_vec(vec![-2.0 * (b - 3.0) - 4.0 * (b - 3.0).powi(3)]),
                hessian: Some(DMatrix::from_vec(
                    1,
                    1,
                    vec![-2.0 - 12.0 * (b - 3.0) * (b - 3.0)],
                )),
            }
        };
        let r = maximize(&f, &[-2.0], &NewtonSettings::default()).unwrap();
        assert!(r.converged);
        // accepted iterates form a non-decreasing subsequence; verify final ≥ first
        let values = log.borrow();
        assert!(values.last().unwrap() + 1e-12 >= values[0]);
    }

    #[test]
    fn gradient_only_fallback() {
        let f = |beta: &[f64]| {
            let b = beta[0];
            Objective {
                value: -(b - 1.0) * (b - 1.0),
                grad: DVector::from_vec(vec![-2.0 * (b - 1.0)]),
                hessian: None,
            }
        };
        let r = maximize(&f, &[4.0], &NewtonSettings::default()).unwrap();
        assert!(r.converged, "grad_norm = {}", r.grad_norm);
        assert!((r.beta_star[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn multistart_prefers_best_then_lowest_index() {
        // two basins: maxima at −2 (value 1) and +2 (value 2)
        let f = |beta: &[f64]| {
            let b = beta[0];
            let (c, peak) = if b < 0.0 { (-2.0, 1.0) } else { (2.0, 2.0) };
            Objective {
                value: peak - (b - c) * (b - c),
                grad: DVector::from_vec(vec![-2.0 * (b - c)]),
                hessian: Some(DMatrix::from_vec(1, 1, vec![-2.0])),
            }
        };
        let r = maximize_multistart(
            &f,
            &[vec![-1.0], vec![1.0], vec![3.0]],
            &NewtonSettings::default(),
        )
        .unwrap();
        assert!((r.beta_star[0] - 2.0).abs() < 1e-8);
        assert_eq!(r.restart_index, 1); // first start that reaches the best value
    }

    #[test]
    fn nonfinite_start_rejected() {
        let f = |_: &[f64]| Objective {
            value: f64::NAN,
            grad: DVector::from_vec(vec![0.0]),
            hessian: None,
        };
        assert!(maximize(&f, &[0.0], &NewtonSettings::default()).is_err());
    }
}
