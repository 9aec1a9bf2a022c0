//! Parametric non-negative function families `Φ(z, β)`.
//!
//! Two parameterizations are supported: exp-linear `Φ = exp(Σ β_k F_k(z))`
//! and square-linear `Φ = (Σ β_k F_k(z))²`, over monomial or Hermite-function
//! bases with optional per-coordinate standardization fitted from data.
//! Derivatives in both `β` and `z` are analytic.

use serde::{Deserialize, Serialize};

use crate::error::{BridgeError, Result};
use crate::types::SampleSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisFamily {
    Monomials,
    Hermite,
}

/// Rule for combining 1D functions into a multi-dimensional basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Truncation {
    /// Multi-indices ordered by total degree, truncated to the requested count.
    TotalDegree,
    /// Per-axis degrees capped at ceil(count^(1/d)), same ordering and truncation.
    PerAxis,
}

/// Affine map `z ↦ (z − μ) / σ` applied before basis evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sdev: Vec<f64>,
}

impl Standardization {
    pub fn fit(samples: &SampleSet) -> Self {
        let mean = samples.mean();
        let mut sdev = samples.std_dev();
        for s in &mut sdev {
            if !(*s > 0.0) {
                *s = 1.0;
            }
        }
        Self { mean, sdev }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            sdev: vec![1.0; dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisElement {
    /// The constant function 1.
    Constant,
    /// Tensor product of 1D functions, one degree per axis.
    Tensor(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub dim: usize,
    pub elements: Vec<BasisElement>,
    pub standardization: Option<Standardization>,
}

/// Multi-indices over `dim` axes ordered by (total degree, lexicographic),
/// with an optional per-axis cap, truncated to `count`.
fn multi_indices(dim: usize, count: usize, per_axis_cap: Option<usize>) -> Vec<Vec<usize>> {
    fn compositions(dim: usize, total: usize, cap: Option<usize>, out: &mut Vec<Vec<usize>>) {
        fn rec(prefix: &mut Vec<usize>, left: usize, slots: usize, cap: Option<usize>, out: &mut Vec<Vec<usize>>) {
            if slots == 1 {
                if cap.map_or(true, |c| left < c) {
                    prefix.push(left);
                    out.push(prefix.clone());
                    prefix.pop();
                }
                return;
            }
            let hi = cap.map_or(left, |c| left.min(c - 1));
            for v in 0..=hi {
                prefix.push(v);
                rec(prefix, left - v, slots - 1, cap, out);
                prefix.pop();
            }
        }
        rec(&mut Vec::with_capacity(dim), total, dim, cap, out);
    }

    let mut out = Vec::with_capacity(count);
    let mut total = 0usize;
    while out.len() < count {
        let before = out.len();
        compositions(dim, total, per_axis_cap, &mut out);
        if out.len() == before && per_axis_cap.map_or(false, |c| total > dim * c) {
            break; // cap exhausted; cannot produce more elements
        }
        total += 1;
    }
    out.truncate(count);
    out
}

impl BasisSpec {
    pub fn new(family: BasisFamily, dim: usize, count: usize, truncation: Truncation) -> Result<Self> {
        if count == 0 {
            return Err(BridgeError::Config("basis count must be >= 1".into()));
        }
        if dim == 0 {
            return Err(BridgeError::Config("basis dimension must be >= 1".into()));
        }
        let cap = match truncation {
            Truncation::TotalDegree => None,
            Truncation::PerAxis => Some((count as f64).powf(1.0 / dim as f64).ceil() as usize),
        };
        let elements = multi_indices(dim, count, cap)
            .into_iter()
            .map(BasisElement::Tensor)
            .collect();
        Ok(Self {
            family,
            dim,
            elements,
            standardization: None,
        })
    }

    pub fn monomials(dim: usize, count: usize) -> Result<Self> {
        Self::new(BasisFamily::Monomials, dim, count, Truncation::TotalDegree)
    }

    pub fn hermite(dim: usize, count: usize, truncation: Truncation) -> Result<Self> {
        Self::new(BasisFamily::Hermite, dim, count, truncation)
    }

    /// Prepend an explicit constant element if none is present. Tensor index
    /// (0,…,0) counts as constant for the monomial family only.
    pub fn with_constant(mut self) -> Self {
        if self.constant_index().is_none() {
            self.elements.insert(0, BasisElement::Constant);
        }
        self
    }

    pub fn with_standardization(mut self, s: Standardization) -> Result<Self> {
        if s.mean.len() != self.dim || s.sdev.len() != self.dim {
            return Err(BridgeError::Config("standardization dimension mismatch".into()));
        }
        if s.sdev.iter().any(|v| !(*v > 0.0)) {
            return Err(BridgeError::Config("standardization sigma must be positive".into()));
        }
        self.standardization = Some(s);
        Ok(self)
    }

    pub fn standardized_from(self, samples: &SampleSet) -> Result<Self> {
        let s = Standardization::fit(samples);
        self.with_standardization(s)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Index of the element whose value is identically 1, if any.
    pub fn constant_index(&self) -> Option<usize> {
        self.elements.iter().position(|e| match e {
            BasisElement::Constant => true,
            BasisElement::Tensor(idx) => {
                self.family == BasisFamily::Monomials && idx.iter().all(|&i| i == 0)
            }
        })
    }

    fn max_degree(&self) -> usize {
        self.elements
            .iter()
            .filter_map(|e| match e {
                BasisElement::Tensor(idx) => idx.iter().copied().max(),
                BasisElement::Constant => None,
            })
            .max()
            .unwrap_or(0)
    }

    fn standardize(&self, z: &[f64]) -> Vec<f64> {
        match &self.standardization {
            Some(s) => z
                .iter()
                .zip(&s.mean)
                .zip(&s.sdev)
                .map(|((&x, &m), &sd)| (x - m) / sd)
                .collect(),
            None => z.to_vec(),
        }
    }

    /// 1D function values (and derivatives) per axis up to the needed degree.
    /// Tables run one degree past the maximum so Hermite derivatives close.
    fn tables(&self, zs: &[f64], with_grad: bool) -> (Vec<Vec<f64>>, Option<Vec<Vec<f64>>>) {
        let deg = self.max_degree() + 1;
        let mut vals = Vec::with_capacity(self.dim);
        let mut grads = if with_grad { Some(Vec::with_capacity(self.dim)) } else { None };
        for &x in zs {
            let (v, g) = match self.family {
                BasisFamily::Monomials => monomial_table(x, deg, with_grad),
                BasisFamily::Hermite => hermite_table(x, deg, with_grad),
            };
            vals.push(v);
            if let Some(gs) = grads.as_mut() {
                gs.push(g.unwrap());
            }
        }
        (vals, grads)
    }

    /// Evaluate all basis functions at `z`.
    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_input(z)?;
        let zs = self.standardize(z);
        let (tab, _) = self.tables(&zs, false);
        Ok(self
            .elements
            .iter()
            .map(|e| match e {
                BasisElement::Constant => 1.0,
                BasisElement::Tensor(idx) => idx
                    .iter()
                    .enumerate()
                    .map(|(axis, &k)| tab[axis][k])
                    .product(),
            })
            .collect())
    }

    /// Values and gradients w.r.t. the raw coordinates (chain rule through
    /// the standardization). Gradient layout is row-major K×d.
    pub fn eval_with_grad(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(z)?;
        let zs = self.standardize(z);
        let (tab, dtab) = self.tables(&zs, true);
        let dtab = dtab.unwrap();
        let inv_sd: Vec<f64> = match &self.standardization {
            Some(s) => s.sdev.iter().map(|v| 1.0 / v).collect(),
            None => vec![1.0; self.dim],
        };
        let k = self.elements.len();
        let mut values = Vec::with_capacity(k);
        let mut grad = vec![0.0; k * self.dim];
        for (ei, e) in self.elements.iter().enumerate() {
            match e {
                BasisElement::Constant => values.push(1.0),
                BasisElement::Tensor(idx) => {
                    let mut v = 1.0;
                    for (axis, &kk) in idx.iter().enumerate() {
                        v *= tab[axis][kk];
                    }
                    values.push(v);
                    for axis in 0..self.dim {
                        let mut g = 1.0;
                        for (a2, &kk) in idx.iter().enumerate() {
                            g *= if a2 == axis { dtab[a2][kk] } else { tab[a2][kk] };
                        }
                        grad[ei * self.dim + axis] = g * inv_sd[axis];
                    }
                }
            }
        }
        Ok((values, grad))
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return Err(BridgeError::Config(format!(
                "point dimension {} does not match basis dimension {}",
                z.len(),
                self.dim
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(BridgeError::Numeric(format!("non-finite input {z:?}")));
        }
        Ok(())
    }
}

fn monomial_table(x: f64, deg: usize, with_grad: bool) -> (Vec<f64>, Option<Vec<f64>>) {
    let mut v = Vec::with_capacity(deg + 1);
    let mut p = 1.0;
    for _ in 0..=deg {
        v.push(p);
        p *= x;
    }
    let g = with_grad.then(|| {
        (0..=deg)
            .map(|k| if k == 0 { 0.0 } else { k as f64 * v[k - 1] })
            .collect()
    });
    (v, g)
}

/// Normalized Hermite functions `h_k(x) = (2^k k! √π)^{−1/2} H_k(x) e^{−x²/2}`
/// via the stable recurrence
/// `h_k = x·√(2/k)·h_{k−1} − √((k−1)/k)·h_{k−2}`,
/// with `h_k' = √(k/2)·h_{k−1} − √((k+1)/2)·h_{k+1}`.
fn hermite_table(x: f64, deg: usize, with_grad: bool) -> (Vec<f64>, Option<Vec<f64>>) {
    // one extra degree so the derivative of h_deg is available
    let top = deg + 1;
    let mut h = Vec::with_capacity(top + 1);
    h.push(std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp());
    if top >= 1 {
        h.push(x * 2.0f64.sqrt() * h[0]);
    }
    for k in 2..=top {
        let kf = k as f64;
        let v = x * (2.0 / kf).sqrt() * h[k - 1] - ((kf - 1.0) / kf).sqrt() * h[k - 2];
        h.push(v);
    }
    let g = with_grad.then(|| {
        (0..=deg)
            .map(|k| {
                let kf = k as f64;
                let lower = if k == 0 { 0.0 } else { (kf / 2.0).sqrt() * h[k - 1] };
                lower - ((kf + 1.0) / 2.0).sqrt() * h[k + 1]
            })
            .collect()
    });
    h.truncate(deg + 1);
    (h, g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parameterization {
    ExpLinear,
    SquareLinear,
}

/// A non-negative parametric function `Φ(z, β)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveModel {
    pub parameterization: Parameterization,
    pub basis: BasisSpec,
    pub beta: Vec<f64>,
}

/// Value and analytic derivatives of a model evaluation.
#[derive(Debug, Clone)]
pub struct ModelEval {
    pub value: f64,
    pub grad_beta: Vec<f64>,
    pub grad_z: Vec<f64>,
}

impl PositiveModel {
    /// Build a model with β = 0. The exp-linear family always carries an
    /// explicit constant element so the normalization gauge is a coordinate.
    pub fn new(parameterization: Parameterization, basis: BasisSpec) -> Self {
        let basis = match parameterization {
            Parameterization::ExpLinear => basis.with_constant(),
            Parameterization::SquareLinear => basis,
        };
        let beta = vec![0.0; basis.len()];
        Self {
            parameterization,
            basis,
            beta,
        }
    }

    pub fn with_beta(mut self, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != self.basis.len() {
            return Err(BridgeError::Config(format!(
                "beta length {} does not match basis count {}",
                beta.len(),
                self.basis.len()
            )));
        }
        self.beta = beta;
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.basis.len()
    }

    /// Φ from precomputed basis features.
    pub fn value_from_features(&self, features: &[f64]) -> f64 {
        let s: f64 = self.beta.iter().zip(features).map(|(b, f)| b * f).sum();
        match self.parameterization {
            Parameterization::ExpLinear => s.exp(),
            Parameterization::SquareLinear => s * s,
        }
    }

    pub fn value(&self, z: &[f64]) -> Result<f64> {
        self.check_beta()?;
        Ok(self.value_from_features(&self.basis.eval(z)?))
    }

    /// Value with analytic gradients in β and z.
    pub fn eval(&self, z: &[f64]) -> Result<ModelEval> {
        self.check_beta()?;
        let (features, fgrad) = self.basis.eval_with_grad(z)?;
        let d = self.basis.dim;
        let k = features.len();
        let s: f64 = self.beta.iter().zip(&features).map(|(b, f)| b * f).sum();
        // ∇_z s = Σ_k β_k ∇F_k
        let mut sz = vec![0.0; d];
        for ki in 0..k {
            for a in 0..d {
                sz[a] += self.beta[ki] * fgrad[ki * d + a];
            }
        }
        match self.parameterization {
            Parameterization::ExpLinear => {
                let value = s.exp();
                let grad_beta = features.iter().map(|f| value * f).collect();
                let grad_z = sz.iter().map(|g| value * g).collect();
                Ok(ModelEval {
                    value,
                    grad_beta,
                    grad_z,
                })
            }
            Parameterization::SquareLinear => {
                let value = s * s;
                let grad_beta = features.iter().map(|f| 2.0 * s * f).collect();
                let grad_z = sz.iter().map(|g| 2.0 * s * g).collect();
                Ok(ModelEval {
                    value,
                    grad_beta,
                    grad_z,
                })
            }
        }
    }

    /// Value and z-gradient only (hot path for the flow propagators).
    pub fn value_grad_z(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let e = self.eval(z)?;
        Ok((e.value, e.grad_z))
    }

    fn check_beta(&self) -> Result<()> {
        if self.beta.len() != self.basis.len() {
            return Err(BridgeError::Config(format!(
                "beta length {} does not match basis count {}",
                self.beta.len(),
                self.basis.len()
            )));
        }
        Ok(())
    }
}
