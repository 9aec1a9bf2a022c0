//! Core data carriers shared across modules.

use serde::{Deserialize, Serialize};

use crate::error::{BridgeError, Result};

/// An ordered collection of d-dimensional points with optional per-point
/// weights. Storage is row-major and flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    dim: usize,
    data: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl SampleSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            weights: None,
        }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(BridgeError::Config("sample dimension must be >= 1".into()));
        }
        if data.len() % dim != 0 {
            return Err(BridgeError::Config(format!(
                "flat data length {} is not a multiple of dim {}",
                data.len(),
                dim
            )));
        }
        Ok(Self {
            dim,
            data,
            weights: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if dim == 0 {
            return Err(BridgeError::Config("empty sample set".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(BridgeError::Config(format!(
                    "row {} has {} columns, expected {}",
                    i,
                    r.len(),
                    dim
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            dim,
            data,
            weights: None,
        })
    }

    /// 1D convenience constructor.
    pub fn from_1d(values: Vec<f64>) -> Self {
        Self {
            dim: 1,
            data: values,
            weights: None,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(BridgeError::Config(format!(
                "{} weights for {} points",
                weights.len(),
                self.len()
            )));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, point: &[f64]) {
        debug_assert_eq!(point.len(), self.dim);
        self.data.extend_from_slice(point);
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    /// Per-coordinate sample mean.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        let mut m = vec![0.0; self.dim];
        for p in self.iter() {
            for (mj, &x) in m.iter_mut().zip(p) {
                *mj += x;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Per-coordinate sample standard deviation (unbiased; 1 for a single point).
    pub fn std_dev(&self) -> Vec<f64> {
        let n = self.len();
        if n < 2 {
            return vec![1.0; self.dim];
        }
        let mean = self.mean();
        let mut s = vec![0.0; self.dim];
        for p in self.iter() {
            for ((sj, &mj), &x) in s.iter_mut().zip(&mean).zip(p) {
                let d = x - mj;
                *sj += d * d;
            }
        }
        s.iter_mut().for_each(|v| *v = (*v / (n as f64 - 1.0)).sqrt());
        s
    }
}
