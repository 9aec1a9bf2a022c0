//! Rough sampleable reference densities.
//!
//! A Gaussian kernel density estimator over the data points, with optional
//! support truncation normalized by the observed rejection count, plus a
//! lighter moment-matched Gaussian alternative. Fitted densities are
//! immutable; sampling streams own their generator state.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{BridgeError, Result};
use crate::types::SampleSet;

/// Bandwidth selection for the KDE.
#[derive(Debug, Clone, PartialEq)]
pub enum Bandwidth {
    /// Silverman's rule per dimension.
    Silverman,
    /// One bandwidth for every coordinate.
    Value(f64),
    /// Per-dimension bandwidths.
    PerDim(Vec<f64>),
}

/// Coordinate-wise box support `Ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SupportBounds {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }
}

/// A fitted Gaussian-kernel reference density, optionally truncated to a
/// box support with a rejection-count normalization factor.
#[derive(Debug, Clone)]
pub struct ReferenceDensity {
    centers: SampleSet,
    bandwidth: Vec<f64>,
    support: Option<SupportBounds>,
    /// `(m̃ + m_r)/m̃` estimated during truncation calibration; 1 untruncated.
    normalization: f64,
}

/// Draws from a reference density with their evaluated density values.
#[derive(Debug, Clone)]
pub struct DrawnSamples {
    pub points: SampleSet,
    pub densities: Vec<f64>,
    pub rejections: usize,
}

/// Fit an isotropic-per-dimension Gaussian KDE over the samples.
pub fn fit_kde(samples: &SampleSet, bandwidth: Bandwidth) -> Result<ReferenceDensity> {
    if samples.is_empty() {
        return Err(BridgeError::Config("cannot fit a KDE on zero samples".into()));
    }
    let d = samples.dim();
    let h = match bandwidth {
        Bandwidth::Value(v) => {
            if !(v > 0.0) {
                return Err(BridgeError::Config(format!("bandwidth must be positive, got {v}")));
            }
            vec![v; d]
        }
        Bandwidth::PerDim(hs) => {
            if hs.len() != d || hs.iter().any(|v| !(*v > 0.0)) {
                return Err(BridgeError::Config("invalid per-dimension bandwidths".into()));
            }
            hs
        }
        Bandwidth::Silverman => {
            let m = samples.len() as f64;
            let factor = (4.0 / ((d as f64 + 2.0) * m)).powf(1.0 / (d as f64 + 4.0));
            samples
                .std_dev()
                .iter()
                .map(|s| {
                    let h = s * factor;
                    if h > 0.0 {
                        h
                    } else {
                        factor
                    }
                })
                .collect()
        }
    };
    Ok(ReferenceDensity {
        centers: samples.clone(),
        bandwidth: h,
        support: None,
        normalization: 1.0,
    })
}

/// A single moment-matched Gaussian, the lighter alternative to the KDE.
/// Implemented as a one-center KDE with per-dimension bandwidth equal to
/// the sample standard deviation.
pub fn fit_gaussian(samples: &SampleSet) -> Result<ReferenceDensity> {
    if samples.is_empty() {
        return Err(BridgeError::Config("cannot fit a Gaussian on zero samples".into()));
    }
    let mean = samples.mean();
    let sdev = samples.std_dev();
    let centers = SampleSet::from_rows(&[mean])?;
    Ok(ReferenceDensity {
        centers,
        bandwidth: sdev,
        support: None,
        normalization: 1.0,
    })
}

/// Truncate a reference density to `support`, estimating the rejection
/// normalization `(m̃ + m_r)/m̃` from a calibration run of `calib_count`
/// accepted draws.
pub fn truncate(
    reference: &ReferenceDensity,
    support: SupportBounds,
    calib_count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ReferenceDensity> {
    if support.lower.len() != reference.centers.dim() || support.upper.len() != reference.centers.dim() {
        return Err(BridgeError::Config("support dimension mismatch".into()));
    }
    let calib = calib_count.max(1);
    let budget = 1000usize.saturating_mul(calib);
    let mut accepted = 0usize;
    let mut rejections = 0usize;
    let mut attempts = 0usize;
    while accepted < calib {
        if attempts >= budget {
            return Err(BridgeError::Support(format!(
                "retry budget of {budget} draws exhausted with {accepted} acceptances"
            )));
        }
        attempts += 1;
        let x = reference.raw_draw(rng);
        if support.contains(&x) {
            accepted += 1;
        } else {
            rejections += 1;
        }
    }
    let factor = (calib + rejections) as f64 / calib as f64;
    Ok(ReferenceDensity {
        centers: reference.centers.clone(),
        bandwidth: reference.bandwidth.clone(),
        support: Some(support),
        normalization: factor,
    })
}

impl ReferenceDensity {
    pub fn dim(&self) -> usize {
        self.centers.dim()
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn support(&self) -> Option<&SupportBounds> {
        self.support.as_ref()
    }

    /// Density value at `x` (truncated case includes the indicator and the
    /// rejection normalization factor).
    pub fn eval(&self, x: &[f64]) -> f64 {
        if let Some(s) = &self.support {
            if !s.contains(x) {
                return 0.0;
            }
        }
        let d = self.dim();
        let norm: f64 = self
            .bandwidth
            .iter()
            .map(|h| 1.0 / (h * (2.0 * PI).sqrt()))
            .product();
        let mut acc = 0.0;
        for c in self.centers.iter() {
            let mut q = 0.0;
            for a in 0..d {
                let z = (x[a] - c[a]) / self.bandwidth[a];
                q += z * z;
            }
            acc += (-0.5 * q).exp();
        }
        self.normalization * norm * acc / self.centers.len() as f64
    }

    fn raw_draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let i = rng.gen_range(0..self.centers.len());
        let c = self.centers.point(i);
        c.iter()
            .zip(&self.bandwidth)
            .map(|(&cj, &h)| cj + h * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// `count` i.i.d. draws paired with their density values. Truncated
    /// densities use rejection; the number of rejections is recorded.
    pub fn sample(&self, count: usize, rng: &mut ChaCha8Rng) -> Result<DrawnSamples> {
        if count == 0 {
            return Err(BridgeError::Config("sample count must be >= 1".into()));
        }
        let budget = 1000usize.saturating_mul(count);
        let mut points = SampleSet::new(self.dim());
        let mut densities = Vec::with_capacity(count);
        let mut rejections = 0usize;
        let mut attempts = 0usize;
        while densities.len() < count {
            if attempts >= budget {
                return Err(BridgeError::Support(format!(
                    "retry budget of {budget} draws exhausted with {} acceptances",
                    densities.len()
                )));
            }
            attempts += 1;
            let x = self.raw_draw(rng);
            let inside = self.support.as_ref().map_or(true, |s| s.contains(&x));
            if inside {
                densities.push(self.eval(&x));
                points.push(&x);
            } else {
                rejections += 1;
            }
        }
        Ok(DrawnSamples {
            points,
            densities,
            rejections,
        })
    }
}
