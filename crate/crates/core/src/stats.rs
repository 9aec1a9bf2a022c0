//! Small statistical utilities: two-sample energy distance with a
//! permutation test, Pearson correlation, and mean/std helpers.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::types::SampleSet;

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Two-sample energy distance
/// `2/(mn)ΣΣ|x−y| − 1/m²ΣΣ|x−x'| − 1/n²ΣΣ|y−y'|`.
pub fn energy_distance(a: &SampleSet, b: &SampleSet) -> f64 {
    let m = a.len() as f64;
    let n = b.len() as f64;
    let mut cross = 0.0;
    for x in a.iter() {
        for y in b.iter() {
            cross += euclid(x, y);
        }
    }
    let mut within_a = 0.0;
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            within_a += euclid(a.point(i), a.point(j));
        }
    }
    let mut within_b = 0.0;
    for i in 0..b.len() {
        for j in (i + 1)..b.len() {
            within_b += euclid(b.point(i), b.point(j));
        }
    }
    2.0 * cross / (m * n) - 2.0 * within_a / (m * m) - 2.0 * within_b / (n * n)
}

/// Permutation test on the energy distance. Returns the p-value estimate:
/// the fraction of label permutations whose statistic is at least the
/// observed one. The two-sample hypothesis is accepted at level `alpha`
/// when `p > alpha`.
pub fn energy_permutation_pvalue(
    a: &SampleSet,
    b: &SampleSet,
    permutations: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let observed = energy_distance(a, b);
    let dim = a.dim();
    let mut pool: Vec<Vec<f64>> = a.iter().chain(b.iter()).map(|p| p.to_vec()).collect();
    let m = a.len();
    let mut exceed = 0usize;
    for _ in 0..permutations {
        pool.shuffle(rng);
        let mut pa = SampleSet::new(dim);
        let mut pb = SampleSet::new(dim);
        for (i, p) in pool.iter().enumerate() {
            if i < m {
                pa.push(p);
            } else {
                pb.push(p);
            }
        }
        if energy_distance(&pa, &pb) >= observed {
            exceed += 1;
        }
    }
    (exceed as f64 + 1.0) / (permutations as f64 + 1.0)
}

/// Pearson correlation of two equal-length sequences.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// Sample mean and (unbiased) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trapezoidal quadrature of tabulated values on a uniform grid of step `h`.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    h * (0.5 * values[0] + inner + 0.5 * values[values.len() - 1])
}
