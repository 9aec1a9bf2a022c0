//! Grid-based classical Fortet/Sinkhorn oracle.
//!
//! For closed-form marginals tabulated on a uniform grid, this module runs
//! the composed iteration `Ω = E ∘ D₁ ∘ E† ∘ D₀` of the four maps
//!
//! * `E : φ₁ ↦ φ₀ = ∫ p(x, y) φ₁(y) dy`
//! * `E†: φ̂₀ ↦ φ̂₁ = ∫ p(x, y) φ̂₀(x) dx`
//! * `D₀: φ₀ ↦ φ̂₀ = ρ₀ / φ₀`
//! * `D₁: φ̂₁ ↦ φ₁ = ρ₁ / φ̂₁`
//!
//! with trapezoidal quadrature, tracking Hilbert-projective-metric gaps
//! between successive iterates and the final system residuals. It is the
//! ground truth against which the sample-based solver is validated.

use crate::error::{BridgeError, Result};
use crate::kernels::{heat_kernel_density, PriorKernel};

/// One uniform grid axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridAxis {
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step()
    }
}

/// A uniform tensor grid in 1 or 2 dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub axes: Vec<GridAxis>,
}

impl Grid {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(BridgeError::Config(
                "oracle grids are limited to 1 or 2 axes".into(),
            ));
        }
        for a in &axes {
            if a.n < 2 || !(a.hi > a.lo) {
                return Err(BridgeError::Config(format!(
                    "bad grid axis: [{}, {}] with {} points",
                    a.lo, a.hi, a.n
                )));
            }
        }
        Ok(Self { axes })
    }

    pub fn line(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(vec![GridAxis { lo, hi, n }])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinates of the flat index (row-major).
    pub fn point(&self, flat: usize) -> Vec<f64> {
        match self.axes.len() {
            1 => vec![self.axes[0].point(flat)],
            _ => {
                let n1 = self.axes[1].n;
                vec![
                    self.axes[0].point(flat / n1),
                    self.axes[1].point(flat % n1),
                ]
            }
        }
    }

    /// Trapezoidal quadrature weight of the flat index.
    pub fn weight(&self, flat: usize) -> f64 {
        match self.axes.len() {
            1 => axis_weight(&self.axes[0], flat),
            _ => {
                let n1 = self.axes[1].n;
                axis_weight(&self.axes[0], flat / n1) * axis_weight(&self.axes[1], flat % n1)
            }
        }
    }
}

fn axis_weight(a: &GridAxis, i: usize) -> f64 {
    let h = a.step();
    if i == 0 || i == a.n - 1 {
        0.5 * h
    } else {
        h
    }
}

/// A function tabulated on a grid. Values are non-negative; strictly
/// positive wherever the associated marginal mass is non-negligible.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn tabulate(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self { grid, values }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        let values = vec![value; grid.len()];
        Self { grid, values }
    }

    pub fn integral(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| self.grid.weight(i) * v)
            .sum()
    }
}

/// Hilbert projective metric between two strictly positive fields on the
/// same grid: `log(max_i u_i/v_i) − log(min_i u_i/v_i)`.
pub fn hilbert_metric(u: &GridField, v: &GridField) -> Result<f64> {
    if u.grid != v.grid {
        return Err(BridgeError::Config("fields live on different grids".into()));
    }
    let mut max_ratio = f64::NEG_INFINITY;
    let mut min_ratio = f64::INFINITY;
    for (i, (&a, &b)) in u.values.iter().zip(&v.values).enumerate() {
        if !(a > 0.0) || !(b > 0.0) {
            return Err(BridgeError::Domain(format!(
                "non-positive entry at cell {i}: u={a}, v={b}"
            )));
        }
        let r = a / b;
        max_ratio = max_ratio.max(r);
        min_ratio = min_ratio.min(r);
    }
    Ok(max_ratio.ln() - min_ratio.ln())
}

/// State of the Fortet iteration.
#[derive(Debug, Clone)]
pub struct FortetState {
    pub phi0: GridField,
    pub phihat0: GridField,
    pub phi1: GridField,
    pub phihat1: GridField,
    pub iteration: usize,
    pub hilbert_gaps: Vec<f64>,
    /// Sup-norm defects of the two boundary products over unmasked cells.
    pub residuals: (f64, f64),
    pub converged: bool,
}

/// Kernel application machinery. The Brownian kernel is separable across
/// axes, so 2D applications reduce to two 1D matrix sweeps; a general
/// closed-form kernel is limited to 1D with an explicit matrix.
enum KernelApply {
    Separable { axis_mats: Vec<Vec<f64>> },
    Dense { mat: Vec<f64>, n: usize },
}

impl KernelApply {
    fn build(grid: &Grid, kernel: &PriorKernel) -> Result<Self> {
        match kernel {
            PriorKernel::Brownian { gamma } => {
                let axis_mats = grid
                    .axes
                    .iter()
                    .map(|a| {
                        let mut m = vec![0.0; a.n * a.n];
                        for i in 0..a.n {
                            for j in 0..a.n {
                                m[i * a.n + j] = heat_kernel_density(
                                    &[a.point(i)],
                                    &[a.point(j)],
                                    0.0,
                                    1.0,
                                    *gamma,
                                )
                                .expect("valid kernel arguments");
                            }
                        }
                        m
                    })
                    .collect();
                Ok(KernelApply::Separable { axis_mats })
            }
            PriorKernel::ClosedFormWithProposal { density, .. } => {
                if grid.dim() != 1 {
                    return Err(BridgeError::Unsupported(
                        "closed-form kernels are supported on 1D grids only".into(),
                    ));
                }
                let n = grid.len();
                let mut mat = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        mat[i * n + j] = density(&grid.point(i), &grid.point(j));
                    }
                }
                Ok(KernelApply::Dense { mat, n })
            }
            PriorKernel::Sde { .. } => Err(BridgeError::Unsupported(
                "the grid oracle needs an evaluable kernel density".into(),
            )),
        }
    }

    /// `out(x) = ∫ p(x, y) f(y) dy` by trapezoidal quadrature. The Brownian
    /// kernel is symmetric in its arguments, so the same application serves
    /// both `E` and `E†`; the dense path exposes a transpose flag.
    fn apply(&self, grid: &Grid, f: &[f64], transpose: bool) -> Vec<f64> {
        match self {
            KernelApply::Dense { mat, n } => {
                let h = grid.axes[0].step();
                let mut out = vec![0.0; *n];
                for i in 0..*n {
                    let mut acc = 0.0;
                    for j in 0..*n {
                        let k = if transpose { mat[j * n + i] } else { mat[i * n + j] };
                        let w = if j == 0 || j == *n - 1 { 0.5 } else { 1.0 };
                        acc += w * k * f[j];
                    }
                    out[i] = acc * h;
                }
                out
            }
            KernelApply::Separable { axis_mats } => {
                let mut cur = f.to_vec();
                match grid.dim() {
                    1 => {
                        let a = &grid.axes[0];
                        apply_axis_1d(&axis_mats[0], a, &cur)
                    }
                    _ => {
                        // axis 0 sweep: for each column, mix rows
                        let (n0, n1) = (grid.axes[0].n, grid.axes[1].n);
                        let a0 = &grid.axes[0];
                        let a1 = &grid.axes[1];
                        let mut tmp = vec![0.0; n0 * n1];
                        for j in 0..n1 {
                            let col: Vec<f64> = (0..n0).map(|i| cur[i * n1 + j]).collect();
                            let mixed = apply_axis_1d(&axis_mats[0], a0, &col);
                            for i in 0..n0 {
                                tmp[i * n1 + j] = mixed[i];
                            }
                        }
                        for i in 0..n0 {
                            let row = tmp[i * n1..(i + 1) * n1].to_vec();
                            let mixed = apply_axis_1d(&axis_mats[1], a1, &row);
                            tmp[i * n1..(i + 1) * n1].copy_from_slice(&mixed);
                        }
                        cur = tmp;
                        cur
                    }
                }
            }
        }
    }
}

fn apply_axis_1d(mat: &[f64], axis: &GridAxis, f: &[f64]) -> Vec<f64> {
    let n = axis.n;
    let h = axis.step();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            let w = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            acc += w * mat[i * n + j] * f[j];
        }
        out[i] = acc * h;
    }
    out
}

const MASK_REL: f64 = 1e-14;
const DENOM_FLOOR: f64 = 1e-250;

fn mask_of(rho: &GridField) -> Vec<bool> {
    let max = rho.values.iter().cloned().fold(0.0, f64::max);
    rho.values.iter().map(|&v| v >= MASK_REL * max).collect()
}

/// Division map `ρ / φ` with masked cells set to zero. Errors when the
/// denominator underflows on an unmasked cell.
fn divide_masked(rho: &GridField, phi: &[f64], mask: &[bool], what: &str) -> Result<Vec<f64>> {
    rho.values
        .iter()
        .zip(phi)
        .zip(mask)
        .enumerate()
        .map(|(i, ((&r, &p), &keep))| {
            if !keep {
                return Ok(0.0);
            }
            if !(p > DENOM_FLOOR) || !p.is_finite() {
                return Err(BridgeError::Numeric(format!(
                    "{what}: denominator {p} below floor at grid cell {i}"
                )));
            }
            Ok(r / p)
        })
        .collect()
}

/// One sweep of the four maps from the current `phi0` in `state`:
/// `φ̂₀ = ρ₀/φ₀`, `φ̂₁ = E†φ̂₀`, `φ₁ = ρ₁/φ̂₁`, `φ₀ = Eφ₁`.
pub fn apply_maps(
    state: &FortetState,
    rho0: &GridField,
    rho1: &GridField,
    kernel: &PriorKernel,
) -> Result<FortetState> {
    let grid = &rho0.grid;
    let apply = KernelApply::build(grid, kernel)?;
    sweep(state, rho0, rho1, &apply, &mask_of(rho0), &mask_of(rho1))
}

fn sweep(
    state: &FortetState,
    rho0: &GridField,
    rho1: &GridField,
    apply: &KernelApply,
    mask0: &[bool],
    mask1: &[bool],
) -> Result<FortetState> {
    let grid = &rho0.grid;
    let phihat0 = divide_masked(rho0, &state.phi0.values, mask0, "D0")?;
    let phihat1 = apply.apply(grid, &phihat0, true);
    let phi1 = divide_masked(rho1, &phihat1, mask1, "D1")?;
    let phi0 = apply.apply(grid, &phi1, false);
    let field = |values: Vec<f64>| GridField {
        grid: grid.clone(),
        values,
    };
    Ok(FortetState {
        phi0: field(phi0),
        phihat0: field(phihat0),
        phi1: field(phi1),
        phihat1: field(phihat1),
        iteration: state.iteration + 1,
        hilbert_gaps: state.hilbert_gaps.clone(),
        residuals: (f64::NAN, f64::NAN),
        converged: false,
    })
}

fn residuals(
    state: &FortetState,
    rho0: &GridField,
    rho1: &GridField,
    apply: &KernelApply,
    mask0: &[bool],
    mask1: &[bool],
) -> (f64, f64) {
    let grid = &rho0.grid;
    let e_phi1 = apply.apply(grid, &state.phi1.values, false);
    let mut r0: f64 = 0.0;
    for (i, keep) in mask0.iter().enumerate() {
        if *keep {
            r0 = r0.max((state.phihat0.values[i] * e_phi1[i] - rho0.values[i]).abs());
        }
    }
    let edag_phihat0 = apply.apply(grid, &state.phihat0.values, true);
    let mut r1: f64 = 0.0;
    for (i, keep) in mask1.iter().enumerate() {
        if *keep {
            r1 = r1.max((state.phi1.values[i] * edag_phihat0[i] - rho1.values[i]).abs());
        }
    }
    (r0, r1)
}

/// Iterate `Ω = E ∘ D₁ ∘ E† ∘ D₀` from `φ₀ ≡ 1` until the Hilbert gap
/// between successive `φ₀` iterates drops below `tol`.
pub fn fortet_solve(
    rho0: &GridField,
    rho1: &GridField,
    kernel: &PriorKernel,
    tol: f64,
    max_iter: usize,
) -> Result<FortetState> {
    if rho0.grid != rho1.grid {
        return Err(BridgeError::Config("marginals live on different grids".into()));
    }
    for (name, rho) in [("rho0", rho0), ("rho1", rho1)] {
        let mass = rho.integral();
        if (mass - 1.0).abs() > 1e-6 {
            return Err(BridgeError::Config(format!(
                "{name} mass on the grid is {mass}, expected 1 within 1e-6"
            )));
        }
    }
    let grid = &rho0.grid;
    let apply = KernelApply::build(grid, kernel)?;
    let mask0 = mask_of(rho0);
    let mask1 = mask_of(rho1);

    let mut state = FortetState {
        phi0: GridField::constant(grid.clone(), 1.0),
        phihat0: GridField::constant(grid.clone(), 1.0),
        phi1: GridField::constant(grid.clone(), 1.0),
        phihat1: GridField::constant(grid.clone(), 1.0),
        iteration: 0,
        hilbert_gaps: Vec::new(),
        residuals: (f64::NAN, f64::NAN),
        converged: false,
    };
    for _ in 0..max_iter {
        let next = sweep(&state, rho0, rho1, &apply, &mask0, &mask1)?;
        let gap = hilbert_metric(&next.phi0, &state.phi0)?;
        state = next;
        state.hilbert_gaps.push(gap);
        if gap <= tol {
            state.converged = true;
            break;
        }
    }
    state.residuals = residuals(&state, rho0, rho1, &apply, &mask0, &mask1);
    Ok(state)
}

/// Quadrature-propagated `ρ_t = φ_t·φ̂_t` on the grid at interior time `t`.
/// Brownian prior only: the propagators are heat kernels of widths
/// `γ(1−t)` and `γt`.
pub fn oracle_interpolation(state: &FortetState, t: f64, kernel: &PriorKernel) -> Result<GridField> {
    let gamma = kernel.gamma().ok_or_else(|| {
        BridgeError::Unsupported("oracle interpolation requires a Brownian prior".into())
    })?;
    if !(0.0..=1.0).contains(&t) {
        return Err(BridgeError::Domain(format!("t = {t} outside [0, 1]")));
    }
    let grid = &state.phi0.grid;
    let phi_t: Vec<f64> = if t >= 1.0 {
        state.phi1.values.clone()
    } else {
        let k = PriorKernel::Brownian {
            gamma: gamma * (1.0 - t),
        };
        KernelApply::build(grid, &k)?.apply(grid, &state.phi1.values, false)
    };
    let phihat_t: Vec<f64> = if t <= 0.0 {
        state.phihat0.values.clone()
    } else {
        let k = PriorKernel::Brownian { gamma: gamma * t };
        KernelApply::build(grid, &k)?.apply(grid, &state.phihat0.values, true)
    };
    Ok(GridField {
        grid: grid.clone(),
        values: phi_t.iter().zip(&phihat_t).map(|(a, b)| a * b).collect(),
    })
}

/// Default oracle grid: marginal supports padded by `4·max(√γ, spread)`.
pub fn default_grid_1d(lo: f64, hi: f64, spread: f64, gamma: f64, n: usize) -> Result<Grid> {
    let pad = 4.0 * gamma.sqrt().max(spread);
    Grid::line(lo - pad, hi + pad, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn gauss(mean: f64, sd: f64) -> impl Fn(&[f64]) -> f64 {
        move |x: &[f64]| {
            let z = (x[0] - mean) / sd;
            (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
        }
    }

    fn unit_state(grid: &Grid) -> FortetState {
        FortetState {
            phi0: GridField::constant(grid.clone(), 1.0),
            phihat0: GridField::constant(grid.clone(), 1.0),
            phi1: GridField::constant(grid.clone(), 1.0),
            phihat1: GridField::constant(grid.clone(), 1.0),
            iteration: 0,
            hilbert_gaps: Vec::new(),
            residuals: (f64::NAN, f64::NAN),
            converged: false,
        }
    }

    #[test]
    fn hilbert_metric_identical_rays() {
        let g = Grid::line(0.0, 1.0, 4).unwrap();
        let u = GridField::tabulate(g.clone(), |x| 1.0 + x[0]);
        assert_eq!(hilbert_metric(&u, &u).unwrap(), 0.0);
        let scaled = GridField {
            grid: g,
            values: u.values.iter().map(|v| 7.3 * v).collect(),
        };
        assert!(hilbert_metric(&u, &scaled).unwrap().abs() < 1e-12);
    }

    #[test]
    fn hilbert_metric_two_cell_example() {
        let g = Grid::line(0.0, 1.0, 2).unwrap();
        let u = GridField {
            grid: g.clone(),
            values: vec![1.0, 2.0],
        };
        let v = GridField {
            grid: g,
            values: vec![2.0, 1.0],
        };
        assert_relative_eq!(hilbert_metric(&u, &v).unwrap(), 4.0f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn hilbert_metric_rejects_nonpositive() {
        let g = Grid::line(0.0, 1.0, 2).unwrap();
        let u = GridField {
            grid: g.clone(),
            values: vec![1.0, 0.0],
        };
        let v = GridField {
            grid: g,
            values: vec![1.0, 1.0],
        };
        assert!(hilbert_metric(&u, &v).is_err());
    }

    #[test]
    fn feasible_prior_needs_one_sweep() {
        // ρ₁ equal to the push-forward of ρ₀: a single sweep from φ₀ ≡ 1
        // returns φ₁ ≡ 1 up to quadrature error.
        let gamma = 1.0;
        let grid = Grid::line(-10.0, 10.0, 801).unwrap();
        let rho0 = GridField::tabulate(grid.clone(), gauss(0.0, 1.0));
        // push-forward of N(0,1) under the γ-heat kernel is N(0, 1+γ)
        let rho1 = GridField::tabulate(grid.clone(), gauss(0.0, (1.0f64 + gamma).sqrt()));
        let kernel = PriorKernel::brownian(gamma).unwrap();
        let state = apply_maps(&unit_state(&grid), &rho0, &rho1, &kernel).unwrap();
        let bulk: Vec<usize> = (0..grid.len())
            .filter(|&i| rho1.values[i] > 1e-8)
            .collect();
        for i in bulk {
            assert!(
                (state.phi1.values[i] - 1.0).abs() < 1e-5,
                "phi1[{i}] = {}",
                state.phi1.values[i]
            );
        }
    }

    #[test]
    fn d_maps_are_hilbert_isometries() {
        let grid = Grid::line(-5.0, 5.0, 101).unwrap();
        let rho0 = GridField::tabulate(grid.clone(), gauss(0.0, 1.0));
        let u = GridField::tabulate(grid.clone(), |x| 1.0 + 0.3 * (x[0]).sin().abs() + 0.1);
        let w = GridField::tabulate(grid.clone(), |x| 0.5 + 0.2 * (x[0] * 0.7).cos().abs());
        let mask = mask_of(&rho0);
        let du = divide_masked(&rho0, &u.values, &mask, "D0").unwrap();
        let dw = divide_masked(&rho0, &w.values, &mask, "D0").unwrap();
        // compare on unmasked cells only
        let keep: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| k.then_some(i))
            .collect();
        let ratio = |a: &[f64], b: &[f64]| {
            let rs: Vec<f64> = keep.iter().map(|&i| a[i] / b[i]).collect();
            rs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ln()
                - rs.iter().cloned().fold(f64::INFINITY, f64::min).ln()
        };
        let before = ratio(&u.values, &w.values);
        let after = ratio(&du, &dw);
        assert!((before - after).abs() < 1e-12, "{before} vs {after}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn e_map_is_non_expanding(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let grid = Grid::line(-4.0, 4.0, 41).unwrap();
            let kernel = PriorKernel::brownian(0.7).unwrap();
            let apply = KernelApply::build(&grid, &kernel).unwrap();
            let u: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(0.1..5.0)).collect();
            let w: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(0.1..5.0)).collect();
            let gf = |v: Vec<f64>| GridField { grid: grid.clone(), values: v };
            let before = hilbert_metric(&gf(u.clone()), &gf(w.clone())).unwrap();
            let after = hilbert_metric(
                &gf(apply.apply(&grid, &u, false)),
                &gf(apply.apply(&grid, &w, false)),
            ).unwrap();
            prop_assert!(after <= before + 1e-10, "{after} > {before}");
        }
    }

    #[test]
    fn gaussian_pair_converges() {
        let grid = Grid::line(-8.0, 8.0, 2048).unwrap();
        let rho0 = GridField::tabulate(grid.clone(), gauss(0.0, 1.0));
        let rho1 = GridField::tabulate(grid.clone(), gauss(0.0, 1.0));
        let kernel = PriorKernel::brownian(1.0).unwrap();
        let state = fortet_solve(&rho0, &rho1, &kernel, 1e-9, 10_000).unwrap();
        assert!(state.converged);
        assert!(state.residuals.0 < 1e-6, "residual0 = {}", state.residuals.0);
        assert!(state.residuals.1 < 1e-6, "residual1 = {}", state.residuals.1);
        // strictly decreasing gaps
        for w in state.hilbert_gaps.windows(2) {
            assert!(w[1] < w[0], "gaps not decreasing: {:?}", w);
        }
    }

    #[test]
    fn compact_uniform_marginals_converge() {
        let grid = Grid::line(-4.0, 4.0, 1024).unwrap();
        let square = |lo: f64, hi: f64| {
            move |x: &[f64]| {
                if x[0] >= lo && x[0] <= hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
        };
        let rho0 = GridField::tabulate(grid.clone(), square(-1.0, 1.0));
        let rho1 = GridField::tabulate(grid.clone(), square(0.0, 2.0));
        // snap masses to 1 on the grid (edges of the indicator fall between nodes)
        let normalize = |f: GridField| {
            let mass = f.integral();
            GridField {
                grid: f.grid,
                values: f.values.iter().map(|v| v / mass).collect(),
            }
        };
        let rho0 = normalize(rho0);
        let rho1 = normalize(rho1);
        let kernel = PriorKernel::brownian(0.5).unwrap();
        let state = fortet_solve(&rho0, &rho1, &kernel, 1e-9, 10_000).unwrap();
        assert!(state.converged);
        assert!(state.residuals.0 < 1e-6, "residual0 = {}", state.residuals.0);
    }

    #[test]
    fn interpolation_boundary_conditions() {
        let grid = Grid::line(-9.0, 9.0, 1024).unwrap();
        let rho0 = GridField::tabulate(grid.clone(), gauss(0.0, 1.0));
        let rho1 = GridField::tabulate(grid.clone(), gauss(1.0, 0.5));
        let kernel = PriorKernel::brownian(1.0).unwrap();
        let state = fortet_solve(&rho0, &rho1, &kernel, 1e-9, 10_000).unwrap();
        let at0 = oracle_interpolation(&state, 0.0, &kernel).unwrap();
        let at1 = oracle_interpolation(&state, 1.0, &kernel).unwrap();
        let sup0 = at0
            .values
            .iter()
            .zip(&rho0.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let sup1 = at1
            .values
            .iter()
            .zip(&rho1.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(sup0 < 1e-4, "t=0 defect {sup0}");
        assert!(sup1 < 1e-4, "t=1 defect {sup1}");
        let mid = oracle_interpolation(&state, 0.5, &kernel).unwrap();
        assert!((mid.integral() - 1.0).abs() < 1e-4, "mass = {}", mid.integral());
    }

    #[test]
    fn projective_invariance_of_iteration() {
        let grid = Grid::line(-7.0, 7.0, 256).unwrap();
        let rho0 = GridField::tabulate(grid.clone(), gauss(-0.5, 0.9));
        let rho1 = GridField::tabulate(grid.clone(), gauss(0.8, 1.1));
        let kernel = PriorKernel::brownian(1.0).unwrap();
        let base = unit_state(&grid);
        let mut scaled = unit_state(&grid);
        scaled.phi0 = GridField::constant(grid.clone(), 31.7);
        let a = apply_maps(&base, &rho0, &rho1, &kernel).unwrap();
        let b = apply_maps(&scaled, &rho0, &rho1, &kernel).unwrap();
        assert!(hilbert_metric(&a.phi0, &b.phi0).unwrap() < 1e-12);
    }

    #[test]
    fn marginal_swap_is_time_reversal() {
        let grid = Grid::line(-9.0, 9.0, 512).unwrap();
        let rho0 = GridField::tabulate(grid.clone(), gauss(0.0, 1.0));
        let rho1 = GridField::tabulate(grid.clone(), gauss(1.0, 0.7));
        let kernel = PriorKernel::brownian(1.0).unwrap();
        let fwd = fortet_solve(&rho0, &rho1, &kernel, 1e-10, 10_000).unwrap();
        let rev = fortet_solve(&rho1, &rho0, &kernel, 1e-10, 10_000).unwrap();
        let a = oracle_interpolation(&fwd, 0.25, &kernel).unwrap();
        let b = oracle_interpolation(&rev, 0.75, &kernel).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }
}
