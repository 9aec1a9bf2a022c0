//! End-to-end tests of the `sbridge` binary: artifact layout, exit codes,
//! validation reporting, and byte-level determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sbridge"))
}

/// Small deterministic normal sampler for fixture CSVs (Box–Muller over a
/// 64-bit xorshift stream).
struct Rng(u64);

impl Rng {
    fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn normal(&mut self) -> f64 {
        let u = self.uniform().max(f64::MIN_POSITIVE);
        let v = self.uniform();
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    }
}

fn write_normal_csv(path: &Path, mean: f64, sd: f64, n: usize, seed: u64) {
    let mut rng = Rng(seed | 1);
    let mut text = String::from("z\n");
    for _ in 0..n {
        text.push_str(&format!("{}\n", mean + sd * rng.normal()));
    }
    fs::write(path, text).unwrap();
}

fn solve_config(dir: &Path, out: &str) -> PathBuf {
    write_normal_csv(&dir.join("x.csv"), 0.0, 1.0, 150, 21);
    write_normal_csv(&dir.join("y.csv"), 0.8, 0.6, 150, 22);
    let config = format!(
        r#"
seed = 11

[io]
samples0 = "{0}/x.csv"
samples1 = "{0}/y.csv"
out = "{0}/{1}"

[prior]
kind = "brownian"
gamma = 1.0

[model0]
parameterization = "exp-linear"
basis = "monomials"
count = 3

[model1]
parameterization = "exp-linear"
basis = "monomials"
count = 3

[solver]
max_outer = 30
m_tilde = 300
n_hat = 5

[flow]
mc_draws = 100
time_steps = 20

[interpolate]
times = [0.0, 0.5, 1.0]
grid = {{ lo = [-3.0], hi = [3.0], n = [13] }}
"#,
        dir.display(),
        out
    );
    let path = dir.join(format!("{out}.toml"));
    fs::write(&path, config).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

#[test]
fn solve_writes_all_artifacts_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = solve_config(dir.path(), "out");
    let out = run(&["solve", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["manifest.toml", "solution.toml", "diagnostics.toml", "frames.csv", "mapped.csv"] {
        assert!(dir.path().join("out").join(name).exists(), "missing {name}");
    }
    let manifest = fs::read_to_string(dir.path().join("out/manifest.toml")).unwrap();
    assert!(manifest.contains("subcommand = \"solve\""));
    assert!(manifest.contains("seed = 11"));
}

#[test]
fn identical_config_and_seed_give_byte_identical_numeric_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let a = solve_config(dir.path(), "a");
    let b = solve_config(dir.path(), "b");
    assert!(run(&["solve", "--config", a.to_str().unwrap()]).status.success());
    assert!(run(&["solve", "--config", b.to_str().unwrap()]).status.success());
    for name in ["solution.toml", "diagnostics.toml", "frames.csv", "mapped.csv"] {
        let left = fs::read(dir.path().join("a").join(name)).unwrap();
        let right = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(left, right, "{name} differs between identical runs");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let a = solve_config(dir.path(), "a");
    let b = solve_config(dir.path(), "b");
    assert!(run(&["solve", "--config", a.to_str().unwrap()]).status.success());
    assert!(run(&["solve", "--config", b.to_str().unwrap(), "--seed", "99"])
        .status
        .success());
    let left = fs::read(dir.path().join("a/solution.toml")).unwrap();
    let right = fs::read(dir.path().join("b/solution.toml")).unwrap();
    assert_ne!(left, right);
    let manifest = fs::read_to_string(dir.path().join("b/manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 99"));
}

#[test]
fn missing_input_exits_one_without_partial_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = solve_config(dir.path(), "out");
    fs::remove_file(dir.path().join("x.csv")).unwrap();
    let out = run(&["solve", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("out").exists(), "partial artifacts were written");
}

#[test]
fn invalid_config_reports_every_offending_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(
        &config,
        r#"
[io]
samples0 = "/nonexistent.csv"

[prior]
kind = "levy"
gamma = -2.0
"#,
    )
    .unwrap();
    let out = run(&["solve", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["seed", "samples0", "samples1", "prior.kind", "prior.gamma"] {
        assert!(err.contains(needle), "missing `{needle}` in: {err}");
    }
}

#[test]
fn nan_rows_are_skipped_and_counted_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = solve_config(dir.path(), "out");
    let mut y = fs::read_to_string(dir.path().join("y.csv")).unwrap();
    y.push_str("NaN\ninf\n");
    fs::write(dir.path().join("y.csv"), y).unwrap();
    let out = run(&["solve", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(dir.path().join("out/manifest.toml")).unwrap();
    assert!(manifest.contains("samples1 = 2"), "{manifest}");
}

#[test]
fn interpolate_reinstantiates_a_stored_solution() {
    let dir = tempfile::tempdir().unwrap();
    let config = solve_config(dir.path(), "out");
    assert!(run(&["solve", "--config", config.to_str().unwrap()]).status.success());
    let interp = dir.path().join("interp.toml");
    fs::write(
        &interp,
        format!(
            r#"
seed = 11

[io]
out = "{0}/reinterp"

[flow]
mc_draws = 100

[interpolate]
solution = "{0}/out/solution.toml"
times = [0.0, 0.5, 1.0]
grid = {{ lo = [-3.0], hi = [3.0], n = [13] }}
"#,
            dir.path().display()
        ),
    )
    .unwrap();
    let out = run(&["interpolate", "--config", interp.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // the same seed and flow settings reproduce the solve-run frames exactly
    let from_solve = fs::read(dir.path().join("out/frames.csv")).unwrap();
    let from_doc = fs::read(dir.path().join("reinterp/frames.csv")).unwrap();
    assert_eq!(from_solve, from_doc);
}

#[test]
fn fortet_grid_converges_on_a_gaussian_pair() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("fortet.toml");
    fs::write(
        &config,
        format!(
            r#"
seed = 1

[io]
out = "{0}/out"

[prior]
kind = "brownian"
gamma = 1.0

[fortet]
rho0 = {{ means = [[0.0]], sds = [1.0] }}
rho1 = {{ means = [[1.0]], sds = [0.5] }}
grid = {{ lo = [-8.0], hi = [9.0], n = [256] }}
tol = 1e-10
"#,
            dir.path().display()
        ),
    )
    .unwrap();
    let out = run(&["fortet-grid", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = fs::read_to_string(dir.path().join("out/fortet.toml")).unwrap();
    assert!(doc.contains("converged = true"));
    for name in ["state.csv", "gaps.csv", "frames.csv"] {
        assert!(dir.path().join("out").join(name).exists(), "missing {name}");
    }
}
