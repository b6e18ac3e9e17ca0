//! Functional inequalities checked by quadrature on seeded corpora.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::coagulation::{coag_bilinear, coag_primitive, CoagError};
use crate::grid::{derivative, tail_primitive, Grid, GridError, GridFunction};
use crate::linear::{smooth_corpus, with_pool, LinearError};
use crate::observables::{check_truncation, weighted_norm, NormSpec, ObservableError};
use crate::profiles::{stationary_profile, OracleError};
use crate::report::{num, Table};

/// Default pass tolerance on margins.
pub const MARGIN_TOLERANCE: f64 = 1e-8;

/// Tolerance on `|margin|` for the exponential equality cases.
pub const EQUALITY_TOLERANCE: f64 = 1e-4;

/// Largest relative change of a norm-equivalence ratio under coarsening.
pub const REFINEMENT_STABILITY: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InequalityError {
    #[error("log requires a positive function: value {value:e} at node {index}")]
    NonPositive { index: usize, value: f64 },
    #[error("norm equivalence needs a + b = n + m = k + 1 with k in 1..=2, got k={k} ({a},{b},{n},{m})")]
    BadPartition { k: usize, a: i32, b: i32, n: i32, m: i32 },
    #[error("bilinear bound needs 0 <= mu < 4/rho, got mu={mu}, rho={rho}")]
    BadWeight { mu: f64, rho: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Coag(#[from] CoagError),
    #[error(transparent)]
    Linear(#[from] LinearError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InequalityCase {
    pub name: String,
    pub parameters: BTreeMap<String, f64>,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub margin: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl InequalityCase {
    pub fn new(name: &str, parameters: &[(&str, f64)], lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let margin = rhs - lhs;
        Self {
            name: name.to_string(),
            parameters: parameters.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            lhs,
            rhs,
            margin,
            tolerance,
            passed: margin >= -tolerance,
        }
    }

    /// Requires `|margin| <= tolerance` instead of a one-sided bound.
    pub fn equality(mut self, tolerance: f64) -> Self {
        self.name.push_str("_equality");
        self.tolerance = tolerance;
        self.passed = self.margin.abs() <= tolerance;
        self
    }

    pub fn parameter_string(&self) -> String {
        self.parameters.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
    }
}

impl fmt::Display for InequalityCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] lhs={:.6e} rhs={:.6e} margin={:.3e} {}",
            self.name,
            self.parameter_string(),
            self.lhs,
            self.rhs,
            self.margin,
            if self.passed { "pass" } else { "FAIL" }
        )
    }
}

fn integral_with(f: &GridFunction, w: impl Fn(f64, f64) -> f64) -> f64 {
    let grid = f.grid();
    let v: Vec<f64> = f.values().iter().enumerate().map(|(i, x)| w(grid.node(i), *x)).collect();
    grid.integrate_values(&v)
}

fn checked_integral(what: &str, f: &GridFunction, w: impl Fn(f64, f64) -> f64) -> Result<f64, InequalityError> {
    let grid = f.grid();
    let v: Vec<f64> = f.values().iter().enumerate().map(|(i, x)| w(grid.node(i), *x)).collect();
    check_truncation(what, &v.iter().map(|x| x.abs()).collect::<Vec<_>>())?;
    Ok(grid.integrate_values(&v))
}

fn log_values(f: &GridFunction) -> Result<Vec<f64>, InequalityError> {
    f.values()
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if value > 0.0 {
                Ok(value.ln())
            } else {
                Err(InequalityError::NonPositive { index, value })
            }
        })
        .collect()
}

fn aizenman_bak_with(f: &GridFunction, conv: Vec<f64>) -> Result<InequalityCase, InequalityError> {
    let grid = *f.grid();
    let logf = log_values(f)?;
    let lhs_integrand: Vec<f64> = conv.iter().zip(&logf).map(|(c, l)| c * l).collect();
    check_truncation("Aizenman-Bak", &lhs_integrand.iter().map(|x| x.abs()).collect::<Vec<_>>())?;
    let lhs = grid.integrate_values(&lhs_integrand);
    let mass = grid.integrate_values(f.values());
    let flogf: Vec<f64> = f.values().iter().zip(&logf).map(|(v, l)| v * l).collect();
    let rhs = mass * grid.integrate_values(&flogf) - mass * mass;
    Ok(InequalityCase::new("aizenman_bak", &[("n_points", grid.n_points() as f64)], lhs, rhs, MARGIN_TOLERANCE))
}

/// `int int f(x) f(y) log f(x+y) <= int int f(x) f(y) log f(y) - (int f)^2`,
/// with the left side contracted to `int (f*f) log f`.
pub fn check_aizenman_bak(f: &GridFunction) -> Result<InequalityCase, InequalityError> {
    let grid = f.grid();
    aizenman_bak_with(f, grid.convolve_values(f.values(), f.values()))
}

/// As [`check_aizenman_bak`] with the convolution summed directly in O(n^2).
pub fn check_aizenman_bak_direct(f: &GridFunction) -> Result<InequalityCase, InequalityError> {
    let grid = f.grid();
    aizenman_bak_with(f, grid.convolve_values_direct(f.values(), f.values()))
}

/// `4 int h H e^{mu y} <= 2 mu (int h)(int y h) + int h^2 y e^{mu y} + (1/mu) int h^2 e^{mu y}`.
pub fn check_linear_aizenman_bak(h: &GridFunction, mu: f64) -> Result<InequalityCase, InequalityError> {
    let big_h = tail_primitive(h);
    let sq = h.mul(h)?;
    checked_integral("linear Aizenman-Bak", &sq, |y, v| v * (1.0 + y) * (mu * y).exp())?;
    let lhs = 4.0 * integral_with(&h.mul(&big_h)?, |y, v| v * (mu * y).exp());
    let m0 = integral_with(h, |_, v| v);
    let m1 = integral_with(h, |y, v| y * v);
    let rhs = 2.0 * mu * m0 * m1
        + integral_with(&sq, |y, v| v * y * (mu * y).exp())
        + integral_with(&sq, |y, v| v * (mu * y).exp()) / mu;
    Ok(InequalityCase::new("linear_aizenman_bak", &[("mu", mu)], lhs, rhs, MARGIN_TOLERANCE))
}

/// `int H^2 y^{2n} e^{mu y} <= 4 int h^2 y^{2(n+1)} e^{mu y}`.
pub fn check_hardy(h: &GridFunction, n: i32, mu: f64) -> Result<InequalityCase, InequalityError> {
    let big_h = tail_primitive(h);
    let rhs = 4.0 * checked_integral("Hardy", &h.mul(h)?, |y, v| v * y.powi(2 * (n + 1)) * (mu * y).exp())?;
    let lhs = integral_with(&big_h.mul(&big_h)?, |y, v| v * y.powi(2 * n) * (mu * y).exp());
    Ok(InequalityCase::new("hardy", &[("n", n as f64), ("mu", mu)], lhs, rhs, MARGIN_TOLERANCE))
}

/// `int H^2 e^{mu y} <= (4/mu^2) int h^2 e^{mu y}`.
pub fn check_weighted_poincare(h: &GridFunction, mu: f64) -> Result<InequalityCase, InequalityError> {
    let big_h = tail_primitive(h);
    let rhs = 4.0 / (mu * mu) * checked_integral("weighted Poincare", &h.mul(h)?, |y, v| v * (mu * y).exp())?;
    let lhs = integral_with(&big_h.mul(&big_h)?, |y, v| v * (mu * y).exp());
    Ok(InequalityCase::new("weighted_poincare", &[("mu", mu)], lhs, rhs, MARGIN_TOLERANCE))
}

fn minus_one_norm_of_primitive(p: &GridFunction, mu: f64) -> f64 {
    integral_with(&p.mul(p).expect("same grid"), |y, v| v * (mu * y).exp()).max(0.0).sqrt()
}

/// `||C(g_rho, h)||_{-1,mu} <= ||h||_{-1,mu} int g_rho e^{mu y/2}` (constant one).
pub fn check_bilinear_bound(h: &GridFunction, rho: f64, mu: f64) -> Result<InequalityCase, InequalityError> {
    if !(mu >= 0.0 && mu < 4.0 / rho) {
        return Err(InequalityError::BadWeight { mu, rho });
    }
    let g = stationary_profile(rho, *h.grid())?;
    let spec = NormSpec::new(-1, mu)?;
    let lhs = minus_one_norm_of_primitive(&coag_primitive(&g, h)?, mu);
    let rhs = weighted_norm(h, &spec)? * integral_with(&g, |y, v| v.abs() * (0.5 * mu * y).exp());
    Ok(InequalityCase::new("bilinear_bound", &[("rho", rho), ("mu", mu)], lhs, rhs, MARGIN_TOLERANCE))
}

/// `||C(h, h)||_{-1,mu} <= ||h||_{-1,mu} int |h| e^{mu y/2}` (constant one).
pub fn check_bilinear_self_bound(h: &GridFunction, mu: f64) -> Result<InequalityCase, InequalityError> {
    let spec = NormSpec::new(-1, mu)?;
    let c = coag_bilinear(h, h)?;
    let lhs = minus_one_norm_of_primitive(&tail_primitive(&c), mu);
    let rhs = weighted_norm(h, &spec)? * integral_with(h, |y, v| v.abs() * (0.5 * mu * y).exp());
    Ok(InequalityCase::new("bilinear_self_bound", &[("mu", mu)], lhs, rhs, MARGIN_TOLERANCE))
}

/// `|| y^a D^k (y^b h) ||_{L^2(e^{mu y})}`.
pub fn power_derivative_norm(h: &GridFunction, k: usize, a: i32, b: i32, mu: f64) -> Result<f64, InequalityError> {
    let inner = h.map_with_nodes(|y, v| v * y.powi(b))?;
    let d = derivative(&inner, k)?;
    Ok(integral_with(&d, |y, v| (y.powi(a) * v).powi(2) * (mu * y).exp()).max(0.0).sqrt())
}

/// Ratio `||y^a D^k(y^b h)|| / ||y^n D^k(y^m h)||` on the grid of `h` and on
/// the grid coarsened by two. Passes when the two agree within
/// [`REFINEMENT_STABILITY`]; `lhs` and `rhs` hold the fine and coarse ratios.
pub fn check_norm_equivalence(
    h: &GridFunction,
    k: usize,
    partitions: (i32, i32, i32, i32),
    mu: f64,
) -> Result<InequalityCase, InequalityError> {
    let (a, b, n, m) = partitions;
    let total = k as i32 + 1;
    if !(1..=2).contains(&k) || a + b != total || n + m != total || [a, b, n, m].iter().any(|&x| x < 0) {
        return Err(InequalityError::BadPartition { k, a, b, n, m });
    }
    let ratio = |f: &GridFunction| -> Result<f64, InequalityError> {
        let top = power_derivative_norm(f, k, a, b, mu)?;
        let bottom = power_derivative_norm(f, k, n, m, mu)?;
        Ok(if bottom == 0.0 { if top == 0.0 { 0.0 } else { f64::INFINITY } } else { top / bottom })
    };
    let fine = ratio(h)?;
    let coarse = ratio(&h.coarsen(2)?)?;
    let params = [("k", k as f64), ("a", a as f64), ("b", b as f64), ("n", n as f64), ("m", m as f64), ("mu", mu)];
    let change = if fine == 0.0 && coarse == 0.0 { 0.0 } else { (fine - coarse).abs() / fine.abs().max(coarse.abs()) };
    let mut case = InequalityCase::new("norm_equivalence", &params, fine, coarse, 0.0);
    case.margin = REFINEMENT_STABILITY - change;
    case.passed = fine.is_finite() && case.margin >= 0.0;
    Ok(case)
}

/// Seeded strictly positive profiles `e^{-l y}(1 + a sin^2(b y))`, half of
/// them with an added positive Gaussian bump; `l` in `[1, 2)`.
pub fn positive_corpus(grid: Grid, size: usize, seed: u64) -> Vec<GridFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = grid.nodes();
    (0..size)
        .map(|_| {
            let l: f64 = rng.random_range(1.0..2.0);
            let a: f64 = rng.random_range(0.0..1.0);
            let b: f64 = rng.random_range(0.2..2.0);
            let bump: bool = rng.random_bool(0.5);
            let (amp, c, s): (f64, f64, f64) =
                (rng.random_range(0.0..1.0), rng.random_range(0.0..6.0), rng.random_range(0.5..2.0));
            let v = nodes
                .iter()
                .map(|&y| {
                    let base = (-l * y).exp() * (1.0 + a * (b * y).sin().powi(2));
                    let extra = if bump { amp * (-(y - c).powi(2) / (2.0 * s * s)).exp() } else { 0.0 };
                    base + extra
                })
                .collect();
            GridFunction::raw(grid, v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessSettings {
    pub grid: Grid,
    /// Grid for the exponential equality cases, which need a longer domain.
    pub equality_grid: Grid,
    pub corpus_size: usize,
    pub seed: u64,
    pub mus: Vec<f64>,
    pub rho: f64,
    pub jobs: usize,
}

impl HarnessSettings {
    pub fn standard(seed: u64, jobs: usize) -> Result<Self, InequalityError> {
        Ok(Self {
            grid: Grid::new(2048, 40.0)?,
            equality_grid: Grid::new(8192, 120.0)?,
            corpus_size: 50,
            seed,
            mus: vec![0.5, 1.0, 1.5],
            rho: 2.0,
            jobs,
        })
    }
}

fn member_cases(h: &GridFunction, f: &GridFunction, s: &HarnessSettings) -> Result<Vec<InequalityCase>, InequalityError> {
    let mut out = vec![check_aizenman_bak(f)?];
    for &mu in &s.mus {
        out.push(check_linear_aizenman_bak(h, mu)?);
        for n in 0..=2 {
            out.push(check_hardy(h, n, mu)?);
        }
        out.push(check_weighted_poincare(h, mu)?);
        if mu < 4.0 / s.rho {
            out.push(check_bilinear_bound(h, s.rho, mu)?);
        }
        out.push(check_bilinear_self_bound(h, mu)?);
    }
    for parts in [(2, 0, 0, 2), (1, 1, 0, 2), (0, 2, 2, 0)] {
        out.push(check_norm_equivalence(h, 1, parts, 1.0)?);
    }
    Ok(out)
}

/// Every inequality over the seeded corpora, plus the exponential equality
/// cases of Aizenman-Bak. Cases are ordered by corpus index.
pub fn run_harness(s: &HarnessSettings) -> Result<Vec<InequalityCase>, InequalityError> {
    let mut cases = Vec::new();
    for rate in [0.5, 1.0, 2.0] {
        let e = GridFunction::from_fn(s.equality_grid, |y| (-rate * y).exp())?;
        let mut c = check_aizenman_bak(&e)?.equality(EQUALITY_TOLERANCE);
        c.parameters.insert("rate".into(), rate);
        cases.push(c);
    }
    let g = stationary_profile(s.rho, s.equality_grid)?;
    let mut c = check_aizenman_bak(&g)?.equality(EQUALITY_TOLERANCE);
    c.parameters.insert("rho".into(), s.rho);
    cases.push(c);

    let smooth = smooth_corpus(s.grid, s.corpus_size, s.seed);
    let positive = positive_corpus(s.grid, s.corpus_size, s.seed ^ 0x5eed);
    let per_member = with_pool(s.jobs, || {
        smooth
            .par_iter()
            .zip(positive.par_iter())
            .enumerate()
            .map(|(i, (h, f))| {
                member_cases(h, f, s).map(|mut v| {
                    for c in &mut v {
                        c.parameters.insert("member".into(), i as f64);
                    }
                    v
                })
            })
            .collect::<Result<Vec<_>, _>>()
    })??;
    cases.extend(per_member.into_iter().flatten());
    Ok(cases)
}

pub fn harness_table(cases: &[InequalityCase]) -> Table {
    let mut t = Table::new(["name", "parameters", "lhs", "rhs", "margin", "passed"]);
    for c in cases {
        t.push(vec![c.name.clone(), c.parameter_string(), num(c.lhs), num(c.rhs), num(c.margin), c.passed.to_string()]);
    }
    t
}

pub fn write_harness_csv(cases: &[InequalityCase], path: &Path) -> std::io::Result<()> {
    harness_table(cases).write(path)
}
