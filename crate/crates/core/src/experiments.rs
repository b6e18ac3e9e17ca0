//! End-to-end experiments: convergence to the self-similar profile, the
//! Fourier route to the L2 rate, exponential-moment creation, and the linear
//! and inequality sweeps. Each run returns a [`Report`] of series, fitted
//! rates and named checks.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use num_complex::Complex64;
use thiserror::Error;

use crate::coagulation::{rhs, RhsKind};
use crate::config::{ConfigError, ExperimentConfig};
use crate::evolution::{evolve, frame_map, SolverError, Trajectory};
use crate::grid::{GridError, GridFunction};
use crate::inequalities::{harness_table, run_harness, HarnessSettings, InequalityCase, InequalityError};
use crate::linear::{gap_survey, gap_table, LinearError, SurveySettings};
use crate::observables::{
    exp_moment_unchecked, l2_norm, moment, relative_entropy, weighted_norm, weighted_norm_unchecked, NormSpec,
    ObservableError, PowerVariant,
};
use crate::profiles::{
    oracle_exp_moment, oracle_fourier, oracle_m0_physical, oracle_m0_selfsim, oracle_m2_physical,
    oracle_m2_selfsim, oracle_m2_selfsim_corrected, fourier_transform, stationary_profile, Direction, Frame,
    MomentOracleInput, OracleError,
};
use crate::rates::{fit_rate, RateFit};
use crate::report::{num, write_snapshots, Table};

pub const MASS_TOLERANCE: f64 = 1e-4;
pub const M0_TOLERANCE: f64 = 1e-4;
pub const M2_TOLERANCE: f64 = 1e-3;
pub const EXP_MOMENT_TOLERANCE: f64 = 1e-3;
/// Latest time of the exponential-moment comparison.
pub const EXP_MOMENT_HORIZON: f64 = 3.0;
pub const FOURIER_TOLERANCE: f64 = 5e-3;
pub const L2_MIN_RATE: f64 = 0.45;
pub const ENTROPY_STEP_TOLERANCE: f64 = 1e-6;
pub const CSISZAR_TOLERANCE: f64 = 1e-8;
pub const RAYLEIGH_TOLERANCE: f64 = 0.02;
/// Minimum length of the final stretch a plateau must hold for.
pub const PLATEAU_HOLD: f64 = 1.0;
/// Equilibrium runs must stay within this multiple of `t_end` times the
/// stationarity residual.
pub const FLOOR_FACTOR: f64 = 10.0;
/// Quadrature points for the Plancherel distance.
pub const PLANCHEREL_POINTS: usize = 4000;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error(transparent)]
    Inequality(#[from] InequalityError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
}

/// A numeric assertion with its tolerance and the statement it tests.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
    pub anchor: String,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, bound: Bound, anchor: impl Into<String>) -> Self {
        let passed = match bound {
            Bound::AtMost(t) => value <= t,
            Bound::AtLeast(t) => value >= t,
        };
        Self { name: name.into(), value, bound, anchor: anchor.into(), passed }
    }

    pub fn at_most(name: impl Into<String>, value: f64, tol: f64, anchor: impl Into<String>) -> Self {
        Self::new(name, value, Bound::AtMost(tol), anchor)
    }

    pub fn at_least(name: impl Into<String>, value: f64, tol: f64, anchor: impl Into<String>) -> Self {
        Self::new(name, value, Bound::AtLeast(tol), anchor)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (op, tol) = match self.bound {
            Bound::AtMost(t) => ("<=", t),
            Bound::AtLeast(t) => (">=", t),
        };
        write!(
            f,
            "{} {}: {:.6e} {} {:.3e} [{}]",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            op,
            tol,
            self.anchor
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RateOutcome {
    Fitted(RateFit),
    /// The series does not move; no rate is defined.
    Constant,
    Unavailable(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSeries {
    pub name: String,
    pub outcome: RateOutcome,
}

impl RateSeries {
    pub fn fit(name: impl Into<String>, times: &[f64], values: &[f64], window: (f64, f64)) -> Self {
        let outcome = match fit_rate(times, values, window) {
            Ok(f) => RateOutcome::Fitted(f),
            Err(e) => RateOutcome::Unavailable(e.to_string()),
        };
        Self { name: name.into(), outcome }
    }

    pub fn rate(&self) -> Option<f64> {
        match &self.outcome {
            RateOutcome::Fitted(f) => Some(f.rate),
            _ => None,
        }
    }
}

/// Named numeric columns of equal length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Series {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Series {
    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) {
        debug_assert!(self.columns.first().is_none_or(|c| c.len() == values.len()));
        self.names.push(name.into());
        self.columns.push(values);
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(self.names.iter().cloned());
        let rows = self.columns.first().map_or(0, Vec::len);
        for r in 0..rows {
            t.push(self.columns.iter().map(|c| num(c[r])).collect());
        }
        t
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub title: String,
    pub series: Series,
    /// Replaces the series table in `observables.csv` when set.
    pub observables: Option<Table>,
    pub rates: Vec<RateSeries>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    /// Extra CSV files, by file name.
    pub tables: Vec<(String, Table)>,
    pub trajectory: Option<Trajectory>,
}

impl Report {
    pub fn new(title: impl Into<String>) -> Self {
        Self { title: title.into(), ..Self::default() }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn rate(&self, name: &str) -> Option<f64> {
        self.rates.iter().find(|r| r.name == name).and_then(RateSeries::rate)
    }

    pub fn rates_table(&self) -> Table {
        let mut t = Table::new([
            "series", "status", "rate", "intercept", "t_lo", "t_hi", "rms_residual", "n_samples", "truncated",
        ]);
        for r in &self.rates {
            let row = match &r.outcome {
                RateOutcome::Fitted(f) => vec![
                    r.name.clone(),
                    "fitted".into(),
                    num(f.rate),
                    num(f.intercept),
                    num(f.window.0),
                    num(f.window.1),
                    num(f.rms_residual),
                    f.n_samples.to_string(),
                    f.truncated.to_string(),
                ],
                RateOutcome::Constant => {
                    let mut row = vec![r.name.clone(), "constant".into()];
                    row.extend(std::iter::repeat_n(String::new(), 7));
                    row
                }
                RateOutcome::Unavailable(why) => {
                    let mut row = vec![r.name.clone(), format!("unavailable: {why}")];
                    row.extend(std::iter::repeat_n(String::new(), 7));
                    row
                }
            };
            t.push(row);
        }
        t
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{}\n", self.title);
        for r in &self.rates {
            let line = match &r.outcome {
                RateOutcome::Fitted(f) => format!(
                    "rate {}: {:.6} on [{:.3}, {:.3}] ({} samples{})",
                    r.name,
                    f.rate,
                    f.window.0,
                    f.window.1,
                    f.n_samples,
                    if f.truncated { ", truncated at floor" } else { "" }
                ),
                RateOutcome::Constant => format!("rate {}: constant series", r.name),
                RateOutcome::Unavailable(why) => format!("rate {}: unavailable ({why})", r.name),
            };
            s.push_str(&line);
            s.push('\n');
        }
        for n in &self.notes {
            s.push_str(&format!("note: {n}\n"));
        }
        for c in &self.checks {
            s.push_str(&format!("{c}\n"));
        }
        let failed = self.failures().count();
        s.push_str(&format!("{} checks, {} failed\n", self.checks.len(), failed));
        s
    }

    /// `observables.csv`, `rates.csv`, `summary.txt`, snapshots and extra tables.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        match &self.observables {
            Some(t) => t.write(&dir.join("observables.csv"))?,
            None => self.series.table().write(&dir.join("observables.csv"))?,
        }
        self.rates_table().write(&dir.join("rates.csv"))?;
        for (name, t) in &self.tables {
            t.write(&dir.join(name))?;
        }
        if let Some(traj) = &self.trajectory {
            write_snapshots(traj, dir)?;
        }
        fs::write(dir.join("summary.txt"), self.summary())
    }
}

/// Column name for an error norm, e.g. `err_k-1_mu1` or `err_k1_mu0.8_alt`.
pub fn spec_column(spec: &NormSpec) -> String {
    let alt = if spec.power_variant == PowerVariant::Alternative { "_alt" } else { "" };
    format!("err_k{}_mu{}{}", spec.k, spec.mu, alt)
}

/// Smallest decay rate asserted for a norm.
pub fn rate_threshold(spec: &NormSpec, cfg: &ExperimentConfig) -> f64 {
    if spec.power_variant == PowerVariant::Alternative && spec.k >= 0 {
        cfg.min_rate_alternative
    } else {
        cfg.min_rate
    }
}

/// `max |v/o - 1|` over samples with `t <= horizon` and a finite oracle.
pub fn max_relative_error(times: &[f64], values: &[f64], oracle: &[f64], horizon: f64) -> f64 {
    times
        .iter()
        .zip(values.iter().zip(oracle))
        .filter(|(t, (_, o))| **t <= horizon + 1e-12 && o.is_finite())
        .map(|(_, (v, o))| (v / o - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Largest increase between consecutive samples (zero if nonincreasing).
pub fn max_increase(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

fn rhs_kind(frame: Frame) -> RhsKind {
    match frame {
        Frame::SelfSimilar => RhsKind::SelfSimilar,
        Frame::Physical => RhsKind::Physical,
    }
}

fn at_equilibrium(g0: &GridFunction, reference: &GridFunction) -> Result<bool, ExperimentError> {
    Ok(g0.sub(reference)?.max_abs() <= 1e-12 * reference.max_abs())
}

/// Moment columns and their oracle checks, in the frame the run evolves in.
fn moment_oracles(cfg: &ExperimentConfig, g0: &GridFunction, traj: &Trajectory, report: &mut Report) {
    let t = &traj.times;
    let col = |f: &dyn Fn(&GridFunction) -> f64| traj.states.iter().map(f).collect::<Vec<f64>>();
    let mass = col(&|g| moment(g, 1.0));
    let m0 = col(&|g| g.grid().integrate_values(g.values()));
    let m2 = col(&|g| moment(g, 2.0));
    let mu = cfg.moments_mu;
    let e_mu = col(&|g| exp_moment_unchecked(g, mu));
    let (mass0, m00, m20) = (mass[0], m0[0], m2[0]);
    let input = MomentOracleInput { m0_initial: m00, e_mu_initial: cfg.datum_exp_moment(g0, mu), mu, mass: mass0 };
    let e0_at = |theta: f64| cfg.datum_exp_moment(g0, theta);
    let (m0_or, m2_or, m2_pub, e_or): (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) = match cfg.frame {
        Frame::SelfSimilar => (
            t.iter().map(|&t| oracle_m0_selfsim(m00, t)).collect(),
            t.iter().map(|&t| oracle_m2_selfsim_corrected(m20, mass0, t)).collect(),
            t.iter().map(|&t| oracle_m2_selfsim(m20, mass0, t)).collect(),
            t.iter()
                .map(|&t| oracle_exp_moment(&input, t, Frame::SelfSimilar, &e0_at).unwrap_or(f64::NAN))
                .collect(),
        ),
        Frame::Physical => (
            t.iter().map(|&t| oracle_m0_physical(m00, t)).collect(),
            t.iter().map(|&t| oracle_m2_physical(m20, mass0, t)).collect(),
            t.iter().map(|&t| oracle_m2_physical(m20, mass0, t)).collect(),
            t.iter().map(|&t| oracle_exp_moment(&input, t, Frame::Physical, &e0_at).unwrap_or(f64::NAN)).collect(),
        ),
    };
    let horizon = f64::INFINITY;
    let drift = mass.iter().map(|m| (m / mass0 - 1.0).abs()).fold(0.0, f64::max);
    report.checks.push(Check::at_most("mass_conservation", drift, MASS_TOLERANCE, "first moment is conserved"));
    report.checks.push(Check::at_most(
        "zeroth_moment_oracle",
        max_relative_error(t, &m0, &m0_or, horizon),
        M0_TOLERANCE,
        "closed-form zeroth moment",
    ));
    report.checks.push(Check::at_most(
        "second_moment_oracle",
        max_relative_error(t, &m2, &m2_or, horizon),
        M2_TOLERANCE,
        "second moment from dM2/dt = M1^2",
    ));
    let e_horizon = match cfg.frame {
        Frame::SelfSimilar => EXP_MOMENT_HORIZON,
        Frame::Physical => (EXP_MOMENT_HORIZON.exp() - 1.0).min(f64::MAX),
    };
    if e_or.iter().zip(t).any(|(o, &tt)| tt <= e_horizon && o.is_finite() && tt > 0.0) {
        report.checks.push(Check::at_most(
            "exp_moment_oracle",
            max_relative_error(t, &e_mu, &e_or, e_horizon),
            EXP_MOMENT_TOLERANCE,
            "closed-form exponential moment",
        ));
    }
    if e_or.iter().any(|o| !o.is_finite()) {
        report.notes.push(format!("exponential moment of order {mu} has no finite closed form at some snapshots"));
    }
    if cfg.frame == Frame::SelfSimilar {
        report.notes.push(format!(
            "second moment against the published limit rho^2/2: max relative deviation {:.3e}",
            max_relative_error(t, &m2, &m2_pub, horizon)
        ));
    }
    report.series.push("mass", mass);
    report.series.push("m0", m0);
    report.series.push("m0_oracle", m0_or);
    report.series.push("m2", m2);
    report.series.push("m2_oracle", m2_or);
    report.series.push("m2_published", m2_pub);
    report.series.push(format!("e_mu{mu}"), e_mu);
    report.series.push(format!("e_mu{mu}_oracle"), e_or);
}

fn norm_or_floor(h: &GridFunction, spec: &NormSpec, limited: &mut usize) -> Result<f64, ExperimentError> {
    match weighted_norm(h, spec) {
        Ok(v) => Ok(v),
        Err(ObservableError::Truncation { .. }) => {
            *limited += 1;
            Ok(weighted_norm_unchecked(h, spec)?)
        }
        Err(e) => Err(e.into()),
    }
}

/// Evolves the configured datum and measures convergence to `g_rho`.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<Report, ExperimentError> {
    let g0 = cfg.initial();
    let grid = cfg.grid;
    let rho = cfg.rho;
    let reference = stationary_profile(rho, grid)?;
    let traj = evolve(&g0, rhs_kind(cfg.frame), &cfg.integrator)?;
    let frame_name = match cfg.frame {
        Frame::SelfSimilar => "self-similar",
        Frame::Physical => "physical",
    };
    let mut report = Report::new(format!(
        "convergence: {} datum, {} frame, N = {}, y_max = {}, dt = {}, t_end = {}, rho = {}",
        cfg.datum.family.name(),
        frame_name,
        grid.n_points(),
        grid.y_max(),
        cfg.integrator.dt,
        cfg.integrator.t_end,
        rho
    ));
    report.series.push("t", traj.times.clone());
    moment_oracles(cfg, &g0, &traj, &mut report);

    let (ss_times, ss_states): (Vec<f64>, Vec<GridFunction>) = match cfg.frame {
        Frame::SelfSimilar => (traj.times.clone(), traj.states.clone()),
        Frame::Physical => {
            traj.times.iter().zip(&traj.states).map(|(&t, f)| frame_map((t, f), Direction::Forward)).unzip()
        }
    };
    let taus: Vec<f64> = ss_times.iter().map(|t| t.exp_m1()).collect();
    let window = match cfg.frame {
        Frame::SelfSimilar => cfg.fit_window,
        Frame::Physical => (cfg.fit_window.0.ln_1p(), cfg.fit_window.1.ln_1p()),
    };
    let equilibrium = at_equilibrium(&g0, &reference)?;

    let mut limited = 0usize;
    let mut errors: Vec<Vec<f64>> = vec![Vec::with_capacity(ss_states.len()); cfg.norms.len()];
    let (mut l2, mut sup, mut l1, mut ent, mut ent_p, mut ratio, mut bound, mut phys, mut m0_gap) =
        (vec![], vec![], vec![], vec![], vec![], vec![], vec![], vec![], vec![]);
    let phys_spec = NormSpec::new(1, cfg.physical_mu)?;
    for (&tau, g) in taus.iter().zip(&ss_states) {
        let d = g.sub(&reference)?;
        for (j, spec) in cfg.norms.iter().enumerate() {
            errors[j].push(norm_or_floor(&d, spec, &mut limited)?);
        }
        l2.push(l2_norm(&d));
        sup.push(d.max_abs());
        let e = relative_entropy(g, rho, false)?;
        let ep = relative_entropy(g, rho, true)?;
        let m0 = grid.integrate_values(g.values());
        l1.push(e.l1_distance);
        ent.push(e.entropy);
        ent_p.push(ep.entropy);
        ratio.push(e.entropy / m0);
        bound.push(e.csiszar_lower_bound);
        m0_gap.push((m0 - 2.0).abs());
        phys.push(if tau > 0.0 {
            let c = tau / (1.0 + tau);
            let u = GridFunction::from_fn(grid, |y| c * c * g.interpolate(c * y))?;
            norm_or_floor(&u.sub(&reference)?, &phys_spec, &mut limited)?
        } else {
            f64::NAN
        });
    }
    if limited > 0 {
        report.notes.push(format!(
            "{limited} norm evaluations are truncation-limited (tail of the integrand above e^-19.5 of its peak); \
             unchecked values recorded"
        ));
    }

    report.series.push("t_self_similar", ss_times.clone());
    report.series.push("t_physical", taus.clone());
    for (spec, e) in cfg.norms.iter().zip(&errors) {
        report.series.push(spec_column(spec), e.clone());
    }
    report.series.push("err_l2", l2.clone());
    report.series.push("err_sup", sup.clone());
    report.series.push("l1_distance", l1);
    report.series.push("entropy", ent.clone());
    report.series.push("entropy_primitive", ent_p.clone());
    report.series.push("entropy_per_m0", ratio.clone());
    report.series.push("csiszar_bound", bound.clone());
    report.series.push("m0_gap", m0_gap.clone());
    report.series.push(format!("physical_err_k1_mu{}", cfg.physical_mu), phys.clone());

    if equilibrium {
        let residual = rhs(&reference, RhsKind::SelfSimilar);
        let scale = FLOOR_FACTOR * cfg.integrator.t_end.max(1.0);
        for (spec, e) in cfg.norms.iter().zip(&errors) {
            let floor = scale * weighted_norm_unchecked(&residual, spec)? + 1e-12;
            report.rates.push(RateSeries { name: spec_column(spec), outcome: RateOutcome::Constant });
            report.checks.push(Check::at_most(
                format!("equilibrium_floor_{}", spec_column(spec)),
                e.iter().copied().fold(0.0, f64::max),
                floor,
                "g_rho is stationary",
            ));
        }
        let floor = scale * residual.max_abs() + 1e-12;
        report.checks.push(Check::at_most(
            "equilibrium_floor_sup",
            sup.iter().copied().fold(0.0, f64::max),
            floor,
            "g_rho is stationary",
        ));
        report.notes.push("datum is the equilibrium; rates are not fitted".into());
    } else {
        for (spec, e) in cfg.norms.iter().zip(&errors) {
            let r = RateSeries::fit(spec_column(spec), &ss_times, e, window);
            if cfg.frame == Frame::SelfSimilar {
                report.checks.push(Check::at_least(
                    format!("rate_{}", spec_column(spec)),
                    r.rate().unwrap_or(f64::NAN),
                    rate_threshold(spec, cfg),
                    "exponential convergence for every delta < 1",
                ));
            }
            report.rates.push(r);
        }
        report.rates.push(RateSeries::fit("err_l2", &ss_times, &l2, window));
        report.rates.push(RateSeries::fit("m0_gap", &ss_times, &m0_gap, window));
        let log_tau: Vec<f64> = taus.iter().map(|t| if *t > 0.0 { t.ln() } else { f64::NEG_INFINITY }).collect();
        let tau_window = (window.0.exp_m1().max(1e-300).ln(), window.1.exp_m1().ln());
        let mut r = RateSeries::fit(format!("physical_err_k1_mu{}_vs_log_t", cfg.physical_mu), &log_tau, &phys, tau_window);
        if let RateOutcome::Fitted(f) = &mut r.outcome {
            f.window = (f.window.0.exp(), f.window.1.exp());
        }
        report.rates.push(r);
    }

    let steps = ENTROPY_STEP_TOLERANCE;
    report.checks.push(Check::at_most(
        "entropy_primitive_monotone",
        max_increase(&ent_p),
        steps,
        "relative entropy of the primitive is nonincreasing",
    ));
    report.checks.push(Check::at_most(
        "entropy_per_mass_monotone",
        max_increase(&ratio),
        steps,
        "relative entropy over the zeroth moment is nonincreasing",
    ));
    let margin = ent.iter().zip(&bound).map(|(e, b)| e - b).fold(f64::INFINITY, f64::min);
    report.checks.push(Check::at_least(
        "csiszar_bound",
        margin,
        -CSISZAR_TOLERANCE,
        "entropy dominates m Psi(|g - g_rho|_1 / m)",
    ));
    report.trajectory = Some(traj);
    Ok(report)
}

/// `sqrt((1/pi) int_0^inf |phi(mu) - phi_inf(mu)|^2 dmu)` through
/// `mu = scale tan(theta)`, midpoint rule in `theta`.
pub fn plancherel_distance(diff: &dyn Fn(f64) -> Complex64, scale: f64, points: usize) -> f64 {
    let h = 0.5 * PI / points as f64;
    let sum: f64 = (0..points)
        .map(|i| {
            let th = (i as f64 + 0.5) * h;
            let (s, c) = th.sin_cos();
            let mu = scale * s / c;
            diff(mu).norm_sqr() * scale / (c * c)
        })
        .sum();
    (sum * h / PI).sqrt()
}

/// Solver and closed-form routes to the L2 distance from `g_rho`.
pub fn run_fourier_l2(cfg: &ExperimentConfig) -> Result<Report, ExperimentError> {
    let g0 = cfg.initial();
    let grid = cfg.grid;
    let rho = cfg.rho;
    let reference = stationary_profile(rho, grid)?;
    let traj = evolve(&g0, RhsKind::SelfSimilar, &cfg.integrator)?;
    let mut report = Report::new(format!(
        "fourier: {} datum, N = {}, y_max = {}, dt = {}, t_end = {}, rho = {}",
        cfg.datum.family.name(),
        grid.n_points(),
        grid.y_max(),
        cfg.integrator.dt,
        cfg.integrator.t_end,
        rho
    ));
    let phi0 = |mu: f64| cfg.datum_fourier(&g0, mu);
    let phi_inf = |mu: f64| Complex64::new(4.0 / rho, 0.0) / Complex64::new(2.0 / rho, mu);

    let n = cfg.fourier_points.max(2);
    let mus: Vec<f64> = (0..n).map(|j| -cfg.fourier_mu_max + 2.0 * cfg.fourier_mu_max * j as f64 / (n - 1) as f64).collect();
    let mut table = Table::new(["t", "mu", "solver_re", "solver_im", "oracle_re", "oracle_im", "abs_error"]);
    for &t in &cfg.fourier_times {
        if t > cfg.integrator.t_end + 1e-12 {
            report.notes.push(format!("Fourier comparison at t = {t} skipped: past t_end"));
            continue;
        }
        let (tt, g) = traj.nearest(t);
        let mut worst = 0.0f64;
        for &mu in &mus {
            let s = fourier_transform(g, mu);
            let o = oracle_fourier(&phi0, tt, mu)?;
            let e = (s - o).norm();
            worst = worst.max(e);
            table.push_numbers(&[tt, mu, s.re, s.im, o.re, o.im, e]);
        }
        report.checks.push(Check::at_most(
            format!("fourier_oracle_t{t}"),
            worst,
            FOURIER_TOLERANCE,
            "closed-form Fourier transform of the solution",
        ));
    }
    report.tables.push(("fourier.csv".into(), table));

    let mut solver = Vec::with_capacity(traj.len());
    let mut oracle = Vec::with_capacity(traj.len());
    for (&t, g) in traj.times.iter().zip(&traj.states) {
        solver.push(l2_norm(&g.sub(&reference)?));
        let diff = |mu: f64| oracle_fourier(&phi0, t, mu).map(|v| v - phi_inf(mu)).unwrap_or(Complex64::new(f64::NAN, 0.0));
        oracle.push(plancherel_distance(&diff, t.exp(), PLANCHEREL_POINTS));
    }
    if at_equilibrium(&g0, &reference)? {
        let residual = rhs(&reference, RhsKind::SelfSimilar);
        let floor = FLOOR_FACTOR * cfg.integrator.t_end.max(1.0) * l2_norm(&residual) + 1e-12;
        report.checks.push(Check::at_most(
            "equilibrium_floor_l2_solver",
            solver.iter().copied().fold(0.0, f64::max),
            floor,
            "g_rho is stationary",
        ));
        report.checks.push(Check::at_most(
            "equilibrium_floor_l2_oracle",
            oracle.iter().copied().fold(0.0, f64::max),
            1e-12,
            "g_rho is stationary",
        ));
        report.rates.push(RateSeries { name: "l2_solver".into(), outcome: RateOutcome::Constant });
        report.rates.push(RateSeries { name: "l2_oracle".into(), outcome: RateOutcome::Constant });
    } else {
        let gap = solver.iter().zip(&oracle).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);
        report.notes.push(format!("largest relative gap between the solver and Plancherel L2 series: {gap:.3e}"));
        for (name, s) in [("l2_solver", &solver), ("l2_oracle", &oracle)] {
            let r = RateSeries::fit(name, &traj.times, s, cfg.fit_window);
            report.checks.push(Check::at_least(
                format!("rate_{name}"),
                r.rate().unwrap_or(f64::NAN),
                L2_MIN_RATE,
                "L2 distance decays like e^(-t/2)",
            ));
            report.rates.push(r);
        }
    }
    report.series.push("t", traj.times.clone());
    report.series.push("l2_solver", solver);
    report.series.push("l2_oracle", oracle);
    report.series.push("m0", traj.states.iter().map(|g| grid.integrate_values(g.values())).collect());
    report.trajectory = Some(traj);
    Ok(report)
}

/// First time after which `values` stays within `tol` (relative) of its
/// final value.
pub fn plateau_time(times: &[f64], values: &[f64], tol: f64) -> f64 {
    let last = values[values.len() - 1];
    let mut first = times.len() - 1;
    for i in (0..values.len()).rev() {
        if (values[i] - last).abs() <= tol * last.abs() {
            first = i;
        } else {
            break;
        }
    }
    times[first]
}

/// Moment oracles plus the sweep of exponential moments `E_nu` for
/// `nu < 2/rho`, each with the time it settles onto its plateau.
pub fn run_moment_creation(cfg: &ExperimentConfig) -> Result<Report, ExperimentError> {
    let mut cfg = cfg.clone();
    cfg.frame = Frame::SelfSimilar;
    let g0 = cfg.initial();
    let traj = evolve(&g0, RhsKind::SelfSimilar, &cfg.integrator)?;
    let mut report = Report::new(format!(
        "moments: {} datum, N = {}, y_max = {}, dt = {}, t_end = {}, rho = {}",
        cfg.datum.family.name(),
        cfg.grid.n_points(),
        cfg.grid.y_max(),
        cfg.integrator.dt,
        cfg.integrator.t_end,
        cfg.rho
    ));
    report.series.push("t", traj.times.clone());
    moment_oracles(&cfg, &g0, &traj, &mut report);

    let t_end = *traj.times.last().expect("non-empty");
    let spacing = cfg.integrator.dt * cfg.integrator.snapshot_stride as f64;
    let mut table = Table::new(["nu", "fraction", "initial", "plateau_time", "plateau_value", "reached"]);
    let mut fractions = cfg.nu_fractions.clone();
    fractions.sort_by(f64::total_cmp);
    let mut times = Vec::new();
    for &f in &fractions {
        let nu = f * 2.0 / cfg.rho;
        let e: Vec<f64> = traj.states.iter().map(|g| exp_moment_unchecked(g, nu)).collect();
        let t_star = plateau_time(&traj.times, &e, cfg.plateau_tolerance);
        let reached = t_star <= t_end - PLATEAU_HOLD;
        table.push(vec![num(nu), num(f), num(e[0]), num(t_star), num(e[e.len() - 1]), reached.to_string()]);
        report.checks.push(Check::at_most(
            format!("plateau_nu{nu}"),
            t_star,
            t_end - PLATEAU_HOLD,
            "every exponential moment below 2/rho is bounded after a finite time",
        ));
        report.series.push(format!("e_nu{nu}"), e);
        times.push(t_star);
    }
    let worst_drop = times.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
    report.checks.push(Check::at_most(
        "plateau_time_monotone_in_nu",
        worst_drop,
        spacing,
        "plateau time grows with nu",
    ));
    report.tables.push(("plateaus.csv".into(), table));
    report.trajectory = Some(traj);
    Ok(report)
}

/// Smallest fitted semigroup decay asserted per norm.
pub fn gap_threshold(spec: &NormSpec) -> f64 {
    match (spec.power_variant, spec.k) {
        (PowerVariant::Alternative, k) if k >= 0 => L2_MIN_RATE,
        (_, -1) => 0.95,
        (_, 0) => 0.90,
        _ => 0.85,
    }
}

/// Rayleigh quotients and semigroup decay of the linearized operator.
pub fn run_gap(cfg: &ExperimentConfig, jobs: usize) -> Result<Report, ExperimentError> {
    let settings = SurveySettings {
        grid: cfg.grid,
        corpus_size: cfg.gap_corpus_size,
        integrator: cfg.integrator.clone(),
        fit_window: cfg.fit_window,
        jobs,
    };
    let reports = gap_survey(cfg.gap_rho, &cfg.gap_specs, cfg.seed, &settings)?;
    let mut report = Report::new(format!(
        "gap: rho = {}, {} members, seed {}, N = {}, y_max = {}, dt = {}, t_end = {}",
        cfg.gap_rho,
        cfg.gap_corpus_size,
        cfg.seed,
        cfg.grid.n_points(),
        cfg.grid.y_max(),
        cfg.integrator.dt,
        cfg.integrator.t_end
    ));
    report.series.push("member", (0..cfg.gap_corpus_size).map(|i| i as f64).collect());
    for r in &reports {
        let name = format!("k{}_mu{}{}", r.spec.k, r.spec.mu, if r.spec.power_variant == PowerVariant::Alternative { "_alt" } else { "" });
        if r.spec.k == -1 {
            report.checks.push(Check::at_most(
                format!("rayleigh_{name}"),
                r.quotient_max,
                -1.0 + RAYLEIGH_TOLERANCE,
                "spectral gap inequality",
            ));
        } else {
            report.notes.push(format!("largest Rayleigh quotient for {}: {:.6}", r.spec, r.quotient_max));
        }
        report.checks.push(Check::at_least(
            format!("decay_{name}"),
            r.fitted_decay,
            gap_threshold(&r.spec),
            "the linearized semigroup decays like e^(-t)",
        ));
        report.notes.push(format!("largest removed mass fraction for {}: {:.3e}", r.spec, r.max_removed_mass));
        report.series.push(format!("decay_{name}"), r.member_decays.clone());
    }
    report.tables.push(("gap.csv".into(), gap_table(&reports)));
    Ok(report)
}

fn inequality_anchor(name: &str) -> &'static str {
    match name.trim_end_matches("_equality") {
        "aizenman_bak" => "log-convolution inequality, equality on exponentials",
        "linear_aizenman_bak" => "second-order expansion of the log-convolution inequality",
        "hardy" => "Hardy inequality with constant 4",
        "weighted_poincare" => "weighted Poincare inequality with constant 4/mu^2",
        "bilinear_bound" => "C(g_rho, h) bounded in the (-1, mu) norm with K = 1",
        "bilinear_self_bound" => "C(h, h) bounded in the (-1, mu) norm",
        "norm_equivalence" => "equivalence of the weighted norms",
        _ => "weighted inequality",
    }
}

/// Worst case per inequality family, as checks.
pub fn inequality_checks(cases: &[InequalityCase]) -> Vec<Check> {
    let mut names: Vec<&str> = cases.iter().map(|c| c.name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    names
        .into_iter()
        .map(|name| {
            let group: Vec<&InequalityCase> = cases.iter().filter(|c| c.name == name).collect();
            let tol = group[0].tolerance;
            if name.ends_with("_equality") {
                let worst = group.iter().map(|c| c.margin.abs()).fold(0.0, f64::max);
                Check::at_most(name, worst, tol, inequality_anchor(name))
            } else {
                let worst = group.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min);
                Check::at_least(name, worst, -tol, inequality_anchor(name))
            }
        })
        .collect()
}

/// Every inequality over the seeded corpora.
pub fn run_inequalities(cfg: &ExperimentConfig, jobs: usize) -> Result<Report, ExperimentError> {
    let mut settings = HarnessSettings::standard(cfg.seed, jobs)?;
    settings.grid = cfg.grid;
    settings.corpus_size = cfg.inequality_corpus_size;
    settings.rho = cfg.rho;
    settings.mus.retain(|&mu| mu < 4.0 / cfg.rho);
    let cases = run_harness(&settings)?;
    let mut report = Report::new(format!(
        "inequalities: {} cases, {} members, seed {}, N = {}, y_max = {}",
        cases.len(),
        settings.corpus_size,
        settings.seed,
        settings.grid.n_points(),
        settings.grid.y_max()
    ));
    report.checks = inequality_checks(&cases);
    for c in cases.iter().filter(|c| !c.passed) {
        report.notes.push(format!("failed case: {c}"));
    }
    report.observables = Some(harness_table(&cases));
    Ok(report)
}
