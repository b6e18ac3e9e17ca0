//! The linearisation of the self-similar equation at `g_rho`.
//!
//! ```text
//! L h  = 2h + y h' + 2 C(g_rho, h)
//!      = y h' - (4/rho) H + (2/rho) (g_rho * H)
//! int_y^inf L h = -H - y h + g_rho * H
//! ```
//!
//! `d g_rho / d rho` spans the kernel; the analysis takes place on the
//! complement `int y h = 0`.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::coagulation::{coag_bilinear, dilation_values, CoagError, RhsKind};
use crate::evolution::{first_moment, rk4_loop, IntegratorConfig, SolverError, Trajectory};
use crate::grid::{damping_values, ConvolutionKernel, Grid, GridError, GridFunction};
use crate::observables::{weighted_norm, NormSpec, ObservableError};
use crate::profiles::{mass_direction, stationary_profile, OracleError};
use crate::rates::{fit_rate, RateError};
use crate::report::{num, Table};

/// Relative tolerance on `int y h` for membership in the mass-orthogonal space.
pub const MASS_ORTHOGONALITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearError {
    #[error("perturbation is not mass-orthogonal: int y h = {moment:e}, norm {norm:e}")]
    NotMassOrthogonal { moment: f64, norm: f64 },
    #[error("Rayleigh quotient of a zero-norm perturbation")]
    ZeroNorm,
    #[error("norm {spec} needs mu <= 2/rho = {limit}")]
    WeightTooStrong { spec: NormSpec, limit: f64 },
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Coag(#[from] CoagError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Rate(#[from] RateError),
}

/// `L` at a fixed `rho` and grid, with the `g_rho` spectrum cached.
#[derive(Debug, Clone)]
pub struct LinearOperator {
    rho: f64,
    grid: Grid,
    kernel: ConvolutionKernel,
    null: Vec<f64>,
    null_moment: f64,
}

impl LinearOperator {
    pub fn new(rho: f64, grid: Grid) -> Result<Self, LinearError> {
        let g = stationary_profile(rho, grid)?;
        let null = mass_direction(rho, grid)?.into_values();
        let null_moment = first_moment(&grid, &null);
        Ok(Self { rho, grid, kernel: ConvolutionKernel::new(&g), null, null_moment })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `y h' - (4/rho) H + (2/rho) g_rho * H` on raw values.
    pub fn apply_values(&self, h: &[f64]) -> Vec<f64> {
        let dy = self.grid.spacing();
        let big_h = self.grid.tail_values(h);
        let conv = self.kernel.apply_values(&big_h);
        // y h' = (2h + y h') - 2h
        dilation_values(h, dy)
            .iter()
            .zip(h)
            .zip(big_h.iter().zip(&conv))
            .map(|((d, v), (bh, c))| d - 2.0 * v - 4.0 / self.rho * bh + 2.0 / self.rho * c)
            .collect()
    }

    /// `-H - y h + g_rho * H` on raw values.
    pub fn primitive_values(&self, h: &[f64]) -> Vec<f64> {
        let big_h = self.grid.tail_values(h);
        let conv = self.kernel.apply_values(&big_h);
        h.iter()
            .enumerate()
            .map(|(i, v)| -big_h[i] - self.grid.node(i) * v + conv[i])
            .collect()
    }

    /// Removes the `d g_rho / d rho` component; returns the removed coefficient.
    pub fn project_values(&self, h: &mut [f64]) -> f64 {
        let c = first_moment(&self.grid, h) / self.null_moment;
        for (x, n) in h.iter_mut().zip(&self.null) {
            *x -= c * n;
        }
        c
    }

    pub fn apply(&self, h: &GridFunction) -> Result<GridFunction, LinearError> {
        self.check_grid(h)?;
        Ok(GridFunction::from_values(self.grid, self.apply_values(h.values()))?)
    }

    pub fn primitive(&self, h: &GridFunction) -> Result<GridFunction, LinearError> {
        self.check_grid(h)?;
        Ok(GridFunction::from_values(self.grid, self.primitive_values(h.values()))?)
    }

    fn check_grid(&self, h: &GridFunction) -> Result<(), LinearError> {
        Ok(self.kernel.grid().ensure_same(h.grid())?)
    }
}

pub fn apply_l(h: &GridFunction, rho: f64) -> Result<GridFunction, LinearError> {
    LinearOperator::new(rho, *h.grid())?.apply(h)
}

/// `2h + y h' + 2 C(g_rho, h)`, evaluated independently of [`apply_l`].
pub fn apply_l_direct(h: &GridFunction, rho: f64) -> Result<GridFunction, LinearError> {
    let g = stationary_profile(rho, *h.grid())?;
    let c = coag_bilinear(&g, h)?;
    let d = GridFunction::from_values(*h.grid(), dilation_values(h.values(), h.grid().spacing()))?;
    Ok(d.combine(1.0, &c, 2.0)?)
}

pub fn apply_l_primitive(h: &GridFunction, rho: f64) -> Result<GridFunction, LinearError> {
    LinearOperator::new(rho, *h.grid())?.primitive(h)
}

/// `int y h`.
pub fn mass_moment(h: &GridFunction) -> f64 {
    first_moment(h.grid(), h.values())
}

pub fn project_mass_orthogonal(h: &GridFunction, rho: f64) -> Result<GridFunction, LinearError> {
    let op = LinearOperator::new(rho, *h.grid())?;
    let mut v = h.values().to_vec();
    op.project_values(&mut v);
    Ok(GridFunction::from_values(*h.grid(), v)?)
}

fn check_orthogonal(h: &GridFunction, norm: f64) -> Result<(), LinearError> {
    let moment = mass_moment(h);
    let scale = norm.max(crate::observables::l2_norm(h));
    if moment.abs() > MASS_ORTHOGONALITY_TOLERANCE * scale {
        return Err(LinearError::NotMassOrthogonal { moment, norm: scale });
    }
    Ok(())
}

/// `<h, L h>_spec / ||h||^2_spec`.
///
/// For `k = -1` the factor of `L h` is taken from the primitive form.
/// Agrees with `weighted_inner(h, L h, spec)` where that passes its checks.
pub fn rayleigh_quotient(h: &GridFunction, rho: f64, spec: &NormSpec) -> Result<f64, LinearError> {
    let op = LinearOperator::new(rho, *h.grid())?;
    rayleigh_with(&op, h, spec)
}

fn rayleigh_with(op: &LinearOperator, h: &GridFunction, spec: &NormSpec) -> Result<f64, LinearError> {
    let norm = weighted_norm(h, spec)?;
    if norm == 0.0 {
        return Err(LinearError::ZeroNorm);
    }
    check_orthogonal(h, norm)?;
    let num = if spec.k == -1 {
        let grid = op.grid();
        let big_h = grid.tail_values(h.values());
        let prim = op.primitive_values(h.values());
        let w: Vec<f64> = (0..grid.n_points())
            .map(|i| big_h[i] * prim[i] * (spec.mu * grid.node(i)).exp())
            .collect();
        grid.integrate_values(&w)
    } else {
        // truncation is checked on h; L h inherits a grid-scale kink at
        // y_max from the inflow closure
        let a = spec.weighted_factor(h)?;
        let b = spec.weighted_factor(&op.apply(h)?)?;
        let prod: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect();
        op.grid().integrate_values(&prod)
    };
    Ok(num / (norm * norm))
}

fn linear_trajectory(
    op: &LinearOperator,
    h0: &GridFunction,
    cfg: &IntegratorConfig,
    reproject: bool,
) -> Result<Trajectory, LinearError> {
    cfg.validate()?;
    let grid = op.grid;
    cfg.check_stability(&grid, 2.0, true)?;
    let dy = grid.spacing();
    let damping = cfg.damping;
    let rhs = |v: &[f64]| {
        let mut out = op.apply_values(v);
        if damping > 0.0 {
            for (o, d) in out.iter_mut().zip(damping_values(v, dy, damping)) {
                *o += d;
            }
        }
        out
    };
    let removed = Cell::new(0.0);
    let mut after = |_t: f64, v: &mut [f64]| {
        if reproject {
            let c = op.project_values(v);
            removed.set(removed.get() + (c * op.null_moment).abs());
        }
        Ok(())
    };
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut log = Vec::new();
    let mut record = |t: f64, v: &[f64]| {
        let mut m = BTreeMap::new();
        m.insert("mass_moment".to_string(), first_moment(&grid, v));
        m.insert("removed_mass".to_string(), removed.get());
        times.push(t);
        states.push(GridFunction::raw(grid, v.to_vec()));
        log.push(m);
    };
    rk4_loop(&grid, h0.values().to_vec(), cfg, &rhs, &mut after, &mut record)?;
    Ok(Trajectory { frame: RhsKind::SelfSimilar, times, states, log })
}

/// RK4 for `d_t h = L h`, re-projected onto `int y h = 0` after every step.
///
/// The log carries `mass_moment` and the cumulative `removed_mass`, which
/// measures how much the discretisation leaks into the kernel.
pub fn evolve_linear(h0: &GridFunction, rho: f64, cfg: &IntegratorConfig) -> Result<Trajectory, LinearError> {
    evolve_linear_with(h0, rho, cfg, true)
}

/// As [`evolve_linear`], optionally without the re-projection.
pub fn evolve_linear_with(
    h0: &GridFunction,
    rho: f64,
    cfg: &IntegratorConfig,
    reproject: bool,
) -> Result<Trajectory, LinearError> {
    let op = LinearOperator::new(rho, *h0.grid())?;
    check_orthogonal(h0, 0.0)?;
    linear_trajectory(&op, h0, cfg, reproject)
}

/// Seeded corpus of smooth signed functions: one to three Gaussians times
/// quadratics, centres in `[0, 6)`, widths in `[0.5, 2)`.
pub fn smooth_corpus(grid: Grid, size: usize, seed: u64) -> Vec<GridFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = grid.nodes();
    (0..size)
        .map(|_| {
            let bumps = rng.random_range(1..=3);
            let params: Vec<(f64, f64, [f64; 3])> = (0..bumps)
                .map(|_| {
                    let c = rng.random_range(0.0..6.0);
                    let s = rng.random_range(0.5..2.0);
                    let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                    (c, s, p)
                })
                .collect();
            let v = nodes
                .iter()
                .map(|&y| {
                    params
                        .iter()
                        .map(|(c, s, p)| {
                            (p[0] + p[1] * y + 0.25 * p[2] * y * y) * (-(y - c).powi(2) / (2.0 * s * s)).exp()
                        })
                        .sum()
                })
                .collect();
            GridFunction::raw(grid, v)
        })
        .collect()
}

/// [`smooth_corpus`] minus the `d g_rho / d rho` component of each member.
pub fn mass_orthogonal_corpus(
    rho: f64,
    grid: Grid,
    size: usize,
    seed: u64,
) -> Result<Vec<GridFunction>, LinearError> {
    let op = LinearOperator::new(rho, grid)?;
    smooth_corpus(grid, size, seed)
        .into_iter()
        .map(|h| {
            let mut v = h.into_values();
            op.project_values(&mut v);
            Ok(GridFunction::from_values(grid, v)?)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurveySettings {
    pub grid: Grid,
    pub corpus_size: usize,
    pub integrator: IntegratorConfig,
    /// Decay fits use snapshots in this window.
    pub fit_window: (f64, f64),
    pub jobs: usize,
}

impl SurveySettings {
    pub fn standard(jobs: usize) -> Result<Self, LinearError> {
        Ok(Self {
            grid: Grid::new(2048, 40.0)?,
            corpus_size: 50,
            integrator: IntegratorConfig::new(1e-3, 5.0, 100)?,
            fit_window: (1.0, 5.0),
            jobs,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub spec: NormSpec,
    pub rho: f64,
    /// Largest Rayleigh quotient over the corpus.
    pub quotient_max: f64,
    /// Smallest fitted semigroup decay rate over the corpus.
    pub fitted_decay: f64,
    pub corpus_size: usize,
    pub seed: u64,
    /// Per-member decay rates, in corpus order.
    pub member_decays: Vec<f64>,
    /// Largest cumulative re-projected mass relative to `||h0||_spec`.
    pub max_removed_mass: f64,
}

struct MemberResult {
    quotients: Vec<f64>,
    decays: Vec<f64>,
    removed: Vec<f64>,
}

fn survey_member(
    op: &LinearOperator,
    h0: &GridFunction,
    specs: &[NormSpec],
    settings: &SurveySettings,
) -> Result<MemberResult, LinearError> {
    let quotients = specs.iter().map(|s| rayleigh_with(op, h0, s)).collect::<Result<Vec<_>, _>>()?;
    let traj = linear_trajectory(op, h0, &settings.integrator, true)?;
    let removed_total = traj.log.last().and_then(|m| m.get("removed_mass").copied()).unwrap_or(0.0);
    let mut decays = Vec::with_capacity(specs.len());
    let mut removed = Vec::with_capacity(specs.len());
    for spec in specs {
        let norms = traj.states.iter().map(|s| weighted_norm(s, spec)).collect::<Result<Vec<_>, _>>()?;
        decays.push(fit_rate(&traj.times, &norms, settings.fit_window)?.rate);
        removed.push(removed_total / norms[0]);
    }
    Ok(MemberResult { quotients, decays, removed })
}

pub(crate) fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, LinearError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| LinearError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Rayleigh quotients and semigroup decay fits over a seeded corpus, one
/// report per spec. Members run concurrently on `settings.jobs` threads.
pub fn gap_survey(
    rho: f64,
    specs: &[NormSpec],
    corpus_seed: u64,
    settings: &SurveySettings,
) -> Result<Vec<GapReport>, LinearError> {
    for spec in specs {
        let limit = 2.0 / rho;
        let strict = spec.k >= 0 && spec.mu >= limit;
        if spec.mu > limit || strict {
            return Err(LinearError::WeightTooStrong { spec: *spec, limit });
        }
    }
    let op = LinearOperator::new(rho, settings.grid)?;
    let corpus = mass_orthogonal_corpus(rho, settings.grid, settings.corpus_size, corpus_seed)?;
    let results = with_pool(settings.jobs, || {
        corpus
            .par_iter()
            .map(|h| survey_member(&op, h, specs, settings))
            .collect::<Result<Vec<_>, _>>()
    })??;
    Ok(specs
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let member_decays: Vec<f64> = results.iter().map(|r| r.decays[j]).collect();
            GapReport {
                spec: *spec,
                rho,
                quotient_max: results.iter().map(|r| r.quotients[j]).fold(f64::NEG_INFINITY, f64::max),
                fitted_decay: member_decays.iter().copied().fold(f64::INFINITY, f64::min),
                corpus_size: corpus.len(),
                seed: corpus_seed,
                member_decays,
                max_removed_mass: results.iter().map(|r| r.removed[j]).fold(0.0, f64::max),
            }
        })
        .collect())
}

pub fn gap_table(reports: &[GapReport]) -> Table {
    let mut t = Table::new(["k", "mu", "variant", "rho", "quotient_max", "fitted_decay", "corpus_size", "seed"]);
    for r in reports {
        t.push(vec![
            r.spec.k.to_string(),
            num(r.spec.mu),
            format!("{:?}", r.spec.power_variant).to_lowercase(),
            num(r.rho),
            num(r.quotient_max),
            num(r.fitted_decay),
            r.corpus_size.to_string(),
            r.seed.to_string(),
        ]);
    }
    t
}

pub fn write_gap_csv(reports: &[GapReport], path: &Path) -> std::io::Result<()> {
    gap_table(reports).write(path)
}

/// Fitted exponent `K` in `||h(t0)||_{k,nu} <= (nu/mu)^K ||h0||_{k,mu}` with
/// `t0 = log(nu/mu)`.
pub fn exponential_weight_growth(
    h0: &GridFunction,
    rho: f64,
    spec: &NormSpec,
    nu: f64,
    dt: f64,
) -> Result<f64, LinearError> {
    let ratio = nu / spec.mu;
    let t0 = ratio.ln();
    let steps = (t0 / dt).ceil().max(1.0);
    let cfg = IntegratorConfig::new(t0 / steps, t0, steps as usize)?;
    let traj = evolve_linear(h0, rho, &cfg)?;
    let target = NormSpec { mu: nu, ..*spec };
    let start = weighted_norm(h0, spec)?;
    let end = weighted_norm(traj.final_state(), &target)?;
    Ok((end / start).ln() / ratio.ln())
}

/// Plain-text table of gap reports.
pub fn format_gap_reports(reports: &[GapReport], out: &mut impl Write) -> std::io::Result<()> {
    for r in reports {
        writeln!(
            out,
            "{} rho={} quotient_max={:.6} fitted_decay={:.6} corpus={} seed={} removed_mass={:.3e}",
            r.spec, r.rho, r.quotient_max, r.fitted_decay, r.corpus_size, r.seed, r.max_removed_mass
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::tail_primitive;

    fn grid(n: usize) -> Grid {
        Grid::new(n, 40.0).unwrap()
    }

    fn sample(g: Grid) -> GridFunction {
        GridFunction::from_fn(g, |y| (4.0 + y - y * y) * (-y).exp()).unwrap()
    }

    #[test]
    fn two_forms_agree() {
        let g = grid(4096);
        for h in mass_orthogonal_corpus(2.0, g, 5, 3).unwrap() {
            let a = apply_l(&h, 2.0).unwrap();
            let b = apply_l_direct(&h, 2.0).unwrap();
            assert!(a.sub(&b).unwrap().max_abs() < 1e-6 * (1.0 + a.max_abs()));
        }
    }

    #[test]
    fn primitive_matches_tail_of_l() {
        let g = grid(4096);
        for h in mass_orthogonal_corpus(2.0, g, 5, 4).unwrap() {
            let a = tail_primitive(&apply_l(&h, 2.0).unwrap());
            let b = apply_l_primitive(&h, 2.0).unwrap();
            let err = a.sub(&b).unwrap().max_abs();
            assert!(err < 1e-6 * (1.0 + b.max_abs()), "{err}");
        }
    }

    #[test]
    fn null_direction_and_zero() {
        let g = grid(2048);
        let d = mass_direction(2.0, g).unwrap();
        assert!(apply_l(&d, 2.0).unwrap().max_abs() < 1e-6);
        assert!(apply_l_primitive(&d, 2.0).unwrap().max_abs() < 1e-6);
        assert!((mass_moment(&d) - 1.0).abs() < 1e-8);
        let z = GridFunction::zeros(g);
        assert_eq!(apply_l(&z, 2.0).unwrap().max_abs(), 0.0);
        assert_eq!(apply_l_primitive(&z, 2.0).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn l_conserves_mass() {
        let g = grid(4096);
        for h in mass_orthogonal_corpus(2.0, g, 5, 5).unwrap() {
            let lh = apply_l(&h, 2.0).unwrap();
            assert!(mass_moment(&lh).abs() < 1e-6 * (1.0 + h.max_abs()));
        }
    }

    #[test]
    fn corpus_is_orthogonal_and_reproducible() {
        let g = grid(512);
        let a = mass_orthogonal_corpus(2.0, g, 8, 11).unwrap();
        let b = mass_orthogonal_corpus(2.0, g, 8, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, mass_orthogonal_corpus(2.0, g, 8, 12).unwrap());
        for h in &a {
            assert!(mass_moment(h).abs() <= MASS_ORTHOGONALITY_TOLERANCE * crate::observables::l2_norm(h));
        }
    }

    #[test]
    fn quotient_of_explicit_function() {
        let g = grid(2048);
        let raw = sample(g);
        assert!(mass_moment(&raw).abs() < 1e-7);
        let h = project_mass_orthogonal(&raw, 2.0).unwrap();
        let spec = NormSpec::new(-1, 1.0).unwrap();
        let q = rayleigh_quotient(&h, 2.0, &spec).unwrap();
        assert!(q <= -1.0 + 0.02, "q = {q}");
        let q10 = rayleigh_quotient(&h.scale(10.0), 2.0, &spec).unwrap();
        assert!((q - q10).abs() < 1e-12);
    }

    #[test]
    fn quotient_errors() {
        let g = grid(512);
        let spec = NormSpec::new(-1, 1.0).unwrap();
        assert!(matches!(rayleigh_quotient(&GridFunction::zeros(g), 2.0, &spec), Err(LinearError::ZeroNorm)));
        let e = GridFunction::from_fn(g, |y| (-y).exp()).unwrap();
        assert!(matches!(rayleigh_quotient(&e, 2.0, &spec), Err(LinearError::NotMassOrthogonal { .. })));
    }

    #[test]
    fn linear_flow_decays_at_rate_one() {
        let g = grid(1024);
        let h = project_mass_orthogonal(&sample(g), 2.0).unwrap();
        let cfg = IntegratorConfig::new(2e-3, 5.0, 50).unwrap();
        let traj = evolve_linear(&h, 2.0, &cfg).unwrap();
        let spec = NormSpec::new(-1, 1.0).unwrap();
        let n0 = weighted_norm(&h, &spec).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let n = weighted_norm(s, &spec).unwrap();
            assert!(n <= n0 * (-t).exp() * 1.05, "t={t}: {n} vs {}", n0 * (-t).exp());
            assert!(mass_moment(s).abs() <= 1e-6 * n0);
        }
        let zero = evolve_linear(&GridFunction::zeros(g), 2.0, &cfg).unwrap();
        assert_eq!(zero.final_state().max_abs(), 0.0);
    }

    #[test]
    fn small_survey() {
        let settings = SurveySettings {
            grid: grid(512),
            corpus_size: 3,
            integrator: IntegratorConfig::new(2e-3, 3.0, 50).unwrap(),
            fit_window: (1.0, 3.0),
            jobs: 2,
        };
        let specs = [NormSpec::new(-1, 1.0).unwrap(), NormSpec::new(0, 0.8).unwrap()];
        let a = gap_survey(2.0, &specs, 7, &settings).unwrap();
        let b = gap_survey(2.0, &specs, 7, &SurveySettings { jobs: 1, ..settings }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert!(a[0].quotient_max <= -0.98);
        assert!(a[0].fitted_decay >= 0.9);
        assert!(gap_survey(2.0, &[NormSpec::new(0, 1.0).unwrap()], 7, &settings).is_err());
    }
}
