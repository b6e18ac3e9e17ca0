//! Fixed-step RK4 for both frames, trajectories, and the change of variables
//!
//! ```text
//! g(t, y) = e^{2t} f(e^t - 1, e^t y)
//! f(t, y) = (1+t)^{-2} g(log(1+t), y/(1+t))
//! ```
//!
//! The self-similar stepper adds a sixth-difference damping term scaled by
//! the dilation speed (see [`crate::grid::damping_values`]).

use std::cell::Cell;
use std::collections::BTreeMap;

use thiserror::Error;

use crate::coagulation::{rhs_values, RhsKind};
use crate::grid::{damping_values, Grid, GridError, GridFunction, DEFAULT_DAMPING};
use crate::observables::NEGATIVITY_TOLERANCE;
use crate::profiles::Direction;

/// Largest `dt * y_max / dy` accepted for the dilation term.
pub const TRANSPORT_CFL_LIMIT: f64 = 2.1;

/// Clipped mass above this fraction of the initial mass aborts a run.
pub const CLIPPED_MASS_FRACTION: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("step size violates the stability limit: {0}")]
    Unstable(String),
    #[error("initial datum is negative ({value:e}) at node {index}")]
    NegativeInitialData { index: usize, value: f64 },
    #[error("non-finite state after t = {last_valid_time}")]
    NonFinite { last_valid_time: f64 },
    #[error("clipped mass {clipped:e} exceeds {limit:e} at t = {time}; refine the grid")]
    ClippedMassExceeded { clipped: f64, limit: f64, time: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    pub snapshot_stride: usize,
    pub scheme: Scheme,
    /// Strength of the grid-scale damping; zero disables it.
    pub damping: f64,
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_end: f64, snapshot_stride: usize) -> Result<Self, SolverError> {
        let cfg = Self { dt, t_end, snapshot_stride, scheme: Scheme::Rk4, damping: DEFAULT_DAMPING };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SolverError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(SolverError::InvalidConfig(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.snapshot_stride == 0 {
            return Err(SolverError::InvalidConfig("snapshot_stride must be positive".into()));
        }
        if !(self.damping.is_finite() && self.damping >= 0.0) {
            return Err(SolverError::InvalidConfig(format!("damping must be nonnegative, got {}", self.damping)));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Stability heuristics: `dt (2 + M0) < 1`, plus the dilation limit when
    /// the transport term is present.
    pub fn check_stability(&self, grid: &Grid, m0: f64, transport: bool) -> Result<(), SolverError> {
        let loss = self.dt * (2.0 + m0);
        if loss >= 1.0 {
            return Err(SolverError::Unstable(format!("dt (2 + M0) = {loss} >= 1")));
        }
        if transport {
            let cfl = self.dt * grid.y_max() / grid.spacing();
            if cfl > TRANSPORT_CFL_LIMIT {
                return Err(SolverError::Unstable(format!(
                    "dt y_max / dy = {cfl} > {TRANSPORT_CFL_LIMIT}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frame: RhsKind,
    pub times: Vec<f64>,
    pub states: Vec<GridFunction>,
    /// One map per snapshot.
    pub log: Vec<BTreeMap<String, f64>>,
}

impl Trajectory {
    pub fn grid(&self) -> &Grid {
        self.states[0].grid()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &GridFunction {
        self.states.last().expect("trajectory has the initial state")
    }

    /// Logged values of one observable, in snapshot order.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.log.iter().map(|m| m.get(name).copied()).collect()
    }

    /// Snapshot closest to `t`.
    pub fn nearest(&self, t: f64) -> (f64, &GridFunction) {
        let i = (0..self.len())
            .min_by(|&a, &b| (self.times[a] - t).abs().total_cmp(&(self.times[b] - t).abs()))
            .expect("non-empty");
        (self.times[i], &self.states[i])
    }
}

pub(crate) fn first_moment(grid: &Grid, v: &[f64]) -> f64 {
    let w: Vec<f64> = v.iter().enumerate().map(|(i, x)| x * grid.node(i)).collect();
    grid.integrate_values(&w)
}

/// Classical RK4 loop shared by the nonlinear and linear solvers.
///
/// `after_step` may modify the state (clipping, projection) and fail;
/// `record` is called at every snapshot including `t = 0`.
pub(crate) fn rk4_loop(
    grid: &Grid,
    v0: Vec<f64>,
    cfg: &IntegratorConfig,
    rhs: &dyn Fn(&[f64]) -> Vec<f64>,
    after_step: &mut dyn FnMut(f64, &mut [f64]) -> Result<(), SolverError>,
    record: &mut dyn FnMut(f64, &[f64]),
) -> Result<(), SolverError> {
    let n = grid.n_points();
    let dt = cfg.dt;
    let steps = cfg.n_steps();
    let mut v = v0;
    let mut stage = vec![0.0; n];
    record(0.0, &v);
    for step in 1..=steps {
        let t_prev = (step - 1) as f64 * dt;
        let k1 = rhs(&v);
        for i in 0..n {
            stage[i] = v[i] + 0.5 * dt * k1[i];
        }
        let k2 = rhs(&stage);
        for i in 0..n {
            stage[i] = v[i] + 0.5 * dt * k2[i];
        }
        let k3 = rhs(&stage);
        for i in 0..n {
            stage[i] = v[i] + dt * k3[i];
        }
        let k4 = rhs(&stage);
        for i in 0..n {
            v[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(SolverError::NonFinite { last_valid_time: t_prev });
        }
        let t = step as f64 * dt;
        after_step(t, &mut v)?;
        if step % cfg.snapshot_stride == 0 || step == steps {
            record(t, &v);
        }
    }
    Ok(())
}

/// Evolves a nonnegative density in either frame.
pub fn evolve(g0: &GridFunction, kind: RhsKind, cfg: &IntegratorConfig) -> Result<Trajectory, SolverError> {
    cfg.validate()?;
    let grid = *g0.grid();
    let peak = g0.max_abs();
    if let Some((index, &value)) =
        g0.values().iter().enumerate().find(|(_, &v)| v < -NEGATIVITY_TOLERANCE * peak)
    {
        return Err(SolverError::NegativeInitialData { index, value });
    }
    let m0 = grid.integrate_values(g0.values());
    let transport = kind == RhsKind::SelfSimilar;
    cfg.check_stability(&grid, m0, transport)?;

    let mass0 = first_moment(&grid, g0.values());
    let limit = CLIPPED_MASS_FRACTION * mass0.abs().max(f64::MIN_POSITIVE);
    let dy = grid.spacing();
    let damping = if transport { cfg.damping } else { 0.0 };
    let rhs = |v: &[f64]| {
        let mut out = rhs_values(&grid, v, kind);
        if damping > 0.0 {
            for (o, d) in out.iter_mut().zip(damping_values(v, dy, damping)) {
                *o += d;
            }
        }
        out
    };

    let clipped = Cell::new(0.0);
    let mut after = |t: f64, v: &mut [f64]| {
        let mut c = clipped.get();
        for (i, x) in v.iter_mut().enumerate() {
            if *x < 0.0 {
                c += -*x * grid.node(i) * dy;
                *x = 0.0;
            }
        }
        clipped.set(c);
        if c > limit {
            Err(SolverError::ClippedMassExceeded { clipped: c, limit, time: t })
        } else {
            Ok(())
        }
    };

    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut log = Vec::new();
    let mut record = |t: f64, v: &[f64]| {
        let mass = first_moment(&grid, v);
        let mut m = BTreeMap::new();
        m.insert("mass".to_string(), mass);
        m.insert("mass_drift".to_string(), if mass0 != 0.0 { (mass - mass0) / mass0 } else { mass });
        m.insert("zeroth_moment".to_string(), grid.integrate_values(v));
        m.insert("clipped_mass".to_string(), clipped.get());
        times.push(t);
        states.push(GridFunction::raw(grid, v.to_vec()));
        log.push(m);
    };
    rk4_loop(&grid, g0.values().to_vec(), cfg, &rhs, &mut after, &mut record)?;
    Ok(Trajectory { frame: kind, times, states, log })
}

/// Change of variables between the frames, resampled on the same grid by
/// linear interpolation (zero beyond `y_max`).
///
/// `Forward` takes physical `(t, f(t))` to `(log(1+t), g)`;
/// `Backward` takes self-similar `(t, g(t))` to `(e^t - 1, f)`.
pub fn frame_map(point: (f64, &GridFunction), direction: Direction) -> (f64, GridFunction) {
    let (t, u) = point;
    let grid = *u.grid();
    match direction {
        Direction::Forward => {
            let s = 1.0 + t;
            let values = grid.nodes().iter().map(|&y| s * s * u.interpolate(s * y)).collect();
            (s.ln(), GridFunction::from_values(grid, values).expect("finite"))
        }
        Direction::Backward => {
            let s = t.exp();
            let values = grid.nodes().iter().map(|&y| u.interpolate(y / s) / (s * s)).collect();
            (s - 1.0, GridFunction::from_values(grid, values).expect("finite"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observables::moment;
    use crate::profiles::{oracle_m0_physical, oracle_m0_selfsim, oracle_m2_selfsim_corrected, stationary_profile};

    fn grid(n: usize) -> Grid {
        Grid::new(n, 40.0).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(IntegratorConfig::new(0.0, 1.0, 1).is_err());
        assert!(IntegratorConfig::new(1e-3, -1.0, 1).is_err());
        assert!(IntegratorConfig::new(1e-3, 1.0, 0).is_err());
        let cfg = IntegratorConfig::new(1e-3, 1.0, 10).unwrap();
        assert_eq!(cfg.n_steps(), 1000);
        assert!(cfg.check_stability(&grid(2048), 4.0, true).is_ok());
        assert!(cfg.check_stability(&grid(4096), 4.0, true).is_err());
        assert!(IntegratorConfig::new(0.2, 1.0, 1).unwrap().check_stability(&grid(64), 4.0, false).is_err());
    }

    #[test]
    fn negative_datum_rejected() {
        let g = GridFunction::from_fn(grid(256), |y| (1.0 - y) * (-y).exp()).unwrap();
        let cfg = IntegratorConfig::new(1e-3, 0.01, 1).unwrap();
        assert!(matches!(evolve(&g, RhsKind::Physical, &cfg), Err(SolverError::NegativeInitialData { .. })));
    }

    #[test]
    fn equilibrium_stays_put() {
        let g = stationary_profile(2.0, grid(1024)).unwrap();
        let cfg = IntegratorConfig::new(2e-3, 2.0, 100).unwrap();
        let traj = evolve(&g, RhsKind::SelfSimilar, &cfg).unwrap();
        let residual = crate::coagulation::rhs(&g, RhsKind::SelfSimilar).max_abs();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            assert!(s.sub(&g).unwrap().max_abs() <= 10.0 * residual * t + 1e-14, "t={t}");
        }
        assert_eq!(traj.times[0], 0.0);
        assert_eq!(traj.len(), 11);
    }

    #[test]
    fn zero_datum_stays_zero() {
        let z = GridFunction::zeros(grid(256));
        let cfg = IntegratorConfig::new(5e-3, 0.5, 10).unwrap();
        let traj = evolve(&z, RhsKind::SelfSimilar, &cfg).unwrap();
        assert_eq!(traj.final_state().max_abs(), 0.0);
    }

    #[test]
    fn selfsimilar_moments_follow_closed_forms() {
        let g0 = GridFunction::from_fn(grid(1024), |y| 8.0 * (-2.0 * y).exp()).unwrap();
        let cfg = IntegratorConfig::new(2e-3, 2.0, 50).unwrap();
        let traj = evolve(&g0, RhsKind::SelfSimilar, &cfg).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let m0 = moment(s, 0.0);
            assert!((m0 - oracle_m0_selfsim(4.0, *t)).abs() < 1e-5 * m0, "t={t}");
            assert!((moment(s, 1.0) - 2.0).abs() < 1e-5);
            let m2 = oracle_m2_selfsim_corrected(2.0, 2.0, *t);
            assert!((moment(s, 2.0) - m2).abs() < 1e-4 * m2);
        }
        let drift = traj.column("mass_drift").unwrap();
        assert!(drift.iter().all(|d| d.abs() < 1e-5));
    }

    #[test]
    fn physical_frame_conserves_mass() {
        let g0 = GridFunction::from_fn(Grid::new(2048, 80.0).unwrap(), |y| 2.0 * y * y * (-y).exp() / 3.0).unwrap();
        let cfg = IntegratorConfig::new(2e-3, 1.0, 50).unwrap();
        let traj = evolve(&g0, RhsKind::Physical, &cfg).unwrap();
        let m0 = moment(&g0, 0.0);
        let mass = moment(&g0, 1.0);
        for (t, s) in traj.times.iter().zip(&traj.states) {
            assert!((moment(s, 1.0) - mass).abs() < 1e-4 * mass);
            let err = (moment(s, 0.0) - oracle_m0_physical(m0, *t)).abs();
            assert!(err < 1e-6, "t={t} err={err:e}");
        }
    }

    #[test]
    fn frame_map_round_trip_and_mass() {
        let g = grid(2048);
        let f = GridFunction::from_fn(g, |y| y * (-y).exp()).unwrap();
        let (t0, same) = frame_map((0.0, &f), Direction::Forward);
        assert_eq!(t0, 0.0);
        assert!(same.sub(&f).unwrap().max_abs() < 1e-14);
        let (tb, back) = frame_map((0.0, &f), Direction::Backward);
        assert_eq!(tb, 0.0);
        assert!(back.sub(&f).unwrap().max_abs() < 1e-14);
        let (t1, mapped) = frame_map((1.5, &f), Direction::Forward);
        assert!((t1 - 2.5f64.ln()).abs() < 1e-15);
        assert!((moment(&mapped, 1.0) - moment(&f, 1.0)).abs() < 1e-4);
    }

    #[test]
    fn self_similar_seed_maps_to_equilibrium() {
        // f(t, y) = (1+t)^-2 g_rho(y/(1+t)) solves the physical equation
        let g = grid(2048);
        let g2 = stationary_profile(2.0, g).unwrap();
        for tau in [0.5, 1.0, 2.0] {
            let f = GridFunction::from_fn(g, |y| crate::profiles::stationary_value(2.0, y / (1.0 + tau)) / (1.0 + tau).powi(2))
                .unwrap();
            let (_, mapped) = frame_map((tau, &f), Direction::Forward);
            assert!(mapped.sub(&g2).unwrap().max_abs() < 1e-3, "tau={tau}");
        }
    }
}
