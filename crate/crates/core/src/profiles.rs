//! Stationary profiles and closed-form moment, exponential-moment and Fourier
//! solutions for the constant kernel.
//!
//! ```text
//! g_rho(y) = (4/rho) exp(-2y/rho)        G_rho(y) = 2 exp(-2y/rho)
//! M0(t)    = 2 / (1 - e^-t + 2 e^-t / M0(0))                 (self-similar)
//! phi_t(m) = s [2/(s-1 + 2/M0) + 2d/(2 - (s-1) d)],  s = e^t,
//!            d = phi_0(m/s) - M0,  M0 = phi_0(0)
//! ```
//!
//! With `M0 = 2` the Fourier form reduces to
//! `2 phi_0(m/s) / (2 + (s-1)(2 - phi_0(m/s)))`.

use num_complex::Complex64;
use thiserror::Error;

use crate::grid::{integrate, Grid, GridError, GridFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("mass parameter rho must be positive and finite, got {0}")]
    BadRho(f64),
    #[error("exponential moment blows up at t = {blow_up_time} (requested t = {requested})")]
    BlowUp { blow_up_time: f64, requested: f64 },
    #[error("vanishing denominator at t = {t}, mu = {mu}")]
    SingularDenominator { t: f64, mu: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Physical,
    SelfSimilar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Physical to self-similar.
    Forward,
    /// Self-similar to physical.
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentOracleInput {
    pub m0_initial: f64,
    pub e_mu_initial: f64,
    pub mu: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierState {
    pub mu: f64,
    pub value: Complex64,
}

fn check_rho(rho: f64) -> Result<(), OracleError> {
    if rho.is_finite() && rho > 0.0 {
        Ok(())
    } else {
        Err(OracleError::BadRho(rho))
    }
}

pub fn stationary_value(rho: f64, y: f64) -> f64 {
    4.0 / rho * (-2.0 * y / rho).exp()
}

pub fn stationary_profile(rho: f64, grid: Grid) -> Result<GridFunction, OracleError> {
    check_rho(rho)?;
    Ok(GridFunction::from_fn(grid, |y| stationary_value(rho, y))?)
}

/// `G_rho(y) = int_y^inf g_rho`.
pub fn stationary_primitive(rho: f64, grid: Grid) -> Result<GridFunction, OracleError> {
    check_rho(rho)?;
    Ok(GridFunction::from_fn(grid, |y| 2.0 * (-2.0 * y / rho).exp())?)
}

/// `d g_rho / d rho`; the null direction of the linearised operator, with
/// `int y (d g_rho / d rho) = 1`.
pub fn mass_direction(rho: f64, grid: Grid) -> Result<GridFunction, OracleError> {
    check_rho(rho)?;
    Ok(GridFunction::from_fn(grid, |y| {
        (-4.0 / (rho * rho) + 8.0 * y / rho.powi(3)) * (-2.0 * y / rho).exp()
    })?)
}

pub fn oracle_m0_physical(m0_initial: f64, t: f64) -> f64 {
    2.0 / (t + 2.0 / m0_initial)
}

pub fn oracle_m0_selfsim(m0_initial: f64, t: f64) -> f64 {
    let e = (-t).exp();
    2.0 / (1.0 - e + 2.0 * e / m0_initial)
}

/// Second moment in the self-similar frame as published:
/// `e^-t M2(0) + rho^2 (1 - e^-t) / 2`.
pub fn oracle_m2_selfsim(m2_initial: f64, rho: f64, t: f64) -> f64 {
    let e = (-t).exp();
    e * m2_initial + 0.5 * rho * rho * (1.0 - e)
}

/// Second moment from `dM2/dt = M1^2` in physical time:
/// `e^-t M2(0) + rho^2 (1 - e^-t)`.
pub fn oracle_m2_selfsim_corrected(m2_initial: f64, rho: f64, t: f64) -> f64 {
    let e = (-t).exp();
    e * m2_initial + rho * rho * (1.0 - e)
}

pub fn oracle_m2_physical(m2_initial: f64, rho: f64, t: f64) -> f64 {
    m2_initial + rho * rho * t
}

/// `2/(t + 2/M0) + 2d/(2 - t d)`; `None` once `2 - t d <= 0`.
fn physical_exp_moment(m0: f64, d: f64, t: f64) -> Option<f64> {
    let den = 2.0 - t * d;
    if den <= 0.0 {
        None
    } else {
        Some(2.0 / (t + 2.0 / m0) + 2.0 * d / den)
    }
}

/// Exponential moment `E_mu` at time `t`.
///
/// The physical frame uses `inp.e_mu_initial`. The self-similar frame needs
/// `E_theta` of the datum at `theta = mu e^-t`, supplied by `e0_at`.
pub fn oracle_exp_moment(
    inp: &MomentOracleInput,
    t: f64,
    frame: Frame,
    e0_at: &dyn Fn(f64) -> f64,
) -> Result<f64, OracleError> {
    check_rho(inp.mass)?;
    let m0 = inp.m0_initial;
    match frame {
        Frame::Physical => {
            let d = inp.e_mu_initial - m0;
            physical_exp_moment(m0, d, t).ok_or(OracleError::BlowUp {
                blow_up_time: 2.0 / d,
                requested: t,
            })
        }
        Frame::SelfSimilar => {
            let denominator = |tt: f64| {
                let s = tt.exp();
                2.0 - (s - 1.0) * (e0_at(inp.mu / s) - m0)
            };
            let s = t.exp();
            let d = e0_at(inp.mu / s) - m0;
            match physical_exp_moment(m0, d, s - 1.0) {
                Some(v) => Ok(s * v),
                None => Err(OracleError::BlowUp {
                    blow_up_time: bisect_root(&denominator, 0.0, t),
                    requested: t,
                }),
            }
        }
    }
}

/// First sign change of `f` on `[a, b]` given `f(a) > 0 >= f(b)`.
fn bisect_root(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
        if b - a <= 1e-14 * b.abs().max(1.0) {
            break;
        }
    }
    b
}

/// Closed-form Fourier transform `int e^{-i mu y} g(t, y) dy` in the
/// self-similar frame from the datum's transform `phi0`.
pub fn oracle_fourier(
    phi0: &dyn Fn(f64) -> Complex64,
    t: f64,
    mu: f64,
) -> Result<Complex64, OracleError> {
    let m0 = phi0(0.0).re;
    let s = t.exp();
    let tau = s - 1.0;
    let d = phi0(mu / s) - m0;
    let den1 = tau + 2.0 / m0;
    let den2 = Complex64::new(2.0, 0.0) - d * tau;
    if den1 == 0.0 || den2.norm() == 0.0 {
        return Err(OracleError::SingularDenominator { t, mu });
    }
    Ok(s * (Complex64::new(2.0 / den1, 0.0) + 2.0 * d / den2))
}

/// `int e^{-i mu y} g(y) dy` by quadrature.
pub fn fourier_transform(g: &GridFunction, mu: f64) -> Complex64 {
    let grid = g.grid();
    let (re, im): (Vec<f64>, Vec<f64>) = g
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (s, c) = (mu * grid.node(i)).sin_cos();
            (v * c, -v * s)
        })
        .unzip();
    Complex64::new(grid.integrate_values(&re), grid.integrate_values(&im))
}

pub fn equilibrium_fourier(mu: f64) -> Complex64 {
    Complex64::new(2.0, 0.0) / Complex64::new(1.0, mu)
}

/// Moment relations between the two frames.
///
/// `Forward`: `value = M_k[f(e^t - 1)]`, returns `M_k[g(t)]`.
/// `Backward`: `value = M_k[g(log(1 + t))]`, returns `M_k[f(t)]`.
pub fn transform_moment(value: f64, k: f64, t: f64, direction: Direction) -> f64 {
    match direction {
        Direction::Forward => (t * (1.0 - k)).exp() * value,
        Direction::Backward => (1.0 + t).powf(k - 1.0) * value,
    }
}

/// Exponential-moment relations; returns `(value, order)`.
///
/// `Forward`: `value = E_nu[f(e^t - 1)]`, returns `(E_{nu e^t}[g(t)], nu e^t)`.
/// `Backward`: `value = E_nu[g(log(1 + t))]`, returns `(E_{nu/(1+t)}[f(t)], nu/(1+t))`.
pub fn transform_exp_moment(value: f64, nu: f64, t: f64, direction: Direction) -> (f64, f64) {
    match direction {
        Direction::Forward => (t.exp() * value, nu * t.exp()),
        Direction::Backward => (value / (1.0 + t), nu / (1.0 + t)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpMomentConditionReport {
    pub finite_all_t: bool,
    pub uniformly_bounded: bool,
    /// Smallest sampled `2/(mu/theta - 1) - (E_theta - M0)`.
    pub worst_margin: f64,
    pub worst_theta: f64,
    /// Largest `nu` allowed by the sampled uniform-bound condition.
    pub admissible_nu: f64,
    pub samples: usize,
}

pub const THETA_SAMPLES: usize = 200;

/// Sampled check of the conditions under which `E_mu[g(t)]` stays finite
/// (and bounded) for all times, over log-spaced `theta` in `(1e-4 mu, mu)`.
pub fn check_exp_moment_conditions(g0: &GridFunction, mu: f64) -> ExpMomentConditionReport {
    if mu <= 0.0 {
        return ExpMomentConditionReport {
            finite_all_t: true,
            uniformly_bounded: true,
            worst_margin: f64::INFINITY,
            worst_theta: 0.0,
            admissible_nu: f64::INFINITY,
            samples: 0,
        };
    }
    let grid = g0.grid();
    let nodes = grid.nodes();
    let abs: Vec<f64> = g0.values().iter().map(|v| v.abs()).collect();
    let m0 = grid.integrate_values(&abs);
    let e_theta = |theta: f64| {
        let w: Vec<f64> = abs.iter().zip(&nodes).map(|(v, y)| v * (theta * y).exp()).collect();
        grid.integrate_values(&w)
    };
    let lo = (1e-4 * mu).ln();
    let hi = mu.ln();
    let mut worst_margin = f64::INFINITY;
    let mut worst_theta = 0.0;
    let mut admissible_nu = f64::INFINITY;
    for j in 0..THETA_SAMPLES {
        // open interval: the endpoint theta = mu is excluded
        let theta = (lo + (hi - lo) * j as f64 / THETA_SAMPLES as f64).exp();
        let excess = e_theta(theta) - m0;
        let margin = 2.0 / (mu / theta - 1.0) - excess;
        if margin < worst_margin {
            worst_margin = margin;
            worst_theta = theta;
        }
        if excess > 0.0 {
            admissible_nu = admissible_nu.min(theta + 2.0 * theta / excess);
        }
    }
    ExpMomentConditionReport {
        finite_all_t: worst_margin > 0.0,
        uniformly_bounded: admissible_nu > mu,
        worst_margin,
        worst_theta,
        admissible_nu,
        samples: THETA_SAMPLES,
    }
}

/// `E_theta` of a datum by quadrature; convenience for the self-similar oracle.
pub fn exp_moment_fn(g0: &GridFunction) -> impl Fn(f64) -> f64 + '_ {
    move |theta| {
        let grid = g0.grid();
        let w: Vec<f64> = g0
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| v.abs() * (theta * grid.node(i)).exp())
            .collect();
        grid.integrate_values(&w)
    }
}

/// `C g(C y)` with `C` chosen so that the first moment equals `target`.
///
/// The self-similar equation is invariant under this dilation, and the zeroth
/// moment is unchanged.
pub fn normalize_mass(g: &GridFunction, target: f64) -> Result<GridFunction, OracleError> {
    check_rho(target)?;
    let grid = *g.grid();
    let nodes = grid.nodes();
    let first: Vec<f64> = g.values().iter().zip(&nodes).map(|(v, y)| v * y).collect();
    let mass = grid.integrate_values(&first);
    check_rho(mass)?;
    let c = mass / target;
    Ok(GridFunction::from_values(grid, nodes.iter().map(|&y| c * grid.interpolate_values_cubic(g.values(), c * y)).collect())?)
}

/// `int g` by quadrature; used as `phi_0(0)`.
pub fn zeroth_moment(g: &GridFunction) -> f64 {
    integrate(g, None).unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::new(4000, 40.0).unwrap()
    }

    #[test]
    fn stationary_moments() {
        let g2 = stationary_profile(2.0, grid()).unwrap();
        assert!((g2.value_at_origin() - 2.0).abs() < 1e-6);
        for rho in [1.0, 2.0, 3.0] {
            let g = stationary_profile(rho, grid()).unwrap();
            assert!((crate::grid::integrate_power(&g, 1.0) - rho).abs() < 1e-6);
            assert!((crate::grid::integrate_power(&g, 0.0) - 2.0).abs() < 1e-6);
        }
        assert!(matches!(stationary_profile(0.0, grid()), Err(OracleError::BadRho(_))));
        assert!(matches!(stationary_profile(-1.0, grid()), Err(OracleError::BadRho(_))));
    }

    #[test]
    fn mass_direction_normalised() {
        let d = mass_direction(2.0, grid()).unwrap();
        assert!((crate::grid::integrate_power(&d, 1.0) - 1.0).abs() < 1e-8);
        assert!(crate::grid::integrate_power(&d, 0.0).abs() < 1e-8);
    }

    #[test]
    fn zeroth_moment_oracle() {
        for t in [0.0, 0.5, 3.0, 10.0] {
            assert!((oracle_m0_selfsim(2.0, t) - 2.0).abs() < 1e-15);
        }
        assert_eq!(oracle_m0_selfsim(4.0, 0.0), 4.0);
        assert!((oracle_m0_selfsim(4.0, 60.0) - 2.0).abs() < 1e-12);
        assert_eq!(oracle_m0_physical(3.0, 0.0), 3.0);
    }

    #[test]
    fn second_moment_oracles() {
        assert_eq!(oracle_m2_selfsim(5.0, 2.0, 0.0), 5.0);
        assert!((oracle_m2_selfsim(5.0, 2.0, 60.0) - 2.0).abs() < 1e-12);
        for t in [0.0, 1.0, 7.0] {
            assert!((oracle_m2_selfsim(2.0, 2.0, t) - 2.0).abs() < 1e-14);
            assert!((oracle_m2_selfsim_corrected(4.0, 2.0, t) - 4.0).abs() < 1e-14);
        }
    }

    #[test]
    fn physical_exp_moment_of_equilibrium() {
        for mu in [0.2, 0.5, 0.8] {
            let inp = MomentOracleInput { m0_initial: 2.0, e_mu_initial: 2.0 / (1.0 - mu), mu, mass: 2.0 };
            let none = |_: f64| f64::NAN;
            let t0 = oracle_exp_moment(&inp, 0.0, Frame::Physical, &none).unwrap();
            assert!((t0 - 2.0 / (1.0 - mu)).abs() < 1e-12);
            let t = 0.7 * (1.0 - mu) / mu;
            let v = oracle_exp_moment(&inp, t, Frame::Physical, &none).unwrap();
            let expect = 2.0 / (t + 1.0) + 2.0 / ((1.0 - mu) / mu - t);
            assert!((v - expect).abs() < 1e-12 * expect);
        }
    }

    #[test]
    fn exp_moment_degenerate_and_zero_order() {
        let none = |_: f64| f64::NAN;
        let inp = MomentOracleInput { m0_initial: 3.0, e_mu_initial: 3.0, mu: 0.0, mass: 1.0 };
        for t in [0.0, 1.0, 5.0] {
            let v = oracle_exp_moment(&inp, t, Frame::Physical, &none).unwrap();
            assert!((v - oracle_m0_physical(3.0, t)).abs() < 1e-14);
        }
        let ss = |_: f64| 3.0;
        for t in [0.0, 1.0, 5.0] {
            let v = oracle_exp_moment(&inp, t, Frame::SelfSimilar, &ss).unwrap();
            assert!((v - oracle_m0_selfsim(3.0, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn physical_blow_up_time() {
        let inp = MomentOracleInput { m0_initial: 2.0, e_mu_initial: 4.0, mu: 0.5, mass: 2.0 };
        let none = |_: f64| f64::NAN;
        assert!(oracle_exp_moment(&inp, 0.999, Frame::Physical, &none).is_ok());
        match oracle_exp_moment(&inp, 1.0, Frame::Physical, &none) {
            Err(OracleError::BlowUp { blow_up_time, .. }) => assert_eq!(blow_up_time, 1.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn selfsim_exp_moment_of_exponential_family() {
        // g(t) = 2 th^2 exp(-th y), th = 1/(1 - e^-t/2) for g0 = 8 exp(-2y)
        let e0 = |theta: f64| 8.0 / (2.0 - theta);
        let inp = MomentOracleInput { m0_initial: 4.0, e_mu_initial: e0(0.5), mu: 0.5, mass: 2.0 };
        for t in [0.0f64, 0.3, 1.0, 3.0] {
            let th = 1.0 / (1.0 - 0.5 * (-t).exp());
            let v = oracle_exp_moment(&inp, t, Frame::SelfSimilar, &e0).unwrap();
            let expect = 2.0 * th * th / (th - 0.5);
            assert!((v - expect).abs() < 1e-12 * expect, "t={t}");
        }
    }

    #[test]
    fn selfsim_blow_up_reported() {
        // datum 0.5 exp(-0.5 y): theta(t) = s/(s+1), E_0.9 infinite until s = 9
        let e0 = |theta: f64| 0.5 / (0.5 - theta);
        let inp = MomentOracleInput { m0_initial: 1.0, e_mu_initial: f64::INFINITY, mu: 0.9, mass: 2.0 };
        let err = oracle_exp_moment(&inp, 1.0, Frame::SelfSimilar, &e0).unwrap_err();
        assert!(matches!(err, OracleError::BlowUp { .. }));
    }

    #[test]
    fn fourier_fixed_points() {
        for t in [0.0, 0.5, 2.0, 6.0] {
            for mu in [-7.0, -1.0, 0.0, 0.3, 4.0] {
                let v = oracle_fourier(&equilibrium_fourier, t, mu).unwrap();
                assert!((v - equilibrium_fourier(mu)).norm() < 1e-12);
            }
        }
        let phi0 = |m: f64| Complex64::new(8.0, 0.0) / Complex64::new(2.0, m).powi(2);
        for t in [0.0, 1.0, 3.0] {
            assert!((oracle_fourier(&phi0, t, 0.0).unwrap().re - 2.0).abs() < 1e-13);
        }
        for mu in [-3.0, 0.5, 9.0] {
            assert!((oracle_fourier(&phi0, 0.0, mu).unwrap() - phi0(mu)).norm() < 1e-14);
        }
    }

    #[test]
    fn fourier_reduces_to_published_form_at_unit_normalisation() {
        let phi0 = |m: f64| Complex64::new(8.0, 0.0) / Complex64::new(2.0, m).powi(2);
        for t in [0.2f64, 1.5] {
            for mu in [-2.0, 0.7, 5.0] {
                let tau = t.exp();
                let p = phi0(mu / tau);
                let published = 2.0 * p / (2.0 + (tau - 1.0) * (2.0 - p));
                assert!((oracle_fourier(&phi0, t, mu).unwrap() - published).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn fourier_zero_frequency_tracks_m0() {
        let phi0 = |m: f64| Complex64::new(8.0, 0.0) / Complex64::new(2.0, m);
        for t in [0.0, 0.4, 2.0, 5.0] {
            let v = oracle_fourier(&phi0, t, 0.0).unwrap();
            assert!((v.re - oracle_m0_selfsim(4.0, t)).abs() < 1e-13);
        }
    }

    #[test]
    fn moment_transforms() {
        assert_eq!(transform_moment(3.0, 1.0, 2.5, Direction::Forward), 3.0);
        assert!((transform_moment(1.5, 0.0, 2f64.ln(), Direction::Forward) - 3.0).abs() < 1e-14);
        assert!((transform_moment(1.5, 2.0, 0.7, Direction::Backward) - 1.7 * 1.5).abs() < 1e-14);
        for k in [0.0, 0.5, 2.0, 3.0] {
            let t: f64 = 1.3;
            let back = transform_moment(2.2, k, t.exp() - 1.0, Direction::Backward);
            let v = transform_moment(back, k, t, Direction::Forward);
            assert!((v - 2.2).abs() < 1e-13);
        }
        let (v, nu) = transform_exp_moment(5.0, 0.2, 1.0, Direction::Forward);
        let (w, nu2) = transform_exp_moment(v, nu, 1f64.exp() - 1.0, Direction::Backward);
        assert!((w - 5.0).abs() < 1e-13 && (nu2 - 0.2).abs() < 1e-15);
    }

    #[test]
    fn exp_moment_conditions() {
        let g = stationary_profile(2.0, grid()).unwrap();
        for mu in [0.3, 0.6, 0.9] {
            let r = check_exp_moment_conditions(&g, mu);
            assert!(r.finite_all_t && r.uniformly_bounded, "{r:?}");
            assert!((r.admissible_nu - 1.0).abs() < 1e-3);
        }
        let r = check_exp_moment_conditions(&g, 0.0);
        assert!(r.finite_all_t && r.uniformly_bounded && r.samples == 0);
        // compact support of mass 2
        let bump = GridFunction::from_fn(grid(), |y| if y < 2.0 { 0.75 * y * (2.0 - y) } else { 0.0 }).unwrap();
        let bump = bump.scale(2.0 / crate::grid::integrate_power(&bump, 1.0));
        for mu in [0.3, 0.6, 0.95] {
            let r = check_exp_moment_conditions(&bump, mu);
            assert!(r.finite_all_t && r.uniformly_bounded, "{r:?}");
        }
    }

    #[test]
    fn mass_normalisation_keeps_m0() {
        let g = GridFunction::from_fn(grid(), |y| 8.0 * (-2.0 * y).exp()).unwrap();
        let n = normalize_mass(&g, 3.0).unwrap();
        assert!((crate::grid::integrate_power(&n, 1.0) - 3.0).abs() < 1e-5);
        assert!((zeroth_moment(&n) - 4.0).abs() < 1e-5);
    }

    #[test]
    fn quadrature_fourier_transform() {
        let g = GridFunction::from_fn(grid(), |y| 2.0 * (-y).exp()).unwrap();
        for mu in [-5.0, 0.0, 1.0, 3.0] {
            assert!((fourier_transform(&g, mu) - equilibrium_fourier(mu)).norm() < 1e-6);
        }
    }
}
