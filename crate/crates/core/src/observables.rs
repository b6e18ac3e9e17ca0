//! Moments, weighted norms and relative entropies.
//!
//! ```text
//! M_k[g]      = int y^k |g|
//! E_mu[g]     = int e^{mu y} |g|
//! |h|_{k,mu}^2 = int y^{2p} (D^k h)^2 e^{mu y},   D^{-1} h = -H
//!               p = k+1 (standard) or k (alternative, k >= 0)
//! F[g|g_rho]  = int g (log(g/g_rho) - 1) + g_rho
//! ```
//!
//! Every exponentially weighted integral checks that its integrand has
//! decayed by `TRUNCATION_LIMIT` at the end of the grid.

use std::fmt;

use thiserror::Error;

use crate::grid::{derivative, tail_primitive, GridError, GridFunction};
use crate::profiles::{stationary_primitive, stationary_profile, OracleError};

/// Largest admissible ratio of a weighted integrand near `y_max` to its maximum.
pub const TRUNCATION_LIMIT: f64 = 3.3546262790251185e-9; // exp(-19.5)

/// Negative values above this fraction of the peak count as clipping noise.
pub const NEGATIVITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservableError {
    #[error("{what}: integrand ratio {ratio:e} at y_max exceeds {limit:e}; grid too short")]
    Truncation { what: String, ratio: f64, limit: f64 },
    #[error("norm order k = {0} outside -1..=4")]
    UnsupportedOrder(i32),
    #[error("exponential weight must be finite and nonnegative, got {0}")]
    BadWeight(f64),
    #[error("density is negative ({value:e}) at node {index}")]
    NegativeDensity { index: usize, value: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PowerVariant {
    #[default]
    Standard,
    Alternative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSpec {
    pub k: i32,
    pub mu: f64,
    pub power_variant: PowerVariant,
}

impl fmt::Display for NormSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.power_variant {
            PowerVariant::Standard => "",
            PowerVariant::Alternative => "alt",
        };
        write!(f, "({},{}){}", self.k, self.mu, tag)
    }
}

impl NormSpec {
    pub fn new(k: i32, mu: f64) -> Result<Self, ObservableError> {
        Self::with_variant(k, mu, PowerVariant::Standard)
    }

    pub fn alternative(k: i32, mu: f64) -> Result<Self, ObservableError> {
        Self::with_variant(k, mu, PowerVariant::Alternative)
    }

    pub fn with_variant(k: i32, mu: f64, power_variant: PowerVariant) -> Result<Self, ObservableError> {
        if !(-1..=4).contains(&k) {
            return Err(ObservableError::UnsupportedOrder(k));
        }
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(ObservableError::BadWeight(mu));
        }
        Ok(Self { k, mu, power_variant })
    }

    /// Exponent `p` of the power weight `y^{2p}`.
    pub fn power(&self) -> i32 {
        match (self.power_variant, self.k) {
            (_, -1) => 0,
            (PowerVariant::Standard, k) => k + 1,
            (PowerVariant::Alternative, k) => k,
        }
    }

    /// `y^p (D^k h) e^{mu y / 2}`, whose squared integral is the norm.
    pub fn weighted_factor(&self, h: &GridFunction) -> Result<GridFunction, ObservableError> {
        let dk = match self.k {
            -1 => tail_primitive(h).scale(-1.0),
            0 => h.clone(),
            k if (1..=4).contains(&k) => derivative(h, k as usize)?,
            k => return Err(ObservableError::UnsupportedOrder(k)),
        };
        let p = self.power();
        let mu = self.mu;
        Ok(dk.map_with_nodes(|y, v| v * y.powi(p) * (0.5 * mu * y).exp())?)
    }

    /// Pointwise integrand with `H` replaced by `h` for `k = -1`, since `H`
    /// vanishes at `y_max` by construction.
    fn truncation_probe(&self, h: &GridFunction) -> Result<Vec<f64>, ObservableError> {
        let dk = match self.k {
            -1 | 0 => h.clone(),
            k => derivative(h, k as usize)?,
        };
        let p = self.power().max(0);
        let mu = self.mu;
        let grid = *h.grid();
        Ok(dk
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let y = grid.node(i);
                v * v * y.powi(2 * p) * (mu * y).exp()
            })
            .collect())
    }
}

/// Ratio of the integrand's last four nodes to its maximum.
pub fn truncation_ratio(integrand: &[f64]) -> f64 {
    let peak = integrand.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return 0.0;
    }
    let n = integrand.len();
    integrand[n.saturating_sub(4)..].iter().fold(0.0f64, |m, v| m.max(v.abs())) / peak
}

pub fn check_truncation(what: &str, integrand: &[f64]) -> Result<(), ObservableError> {
    let ratio = truncation_ratio(integrand);
    if ratio > TRUNCATION_LIMIT {
        Err(ObservableError::Truncation { what: what.to_string(), ratio, limit: TRUNCATION_LIMIT })
    } else {
        Ok(())
    }
}

/// `int y^k |g|` for `k > -1`.
pub fn moment(g: &GridFunction, k: f64) -> f64 {
    assert!(k > -1.0, "moment order must exceed -1");
    let grid = g.grid();
    let w: Vec<f64> = g.values().iter().enumerate().map(|(i, v)| v.abs() * grid.node(i).powf(k)).collect();
    grid.integrate_nonnegative_values(&w)
}

fn exp_weighted(g: &GridFunction, mu: f64) -> Vec<f64> {
    let grid = g.grid();
    g.values().iter().enumerate().map(|(i, v)| v.abs() * (mu * grid.node(i)).exp()).collect()
}

pub fn exp_moment(g: &GridFunction, mu: f64) -> Result<f64, ObservableError> {
    if !mu.is_finite() {
        return Err(ObservableError::BadWeight(mu));
    }
    let w = exp_weighted(g, mu);
    check_truncation("exponential moment", &w)?;
    Ok(g.grid().integrate_nonnegative_values(&w))
}

/// `E_mu` without the truncation check.
pub fn exp_moment_unchecked(g: &GridFunction, mu: f64) -> f64 {
    g.grid().integrate_nonnegative_values(&exp_weighted(g, mu))
}

pub fn weighted_norm(h: &GridFunction, spec: &NormSpec) -> Result<f64, ObservableError> {
    check_truncation("weighted norm", &spec.truncation_probe(h)?)?;
    weighted_norm_unchecked(h, spec)
}

/// `||h||_{k,mu}` without the truncation check; for residual floors whose
/// mass sits in the far tail.
pub fn weighted_norm_unchecked(h: &GridFunction, spec: &NormSpec) -> Result<f64, ObservableError> {
    let f = spec.weighted_factor(h)?;
    let sq: Vec<f64> = f.values().iter().map(|v| v * v).collect();
    Ok(h.grid().integrate_nonnegative_values(&sq).max(0.0).sqrt())
}

pub fn weighted_inner(h1: &GridFunction, h2: &GridFunction, spec: &NormSpec) -> Result<f64, ObservableError> {
    h1.ensure_same_grid(h2)?;
    check_truncation("weighted inner product", &spec.truncation_probe(h1)?)?;
    check_truncation("weighted inner product", &spec.truncation_probe(h2)?)?;
    let a = spec.weighted_factor(h1)?;
    let b = spec.weighted_factor(h2)?;
    let prod: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect();
    if h1 == h2 {
        return Ok(h1.grid().integrate_nonnegative_values(&prod));
    }
    Ok(h1.grid().integrate_values(&prod))
}

/// Unweighted `L^2` norm.
pub fn l2_norm(h: &GridFunction) -> f64 {
    let sq: Vec<f64> = h.values().iter().map(|v| v * v).collect();
    h.grid().integrate_nonnegative_values(&sq).max(0.0).sqrt()
}

/// `(1 + x) log(1 + x) - x` for `x >= -1`.
pub fn psi(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        x * x * (0.5 - x * (1.0 / 6.0 - x * (1.0 / 12.0 - x / 20.0)))
    } else if x <= -1.0 {
        1.0
    } else {
        (1.0 + x) * x.ln_1p() - x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyReport {
    pub entropy: f64,
    pub l1_distance: f64,
    /// `m Psi(l1 / m)` with `m` the reference mass (2 for `g_rho`).
    pub csiszar_lower_bound: f64,
    pub reference_mass: f64,
}

/// `F[g|g_rho]`, or `F[G|G_rho]` on the tail primitives when `primitive_form`.
pub fn relative_entropy(g: &GridFunction, rho: f64, primitive_form: bool) -> Result<EntropyReport, ObservableError> {
    let grid = *g.grid();
    let (u, reference) = if primitive_form {
        (tail_primitive(g), stationary_primitive(rho, grid)?)
    } else {
        (g.clone(), stationary_profile(rho, grid)?)
    };
    let peak = u.max_abs();
    if let Some((index, &value)) =
        u.values().iter().enumerate().find(|(_, &v)| v < -NEGATIVITY_TOLERANCE * peak)
    {
        return Err(ObservableError::NegativeDensity { index, value });
    }
    let integrand: Vec<f64> = u
        .values()
        .iter()
        .zip(reference.values())
        .map(|(&v, &r)| r * psi(v.max(0.0) / r - 1.0))
        .collect();
    let gap: Vec<f64> = u.values().iter().zip(reference.values()).map(|(v, r)| (v - r).abs()).collect();
    let entropy = grid.integrate_values(&integrand).max(0.0);
    let l1_distance = grid.integrate_values(&gap);
    let reference_mass = grid.integrate_values(reference.values());
    Ok(EntropyReport {
        entropy,
        l1_distance,
        csiszar_lower_bound: reference_mass * psi(l1_distance / reference_mass),
        reference_mass,
    })
}
