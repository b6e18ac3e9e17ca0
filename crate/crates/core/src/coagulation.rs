//! Constant-kernel coagulation operator and assembled right-hand sides.
//!
//! ```text
//! C(g, h)    = 1/2 g*h - 1/2 g int(h) - 1/2 h int(g)
//! 2 int_y^inf C(g, h) = g*H - H int(g)
//! physical:      d_t f = C(f, f)
//! self-similar:  d_t g = 2g + y g' + C(g, g)
//! ```

use thiserror::Error;

use crate::grid::{
    convolve, derivative, inflow_derivative_values, tail_primitive, GridError, GridFunction,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoagError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("Leibniz check supports k in 1..=2, got {0}")]
    UnsupportedOrder(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RhsKind {
    Physical,
    SelfSimilar,
}

impl RhsKind {
    pub fn name(self) -> &'static str {
        match self {
            RhsKind::Physical => "physical",
            RhsKind::SelfSimilar => "selfsimilar",
        }
    }
}

pub fn coag_bilinear(g: &GridFunction, h: &GridFunction) -> Result<GridFunction, CoagError> {
    g.ensure_same_grid(h)?;
    let grid = g.grid();
    let ig = grid.integrate_values(g.values());
    let ih = grid.integrate_values(h.values());
    let conv = convolve(g, h)?;
    let out = conv
        .values()
        .iter()
        .zip(g.values().iter().zip(h.values()))
        .map(|(c, (gv, hv))| 0.5 * c - 0.5 * gv * ih - 0.5 * hv * ig)
        .collect();
    Ok(GridFunction::from_values(*grid, out)?)
}

/// `y -> int_y^inf C(g, h)` from `(g*H - H int g) / 2`.
pub fn coag_primitive(g: &GridFunction, h: &GridFunction) -> Result<GridFunction, CoagError> {
    g.ensure_same_grid(h)?;
    let big_h = tail_primitive(h);
    let ig = g.grid().integrate_values(g.values());
    let conv = convolve(g, &big_h)?;
    Ok(conv.combine(0.5, &big_h, -0.5 * ig)?)
}

/// `2g + y g'` with the inflow derivative.
pub fn dilation_values(v: &[f64], spacing: f64) -> Vec<f64> {
    let d = inflow_derivative_values(v, spacing);
    v.iter()
        .zip(&d)
        .enumerate()
        .map(|(i, (x, dx))| 2.0 * x + (i + 1) as f64 * spacing * dx)
        .collect()
}

pub fn dilation(g: &GridFunction) -> GridFunction {
    GridFunction::from_values(*g.grid(), dilation_values(g.values(), g.grid().spacing()))
        .expect("dilation of finite data is finite")
}

/// Right-hand side on raw node values; the hot path of the time steppers.
pub(crate) fn rhs_values(grid: &crate::grid::Grid, v: &[f64], kind: RhsKind) -> Vec<f64> {
    let m0 = grid.integrate_values(v);
    let conv = grid.convolve_values(v, v);
    let mut out: Vec<f64> = conv.iter().zip(v).map(|(c, x)| 0.5 * c - x * m0).collect();
    if kind == RhsKind::SelfSimilar {
        for (o, d) in out.iter_mut().zip(dilation_values(v, grid.spacing())) {
            *o += d;
        }
    }
    out
}

pub fn rhs(state: &GridFunction, kind: RhsKind) -> GridFunction {
    let out = rhs_values(state.grid(), state.values(), kind);
    GridFunction::from_values(*state.grid(), out).expect("rhs of finite data is finite")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeibnizReport {
    pub k: usize,
    /// Max-norm gap with the lowest-order factor taken as `int_0^y h`.
    pub max_discrepancy: f64,
    /// Max-norm gap with the factor taken literally as `-H`.
    pub literal_discrepancy: f64,
    /// `max |int(h) D^k(y^{k+1} g)|`, the term separating the two conventions.
    pub boundary_term: f64,
    pub lhs_max: f64,
}

fn times_power(f: &GridFunction, p: i32) -> GridFunction {
    f.map_with_nodes(|y, v| v * y.powi(p)).expect("finite")
}

fn derivative_or_identity(f: &GridFunction, order: usize) -> Result<GridFunction, GridError> {
    if order == 0 {
        Ok(f.clone())
    } else {
        derivative(f, order)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Compares `D^k(y^{k+1}(g*h))` with its binomial expansion
/// `sum_i C(k+1, i) D^{k+1-i}(y^{k+1-i} g) * D^{i-1}(y^i h)`.
pub fn leibniz_convolution_identity_check(
    g: &GridFunction,
    h: &GridFunction,
    k: usize,
) -> Result<LeibnizReport, CoagError> {
    if !(1..=2).contains(&k) {
        return Err(CoagError::UnsupportedOrder(k));
    }
    g.ensure_same_grid(h)?;
    let grid = *g.grid();
    let p = (k + 1) as i32;
    let lhs = derivative(&times_power(&convolve(g, h)?, p), k)?;

    let ih = grid.integrate_values(h.values());
    let big_h = tail_primitive(h);
    let from_origin = big_h.map(|v| ih - v)?;
    let minus_h = big_h.scale(-1.0);

    let mut rhs = GridFunction::zeros(grid);
    let mut literal = GridFunction::zeros(grid);
    for i in 0..=k + 1 {
        let left = derivative_or_identity(&times_power(g, p - i as i32), k + 1 - i)?;
        let c = binomial(k + 1, i);
        if i == 0 {
            rhs = rhs.combine(1.0, &convolve(&left, &from_origin)?, c)?;
            literal = literal.combine(1.0, &convolve(&left, &minus_h)?, c)?;
        } else {
            let right = derivative_or_identity(&times_power(h, i as i32), i - 1)?;
            let term = convolve(&left, &right)?;
            rhs = rhs.combine(1.0, &term, c)?;
            literal = literal.combine(1.0, &term, c)?;
        }
    }
    let boundary = derivative(&times_power(g, p), k)?.scale(ih);
    Ok(LeibnizReport {
        k,
        max_discrepancy: lhs.sub(&rhs)?.max_abs(),
        literal_discrepancy: lhs.sub(&literal)?.max_abs(),
        boundary_term: boundary.max_abs(),
        lhs_max: lhs.max_abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{integrate, integrate_power, Grid};
    use crate::profiles::stationary_profile;

    fn grid(n: usize) -> Grid {
        Grid::new(n, 40.0).unwrap()
    }

    fn smooth(grid: Grid, a: f64, b: f64) -> GridFunction {
        GridFunction::from_fn(grid, |y| (1.0 + a * y + b * y * y) * (-y).exp()).unwrap()
    }

    #[test]
    fn stationary_profile_is_a_fixed_point() {
        let mut last = f64::INFINITY;
        for n in [512, 1024, 2048] {
            let g = stationary_profile(2.0, grid(n)).unwrap();
            let r = rhs(&g, RhsKind::SelfSimilar).max_abs();
            assert!(r < 1e-5, "n={n} residual {r}");
            assert!(r < last / 4.0, "residual order below 2");
            last = r;
        }
        let g = stationary_profile(2.0, grid(2048)).unwrap();
        let lhs = dilation(&g).add(&coag_bilinear(&g, &g).unwrap()).unwrap();
        assert!(lhs.max_abs() < 1e-7);
    }

    #[test]
    fn zero_arguments() {
        let g = smooth(grid(256), 0.3, 0.1);
        let z = GridFunction::zeros(*g.grid());
        assert_eq!(coag_bilinear(&g, &z).unwrap().max_abs(), 0.0);
        assert_eq!(coag_primitive(&g, &z).unwrap().max_abs(), 0.0);
        for kind in [RhsKind::Physical, RhsKind::SelfSimilar] {
            assert_eq!(rhs(&z, kind).max_abs(), 0.0);
        }
    }

    #[test]
    fn symmetry() {
        let g = smooth(grid(512), 0.5, -0.05);
        let h = smooth(grid(512), -0.2, 0.3);
        let a = coag_bilinear(&g, &h).unwrap();
        let b = coag_bilinear(&h, &g).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn primitive_two_routes() {
        let g = smooth(grid(2048), 0.5, 0.05);
        let h = smooth(grid(2048), -0.7, 0.2);
        let direct = tail_primitive(&coag_bilinear(&g, &h).unwrap());
        let compact = coag_primitive(&g, &h).unwrap();
        assert!(direct.sub(&compact).unwrap().max_abs() < 1e-6);
        let gr = stationary_profile(2.0, grid(2048)).unwrap();
        let via_stationarity = tail_primitive(&dilation(&gr)).scale(-1.0);
        assert!(coag_primitive(&gr, &gr).unwrap().sub(&via_stationarity).unwrap().max_abs() < 1e-6);
    }

    #[test]
    fn moment_identities_of_the_operator() {
        let g = smooth(grid(2048), 1.0, 0.25);
        let c = coag_bilinear(&g, &g).unwrap();
        let m0 = integrate(&g, None).unwrap();
        assert!(integrate_power(&c, 1.0).abs() < 1e-7);
        assert!((integrate(&c, None).unwrap() + 0.5 * m0 * m0).abs() < 1e-7);
        let r = rhs(&g, RhsKind::SelfSimilar);
        assert!(integrate_power(&r, 1.0).abs() < 1e-7);
    }

    #[test]
    fn leibniz_identity() {
        let g = grid(4096);
        let e = GridFunction::from_fn(g, |y| (-y).exp()).unwrap();
        let r = leibniz_convolution_identity_check(&e, &e, 1).unwrap();
        assert!(r.max_discrepancy <= 1e-3, "{r:?}");
        assert!((r.literal_discrepancy - r.boundary_term).abs() < 1e-3);
        let ye = GridFunction::from_fn(g, |y| y * (-y).exp()).unwrap();
        let r = leibniz_convolution_identity_check(&ye, &ye, 2).unwrap();
        assert!(r.max_discrepancy <= 1e-2, "{r:?}");
        let r = leibniz_convolution_identity_check(&e, &GridFunction::zeros(g), 1).unwrap();
        assert_eq!(r.lhs_max, 0.0);
        assert_eq!(r.max_discrepancy, 0.0);
        assert!(leibniz_convolution_identity_check(&e, &e, 3).is_err());
    }
}
