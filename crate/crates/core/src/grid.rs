//! Uniform size grid on `(0, y_max]` and the numerical primitives built on it.
//!
//! Nodes are `y_i = i * dy` for `i = 1..=n`; the origin is not stored. Wherever
//! a rule needs a value at `y = 0` it is extrapolated from the first nodes.
//!
//! ```text
//! integrate(f)      ~ int_0^ymax f dy
//! convolve(f, g)(y) ~ int_0^y f(x) g(y - x) dx
//! tail_primitive(h) ~ int_y^ymax h dx          (zero at ymax)
//! derivative(h, k)  ~ d^k h / dy^k              (4th order, k <= 4)
//! ```

use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

/// Smallest grid accepted: every stencil and end correction must fit.
pub const MIN_POINTS: usize = 16;

/// Largest derivative order with a stencil table.
pub const MAX_DERIVATIVE_ORDER: usize = 4;

const GREGORY: [f64; 4] = [17.0 / 48.0, 59.0 / 48.0, 43.0 / 48.0, 49.0 / 48.0];

/// Closed Newton-Cotes weights for `m = 2..=7` intervals (Gregory rule only).
fn newton_cotes(m: usize) -> Option<Vec<f64>> {
    let (num, den): (&[f64], f64) = match m {
        2 => (&[1.0, 4.0, 1.0], 3.0),
        3 => (&[3.0, 9.0, 9.0, 3.0], 8.0),
        4 => (&[14.0, 64.0, 24.0, 64.0, 14.0], 45.0),
        5 => (&[95.0, 375.0, 250.0, 250.0, 375.0, 95.0], 288.0),
        6 => (&[41.0, 216.0, 27.0, 272.0, 27.0, 216.0, 41.0], 140.0),
        7 => (&[751.0, 3577.0, 1323.0, 2989.0, 2989.0, 1323.0, 3577.0, 751.0], 17280.0 / 7.0),
        _ => return None,
    };
    Some(num.iter().map(|w| w / den).collect())
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("y_max must be positive and finite, got {0}")]
    BadExtent(f64),
    #[error("grids differ: {left} vs {right}")]
    Mismatch { left: Grid, right: Grid },
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("non-finite value {value} at node {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("derivative order {0} not supported (1..=4)")]
    UnsupportedOrder(usize),
}

/// Quadrature used for every integral on a grid.
///
/// `Gregory` is the trapezoid rule with fourth-order end corrections and a
/// cubic extrapolation to `y = 0`; `Trapezoid` uses linear extrapolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuadratureRule {
    Trapezoid,
    #[default]
    Gregory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n_points: usize,
    y_max: f64,
    rule: QuadratureRule,
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Grid(n={}, y_max={}, {:?})", self.n_points, self.y_max, self.rule)
    }
}

impl Grid {
    pub fn new(n_points: usize, y_max: f64) -> Result<Self, GridError> {
        if n_points < MIN_POINTS {
            return Err(GridError::TooFewPoints { min: MIN_POINTS, got: n_points });
        }
        if !(y_max.is_finite() && y_max > 0.0) {
            return Err(GridError::BadExtent(y_max));
        }
        Ok(Self { n_points, y_max, rule: QuadratureRule::default() })
    }

    pub fn with_rule(mut self, rule: QuadratureRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn rule(&self) -> QuadratureRule {
        self.rule
    }

    pub fn spacing(&self) -> f64 {
        self.y_max / self.n_points as f64
    }

    /// Position of array index `i` (node `i + 1`).
    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.node(i)).collect()
    }

    /// Same extent, `n_points / factor` nodes; keeps every `factor`-th node.
    pub fn coarsened(&self, factor: usize) -> Result<Self, GridError> {
        Grid::new(self.n_points / factor.max(1), self.y_max).map(|g| g.with_rule(self.rule))
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<(), GridError> {
        if self == other {
            Ok(())
        } else {
            Err(GridError::Mismatch { left: *self, right: *other })
        }
    }

    /// Value at `y = 0` extrapolated from the first nodes.
    pub fn extrapolate_origin(&self, v: &[f64]) -> f64 {
        match self.rule {
            QuadratureRule::Trapezoid => 2.0 * v[0] - v[1],
            QuadratureRule::Gregory => 4.0 * v[0] - 6.0 * v[1] + 4.0 * v[2] - v[3],
        }
    }

    /// `[v(0), v_1, .., v_n]`.
    fn extended(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(v.len() + 1);
        out.push(self.extrapolate_origin(v));
        out.extend_from_slice(v);
        out
    }

    /// Rule weight sum over `vals` (points `0..=m`), without the spacing factor.
    fn rule_sum(&self, vals: &[f64]) -> f64 {
        let m = vals.len() - 1;
        let plain: f64 = vals.iter().sum();
        if m == 0 {
            return 0.0;
        }
        if self.rule == QuadratureRule::Gregory && m >= 8 {
            let mut s = plain;
            for (k, w) in GREGORY.iter().enumerate() {
                s += (w - 1.0) * (vals[k] + vals[m - k]);
            }
            s
        } else if let Some(w) = self.small_weights(m) {
            w.iter().zip(vals).map(|(a, b)| a * b).sum()
        } else {
            plain - 0.5 * (vals[0] + vals[m])
        }
    }

    fn small_weights(&self, m: usize) -> Option<Vec<f64>> {
        match self.rule {
            QuadratureRule::Gregory => newton_cotes(m),
            QuadratureRule::Trapezoid => None,
        }
    }

    /// Quadrature of raw node values over `[0, y_max]`.
    pub fn integrate_values(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.n_points);
        self.spacing() * self.rule_sum(&self.extended(v))
    }

    /// As [`Grid::integrate_values`] for integrands known to be nonnegative:
    /// a negative extrapolated origin value is replaced by zero.
    pub fn integrate_nonnegative_values(&self, v: &[f64]) -> f64 {
        let mut e = self.extended(v);
        e[0] = e[0].max(0.0);
        self.spacing() * self.rule_sum(&e)
    }

    /// Quadrature of `v` over `[y_i, y_max]` for every node.
    pub fn tail_values(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n_points;
        let dy = self.spacing();
        let mut suffix = vec![0.0; n + 1];
        for j in (0..n).rev() {
            suffix[j] = suffix[j + 1] + v[j];
        }
        let gregory = self.rule == QuadratureRule::Gregory;
        (0..n)
            .map(|i| {
                let m = n - 1 - i;
                if m == 0 {
                    return 0.0;
                }
                let mut s = suffix[i];
                if gregory && m >= 8 {
                    for (k, w) in GREGORY.iter().enumerate() {
                        s += (w - 1.0) * (v[i + k] + v[n - 1 - k]);
                    }
                } else if let Some(w) = self.small_weights(m) {
                    s = w.iter().zip(&v[i..]).map(|(a, b)| a * b).sum();
                } else {
                    s -= 0.5 * (v[i] + v[n - 1]);
                }
                dy * s
            })
            .collect()
    }

    /// Converts raw cyclic sums `S_i = sum_{j<=i} F_j G_{i-j}` on the extended
    /// arrays into rule-weighted convolution values at the nodes.
    fn finish_convolution(&self, fe: &[f64], ge: &[f64], raw: &[f64]) -> Vec<f64> {
        let dy = self.spacing();
        let gregory = self.rule == QuadratureRule::Gregory;
        (1..=self.n_points)
            .map(|i| {
                let mut s = raw[i];
                if gregory && i >= 8 {
                    for (k, w) in GREGORY.iter().enumerate() {
                        s += (w - 1.0) * (fe[k] * ge[i - k] + fe[i - k] * ge[k]);
                    }
                } else if let Some(w) = self.small_weights(i) {
                    s = w.iter().enumerate().map(|(j, a)| a * fe[j] * ge[i - j]).sum();
                } else {
                    s -= 0.5 * (fe[0] * ge[i] + fe[i] * ge[0]);
                }
                dy * s
            })
            .collect()
    }

    pub fn convolve_values(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        if f.iter().all(|&v| v == 0.0) || g.iter().all(|&v| v == 0.0) {
            return vec![0.0; self.n_points];
        }
        let fe = self.extended(f);
        let ge = self.extended(g);
        let plan = FftPair::for_grid(self);
        let mut z: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); plan.len];
        for (i, zi) in z.iter_mut().enumerate().take(fe.len()) {
            *zi = Complex64::new(fe[i], ge[i]);
        }
        plan.fwd.process(&mut z);
        let len = plan.len;
        let mut prod = vec![Complex64::new(0.0, 0.0); len];
        for k in 0..len {
            let zk = z[k];
            let zc = z[(len - k) % len].conj();
            let a = (zk + zc) * 0.5;
            let b = (zk - zc) * Complex64::new(0.0, -0.5);
            prod[k] = a * b;
        }
        plan.inv.process(&mut prod);
        let scale = 1.0 / len as f64;
        let raw: Vec<f64> = prod[..=self.n_points].iter().map(|c| c.re * scale).collect();
        self.finish_convolution(&fe, &ge, &raw)
    }

    /// O(n^2) reference convolution with the same weights as the fast path.
    pub fn convolve_values_direct(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let fe = self.extended(f);
        let ge = self.extended(g);
        let raw: Vec<f64> = (0..=self.n_points)
            .map(|i| (0..=i).map(|j| fe[j] * ge[i - j]).sum())
            .collect();
        self.finish_convolution(&fe, &ge, &raw)
    }

    /// Linear interpolation of node data at `y`; zero beyond `y_max`.
    pub fn interpolate_values(&self, v: &[f64], y: f64) -> f64 {
        if !(y >= 0.0) || y > self.y_max {
            return 0.0;
        }
        let dy = self.spacing();
        let s = y / dy;
        let j = (s.floor() as usize).min(self.n_points - 1);
        let frac = s - j as f64;
        let left = if j == 0 { self.extrapolate_origin(v) } else { v[j - 1] };
        let right = v[j];
        left + frac * (right - left)
    }

    /// Four-point Lagrange interpolation of node data at `y`; zero beyond `y_max`.
    pub fn interpolate_values_cubic(&self, v: &[f64], y: f64) -> f64 {
        if !(y >= 0.0) || y > self.y_max {
            return 0.0;
        }
        let n = self.n_points;
        let s = y / self.spacing();
        // extended index e: e = 0 is the origin, e = j is node j
        let j = (s.floor() as usize).min(n - 1);
        let start = j.saturating_sub(1).min(n - 3);
        let value = |e: usize| if e == 0 { self.extrapolate_origin(v) } else { v[e - 1] };
        let mut out = 0.0;
        for a in start..start + 4 {
            let mut w = 1.0;
            for b in start..start + 4 {
                if a != b {
                    w *= (s - b as f64) / (a as f64 - b as f64);
                }
            }
            out += w * value(a);
        }
        out
    }
}

#[derive(Clone)]
struct FftPair {
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Smallest `2^a 3^b` not below `min`.
fn fft_len(min: usize) -> usize {
    let mut best = min.next_power_of_two();
    let mut three = 1;
    while three < best {
        let mut m = three;
        while m < min {
            m *= 2;
        }
        best = best.min(m);
        three *= 3;
    }
    best
}

impl FftPair {
    fn for_grid(grid: &Grid) -> Self {
        let len = fft_len(2 * grid.n_points + 1);
        PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            FftPair { len, fwd: p.plan_fft_forward(len), inv: p.plan_fft_inverse(len) }
        })
    }
}

/// Convolution against a fixed function with its spectrum cached.
#[derive(Clone)]
pub struct ConvolutionKernel {
    grid: Grid,
    ext: Vec<f64>,
    spectrum: Vec<Complex64>,
    plan: FftPair,
}

impl fmt::Debug for ConvolutionKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvolutionKernel").field("grid", &self.grid).field("fft_len", &self.plan.len).finish()
    }
}

impl ConvolutionKernel {
    pub fn new(kernel: &GridFunction) -> Self {
        let grid = *kernel.grid();
        let ext = grid.extended(kernel.values());
        let plan = FftPair::for_grid(&grid);
        let mut spectrum = vec![Complex64::new(0.0, 0.0); plan.len];
        for (s, &e) in spectrum.iter_mut().zip(&ext) {
            *s = Complex64::new(e, 0.0);
        }
        plan.fwd.process(&mut spectrum);
        Self { grid, ext, spectrum, plan }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn apply_values(&self, f: &[f64]) -> Vec<f64> {
        if f.iter().all(|&v| v == 0.0) {
            return vec![0.0; self.grid.n_points];
        }
        let fe = self.grid.extended(f);
        let mut z = vec![Complex64::new(0.0, 0.0); self.plan.len];
        for (zi, &e) in z.iter_mut().zip(&fe) {
            *zi = Complex64::new(e, 0.0);
        }
        self.plan.fwd.process(&mut z);
        for (zi, s) in z.iter_mut().zip(&self.spectrum) {
            *zi *= s;
        }
        self.plan.inv.process(&mut z);
        let scale = 1.0 / self.plan.len as f64;
        let raw: Vec<f64> = z[..=self.grid.n_points].iter().map(|c| c.re * scale).collect();
        self.grid.finish_convolution(&fe, &self.ext, &raw)
    }

    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction, GridError> {
        self.grid.ensure_same(f.grid())?;
        Ok(GridFunction::raw(self.grid, self.apply_values(f.values())))
    }
}

/// Node values of a real function on a [`Grid`]. Entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.n_points {
            return Err(GridError::Length { expected: grid.n_points, got: values.len() });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GridError::NonFinite { index, value });
        }
        Ok(Self { grid, values })
    }

    /// Internal constructor for values already known to be finite.
    pub(crate) fn raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_points);
        Self { grid, values }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self, GridError> {
        Self::from_values(grid, grid.nodes().into_iter().map(f).collect())
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.n_points] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ensure_same_grid(&self, other: &GridFunction) -> Result<(), GridError> {
        self.grid.ensure_same(&other.grid)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, GridError> {
        Self::from_values(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// `f(y_i, v_i)` at every node.
    pub fn map_with_nodes(&self, f: impl Fn(f64, f64) -> f64) -> Result<Self, GridError> {
        let grid = self.grid;
        Self::from_values(
            grid,
            self.values.iter().enumerate().map(|(i, &v)| f(grid.node(i), v)).collect(),
        )
    }

    pub fn scale(&self, a: f64) -> Self {
        Self::raw(self.grid, self.values.iter().map(|v| a * v).collect())
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &GridFunction, b: f64) -> Result<Self, GridError> {
        self.ensure_same_grid(other)?;
        Ok(Self::raw(
            self.grid,
            self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect(),
        ))
    }

    pub fn add(&self, other: &GridFunction) -> Result<Self, GridError> {
        self.combine(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<Self, GridError> {
        self.combine(1.0, other, -1.0)
    }

    pub fn mul(&self, other: &GridFunction) -> Result<Self, GridError> {
        self.ensure_same_grid(other)?;
        Ok(Self::raw(self.grid, self.values.iter().zip(&other.values).map(|(x, y)| x * y).collect()))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn value_at_origin(&self) -> f64 {
        self.grid.extrapolate_origin(&self.values)
    }

    pub fn interpolate(&self, y: f64) -> f64 {
        self.grid.interpolate_values(&self.values, y)
    }

    /// Linear resampling onto another grid; zero beyond this grid's extent.
    pub fn resample(&self, target: Grid) -> Self {
        Self::raw(target, target.nodes().into_iter().map(|y| self.interpolate(y)).collect())
    }

    /// Keeps every `factor`-th node (exact subsampling).
    pub fn coarsen(&self, factor: usize) -> Result<Self, GridError> {
        let grid = self.grid.coarsened(factor)?;
        let values = (0..grid.n_points).map(|j| self.values[(j + 1) * factor - 1]).collect();
        Ok(Self::raw(grid, values))
    }
}

pub fn integrate(f: &GridFunction, weight: Option<&[f64]>) -> Result<f64, GridError> {
    let grid = f.grid();
    match weight {
        None => Ok(grid.integrate_values(f.values())),
        Some(w) => {
            if w.len() != grid.n_points {
                return Err(GridError::Length { expected: grid.n_points, got: w.len() });
            }
            let prod: Vec<f64> = f.values().iter().zip(w).map(|(a, b)| a * b).collect();
            Ok(grid.integrate_values(&prod))
        }
    }
}

/// `int_0^ymax y^k f dy`.
pub fn integrate_power(f: &GridFunction, k: f64) -> f64 {
    let grid = f.grid();
    let prod: Vec<f64> = f.values().iter().enumerate().map(|(i, v)| v * grid.node(i).powf(k)).collect();
    grid.integrate_values(&prod)
}

pub fn convolve(f: &GridFunction, g: &GridFunction) -> Result<GridFunction, GridError> {
    f.ensure_same_grid(g)?;
    Ok(GridFunction::raw(f.grid, f.grid.convolve_values(&f.values, &g.values)))
}

/// Direct double sum; same weights as [`convolve`].
pub fn convolve_direct(f: &GridFunction, g: &GridFunction) -> Result<GridFunction, GridError> {
    f.ensure_same_grid(g)?;
    Ok(GridFunction::raw(f.grid, f.grid.convolve_values_direct(&f.values, &g.values)))
}

pub fn tail_primitive(h: &GridFunction) -> GridFunction {
    GridFunction::raw(h.grid, h.grid.tail_values(&h.values))
}

/// Finite-difference weights for the `m`-th derivative at `x0` from nodes `xs`.
pub fn fornberg_weights(x0: f64, xs: &[f64], m: usize) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// Fourth-order stencil tables for one derivative order, in units of the spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeStencil {
    order: usize,
    accuracy: usize,
    interior: Vec<f64>,
    boundary_width: usize,
    /// Row `i` differentiates at offset `i` inside the leading window.
    left: Vec<Vec<f64>>,
    /// Row `i` differentiates at offset `width - 1 - i` inside the trailing window.
    right: Vec<Vec<f64>>,
}

impl DerivativeStencil {
    pub fn new(order: usize) -> Result<Self, GridError> {
        if order == 0 || order > MAX_DERIVATIVE_ORDER {
            return Err(GridError::UnsupportedOrder(order));
        }
        let accuracy = 4;
        let half = (order + 1) / 2 + 1;
        let offsets: Vec<f64> = (-(half as i64)..=half as i64).map(|o| o as f64).collect();
        let interior = fornberg_weights(0.0, &offsets, order);
        let boundary_width = order + accuracy;
        let window: Vec<f64> = (0..boundary_width).map(|o| o as f64).collect();
        let left = (0..half).map(|i| fornberg_weights(i as f64, &window, order)).collect();
        let right = (0..half)
            .map(|i| fornberg_weights((boundary_width - 1 - i) as f64, &window, order))
            .collect();
        Ok(Self { order, accuracy, interior, boundary_width, left, right })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn accuracy(&self) -> usize {
        self.accuracy
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    pub fn apply_values(&self, v: &[f64], spacing: f64) -> Vec<f64> {
        let n = v.len();
        let half = self.interior.len() / 2;
        let w = self.boundary_width;
        let scale = spacing.powi(self.order as i32).recip();
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let s: f64 = if i < half {
                self.left[i].iter().zip(&v[..w]).map(|(c, x)| c * x).sum()
            } else if i + half >= n {
                let row = &self.right[n - 1 - i];
                row.iter().zip(&v[n - w..]).map(|(c, x)| c * x).sum()
            } else {
                self.interior.iter().zip(&v[i - half..=i + half]).map(|(c, x)| c * x).sum()
            };
            *o = s * scale;
        }
        out
    }
}

pub fn derivative(h: &GridFunction, k: usize) -> Result<GridFunction, GridError> {
    let stencil = DerivativeStencil::new(k)?;
    Ok(GridFunction::raw(h.grid, stencil.apply_values(&h.values, h.grid.spacing())))
}

const TRANSPORT_INTERIOR: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
const KO_STENCIL: [f64; 7] = [1.0, -6.0, 15.0, -20.0, 15.0, -6.0, 1.0];

/// Default strength of the grid-scale damping added by the time steppers.
pub const DEFAULT_DAMPING: f64 = 0.2;

/// First derivative for the dilation term `y d/dy`.
///
/// Centered fourth order with zero data beyond `y_max` (inflow boundary);
/// the first two nodes use one-sided weights on the first six nodes.
pub fn inflow_derivative_values(v: &[f64], spacing: f64) -> Vec<f64> {
    let n = v.len();
    let at = |j: isize| -> f64 {
        if j < n as isize {
            v[j as usize]
        } else {
            0.0
        }
    };
    let window: Vec<f64> = (0..6).map(|o| o as f64).collect();
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate().take(2) {
        let w = fornberg_weights(i as f64, &window, 1);
        *o = w.iter().zip(&v[..6]).map(|(c, x)| c * x).sum::<f64>() / spacing;
    }
    for (i, o) in out.iter_mut().enumerate().skip(2) {
        let i = i as isize;
        *o = TRANSPORT_INTERIOR
            .iter()
            .enumerate()
            .map(|(k, c)| c * at(i + k as isize - 2))
            .sum::<f64>()
            / spacing;
    }
    out
}

/// Sixth-difference damping scaled by the local dilation speed `y / dy`.
///
/// Zero data beyond `y_max`; the first three nodes are left untouched.
pub fn damping_values(v: &[f64], spacing: f64, strength: f64) -> Vec<f64> {
    let n = v.len();
    let at = |j: usize| if j < n { v[j] } else { 0.0 };
    let mut out = vec![0.0; n];
    if strength == 0.0 {
        return out;
    }
    for (i, o) in out.iter_mut().enumerate().skip(3) {
        let s: f64 = KO_STENCIL.iter().enumerate().map(|(k, c)| c * at(i + k - 3)).sum();
        let y = (i + 1) as f64 * spacing;
        *o = strength / 64.0 * (y / spacing) * s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_lengths() {
        assert_eq!(fft_len(2049), 2187);
        assert_eq!(fft_len(4097), 4374);
        assert_eq!(fft_len(33), 36);
        assert_eq!(fft_len(64), 64);
    }

    fn grid(n: usize, y_max: f64) -> Grid {
        Grid::new(n, y_max).unwrap()
    }

    #[test]
    fn constant_integrand() {
        let g = grid(1000, 10.0);
        let f = GridFunction::from_fn(g, |_| 1.0).unwrap();
        assert!((integrate(&f, None).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn exponential_integrals() {
        let g = grid(4000, 40.0);
        let f = GridFunction::from_fn(g, |y| (-y).exp()).unwrap();
        assert!((integrate(&f, None).unwrap() - 1.0).abs() < 1e-6);
        let f = GridFunction::from_fn(g, |y| y * (-y).exp()).unwrap();
        assert!((integrate(&f, None).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn weight_length_checked() {
        let g = grid(32, 1.0);
        let f = GridFunction::zeros(g);
        assert!(matches!(integrate(&f, Some(&[1.0; 3])), Err(GridError::Length { .. })));
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(4, 1.0).is_err());
        assert!(Grid::new(64, 0.0).is_err());
        assert!(Grid::new(64, f64::NAN).is_err());
        let g = grid(64, 8.0);
        assert_eq!(g.spacing(), 0.125);
        assert_eq!(g.node(0), 0.125);
        assert_eq!(g.node(63), 8.0);
    }

    #[test]
    fn non_finite_rejected() {
        let g = grid(16, 1.0);
        let mut v = vec![0.0; 16];
        v[3] = f64::NAN;
        assert!(matches!(GridFunction::from_values(g, v), Err(GridError::NonFinite { index: 3, .. })));
    }

    #[test]
    fn mismatched_grids() {
        let a = GridFunction::zeros(grid(32, 1.0));
        let b = GridFunction::zeros(grid(32, 2.0));
        assert!(matches!(convolve(&a, &b), Err(GridError::Mismatch { .. })));
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn exponential_self_convolution() {
        let g = grid(4096, 40.0);
        let f = GridFunction::from_fn(g, |y| (-y).exp()).unwrap();
        let c = convolve(&f, &f).unwrap();
        for (i, v) in c.values().iter().enumerate() {
            let y = g.node(i);
            if y <= 20.0 {
                assert!((v - y * (-y).exp()).abs() < 1e-5, "y={y}");
            }
        }
    }

    #[test]
    fn spike_is_approximate_identity() {
        let g = grid(1024, 20.0);
        let dy = g.spacing();
        let mut v = vec![0.0; 1024];
        v[0] = 1.0;
        let spike = GridFunction::from_values(g, v).unwrap();
        let mass = integrate(&spike, None).unwrap();
        // origin value 4v weighted 17/48, node 1 weighted 59/48
        let centre = dy * 59.0 / 127.0;
        let spike = spike.scale(1.0 / mass);
        let smooth = GridFunction::from_fn(g, |y| (-(y - 5.0) * (y - 5.0)).exp()).unwrap();
        let c = convolve(&spike, &smooth).unwrap();
        for i in 8..1024 {
            let y = g.node(i);
            let expect = (-(y - centre - 5.0).powi(2)).exp();
            assert!((c.values()[i] - expect).abs() < 5.0 * dy * dy, "y={y}");
        }
    }

    #[test]
    fn fast_matches_direct() {
        for &n in &[16usize, 17, 100, 256, 512] {
            let g = grid(n, 10.0);
            let f = GridFunction::from_fn(g, |y| (1.0 + (3.0 * y).sin()) * (-0.3 * y).exp()).unwrap();
            let h = GridFunction::from_fn(g, |y| y.cos() / (1.0 + y)).unwrap();
            let a = convolve(&f, &h).unwrap();
            let b = convolve_direct(&f, &h).unwrap();
            let scale = b.max_abs();
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn cached_kernel_matches_convolve() {
        let g = grid(300, 15.0);
        let k = GridFunction::from_fn(g, |y| 2.0 * (-y).exp()).unwrap();
        let f = GridFunction::from_fn(g, |y| y * y * (-y).exp()).unwrap();
        let a = ConvolutionKernel::new(&k).apply(&f).unwrap();
        let b = convolve(&k, &f).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn tail_of_exponential() {
        let g = grid(4000, 40.0);
        let h = GridFunction::from_fn(g, |y| (-y).exp()).unwrap();
        let t = tail_primitive(&h);
        for (i, v) in t.values().iter().enumerate() {
            let y = g.node(i);
            assert!((v - (-y).exp()).abs() <= 1e-6 + (-40.0f64).exp());
        }
        assert_eq!(*t.values().last().unwrap(), 0.0);
        assert!(tail_primitive(&GridFunction::zeros(g)).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn polynomial_derivatives_exact() {
        let g = grid(64, 4.0);
        let h = GridFunction::from_fn(g, |y| y * y).unwrap();
        let d = derivative(&h, 1).unwrap();
        for (i, v) in d.values().iter().enumerate() {
            assert!((v - 2.0 * g.node(i)).abs() < 1e-10);
        }
        let quartic = GridFunction::from_fn(g, |y| y.powi(4) - 3.0 * y.powi(3)).unwrap();
        for k in 1..=4 {
            let d = derivative(&quartic, k).unwrap();
            for (i, v) in d.values().iter().enumerate() {
                let y = g.node(i);
                let exact = match k {
                    1 => 4.0 * y.powi(3) - 9.0 * y * y,
                    2 => 12.0 * y * y - 18.0 * y,
                    3 => 24.0 * y - 18.0,
                    _ => 24.0,
                };
                assert!((v - exact).abs() < 1e-6 * (1.0 + exact.abs()), "k={k} y={y}");
            }
        }
    }

    #[test]
    fn unsupported_order() {
        let h = GridFunction::zeros(grid(32, 1.0));
        assert!(matches!(derivative(&h, 0), Err(GridError::UnsupportedOrder(0))));
        assert!(matches!(derivative(&h, 5), Err(GridError::UnsupportedOrder(5))));
    }

    #[test]
    fn second_derivative_of_exponential() {
        let g = grid(2000, 20.0);
        let h = GridFunction::from_fn(g, |y| (-y).exp()).unwrap();
        let d = derivative(&h, 2).unwrap();
        let dy4 = g.spacing().powi(4);
        for (i, v) in d.values().iter().enumerate() {
            assert!((v - (-g.node(i)).exp()).abs() < 10.0 * dy4);
        }
    }

    #[test]
    fn derivative_of_tail_is_minus_h() {
        let g = grid(2000, 30.0);
        let h = GridFunction::from_fn(g, |y| (1.0 + y) * (-y).exp()).unwrap();
        let d = derivative(&tail_primitive(&h), 1).unwrap();
        for (i, v) in d.values().iter().enumerate() {
            assert!((v + h.values()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn inflow_derivative_accuracy() {
        let g = grid(2000, 40.0);
        let h = GridFunction::from_fn(g, |y| y * (-y).exp()).unwrap();
        let d = inflow_derivative_values(h.values(), g.spacing());
        for (i, v) in d.iter().enumerate() {
            let y = g.node(i);
            assert!((v - (1.0 - y) * (-y).exp()).abs() < 1e-7);
        }
    }

    #[test]
    fn damping_annihilates_low_degree_polynomials() {
        let g = grid(200, 10.0);
        let h = GridFunction::from_fn(g, |y| 1.0 + y - y.powi(5) / 100.0).unwrap();
        let d = damping_values(h.values(), g.spacing(), 0.2);
        for v in &d[..190] {
            assert!(v.abs() < 1e-6);
        }
    }

    #[test]
    fn refinement_order() {
        let f = |y: f64| y * y * (-y).exp();
        let exact = 2.0 - (-10.0f64).exp() * (100.0 + 20.0 + 2.0);
        for (rule, min_order) in [(QuadratureRule::Trapezoid, 1.9), (QuadratureRule::Gregory, 3.5)] {
            let err = |n| {
                let g = grid(n, 10.0).with_rule(rule);
                (integrate(&GridFunction::from_fn(g, f).unwrap(), None).unwrap() - exact).abs()
            };
            let order = (err(100) / err(200)).log2();
            assert!(order >= min_order, "{rule:?} order {order}");
        }
    }

    #[test]
    fn interpolation_and_coarsening() {
        let g = grid(100, 10.0);
        let h = GridFunction::from_fn(g, |y| 3.0 * y + 1.0).unwrap();
        assert!((h.interpolate(0.05) - 1.15).abs() < 1e-12);
        assert!((h.interpolate(4.33) - 13.99).abs() < 1e-12);
        assert_eq!(h.interpolate(10.5), 0.0);
        let cubic = GridFunction::from_fn(g, |y| y * y * y - y).unwrap();
        for y in [0.03, 0.15, 5.55, 9.97] {
            let v = g.interpolate_values_cubic(cubic.values(), y);
            assert!((v - (y * y * y - y)).abs() < 1e-10, "y={y}");
        }
        let c = h.coarsen(2).unwrap();
        assert_eq!(c.len(), 50);
        assert!((c.values()[0] - h.values()[1]).abs() < 1e-15);
        assert!((c.grid().node(0) - 0.2).abs() < 1e-15);
    }
}
