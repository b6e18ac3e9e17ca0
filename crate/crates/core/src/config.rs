//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # reference run
//! grid.n_points = 2048
//! grid.y_max = 40
//! datum.family = exponential
//! datum.a = 8
//! datum.b = 2
//! norms = -1:1, 0:1, 1:0.8, 1:0.8:alt
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use thiserror::Error;

use crate::evolution::IntegratorConfig;
use crate::grid::{Grid, GridFunction};
use crate::observables::{NormSpec, PowerVariant};
use crate::profiles::{self, Frame};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate key `{key}` (first set on line {first})")]
    Duplicate { line: usize, key: String, first: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {message}")]
    BadValue { line: usize, key: String, message: String },
    /// Violations that involve several keys; `line` points at the key named.
    #[error("{}: {message}", location(.line, .key))]
    Invalid { line: Option<usize>, key: String, message: String },
    #[error("datum file {path}: {message}")]
    Datum { path: PathBuf, message: String },
}

fn location(line: &Option<usize>, key: &str) -> String {
    match line {
        Some(l) => format!("line {l}: `{key}`"),
        None => format!("`{key}` (default)"),
    }
}

const KEYS: &[&str] = &[
    "grid.n_points",
    "grid.y_max",
    "datum.family",
    "datum.a",
    "datum.b",
    "datum.p",
    "datum.rho",
    "datum.center",
    "datum.width",
    "datum.path",
    "datum.normalize",
    "frame",
    "integrator.dt",
    "integrator.t_end",
    "integrator.snapshot_stride",
    "norms",
    "rho",
    "fit.t_lo",
    "fit.t_hi",
    "output.dir",
    "seed",
    "physical.mu",
    "fourier.points",
    "fourier.mu_max",
    "fourier.times",
    "moments.mu",
    "moments.nu_fractions",
    "moments.plateau_tolerance",
    "checks.min_rate",
    "checks.min_rate_alternative",
    "gap.corpus_size",
    "gap.rho",
    "gap.specs",
    "inequalities.corpus_size",
];

/// Parsed `key -> (line, value)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax { line, message: format!("expected `key = value`, found `{content}`") });
            };
            let (key, value) = (key.trim(), value.trim());
            let valid = !key.is_empty()
                && key.split('.').all(|part| {
                    !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                });
            if !valid {
                return Err(ConfigError::Syntax { line, message: format!("malformed key `{key}`") });
            }
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey { line, key: key.to_string() });
            }
            if value.is_empty() {
                return Err(ConfigError::BadValue { line, key: key.to_string(), message: "empty value".into() });
            }
            if let Some((first, _)) = entries.get(key) {
                return Err(ConfigError::Duplicate { line, key: key.to_string(), first: *first });
            }
            entries.insert(key.to_string(), (line, value.to_string()));
        }
        Ok(Self { entries })
    }

    pub fn line(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|e| e.0)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.1.as_str())
    }

    fn bad(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::BadValue { line: self.line(key).unwrap_or(0), key: key.to_string(), message: message.into() }
    }

    fn invalid(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid { line: self.line(key), key: key.to_string(), message: message.into() }
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| self.bad(key, format!("`{v}`: {e}"))),
        }
    }

    fn real(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.parsed(key, default)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.bad(key, "not a finite number"))
        }
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.real(key, default)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(self.bad(key, format!("{v} is not positive")))
        }
    }

    fn reals(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    let s = s.trim();
                    s.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| self.bad(key, format!("`{s}` is not a finite number")))
                })
                .collect(),
        }
    }
}

/// Scaling applied to a datum family before the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalize {
    None,
    /// Dilate so that the first moment equals `rho` (zeroth moment unchanged).
    Mass,
    /// Scale and dilate so that the zeroth and first moments both equal 2.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatumFamily {
    Equilibrium { rho: f64 },
    /// `a e^{-b y}`
    Exponential { a: f64, b: f64 },
    /// `a y^p e^{-b y}`
    Gamma { a: f64, p: f64, b: f64 },
    /// `a (1 - ((y - center)/width)^2)^2` on `|y - center| < width`.
    Bump { a: f64, center: f64, width: f64 },
    /// Two columns `y,value`, linearly interpolated, zero outside the table.
    Table { path: PathBuf, y: Vec<f64>, values: Vec<f64> },
}

impl DatumFamily {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Equilibrium { .. } => "equilibrium",
            Self::Exponential { .. } => "exponential",
            Self::Gamma { .. } => "gamma",
            Self::Bump { .. } => "bump",
            Self::Table { .. } => "table",
        }
    }

    pub fn value(&self, y: f64) -> f64 {
        match self {
            Self::Equilibrium { rho } => profiles::stationary_value(*rho, y),
            Self::Exponential { a, b } => a * (-b * y).exp(),
            Self::Gamma { a, p, b } => a * y.powf(*p) * (-b * y).exp(),
            Self::Bump { a, center, width } => {
                let z = (y - center) / width;
                if z.abs() < 1.0 {
                    a * (1.0 - z * z).powi(2)
                } else {
                    0.0
                }
            }
            Self::Table { y: ys, values, .. } => {
                if ys.is_empty() || y < ys[0] || y > ys[ys.len() - 1] {
                    return 0.0;
                }
                let j = ys.partition_point(|&x| x <= y).clamp(1, ys.len() - 1);
                let (y0, y1) = (ys[j - 1], ys[j]);
                let w = if y1 > y0 { (y - y0) / (y1 - y0) } else { 0.0 };
                values[j - 1] * (1.0 - w) + values[j] * w
            }
        }
    }

    /// Exponential decay rate of the tail; infinite for compact data.
    pub fn decay(&self) -> f64 {
        match self {
            Self::Equilibrium { rho } => 2.0 / rho,
            Self::Exponential { b, .. } | Self::Gamma { b, .. } => *b,
            Self::Bump { .. } | Self::Table { .. } => f64::INFINITY,
        }
    }

    /// Closed-form moments `(M0, M1)` before normalization.
    fn moments(&self) -> Option<(f64, f64)> {
        match *self {
            Self::Equilibrium { rho } => Some((2.0, rho)),
            Self::Exponential { a, b } => Some((a / b, a / (b * b))),
            Self::Gamma { a, p, b } => {
                Some((a * gamma(p + 1.0) / b.powf(p + 1.0), a * gamma(p + 2.0) / b.powf(p + 2.0)))
            }
            _ => None,
        }
    }

    /// `int e^{-i mu y} value(y) dy` where a closed form exists.
    fn fourier(&self, mu: f64) -> Option<Complex64> {
        let z = |b: f64| Complex64::new(b, mu);
        match *self {
            Self::Equilibrium { rho } => Some(Complex64::new(4.0 / rho, 0.0) / z(2.0 / rho)),
            Self::Exponential { a, b } => Some(a / z(b)),
            Self::Gamma { a, p, b } => Some(a * gamma(p + 1.0) / z(b).powf(p + 1.0)),
            _ => None,
        }
    }

    /// `int e^{theta y} value(y) dy` for `theta < decay`, where a closed form exists.
    fn exp_moment(&self, theta: f64) -> Option<f64> {
        match *self {
            Self::Equilibrium { rho } => Some((4.0 / rho) / (2.0 / rho - theta)),
            Self::Exponential { a, b } => Some(a / (b - theta)),
            Self::Gamma { a, p, b } => Some(a * gamma(p + 1.0) / (b - theta).powf(p + 1.0)),
            _ => None,
        }
    }
}

/// Lanczos approximation, accurate to ~1e-15 for positive arguments.
fn gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let t = x + G + 0.5;
    let series = C[1..].iter().enumerate().fold(C[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * series
}

/// Datum family plus the scaling `amplitude * value(dilation * y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Datum {
    pub family: DatumFamily,
    pub normalize: Normalize,
    amplitude: f64,
    dilation: f64,
}

impl Datum {
    pub fn new(family: DatumFamily) -> Self {
        Self { family, normalize: Normalize::None, amplitude: 1.0, dilation: 1.0 }
    }

    /// Resolves the scaling from closed-form moments, or from quadrature on `grid`.
    pub fn normalized(family: DatumFamily, normalize: Normalize, rho: Option<f64>, grid: &Grid) -> Self {
        let mut d = Self::new(family);
        d.normalize = normalize;
        if normalize == Normalize::None {
            return d;
        }
        let (m0, m1) = d.family.moments().unwrap_or_else(|| {
            let g = GridFunction::from_fn(*grid, |y| d.family.value(y)).expect("finite datum");
            (grid.integrate_values(g.values()), crate::observables::moment(&g, 1.0))
        });
        match normalize {
            Normalize::Mass => {
                let target = rho.unwrap_or(m1);
                d.dilation = m1 / target;
                d.amplitude = d.dilation;
            }
            Normalize::Full => {
                d.amplitude = 2.0 / m0 * (m1 / m0);
                d.dilation = m1 / m0;
            }
            Normalize::None => {}
        }
        d
    }

    pub fn value(&self, y: f64) -> f64 {
        self.amplitude * self.family.value(self.dilation * y)
    }

    pub fn decay(&self) -> f64 {
        self.family.decay() * self.dilation
    }

    pub fn sample(&self, grid: Grid) -> GridFunction {
        GridFunction::from_fn(grid, |y| self.value(y)).expect("finite datum")
    }

    /// Closed-form `(M0, M1)` of the scaled datum.
    pub fn moments(&self) -> Option<(f64, f64)> {
        let (m0, m1) = self.family.moments()?;
        let a = self.amplitude / self.dilation;
        Some((a * m0, a * m1 / self.dilation))
    }

    pub fn fourier(&self, mu: f64) -> Option<Complex64> {
        Some(self.family.fourier(mu / self.dilation)? * (self.amplitude / self.dilation))
    }

    pub fn exp_moment(&self, theta: f64) -> Option<f64> {
        if theta >= self.decay() {
            return None;
        }
        Some(self.family.exp_moment(theta / self.dilation)? * (self.amplitude / self.dilation))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub grid: Grid,
    pub datum: Datum,
    pub frame: Frame,
    pub integrator: IntegratorConfig,
    pub norms: Vec<NormSpec>,
    pub rho: f64,
    pub fit_window: (f64, f64),
    pub out: PathBuf,
    pub seed: u64,
    /// Weight of the physical-frame error norm.
    pub physical_mu: f64,
    pub fourier_points: usize,
    pub fourier_mu_max: f64,
    pub fourier_times: Vec<f64>,
    /// Order of the exponential moment compared with its closed form.
    pub moments_mu: f64,
    /// Sweep of `nu` as fractions of `2/rho`.
    pub nu_fractions: Vec<f64>,
    pub plateau_tolerance: f64,
    pub min_rate: f64,
    pub min_rate_alternative: f64,
    pub gap_corpus_size: usize,
    pub gap_rho: f64,
    pub gap_specs: Vec<NormSpec>,
    pub inequality_corpus_size: usize,
}

fn parse_specs(raw: &RawConfig, key: &str, default: &str) -> Result<Vec<NormSpec>, ConfigError> {
    let text = raw.get(key).unwrap_or(default);
    text.split(',')
        .map(|item| {
            let item = item.trim();
            let parts: Vec<&str> = item.split(':').map(str::trim).collect();
            let variant = match parts.get(2) {
                None => PowerVariant::Standard,
                Some(&"alt") => PowerVariant::Alternative,
                Some(other) => return Err(raw.bad(key, format!("unknown variant `{other}` in `{item}`"))),
            };
            if parts.len() < 2 || parts.len() > 3 {
                return Err(raw.bad(key, format!("expected `k:mu` or `k:mu:alt`, found `{item}`")));
            }
            let k: i32 = parts[0].parse().map_err(|_| raw.bad(key, format!("bad order in `{item}`")))?;
            let mu: f64 = parts[1].parse().map_err(|_| raw.bad(key, format!("bad weight in `{item}`")))?;
            NormSpec::with_variant(k, mu, variant).map_err(|e| raw.bad(key, e.to_string()))
        })
        .collect()
}

fn read_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>), ConfigError> {
    let fail = |message: String| ConfigError::Datum { path: path.to_path_buf(), message };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| fail(e.to_string()))?;
    let (mut ys, mut vs) = (Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| fail(e.to_string()))?;
        let row = i + 2;
        if record.len() < 2 {
            return Err(fail(format!("row {row}: expected two columns")));
        }
        let y: f64 = record[0].parse().map_err(|_| fail(format!("row {row}: bad y `{}`", &record[0])))?;
        let v: f64 = record[1].parse().map_err(|_| fail(format!("row {row}: bad value `{}`", &record[1])))?;
        if ys.last().is_some_and(|&last| y <= last) {
            return Err(fail(format!("row {row}: y must increase")));
        }
        if !(v.is_finite() && v >= 0.0) {
            return Err(fail(format!("row {row}: value must be finite and nonnegative")));
        }
        ys.push(y);
        vs.push(v);
    }
    if ys.len() < 2 {
        return Err(fail("need at least two rows".into()));
    }
    Ok((ys, vs))
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_raw(&RawConfig::parse(&text)?, base)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_raw(&RawConfig::parse(text)?, Path::new("."))
    }

    /// Builds and validates; relative datum paths resolve against `base`.
    pub fn from_raw(raw: &RawConfig, base: &Path) -> Result<Self, ConfigError> {
        let n_points: usize = raw.parsed("grid.n_points", 2048)?;
        let y_max = raw.positive("grid.y_max", 40.0)?;
        let grid = Grid::new(n_points, y_max).map_err(|e| raw.bad("grid.n_points", e.to_string()))?;

        let family = match raw.get("datum.family").unwrap_or("exponential") {
            "equilibrium" => DatumFamily::Equilibrium { rho: raw.positive("datum.rho", 2.0)? },
            "exponential" => {
                DatumFamily::Exponential { a: raw.positive("datum.a", 8.0)?, b: raw.positive("datum.b", 2.0)? }
            }
            "gamma" => DatumFamily::Gamma {
                a: raw.positive("datum.a", 8.0)?,
                p: raw.real("datum.p", 1.0)?,
                b: raw.positive("datum.b", 2.0)?,
            },
            "bump" => DatumFamily::Bump {
                a: raw.positive("datum.a", 1.0)?,
                center: raw.real("datum.center", 2.0)?,
                width: raw.positive("datum.width", 1.0)?,
            },
            "table" => {
                let Some(p) = raw.get("datum.path") else {
                    return Err(raw.invalid("datum.family", "family `table` needs `datum.path`"));
                };
                let path = base.join(p);
                let (y, values) = read_table(&path)?;
                DatumFamily::Table { path, y, values }
            }
            other => return Err(raw.bad("datum.family", format!("unknown family `{other}`"))),
        };
        if let DatumFamily::Gamma { p, .. } = family {
            if p <= -1.0 {
                return Err(raw.bad("datum.p", "exponent must exceed -1"));
            }
        }
        let normalize = match raw.get("datum.normalize").unwrap_or("none") {
            "none" => Normalize::None,
            "mass" => Normalize::Mass,
            "full" => Normalize::Full,
            other => return Err(raw.bad("datum.normalize", format!("expected none, mass or full, found `{other}`"))),
        };

        let rho_override = match raw.get("rho") {
            None | Some("from_datum") => None,
            Some(_) => Some(raw.positive("rho", 2.0)?),
        };
        let target = match normalize {
            Normalize::Full => Some(2.0),
            _ => rho_override,
        };
        let datum = Datum::normalized(family, normalize, target, &grid);
        let rho = match rho_override {
            Some(r) => r,
            None => match datum.moments() {
                Some((_, m1)) => m1,
                None => crate::observables::moment(&datum.sample(grid), 1.0),
            },
        };
        if !(rho.is_finite() && rho > 0.0) {
            return Err(raw.invalid("datum.family", format!("datum mass {rho} is not positive")));
        }

        let frame = match raw.get("frame").unwrap_or("self_similar") {
            "self_similar" => Frame::SelfSimilar,
            "physical" => Frame::Physical,
            other => return Err(raw.bad("frame", format!("expected self_similar or physical, found `{other}`"))),
        };
        let dt = raw.positive("integrator.dt", 1e-3)?;
        let t_end = raw.positive("integrator.t_end", 6.0)?;
        let stride: usize = raw.parsed("integrator.snapshot_stride", 10)?;
        let integrator =
            IntegratorConfig::new(dt, t_end, stride).map_err(|e| raw.invalid("integrator.dt", e.to_string()))?;

        let norms = parse_specs(raw, "norms", "-1:1, 0:1, 1:0.8, 0:1:alt, 1:0.8:alt")?;
        let limit = 2.0 / rho;
        for spec in &norms {
            if spec.mu > limit * (1.0 + 1e-12) {
                return Err(raw.invalid("norms", format!("weight {} of {spec} exceeds 2/rho = {limit}", spec.mu)));
            }
        }
        let max_mu = norms.iter().map(|s| s.mu).fold(0.0, f64::max);
        let decay = datum.decay();
        if y_max * (decay - max_mu) < 20.0 {
            return Err(raw.invalid(
                "grid.y_max",
                format!("y_max (decay - max mu) = {} is below 20; the weighted tail is not resolved", y_max * (decay - max_mu)),
            ));
        }

        let t_lo = raw.real("fit.t_lo", 1.0)?;
        let t_hi = raw.real("fit.t_hi", t_end)?;
        if !(0.0 <= t_lo && t_lo < t_hi) {
            return Err(raw.invalid("fit.t_lo", format!("fit window [{t_lo}, {t_hi}] is empty")));
        }
        if t_hi > t_end * (1.0 + 1e-12) {
            return Err(raw.invalid("fit.t_hi", format!("fit window end {t_hi} is past t_end = {t_end}")));
        }

        let nu_fractions = raw.reals("moments.nu_fractions", &[0.5, 0.6, 0.7, 0.8, 0.9])?;
        if nu_fractions.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
            return Err(raw.bad("moments.nu_fractions", "fractions must lie in (0, 1)"));
        }
        let moments_mu = raw.positive("moments.mu", 0.5)?;
        if moments_mu >= limit {
            return Err(raw.invalid("moments.mu", format!("order {moments_mu} must stay below 2/rho = {limit}")));
        }
        let gap_rho = raw.positive("gap.rho", 2.0)?;
        let gap_specs = parse_specs(raw, "gap.specs", "-1:1, 0:0.8, 1:0.8")?;

        Ok(Self {
            grid,
            datum,
            frame,
            integrator,
            norms,
            rho,
            fit_window: (t_lo, t_hi),
            out: PathBuf::from(raw.get("output.dir").unwrap_or("out")),
            seed: raw.parsed("seed", 20240601)?,
            physical_mu: raw.real("physical.mu", 0.5)?,
            fourier_points: raw.parsed("fourier.points", 256)?,
            fourier_mu_max: raw.positive("fourier.mu_max", 20.0)?,
            fourier_times: raw.reals("fourier.times", &[0.5, 1.0, 2.0, 4.0])?,
            moments_mu,
            nu_fractions,
            plateau_tolerance: raw.positive("moments.plateau_tolerance", 1e-2)?,
            min_rate: raw.real("checks.min_rate", 0.9)?,
            min_rate_alternative: raw.real("checks.min_rate_alternative", 0.45)?,
            gap_corpus_size: raw.parsed("gap.corpus_size", 50)?,
            gap_rho,
            gap_specs,
            inequality_corpus_size: raw.parsed("inequalities.corpus_size", 50)?,
        })
    }

    pub fn initial(&self) -> GridFunction {
        self.datum.sample(self.grid)
    }

    /// Transform of the datum, closed form where available.
    pub fn datum_fourier(&self, g0: &GridFunction, mu: f64) -> Complex64 {
        self.datum.fourier(mu).unwrap_or_else(|| profiles::fourier_transform(g0, mu))
    }

    /// `E_theta` of the datum, closed form where available.
    pub fn datum_exp_moment(&self, g0: &GridFunction, theta: f64) -> f64 {
        self.datum.exp_moment(theta).unwrap_or_else(|| profiles::exp_moment_fn(g0)(theta))
    }
}
