//! Exponential decay rates from least-squares fits of `log ||e(t)||`.

use thiserror::Error;

/// Fewest samples accepted in a fit window.
pub const MIN_SAMPLES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("fit window [{t_lo}, {t_hi}] holds {found} usable samples, need {MIN_SAMPLES}")]
    TooFewSamples { t_lo: f64, t_hi: f64, found: usize },
    #[error("times and values differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("fit window [{0}, {1}] is empty or reversed")]
    BadWindow(f64, f64),
}

/// `log v(t) ~ intercept - rate * t` over `window`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub rate: f64,
    pub intercept: f64,
    /// Times of the first and last sample used.
    pub window: (f64, f64),
    pub rms_residual: f64,
    pub n_samples: usize,
    /// The series hit a non-positive floor and the fit stops before it.
    pub truncated: bool,
}

pub fn fit_rate(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<RateFit, RateError> {
    if times.len() != values.len() {
        return Err(RateError::Length(times.len(), values.len()));
    }
    let (t_lo, t_hi) = window;
    if !(t_lo <= t_hi) {
        return Err(RateError::BadWindow(t_lo, t_hi));
    }
    let eps = 1e-9 * (1.0 + t_hi.abs());
    let mut pts = Vec::new();
    let mut truncated = false;
    for (&t, &v) in times.iter().zip(values) {
        if t < t_lo - eps || t > t_hi + eps {
            continue;
        }
        if !(v > 0.0 && v.is_finite()) {
            truncated = true;
            break;
        }
        pts.push((t, v.ln()));
    }
    if pts.len() < MIN_SAMPLES {
        return Err(RateError::TooFewSamples { t_lo, t_hi, found: pts.len() });
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let lm = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - lm)).sum();
    let slope = sxy / sxx;
    let intercept = lm - slope * tm;
    let ss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(RateFit {
        rate: -slope,
        intercept,
        window: (pts[0].0, pts[pts.len() - 1].0),
        rms_residual: (ss / n).sqrt(),
        n_samples: pts.len(),
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn times() -> Vec<f64> {
        (0..=60).map(|i| i as f64 * 0.1).collect()
    }

    #[test]
    fn exact_exponential() {
        let t = times();
        let v: Vec<f64> = t.iter().map(|t| 3.0 * (-t).exp()).collect();
        let fit = fit_rate(&t, &v, (1.0, 6.0)).unwrap();
        assert!((fit.rate - 1.0).abs() < 1e-10);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-10);
        assert_eq!(fit.n_samples, 51);
        assert!(fit.rms_residual < 1e-12);
        assert!(!fit.truncated);
        assert!((fit.window.0 - 1.0).abs() < 1e-12 && (fit.window.1 - 6.0).abs() < 1e-12);
    }

    #[test]
    fn constant_series() {
        let t = times();
        let fit = fit_rate(&t, &vec![0.25; t.len()], (0.0, 6.0)).unwrap();
        assert!(fit.rate.abs() < 1e-14);
    }

    #[test]
    fn perturbed_exponential() {
        let t = times();
        let v: Vec<f64> = t.iter().map(|t| (-t).exp() * (1.0 + 0.01 * t.sin())).collect();
        let fit = fit_rate(&t, &v, (0.0, 6.0)).unwrap();
        assert!((fit.rate - 1.0).abs() < 0.02);
    }

    #[test]
    fn floor_truncates_window() {
        let t = times();
        let v: Vec<f64> = t.iter().map(|&t| if t < 4.0 { (-2.0 * t).exp() } else { 0.0 }).collect();
        let fit = fit_rate(&t, &v, (1.0, 6.0)).unwrap();
        assert!(fit.truncated);
        assert!(fit.window.1 < 4.0);
        assert!((fit.rate - 2.0).abs() < 1e-10);
    }

    #[test]
    fn errors() {
        assert!(matches!(fit_rate(&[0.0, 1.0], &[1.0], (0.0, 1.0)), Err(RateError::Length(2, 1))));
        let t = times();
        let v = vec![1.0; t.len()];
        assert!(matches!(fit_rate(&t, &v, (5.5, 6.0)), Err(RateError::TooFewSamples { found: 6, .. })));
        assert!(matches!(fit_rate(&t, &v, (2.0, 1.0)), Err(RateError::BadWindow(..))));
    }
}
