//! Least-squares fits and the report structs shared across modules.

use serde::Serialize;

use crate::{Error, Result};

/// Power-law fit of a positive quantity against a positive abscissa.
///
/// `exponent` and `intercept` are the slope and offset of the least-squares
/// line through `(ln x, ln y)`; `grid` echoes the fitted points in the
/// original (not log) coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub grid: Vec<(f64, f64)>,
}

/// Ordinary least squares for y = a + b x. Returns (a, b, r_squared).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid(format!(
            "linear fit needs >= 2 points, got {} x {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("linear fit: degenerate abscissa (all x equal)"));
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok((a, b, r2))
}

/// Log-log power-law fit. All inputs must be strictly positive.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<FitReport> {
    if xs.iter().chain(ys).any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::invalid(
            "power-law fit needs strictly positive finite samples",
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (a, b, r2) = linear_fit(&lx, &ly)?;
    Ok(FitReport {
        exponent: b,
        intercept: a,
        r_squared: r2,
        grid: xs.iter().copied().zip(ys.iter().copied()).collect(),
    })
}

/// Relative difference |a - b| / max(|a|, |b|, floor).
pub fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    (a - b).abs() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_power_law() {
        let xs: Vec<f64> = (1..=8).map(|k| 3.0_f64.powi(k)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * x.powf(1.75)).collect();
        let fit = fit_power_law(&xs, &ys).unwrap();
        assert!((fit.exponent - 1.75).abs() < 1e-12);
        assert!((fit.intercept - 2.5_f64.ln()).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(fit_power_law(&[1.0], &[1.0]).is_err());
        assert!(fit_power_law(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(linear_fit(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(fit_power_law(&[1.0, -2.0], &[1.0, 2.0]).is_err());
    }
}
