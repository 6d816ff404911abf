//! Two-exponent space-time scaling and the associated deviation rate.
//!
//! A scaling function pairs a small-scale exponent (active for r <= 1, the
//! lattice regime) with a large-scale one (r > 1, the fractal regime):
//!
//! ```text
//! psi(r) = r^beta_small   for 0 <= r <= 1,
//!          r^beta_large   for r > 1.
//! ```
//!
//! The deviation rate
//!
//! ```text
//! phi(R, t) = sup_{s > 0} ( R/s - t/psi(s) )
//! ```
//!
//! controls how fast heat decays across distance R in time t. Both pieces
//! of psi are power laws, so the supremum is attained either at a branch
//! stationary point, at the breakpoint s = 1, or in the s -> infinity limit
//! (value 0); `phi` maximizes over exactly that candidate set.

use serde::Serialize;

use crate::{Error, Result};

/// Piecewise power-law scaling function with both exponents >= 2.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScalingFunction {
    beta_small: f64,
    beta_large: f64,
}

impl ScalingFunction {
    /// Exponents for r <= 1 and r > 1 respectively. Both must be >= 2.
    pub fn new(beta_small: f64, beta_large: f64) -> Result<Self> {
        for (name, b) in [("small-scale", beta_small), ("large-scale", beta_large)] {
            if !b.is_finite() || b < 2.0 {
                return Err(Error::invalid(format!(
                    "{name} exponent must be a finite real >= 2, got {b}"
                )));
            }
        }
        Ok(ScalingFunction { beta_small, beta_large })
    }

    pub fn beta_small(&self) -> f64 {
        self.beta_small
    }

    pub fn beta_large(&self) -> f64 {
        self.beta_large
    }

    /// min of the two exponents.
    pub fn beta_lo(&self) -> f64 {
        self.beta_small.min(self.beta_large)
    }

    /// max of the two exponents.
    pub fn beta_hi(&self) -> f64 {
        self.beta_small.max(self.beta_large)
    }

    /// psi(r). Rejects negative r.
    pub fn psi(&self, r: f64) -> Result<f64> {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::invalid(format!("psi needs r >= 0, got {r}")));
        }
        Ok(if r <= 1.0 {
            r.powf(self.beta_small)
        } else {
            r.powf(self.beta_large)
        })
    }

    /// Inverse of psi. Rejects negative s.
    pub fn psi_inv(&self, s: f64) -> Result<f64> {
        if !s.is_finite() || s < 0.0 {
            return Err(Error::invalid(format!("psi_inv needs s >= 0, got {s}")));
        }
        Ok(if s <= 1.0 {
            s.powf(1.0 / self.beta_small)
        } else {
            s.powf(1.0 / self.beta_large)
        })
    }

    /// Deviation rate phi(R, t) = sup_{s>0} (R/s - t/psi(s)).
    ///
    /// Non-negative, vanishing iff R = 0; increasing in R, decreasing in t.
    /// Rejects R < 0 and t <= 0.
    pub fn phi(&self, big_r: f64, t: f64) -> Result<f64> {
        if !big_r.is_finite() || big_r < 0.0 {
            return Err(Error::invalid(format!("phi needs R >= 0, got {big_r}")));
        }
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::invalid(format!("phi needs t > 0, got {t}")));
        }
        if big_r == 0.0 {
            return Ok(0.0);
        }

        let objective = |s: f64| -> f64 { big_r / s - t / self.psi(s).unwrap() };

        // s -> infinity limit, plus the breakpoint between the two pieces.
        let mut best = 0.0_f64;
        best = best.max(objective(1.0));

        // Stationary point of R/s - t * s^(-b): s = (b t / R)^(1/(b-1)),
        // admissible only inside its own branch.
        let small_star = (self.beta_small * t / big_r).powf(1.0 / (self.beta_small - 1.0));
        if small_star <= 1.0 && small_star > 0.0 {
            best = best.max(objective(small_star));
        }
        let large_star = (self.beta_large * t / big_r).powf(1.0 / (self.beta_large - 1.0));
        if large_star >= 1.0 && large_star.is_finite() {
            best = best.max(objective(large_star));
        }
        Ok(best)
    }

    /// Brute-force evaluation of the supremum defining `phi`: a log-spaced
    /// scan of `points` values of s over [1e-6 R, 1e6 R + 1], breakpoint
    /// included, followed by golden-section refinement of the best bracket.
    /// Debug cross-check only; `phi` is the production path.
    pub fn phi_grid_search(&self, big_r: f64, t: f64, points: usize) -> Result<f64> {
        if !big_r.is_finite() || big_r < 0.0 {
            return Err(Error::invalid(format!("phi needs R >= 0, got {big_r}")));
        }
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::invalid(format!("phi needs t > 0, got {t}")));
        }
        if big_r == 0.0 {
            return Ok(0.0);
        }
        let g = |s: f64| -> f64 { big_r / s - t / self.psi(s).unwrap() };

        let lo = (1e-6 * big_r).max(1e-300);
        let hi = 1e6 * big_r + 1.0;
        let (llo, lhi) = (lo.ln(), hi.ln());
        let n = points.max(8);
        let mut grid: Vec<f64> = (0..n)
            .map(|i| (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp())
            .collect();
        grid.push(1.0);
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let mut best_i = 0;
        let mut best = f64::NEG_INFINITY;
        for (i, &s) in grid.iter().enumerate() {
            let v = g(s);
            if v > best {
                best = v;
                best_i = i;
            }
        }

        // Golden-section refinement inside the bracketing grid cells.
        let mut a = grid[best_i.saturating_sub(1)];
        let mut b = grid[(best_i + 1).min(grid.len() - 1)];
        let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let x1 = b - inv_phi * (b - a);
            let x2 = a + inv_phi * (b - a);
            if g(x1) >= g(x2) {
                b = x2;
            } else {
                a = x1;
            }
            if (b - a) <= 1e-14 * b {
                break;
            }
        }
        Ok(best.max(g(0.5 * (a + b))).max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::rel_diff;
    use proptest::prelude::*;

    fn sf(bs: f64, bl: f64) -> ScalingFunction {
        ScalingFunction::new(bs, bl).unwrap()
    }

    #[test]
    fn rejects_bad_exponents_and_arguments() {
        assert!(ScalingFunction::new(1.9, 3.0).is_err());
        assert!(ScalingFunction::new(2.0, f64::NAN).is_err());
        let s = sf(2.0, 3.0);
        assert!(s.psi(-0.5).is_err());
        assert!(s.psi_inv(-1.0).is_err());
        assert!(s.phi(-1.0, 1.0).is_err());
        assert!(s.phi(1.0, 0.0).is_err());
        assert!(s.phi(1.0, -2.0).is_err());
    }

    #[test]
    fn psi_matches_piecewise_powers() {
        let s = sf(2.0, 3.0);
        assert_eq!(s.psi(0.5).unwrap(), 0.25);
        assert_eq!(s.psi(1.0).unwrap(), 1.0);
        assert_eq!(s.psi(2.0).unwrap(), 8.0);
        assert_eq!(s.psi(0.0).unwrap(), 0.0);
    }

    #[test]
    fn psi_inv_matches_piecewise_roots() {
        let s = sf(2.0, 3.0);
        assert_eq!(s.psi_inv(8.0).unwrap(), 2.0);
        assert_eq!(s.psi_inv(0.25).unwrap(), 0.5);
        assert_eq!(s.psi_inv(1.0).unwrap(), 1.0);
    }

    #[test]
    fn phi_of_zero_radius_is_zero() {
        let s = sf(2.0, 3.0);
        assert_eq!(s.phi(0.0, 7.0).unwrap(), 0.0);
    }

    #[test]
    fn phi_pure_square_is_gaussian_rate() {
        // Single exponent 2: sup_s (R/s - t/s^2) = R^2/(4t) at s = 2t/R.
        let s = sf(2.0, 2.0);
        let v = s.phi(2.0, 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "got {v}");
        let w = s.phi(3.0, 0.5).unwrap();
        assert!((w - 9.0 / 2.0).abs() < 1e-12, "got {w}");
    }

    #[test]
    fn phi_at_psi_of_r_stays_below_exponent_bound() {
        // phi(R, psi(R)) <= b2^(-1/(b2-1)) with b2 the larger exponent.
        for (bs, bl, r) in [
            (2.0, 3.0, 5.0),
            (2.0, 3.0, 0.3),
            (2.0, 2.5, 40.0),
            (3.0, 2.0, 7.0),
            (2.0, 5.0, 2.0),
        ] {
            let s = sf(bs, bl);
            let bound = s.beta_hi().powf(-1.0 / (s.beta_hi() - 1.0));
            let v = s.phi(r, s.psi(r).unwrap()).unwrap();
            assert!(
                v <= bound + 1e-12,
                "phi(R, psi(R)) = {v} > bound {bound} for ({bs},{bl},{r})"
            );
        }
        // Frozen spot value for (2,3), R = 5, t = psi(5) = 125:
        // the large branch wins with value 2 * 3^(-3/2).
        let s = sf(2.0, 3.0);
        assert!(s.psi(5.0).unwrap() == 125.0);
        let v = s.phi(5.0, 125.0).unwrap();
        assert!((v - 2.0 / (3.0 * 3.0_f64.sqrt())).abs() < 1e-12, "got {v}");
        assert!(v <= 3.0_f64.powf(-0.5));
    }

    #[test]
    fn phi_closed_form_agrees_with_grid_search() {
        let cases = [
            (2.0, 3.0, 5.0, 125.0),
            (2.0, 3.0, 5.0, 1.0),
            (2.0, 3.0, 0.25, 0.1),
            (2.0, 2.0, 2.0, 1.0),
            (2.5, 4.0, 17.0, 3.0),
            (3.0, 2.0, 0.8, 2.0),
            (2.0, 5.0, 100.0, 9.0),
        ];
        for (bs, bl, r, t) in cases {
            let s = sf(bs, bl);
            let closed = s.phi(r, t).unwrap();
            let grid = s.phi_grid_search(r, t, 2000).unwrap();
            assert!(
                rel_diff(closed, grid) < 1e-6 || (closed - grid).abs() < 1e-12,
                "closed {closed} vs grid {grid} for ({bs},{bl},{r},{t})"
            );
            assert!(closed >= grid - 1e-12, "grid exceeded closed form");
        }
    }

    proptest! {
        #[test]
        fn psi_round_trips(bs in 2.0..5.0f64, bl in 2.0..5.0f64, r in 1e-3..1e3f64) {
            let s = sf(bs, bl);
            let round = s.psi_inv(s.psi(r).unwrap()).unwrap();
            prop_assert!(rel_diff(round, r) < 1e-12);
            let v = s.psi(r).unwrap();
            let round2 = s.psi(s.psi_inv(v).unwrap()).unwrap();
            prop_assert!(rel_diff(round2, v) < 1e-12);
        }

        #[test]
        fn psi_is_increasing(bs in 2.0..5.0f64, bl in 2.0..5.0f64,
                             a in 1e-3..1e3f64, b in 1e-3..1e3f64) {
            let s = sf(bs, bl);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(s.psi(lo).unwrap() <= s.psi(hi).unwrap());
        }

        #[test]
        fn psi_ratio_obeys_two_sided_power_bounds(
            bs in 2.0..5.0f64, bl in 2.0..5.0f64,
            r in 1e-2..1e2f64, factor in 1.0..1e2f64)
        {
            // psi(R)/psi(r) between (R/r)^b1 and (R/r)^b2 for r <= R.
            let s = sf(bs, bl);
            let big = r * factor;
            let ratio = s.psi(big).unwrap() / s.psi(r).unwrap();
            let lo = factor.powf(s.beta_lo());
            let hi = factor.powf(s.beta_hi());
            prop_assert!(ratio >= lo * (1.0 - 1e-12) && ratio <= hi * (1.0 + 1e-12),
                         "ratio {ratio} outside [{lo}, {hi}]");
        }

        #[test]
        fn phi_monotone_in_radius_and_time(
            bs in 2.0..4.0f64, bl in 2.0..4.0f64,
            r1 in 1e-2..1e2f64, dr in 0.0..1e2f64,
            t1 in 1e-2..1e2f64, dt in 0.0..1e2f64)
        {
            let s = sf(bs, bl);
            let base = s.phi(r1, t1 + dt).unwrap();
            prop_assert!(s.phi(r1 + dr, t1 + dt).unwrap() >= base - 1e-12);
            prop_assert!(s.phi(r1, t1).unwrap() >= base - 1e-12);
            prop_assert!(base >= 0.0);
        }

        #[test]
        fn phi_large_time_matches_single_power_rate(
            bs in 2.0..4.0f64, bl in 2.0..4.0f64,
            r in 1.0..10.0f64, decades in 0.0..2.0f64)
        {
            // For t >= R the rate tracks (R^b / t)^(1/(b-1)) within [1/4, 4].
            let s = sf(bs, bl);
            let t = r * 10f64.powf(decades);
            let b = s.beta_large();
            let model = (r.powf(b) / t).powf(1.0 / (b - 1.0));
            let v = s.phi(r, t).unwrap();
            prop_assert!(v >= model / 4.0 && v <= model * 4.0,
                         "phi {v} vs model {model}");
        }

        #[test]
        fn phi_agrees_with_grid_search_everywhere(
            bs in 2.0..4.0f64, bl in 2.0..4.0f64,
            r in 1e-2..1e2f64, t in 1e-2..1e2f64)
        {
            let s = sf(bs, bl);
            let closed = s.phi(r, t).unwrap();
            let grid = s.phi_grid_search(r, t, 2000).unwrap();
            prop_assert!(rel_diff(closed, grid) < 1e-6 || (closed - grid).abs() < 1e-12,
                         "closed {closed} vs grid {grid}");
        }
    }
}
