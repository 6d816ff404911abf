//! Empirical heat-kernel analytics on a Dirichlet form.
//!
//! Everything here reduces kernel behaviour to a handful of fitted numbers:
//! the space-time exponent from mean exit times, on-diagonal decay, the
//! ball-to-ball overlap decay measured against the deviation rate Phi, a
//! two-constant upper envelope for the whole kernel, and the exit
//! probability bound P(tau_{B(x,r)} <= eps Psi(r)) <= eps.
//!
//! All kernel fits respect a saturation guard: a finite reflecting graph has
//! p_t(x,x) -> 1/m(X), so times are only used while the diagonal density
//! still exceeds [`WINDOW_FACTOR`] times the uniform density.

use std::collections::HashMap;

use serde::Serialize;

use crate::form::{DirichletForm, HeatEvolver};
use crate::report::{fit_power_law, linear_fit, FitReport};
use crate::scaling::ScalingFunction;
use crate::{Error, Result};

/// Diagonal density must exceed this multiple of uniform density 1/m(X) for
/// a time to count as pre-saturation.
pub const WINDOW_FACTOR: f64 = 10.0;

/// Envelope constants are searched on this log-spaced grid.
pub const UHK_GRID: usize = 41;
pub const UHK_C_LO: f64 = 1e-2;
pub const UHK_C_HI: f64 = 1e2;

/// Max-norm heat tolerance tight enough to resolve densities near
/// `threshold` on a log scale.
fn heat_tol(threshold: f64) -> f64 {
    (threshold * 1e-6).clamp(1e-14, 1e-9)
}

fn checked_times(times: &[f64]) -> Result<Vec<f64>> {
    if times.iter().any(|t| !t.is_finite() || *t <= 0.0) {
        return Err(Error::invalid("times must be finite and positive"));
    }
    let mut ts = times.to_vec();
    ts.sort_by(|a, b| a.total_cmp(b));
    ts.dedup();
    Ok(ts)
}

/// Fits log E^x0 tau_{B(x0,r)} against log r with exact linear solves; the
/// exponent estimates the space-time scaling power (walk dimension).
///
/// Radii must hold at least three distinct values, all >= 1, and the largest
/// must stay below a third of the (pseudo) diameter so every ball has a real
/// absorbing boundary far from the graph edge.
pub fn fit_walk_dimension(df: &DirichletForm, x0: u32, radii: &[f64]) -> Result<FitReport> {
    if radii.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("radii must be finite"));
    }
    let mut rs = radii.to_vec();
    rs.sort_by(|a, b| a.total_cmp(b));
    rs.dedup();
    if rs.len() < 3 {
        return Err(Error::invalid(format!(
            "walk-dimension fit needs >= 3 distinct radii, got {}",
            rs.len()
        )));
    }
    if rs[0] < 1.0 {
        return Err(Error::invalid("radii must be >= 1"));
    }
    let diam = df.pseudo_diameter()? as f64;
    let rmax = *rs.last().unwrap();
    if rmax > diam / 3.0 {
        return Err(Error::invalid(format!(
            "largest radius {rmax} exceeds a third of the diameter {diam}"
        )));
    }
    let mut taus = Vec::with_capacity(rs.len());
    for &r in &rs {
        let (verts, _) = df.metric_ball(x0, r)?;
        let dom = df.domain(&verts)?;
        let u = df.exit_time_solve(&dom)?;
        taus.push(u[x0 as usize]);
    }
    fit_power_law(&rs, &taus)
}

/// Fits log p_t(x0,x0) against log t inside the pre-saturation window; the
/// slope estimates -(volume exponent)/(walk exponent).
pub fn ondiag_fit(df: &DirichletForm, x0: u32, times: &[f64]) -> Result<FitReport> {
    let n = df.vertex_count();
    if x0 as usize >= n {
        return Err(Error::invalid("ondiag_fit: vertex out of range"));
    }
    let ts = checked_times(times)?;
    if ts.len() < 3 {
        return Err(Error::invalid("ondiag_fit needs >= 3 distinct times"));
    }
    let threshold = WINDOW_FACTOR / df.total_mass();
    let tol = heat_tol(threshold);
    let mut delta = vec![0.0; n];
    delta[x0 as usize] = 1.0 / df.measure()[x0 as usize];
    let sys = df.killed_system(&df.full_domain());
    let mut ev = HeatEvolver::start(sys, &delta)?;
    let mut kept_t = Vec::new();
    let mut kept_p = Vec::new();
    for &t in &ts {
        ev.advance_to(t, tol)?;
        let p = ev.value_at(x0);
        if p >= threshold {
            kept_t.push(t);
            kept_p.push(p);
        }
    }
    if kept_t.len() < 3 {
        return Err(Error::invalid(format!(
            "pre-saturation window kept {} of {} times; the graph is too small \
             for the requested times",
            kept_t.len(),
            ts.len()
        )));
    }
    fit_power_law(&kept_t, &kept_p)
}

/// One measured ball-to-ball overlap.
#[derive(Debug, Clone, Serialize)]
pub struct DgSample {
    pub x1: u32,
    pub x2: u32,
    /// Hop distance between the centers.
    pub r: f64,
    pub t: f64,
    /// <P_t 1_B1, 1_B2> in L^2(m).
    pub overlap: f64,
    /// ||1_B1||_2 ||1_B2||_2 = sqrt(m(B1) m(B2)).
    pub norm_product: f64,
    /// Phi(r, t) for the supplied scaling function.
    pub phi: f64,
}

/// Regression of -log(overlap / norm product) against Phi(R, t).
#[derive(Debug, Clone, Serialize)]
pub struct DgReport {
    pub pairs: Vec<DgSample>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Measures heat flow between balls B(x1, R/4) and B(x2, R/4), R the center
/// distance, and regresses the log overlap deficit against Phi(R, t).
///
/// The evolved indicator always starts from the lower-id center, so swapping
/// a pair's endpoints reproduces the identical floating-point overlap.
pub fn dg_check(
    df: &DirichletForm,
    sf: &ScalingFunction,
    pairs: &[(u32, u32, f64)],
) -> Result<DgReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("dg_check: no pairs supplied"));
    }
    let n = df.vertex_count();
    let mut dists: HashMap<u32, Vec<u32>> = HashMap::new();

    // Resolved geometry per input pair: (source center, target center, R).
    struct Prepared {
        src: u32,
        dst: u32,
        r: u32,
        t: f64,
    }
    let mut prep = Vec::with_capacity(pairs.len());
    for &(x1, x2, t) in pairs {
        if x1 as usize >= n || x2 as usize >= n {
            return Err(Error::invalid("dg_check: vertex out of range"));
        }
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::invalid("dg_check: times must be positive"));
        }
        let (src, dst) = (x1.min(x2), x1.max(x2));
        if !dists.contains_key(&src) {
            dists.insert(src, df.graph_distances(src)?);
        }
        let d = dists[&src][dst as usize];
        if d == 0 {
            return Err(Error::invalid("dg_check: coincident centers"));
        }
        if d == u32::MAX {
            return Err(Error::invalid("dg_check: centers are disconnected"));
        }
        prep.push(Prepared { src, dst, r: d, t });
    }

    // Group by (source ball): one heat evolution per group, times ascending.
    let mut groups: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (i, p) in prep.iter().enumerate() {
        groups.entry((p.src, (p.r as f64 / 4.0).floor() as u32)).or_default().push(i);
    }
    let mut keys: Vec<(u32, u32)> = groups.keys().copied().collect();
    keys.sort_unstable();

    let mut samples: Vec<Option<DgSample>> = (0..pairs.len()).map(|_| None).collect();
    for key in keys {
        let (src, rad) = key;
        let mut idxs = groups.remove(&key).unwrap();
        idxs.sort_by(|&a, &b| prep[a].t.total_cmp(&prep[b].t));
        let (b1, m1) = df.metric_ball(src, rad as f64)?;
        let mut ind = vec![0.0; n];
        for &v in &b1 {
            ind[v as usize] = 1.0;
        }
        let sys = df.killed_system(&df.full_domain());
        let mut ev = HeatEvolver::start(sys, &ind)?;
        for i in idxs {
            let p = &prep[i];
            let (b2, m2) = df.metric_ball(p.dst, (p.r as f64 / 4.0).floor())?;
            if b2.iter().any(|v| ind[*v as usize] == 1.0) {
                return Err(Error::invalid(format!(
                    "dg_check: support balls of pair ({}, {}) overlap",
                    p.src, p.dst
                )));
            }
            ev.advance_to(p.t, 1e-12)?;
            let overlap: f64 =
                b2.iter().map(|&v| ev.value_at(v) * df.measure()[v as usize]).sum();
            let (x1, x2, _) = pairs[i];
            samples[i] = Some(DgSample {
                x1,
                x2,
                r: p.r as f64,
                t: p.t,
                overlap,
                norm_product: (m1 * m2).sqrt(),
                phi: sf.phi(p.r as f64, p.t)?,
            });
        }
    }

    let out: Vec<DgSample> = samples.into_iter().map(|s| s.unwrap()).collect();
    let mut xs = Vec::with_capacity(out.len());
    let mut ys = Vec::with_capacity(out.len());
    for s in &out {
        if s.overlap <= 0.0 {
            return Err(Error::invalid(format!(
                "dg_check: overlap underflowed for pair ({}, {}) at t = {}; \
                 increase t or lower the Phi range",
                s.x1, s.x2, s.t
            )));
        }
        xs.push(s.phi);
        ys.push(-(s.overlap / s.norm_product).ln());
    }
    let (intercept, slope, r_squared) = linear_fit(&xs, &ys)?;
    Ok(DgReport { pairs: out, slope, intercept, r_squared })
}

/// Inverts t -> Phi(R, t) by log-space bisection; Phi is strictly
/// decreasing in t, so the bracket is monotone.
pub fn time_for_phi(sf: &ScalingFunction, big_r: f64, phi_target: f64) -> Result<f64> {
    if !big_r.is_finite() || big_r <= 0.0 {
        return Err(Error::invalid("time_for_phi: R must be positive"));
    }
    if !phi_target.is_finite() || phi_target <= 0.0 {
        return Err(Error::invalid("time_for_phi: target must be positive"));
    }
    let mut lo = 1e-9;
    let mut hi = big_r.max(1.0);
    let mut guard = 0;
    while sf.phi(big_r, hi)? > phi_target {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::NoConvergence("time_for_phi bracket expansion".into()));
        }
    }
    while sf.phi(big_r, lo)? < phi_target {
        lo *= 0.5;
        guard += 1;
        if guard > 2000 {
            return Err(Error::NoConvergence("time_for_phi bracket expansion".into()));
        }
    }
    for _ in 0..200 {
        let mid = ((lo.ln() + hi.ln()) / 2.0).exp();
        if sf.phi(big_r, mid)? > phi_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Builds (x0, y, t) triples whose Phi(d(x0,y), t) hit the target grid:
/// for each requested distance the lowest-id vertex at that distance is
/// paired with the inverted times.
pub fn dg_pair_grid(
    df: &DirichletForm,
    sf: &ScalingFunction,
    x0: u32,
    distances: &[u32],
    phi_targets: &[f64],
) -> Result<Vec<(u32, u32, f64)>> {
    let dist = df.graph_distances(x0)?;
    let mut out = Vec::new();
    for &r in distances {
        if r == 0 {
            return Err(Error::invalid("dg_pair_grid: distances must be positive"));
        }
        let y = dist
            .iter()
            .position(|&d| d == r)
            .ok_or_else(|| Error::invalid(format!("no vertex at distance {r} from {x0}")))?
            as u32;
        for &phi in phi_targets {
            out.push((x0, y, time_for_phi(sf, r as f64, phi)?));
        }
    }
    Ok(out)
}

/// One kernel sample with the envelope value at the fitted constants.
#[derive(Debug, Clone, Serialize)]
pub struct UhkPoint {
    pub y: u32,
    pub t: f64,
    pub dist: f64,
    pub density: f64,
    pub envelope: f64,
}

/// Tightest dominating pair for the envelope
/// V(x0, Psi^{-1}(c1 t))^{-1} exp(-Phi(c2 d(x0,y), t)).
#[derive(Debug, Clone, Serialize)]
pub struct UhkReport {
    pub c1: f64,
    pub c2: f64,
    /// Whether some grid pair dominates every sampled density.
    pub dominated: bool,
    /// max over the sample of ln(density) - ln(envelope) at (c1, c2);
    /// <= 0 means the envelope holds with that margin.
    pub max_log_ratio: f64,
    pub points: Vec<UhkPoint>,
}

/// Kernel densities p_t(x0, y) for a (y, t) sample, restricted to the
/// pre-saturation window, plus the volume profile around x0.
struct KernelSamples {
    /// (y, t, hop distance, density), in input order.
    kept: Vec<(u32, f64, f64, f64)>,
    /// Closed-ball masses around x0 by integer radius.
    vol: Vec<f64>,
}

fn kernel_samples(df: &DirichletForm, x0: u32, sample: &[(u32, f64)]) -> Result<KernelSamples> {
    let n = df.vertex_count();
    if sample.is_empty() {
        return Err(Error::invalid("kernel sample is empty"));
    }
    if x0 as usize >= n {
        return Err(Error::invalid("kernel sample: vertex out of range"));
    }
    let dist = df.graph_distances(x0)?;
    for &(y, t) in sample {
        if y as usize >= n {
            return Err(Error::invalid("kernel sample: vertex out of range"));
        }
        if dist[y as usize] == u32::MAX {
            return Err(Error::invalid(format!("vertex {y} is unreachable from {x0}")));
        }
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::invalid("kernel sample: times must be positive"));
        }
    }

    let maxd = dist.iter().filter(|&&d| d != u32::MAX).max().copied().unwrap_or(0) as usize;
    let mut vol = vec![0.0; maxd + 1];
    for (v, &d) in dist.iter().enumerate() {
        if d != u32::MAX {
            vol[d as usize] += df.measure()[v];
        }
    }
    for k in 1..=maxd {
        vol[k] += vol[k - 1];
    }

    let threshold = WINDOW_FACTOR / df.total_mass();
    let tol = heat_tol(threshold);
    let mut order: Vec<usize> = (0..sample.len()).collect();
    order.sort_by(|&a, &b| sample[a].1.total_cmp(&sample[b].1));

    let mut delta = vec![0.0; n];
    delta[x0 as usize] = 1.0 / df.measure()[x0 as usize];
    let sys = df.killed_system(&df.full_domain());
    let mut ev = HeatEvolver::start(sys, &delta)?;
    let mut kept: Vec<Option<(u32, f64, f64, f64)>> = vec![None; sample.len()];
    for i in order {
        let (y, t) = sample[i];
        ev.advance_to(t, tol)?;
        if ev.value_at(x0) >= threshold {
            kept[i] = Some((y, t, dist[y as usize] as f64, ev.value_at(y)));
        }
    }
    let kept: Vec<(u32, f64, f64, f64)> = kept.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::invalid(
            "every sampled time is past saturation; use earlier times or a larger graph",
        ));
    }
    Ok(KernelSamples { kept, vol })
}

impl KernelSamples {
    fn volume(&self, rho: f64) -> f64 {
        let k = (rho.floor() as usize).min(self.vol.len() - 1);
        self.vol[k]
    }
}

fn uhk_c_grid() -> Vec<f64> {
    let step = (UHK_C_HI / UHK_C_LO).ln() / (UHK_GRID - 1) as f64;
    (0..UHK_GRID).map(|k| (UHK_C_LO.ln() + step * k as f64).exp()).collect()
}

/// Fits the tightest dominating envelope constants over the frozen
/// [`UHK_GRID`] x [`UHK_GRID`] log grid: among all (c1, c2) whose envelope
/// dominates every sampled density, the pair maximizing
/// log c1 + log c2 wins (larger c1 on ties). If no grid pair dominates,
/// the pair with the smallest worst violation is reported instead.
pub fn uhk_check(
    df: &DirichletForm,
    sf: &ScalingFunction,
    x0: u32,
    sample: &[(u32, f64)],
) -> Result<UhkReport> {
    let ks = kernel_samples(df, x0, sample)?;
    let pts = &ks.kept;
    let grid = uhk_c_grid();

    let ln_p: Vec<f64> =
        pts.iter().map(|&(_, _, _, p)| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY }).collect();
    // ln V(x0, Psi^{-1}(c1 t)) per (c1, point) and Phi(c2 d, t) per
    // (c2, point); the 41 x 41 combine stage then reuses both tables.
    let mut ln_v = vec![vec![0.0; pts.len()]; grid.len()];
    let mut phi = vec![vec![0.0; pts.len()]; grid.len()];
    for (i, &c) in grid.iter().enumerate() {
        for (k, &(_, t, d, _)) in pts.iter().enumerate() {
            ln_v[i][k] = ks.volume(sf.psi_inv(c * t)?).ln();
            phi[i][k] = sf.phi(c * d, t)?;
        }
    }

    let mut best_dom: Option<(usize, usize, f64)> = None;
    let mut best_any: Option<(usize, usize, f64)> = None;
    for i in 0..grid.len() {
        for j in 0..grid.len() {
            let mut worst = f64::NEG_INFINITY;
            for k in 0..pts.len() {
                worst = worst.max(ln_p[k] + ln_v[i][k] + phi[j][k]);
            }
            if best_any.map_or(true, |(_, _, w)| worst < w) {
                best_any = Some((i, j, worst));
            }
            if worst <= 1e-9 {
                let better = match best_dom {
                    None => true,
                    Some((bi, bj, _)) => i + j > bi + bj || (i + j == bi + bj && i > bi),
                };
                if better {
                    best_dom = Some((i, j, worst));
                }
            }
        }
    }
    let (bi, bj, worst, dominated) = match best_dom {
        Some((i, j, w)) => (i, j, w, true),
        None => {
            let (i, j, w) = best_any.unwrap();
            (i, j, w, false)
        }
    };
    let points = pts
        .iter()
        .enumerate()
        .map(|(k, &(y, t, d, p))| UhkPoint {
            y,
            t,
            dist: d,
            density: p,
            envelope: (-ln_v[bi][k] - phi[bj][k]).exp(),
        })
        .collect();
    Ok(UhkReport {
        c1: grid[bi],
        c2: grid[bj],
        dominated,
        max_log_ratio: worst,
        points,
    })
}

/// Fraction of a fresh sample violating the envelope at fixed (c1, c2).
pub fn uhk_violation_rate(
    df: &DirichletForm,
    sf: &ScalingFunction,
    x0: u32,
    sample: &[(u32, f64)],
    c1: f64,
    c2: f64,
) -> Result<f64> {
    if !(c1 > 0.0) || !(c2 > 0.0) {
        return Err(Error::invalid("envelope constants must be positive"));
    }
    let ks = kernel_samples(df, x0, sample)?;
    let mut violations = 0usize;
    for &(_, t, d, p) in &ks.kept {
        let ln_env = -ks.volume(sf.psi_inv(c1 * t)?).ln() - sf.phi(c2 * d, t)?;
        if p > 0.0 && p.ln() > ln_env + 1e-9 {
            violations += 1;
        }
    }
    Ok(violations as f64 / ks.kept.len() as f64)
}

/// Exit probabilities from a ball against the eps -> eps Psi(r) schedule.
#[derive(Debug, Clone, Serialize)]
pub struct EscapeReport {
    pub r: f64,
    pub psi_r: f64,
    /// (eps, P^{x0}(tau <= eps Psi(r))) in eps order.
    pub curve: Vec<(f64, f64)>,
    /// Smallest grid eps with P(tau <= eps Psi(r)) <= eps.
    pub admissible_eps: Option<f64>,
}

/// Survival-mass route to P^{x0}(tau_B <= s) = 1 - sum_y p^B_s(x0,y) m(y):
/// one killed heat evolution swept across the eps grid.
pub fn escape_prob_check(
    df: &DirichletForm,
    sf: &ScalingFunction,
    x0: u32,
    r: f64,
    eps_grid: &[f64],
) -> Result<EscapeReport> {
    if !r.is_finite() || r < 1.0 {
        return Err(Error::invalid("escape_prob_check: radius must be >= 1"));
    }
    if eps_grid.is_empty() {
        return Err(Error::invalid("escape_prob_check: empty eps grid"));
    }
    if eps_grid.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::invalid("escape_prob_check: eps must be >= 0"));
    }
    let mut eps = eps_grid.to_vec();
    eps.sort_by(|a, b| a.total_cmp(b));
    eps.dedup();

    let (verts, _) = df.metric_ball(x0, r)?;
    let dom = df.domain(&verts)?;
    let sys = df.killed_system(&dom);
    if sys.has_no_boundary() {
        return Err(Error::invalid(
            "escape_prob_check: the ball swallows its component; shrink r",
        ));
    }
    let psi_r = sf.psi(r)?;
    let mut delta = vec![0.0; df.vertex_count()];
    delta[x0 as usize] = 1.0 / df.measure()[x0 as usize];
    let mut ev = HeatEvolver::start(sys, &delta)?;
    let mut curve = Vec::with_capacity(eps.len());
    let mut admissible = None;
    for &e in &eps {
        ev.advance_to(e * psi_r, 1e-12)?;
        let p_esc = (1.0 - ev.mass()).max(0.0);
        curve.push((e, p_esc));
        if admissible.is_none() && p_esc <= e + 1e-12 {
            admissible = Some(e);
        }
    }
    Ok(EscapeReport { r, psi_r, curve, admissible_eps: admissible })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carpet::{build_full_block, build_precarpet, CarpetSpec};
    use proptest::prelude::*;

    fn square(n: u32) -> (DirichletForm, crate::carpet::CarpetGraph) {
        let g = build_full_block(&CarpetSpec::new(2, n).unwrap(), None).unwrap();
        (DirichletForm::from_graph(&g), g)
    }

    fn carpet(n: u32) -> (DirichletForm, crate::carpet::CarpetGraph) {
        let g = build_precarpet(&CarpetSpec::new(2, n).unwrap(), None).unwrap();
        (DirichletForm::from_graph(&g), g)
    }

    fn doubled(df: &DirichletForm) -> DirichletForm {
        df.perturbed(&vec![2.0; df.edges().len()]).unwrap()
    }

    #[test]
    fn walk_dimension_square_oracle_and_validation() {
        // Radii large enough that the lattice offset (exit times scale like
        // (r + 1)^2, not r^2) stays inside the tolerance.
        let (df, g) = square(5);
        let x0 = g.vertex_at(&[121, 121]).unwrap();
        let fit = fit_walk_dimension(&df, x0, &[20.0, 40.0, 80.0]).unwrap();
        assert!(
            (fit.exponent - 2.0).abs() <= 0.15,
            "square walk exponent {} strays from 2",
            fit.exponent
        );
        assert!(fit.r_squared > 0.99);

        assert!(fit_walk_dimension(&df, x0, &[6.0, 6.0, 6.0]).is_err());
        assert!(fit_walk_dimension(&df, x0, &[6.0, 12.0]).is_err());
        assert!(fit_walk_dimension(&df, x0, &[6.0, 12.0, 1e6]).is_err());
        assert!(fit_walk_dimension(&df, x0, &[6.0, 12.0, f64::NAN]).is_err());
    }

    #[test]
    fn exponents_are_invariant_under_generator_scaling() {
        let (df, g) = carpet(3);
        let x0 = g.vertex_at(&[0, 0]).unwrap();
        let radii = [2.0, 4.0, 8.0];
        let a = fit_walk_dimension(&df, x0, &radii).unwrap();
        let b = fit_walk_dimension(&doubled(&df), x0, &radii).unwrap();
        assert!(
            (a.exponent - b.exponent).abs() < 1e-9,
            "exit-time exponent moved under c -> 2c: {} vs {}",
            a.exponent,
            b.exponent
        );

        let times = [1.0, 2.0, 4.0, 8.0];
        let halved: Vec<f64> = times.iter().map(|t| t / 2.0).collect();
        let p = ondiag_fit(&df, x0, &times).unwrap();
        let q = ondiag_fit(&doubled(&df), x0, &halved).unwrap();
        assert!(
            (p.exponent - q.exponent).abs() < 1e-7,
            "on-diagonal exponent moved under (c, t) -> (2c, t/2): {} vs {}",
            p.exponent,
            q.exponent
        );
    }

    #[test]
    fn ondiag_square_oracle_and_saturation_guard() {
        let (df, g) = square(4);
        let x0 = g.vertex_at(&[40, 40]).unwrap();
        let fit = ondiag_fit(&df, x0, &[2.0, 4.0, 8.0, 16.0, 32.0]).unwrap();
        assert!(
            (fit.exponent + 1.0).abs() <= 0.15,
            "square on-diagonal slope {} strays from -1",
            fit.exponent
        );
        assert_eq!(fit.grid.len(), 5, "all five times lie inside the window");

        // Nine vertices: the diagonal starts at 1/m(x0) = 1 < 10/m(X), so no
        // time can clear the window.
        let (tiny, gt) = square(1);
        let c = gt.vertex_at(&[1, 1]).unwrap();
        assert!(ondiag_fit(&tiny, c, &[0.5, 1.0, 2.0]).is_err());
        assert!(ondiag_fit(&df, x0, &[1.0, 1.0, 1.0]).is_err());
        assert!(ondiag_fit(&df, x0, &[-1.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn dg_symmetry_bounds_and_degenerate_pairs() {
        let (df, g) = carpet(3);
        let sf = ScalingFunction::new(2.0, 2.0).unwrap();
        let x1 = g.vertex_at(&[0, 0]).unwrap();
        let dist = df.graph_distances(x1).unwrap();
        let x2 = dist.iter().position(|&d| d == 12).unwrap() as u32;

        let fwd = dg_check(&df, &sf, &[(x1, x2, 3.0), (x1, x2, 12.0)]).unwrap();
        let bwd = dg_check(&df, &sf, &[(x2, x1, 3.0), (x2, x1, 12.0)]).unwrap();
        for (a, b) in fwd.pairs.iter().zip(&bwd.pairs) {
            assert_eq!(a.overlap, b.overlap, "overlap must be exactly symmetric");
            assert!(a.overlap > 0.0 && a.overlap <= a.norm_product * (1.0 + 1e-9));
        }

        // Six hops separate the ball boundaries, so mass moved by t <= 0.02
        // is bounded by the six-jump Poisson tail.
        let tiny = dg_check(&df, &sf, &[(x1, x2, 0.01), (x1, x2, 0.02)]).unwrap();
        for s in &tiny.pairs {
            assert!(s.overlap < 1e-8 * s.norm_product, "overlap {} too large", s.overlap);
        }

        assert!(dg_check(&df, &sf, &[(x1, x1, 1.0)]).is_err());
        assert!(dg_check(&df, &sf, &[(x1, x2, 0.0)]).is_err());
        assert!(dg_check(&df, &sf, &[]).is_err());
    }

    #[test]
    fn dg_carpet_regression_tracks_phi() {
        let (df, g) = carpet(4);
        let sf = ScalingFunction::new(2.0, 2.0).unwrap();
        let x0 = g.vertex_at(&[0, 0]).unwrap();
        let pairs = dg_pair_grid(&df, &sf, x0, &[16, 24, 32], &[1.5, 3.0, 6.0]).unwrap();
        assert_eq!(pairs.len(), 9);
        let report = dg_check(&df, &sf, &pairs).unwrap();
        for s in &report.pairs {
            assert!(s.overlap <= s.norm_product * (1.0 + 1e-9));
            assert!(s.phi >= 1.0 && s.phi <= 10.0);
        }
        assert!(report.slope > 0.0, "overlap must decay with Phi, slope {}", report.slope);
        assert!(report.r_squared >= 0.7, "Phi should explain the decay, r2 {}", report.r_squared);
    }

    #[test]
    fn time_for_phi_inverts_phi() {
        let sf = ScalingFunction::new(2.0, 2.5).unwrap();
        for &(r, target) in &[(5.0, 0.3), (12.0, 1.0), (40.0, 10.0), (3.0, 25.0)] {
            let t = time_for_phi(&sf, r, target).unwrap();
            let phi = sf.phi(r, t).unwrap();
            assert!(
                (phi - target).abs() <= 1e-6 * target,
                "phi({r}, {t}) = {phi}, wanted {target}"
            );
        }
    }

    #[test]
    fn uhk_square_envelope_dominates_and_generalizes() {
        let (df, g) = square(3);
        let sf = ScalingFunction::new(2.0, 2.0).unwrap();
        let x0 = g.vertex_at(&[13, 13]).unwrap();
        let times = [1.0, 2.0, 3.0, 4.0];
        let mut train = Vec::new();
        let mut holdout = Vec::new();
        for &t in &times {
            for k in 0..8 {
                let y = g.vertex_at(&[13 + k, 13]).unwrap();
                if k % 2 == 0 {
                    train.push((y, t));
                } else {
                    holdout.push((y, t));
                }
            }
        }
        let report = uhk_check(&df, &sf, x0, &train).unwrap();
        assert!(report.dominated, "a Gaussian envelope must dominate the square kernel");
        assert!(report.max_log_ratio <= 1e-9);
        assert!(report.c1 >= UHK_C_LO && report.c1 <= UHK_C_HI);
        assert!(report.c2 >= UHK_C_LO && report.c2 <= UHK_C_HI);
        for p in &report.points {
            assert!(p.density <= p.envelope * (1.0 + 1e-6));
        }
        let rate = uhk_violation_rate(&df, &sf, x0, &holdout, report.c1, report.c2).unwrap();
        assert!(rate <= 0.02, "held-out violation rate {rate} above 2%");
    }

    #[test]
    fn uhk_rejects_bad_samples() {
        let (df, g) = square(2);
        let sf = ScalingFunction::new(2.0, 2.0).unwrap();
        let x0 = g.vertex_at(&[4, 4]).unwrap();
        assert!(uhk_check(&df, &sf, x0, &[]).is_err());
        assert!(uhk_check(&df, &sf, x0, &[(x0, -1.0)]).is_err());
        // Saturated: 81 vertices cannot hold a window at t = 10^4.
        assert!(uhk_check(&df, &sf, x0, &[(x0, 1e4)]).is_err());
    }

    #[test]
    fn escape_curve_is_monotone_with_admissible_eps() {
        let (df, g) = square(3);
        let sf = ScalingFunction::new(2.0, 2.0).unwrap();
        let x0 = g.vertex_at(&[13, 13]).unwrap();
        let eps: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let report = escape_prob_check(&df, &sf, x0, 6.0, &eps).unwrap();
        assert_eq!(report.curve[0], (0.0, 0.0), "no escape in zero time");
        for w in report.curve.windows(2) {
            assert!(
                w[1].1 >= w[0].1 - 1e-9,
                "escape probability must grow with s: {:?}",
                report.curve
            );
        }
        assert!(report.curve.iter().all(|&(_, p)| (0.0..=1.0).contains(&p)));
        let adm = report.admissible_eps.expect("eps = 1 always satisfies the bound");
        assert!(adm <= 1.0);

        assert!(escape_prob_check(&df, &sf, x0, 1e9, &eps).is_err());
        assert!(escape_prob_check(&df, &sf, x0, 6.0, &[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn time_for_phi_round_trips(
            beta in 2.0..3.5f64,
            r in 1.0..200.0f64,
            target in 0.05..40.0f64,
        ) {
            let sf = ScalingFunction::new(2.0, beta).unwrap();
            let t = time_for_phi(&sf, r, target).unwrap();
            let phi = sf.phi(r, t).unwrap();
            prop_assert!((phi - target).abs() <= 1e-6 * target);
        }
    }
}
