//! Cutoff functions and the functional inequalities they certify.
//!
//! A cutoff for a ball pair B(x0,R) inside B(x0,R+r) is a [0,1] vertex
//! function equal to 1 on the inner ball and 0 outside the outer one. The
//! quality of a cutoff family is measured by the smallest theta making
//!
//! ```text
//! sum_U f^2 Gamma(phi,phi) <= (1/8) sum_U phi^2 Gamma(f,f) + theta sum_U f^2 m
//! ```
//!
//! hold over a test family of functions f, where U is the open annulus
//! between the balls. Linear cutoffs give theta ~ r^-2; the resolvent
//! construction trades gradient mass for the anomalous rate theta ~ 1/Psi(r).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::carpet::CarpetGraph;
use crate::form::DirichletForm;
use crate::report::{fit_power_law, FitReport};
use crate::scaling::ScalingFunction;
use crate::{Error, Result, VertexField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CutoffKind {
    Linear,
    Resolvent,
    Improved,
    CoverMax,
}

/// Vertex function that is 1 on `inner`, 0 outside `outer`, in [0,1].
#[derive(Debug, Clone)]
pub struct CutoffFn {
    pub values: VertexField,
    pub kind: CutoffKind,
    pub center: u32,
    pub inner_radius: f64,
    pub width: f64,
    /// Sorted vertex ids of the inner set (values exactly 1 there).
    inner: Vec<u32>,
    /// Sorted vertex ids of the outer set (values exactly 0 elsewhere).
    outer: Vec<u32>,
}

impl CutoffFn {
    pub fn from_parts(
        values: VertexField,
        kind: CutoffKind,
        center: u32,
        inner_radius: f64,
        width: f64,
        inner: Vec<u32>,
        outer: Vec<u32>,
    ) -> Result<Self> {
        let c = CutoffFn { values, kind, center, inner_radius, width, inner, outer };
        c.check_invariants()?;
        Ok(c)
    }

    pub fn inner_set(&self) -> &[u32] {
        &self.inner
    }

    pub fn outer_set(&self) -> &[u32] {
        &self.outer
    }

    /// Open annulus U = outer minus inner, sorted.
    pub fn annulus(&self) -> Vec<u32> {
        let mut is_inner = vec![false; self.values.len()];
        for &v in &self.inner {
            is_inner[v as usize] = true;
        }
        self.outer.iter().copied().filter(|&v| !is_inner[v as usize]).collect()
    }

    /// Boundary invariants: exactly 1 on the inner set, exactly 0 outside
    /// the outer set, within [0,1] everywhere.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.values.len();
        if self.inner.iter().chain(&self.outer).any(|&v| v as usize >= n) {
            return Err(Error::invalid("cutoff: vertex id out of range"));
        }
        let mut in_outer = vec![false; n];
        for &v in &self.outer {
            in_outer[v as usize] = true;
        }
        for (x, &val) in self.values.iter().enumerate() {
            if !(0.0..=1.0).contains(&val) {
                return Err(Error::invalid(format!("cutoff: value {val} at {x} outside [0,1]")));
            }
            if !in_outer[x] && val != 0.0 {
                return Err(Error::invalid(format!("cutoff: nonzero value {val} outside outer set")));
            }
        }
        for &v in &self.inner {
            if self.values[v as usize] != 1.0 {
                return Err(Error::invalid(format!(
                    "cutoff: value {} on inner set, expected 1",
                    self.values[v as usize]
                )));
            }
        }
        Ok(())
    }
}

/// theta measurement for one cutoff over one test family.
#[derive(Debug, Clone, Serialize)]
pub struct CsdReport {
    pub theta_star: f64,
    /// Annulus width r.
    pub r: f64,
    /// Inner radius R.
    #[serde(rename = "R")]
    pub big_r: f64,
    pub family_size: usize,
}

/// Faber-Krahn scan summary.
#[derive(Debug, Clone, Serialize)]
pub struct FkReport {
    pub c_f_estimate: f64,
    pub nu: f64,
    pub samples: usize,
    pub monotonicity_violations: usize,
}

fn verts_le(dist: &[u32], bound: f64) -> Vec<u32> {
    (0..dist.len() as u32)
        .filter(|&v| dist[v as usize] != u32::MAX && (dist[v as usize] as f64) <= bound)
        .collect()
}

fn verts_lt(dist: &[u32], bound: f64) -> Vec<u32> {
    (0..dist.len() as u32)
        .filter(|&v| dist[v as usize] != u32::MAX && (dist[v as usize] as f64) < bound)
        .collect()
}

/// Open ring { x : lo < dist(x) <= hi }.
fn ring(dist: &[u32], lo: f64, hi: f64) -> Vec<u32> {
    (0..dist.len() as u32)
        .filter(|&v| {
            let d = dist[v as usize];
            d != u32::MAX && (d as f64) > lo && (d as f64) <= hi
        })
        .collect()
}

/// phi(x) = clamp((R + r - dist(x0,x))/r, 0, 1).
pub fn cutoff_linear(g: &CarpetGraph, x0: u32, big_r: f64, r: f64) -> Result<CutoffFn> {
    if !(big_r >= 0.0) {
        return Err(Error::invalid(format!("cutoff_linear: R must be >= 0, got {big_r}")));
    }
    if !(r >= 1.0) {
        return Err(Error::invalid(format!("cutoff_linear: width must be >= 1, got {r}")));
    }
    let dist = g.bfs_distances(x0);
    let values: VertexField = dist
        .iter()
        .map(|&d| {
            if d == u32::MAX {
                0.0
            } else {
                ((big_r + r - d as f64) / r).clamp(0.0, 1.0)
            }
        })
        .collect();
    CutoffFn::from_parts(
        values,
        CutoffKind::Linear,
        x0,
        big_r,
        r,
        verts_le(&dist, big_r),
        verts_lt(&dist, big_r + r),
    )
}

/// Diagnostics of the resolvent construction.
#[derive(Debug, Clone, Serialize)]
pub struct ResolventInfo {
    /// Multiplier actually used in phi = min(1, c1 h / Psi(r)).
    pub c1: f64,
    /// Maximum of the resolvent profile h (theory bound: Psi(r)).
    pub h_max: f64,
    /// Minimum of h over the middle ring (calibration target).
    pub h_min_middle: f64,
    pub psi_r: f64,
}

/// Cutoff from the killed lambda-resolvent of an annulus indicator:
/// h = (lambda - L_D)^{-1} 1_M with lambda = 1/Psi(r), D the wide ring
/// (R + r/10, R + 9r/10], M the middle ring (R + r/5, R + 4r/5]. Then
/// phi = 1 on B(x0, R + r/2) and min(1, c1 h / Psi(r)) outside. With
/// `c1: None` the multiplier is calibrated so phi = 1 on the core ring
/// (R + 2r/5, R + 3r/5], which makes phi continuous across the pinned
/// region's boundary.
pub fn cutoff_resolvent(
    df: &DirichletForm,
    g: &CarpetGraph,
    sf: &ScalingFunction,
    x0: u32,
    big_r: f64,
    r: f64,
    c1: Option<f64>,
) -> Result<(CutoffFn, ResolventInfo)> {
    if !(big_r >= 0.0) {
        return Err(Error::invalid("cutoff_resolvent: R must be >= 0"));
    }
    if !(r >= 10.0) {
        return Err(Error::invalid(format!(
            "cutoff_resolvent: width {r} < 10 cannot hold the ring subdivision; use cutoff_linear"
        )));
    }
    let dist = g.bfs_distances(x0);
    let wide = ring(&dist, big_r + r / 10.0, big_r + 9.0 * r / 10.0);
    let mid = ring(&dist, big_r + r / 5.0, big_r + 4.0 * r / 5.0);
    let core = ring(&dist, big_r + 2.0 * r / 5.0, big_r + 3.0 * r / 5.0);
    if wide.is_empty() || mid.is_empty() || core.is_empty() {
        return Err(Error::invalid("cutoff_resolvent: degenerate rings at this center"));
    }
    let psi_r = sf.psi(r)?;
    let lambda = 1.0 / psi_r;
    let dom = df.domain(&wide)?;
    let mut rhs = vec![0.0; df.vertex_count()];
    for &v in &mid {
        rhs[v as usize] = 1.0;
    }
    let h = df.resolvent_solve(&dom, lambda, &rhs)?;
    let h_max = h.iter().cloned().fold(0.0, f64::max);
    let h_min_middle = core
        .iter()
        .map(|&v| h[v as usize])
        .fold(f64::INFINITY, f64::min);
    if !(h_min_middle > 0.0) {
        return Err(Error::invalid("cutoff_resolvent: resolvent vanishes on the core ring"));
    }
    let c1 = c1.unwrap_or(psi_r / h_min_middle);

    let pin = big_r + r / 2.0;
    let values: VertexField = dist
        .iter()
        .enumerate()
        .map(|(x, &d)| {
            if d != u32::MAX && (d as f64) <= pin {
                1.0
            } else {
                (c1 * h[x] / psi_r).clamp(0.0, 1.0)
            }
        })
        .collect();
    let cutoff = CutoffFn::from_parts(
        values,
        CutoffKind::Resolvent,
        x0,
        big_r,
        r,
        verts_le(&dist, big_r),
        verts_lt(&dist, big_r + r),
    )?;
    Ok((cutoff, ResolventInfo { c1, h_max, h_min_middle, psi_r }))
}

/// Diagnostics of the geometric self-improvement blend.
#[derive(Debug, Clone, Serialize)]
pub struct ImproveInfo {
    pub lambda: f64,
    /// Shell boundaries rho_0 = R < rho_1 < ... < rho_N = R + r.
    pub shell_bounds: Vec<f64>,
    /// Normalized blend weights, one per shell, summing to 1.
    pub weights: Vec<f64>,
    /// True when fewer than 2 shells fit and the single weak cutoff was
    /// returned unchanged.
    pub fallback: bool,
}

/// Weighted geometric blend of weak cutoffs: shells of width
/// s_n = c0 r e^{-n lambda / beta_hi} (c0 = e^{lambda/beta_hi} - 1, so the
/// widths sum to r), blended with weights proportional to
/// e^{-(n-1)lambda} - e^{-n lambda}. lambda is chosen as the largest value
/// with c1 (e^lambda - 1)^2 <= 1/8, trading the weak builder's gradient
/// coefficient c1 down to 1/8. The schedule is truncated once s_n drops
/// below `min_shell`, the leftover width joining the last shell.
pub fn cutoff_improve(
    g: &CarpetGraph,
    sf: &ScalingFunction,
    x0: u32,
    big_r: f64,
    r: f64,
    weak: &dyn Fn(f64, f64) -> Result<CutoffFn>,
    c1: f64,
    min_shell: f64,
) -> Result<(CutoffFn, ImproveInfo)> {
    if !(c1 >= 0.0) {
        return Err(Error::invalid("cutoff_improve: c1 must be >= 0"));
    }
    if !(min_shell >= 1.0) {
        return Err(Error::invalid("cutoff_improve: min_shell must be >= 1"));
    }
    let lambda = if c1 == 0.0 {
        std::f64::consts::LN_2
    } else {
        (1.0 + (1.0 / (8.0 * c1)).sqrt()).ln()
    };
    let beta_hi = sf.beta_hi();
    let c0 = (lambda / beta_hi).exp() - 1.0;

    // Geometric widths until they fall under the resolution floor.
    let mut widths = Vec::new();
    let mut used = 0.0;
    for n in 1.. {
        let s = c0 * r * (-(n as f64) * lambda / beta_hi).exp();
        if s < min_shell || used + s > r {
            break;
        }
        widths.push(s);
        used += s;
    }
    if widths.len() < 2 {
        let phi = weak(big_r, r)?;
        let info = ImproveInfo {
            lambda,
            shell_bounds: vec![big_r, big_r + r],
            weights: vec![1.0],
            fallback: true,
        };
        return Ok((phi, info));
    }
    let last = widths.len() - 1;
    widths[last] += r - used;

    let mut shell_bounds = vec![big_r];
    for w in &widths {
        shell_bounds.push(shell_bounds.last().unwrap() + w);
    }
    // Snap the accumulated end to R + r exactly.
    *shell_bounds.last_mut().unwrap() = big_r + r;

    let n_shells = widths.len();
    let b = |n: usize| (-(n as f64) * lambda).exp();
    let tail = b(n_shells);
    let weights: Vec<f64> = (1..=n_shells)
        .map(|n| (b(n - 1) - b(n)) / (1.0 - tail))
        .collect();

    let dist = g.bfs_distances(x0);
    let mut values = vec![0.0; g.vertex_count()];
    for (n, w) in weights.iter().enumerate() {
        let phi_n = weak(shell_bounds[n], shell_bounds[n + 1] - shell_bounds[n])?;
        for (x, val) in phi_n.values.iter().enumerate() {
            values[x] += w * val;
        }
    }
    // The blend is exactly 1 on the inner ball and 0 outside the outer one
    // up to float roundoff in the weight sum; pin those regions.
    let inner = verts_le(&dist, big_r);
    let outer = verts_lt(&dist, big_r + r);
    let mut in_outer = vec![false; values.len()];
    for &v in &outer {
        in_outer[v as usize] = true;
    }
    for &v in &inner {
        values[v as usize] = 1.0;
    }
    for (x, val) in values.iter_mut().enumerate() {
        if !in_outer[x] {
            *val = 0.0;
        } else {
            *val = val.clamp(0.0, 1.0);
        }
    }
    let cutoff =
        CutoffFn::from_parts(values, CutoffKind::Improved, x0, big_r, r, inner, outer)?;
    let info = ImproveInfo { lambda, shell_bounds, weights, fallback: false };
    Ok((cutoff, info))
}

/// Diagnostics of the covering construction.
#[derive(Debug, Clone, Serialize)]
pub struct CoverInfo {
    pub centers: Vec<u32>,
    pub r0: f64,
    /// Max number of support balls containing one vertex.
    pub max_overlap: usize,
    /// Max over vertices of Gamma(phi,phi) / sum_i Gamma(phi_i,phi_i);
    /// at most 1 since the max of functions contracts differences.
    pub subadditivity_max_ratio: f64,
}

/// Pointwise max of small-ball cutoffs over a greedy cover of B(x0,R) by
/// balls of radius r0 = r/3 (centers pairwise more than r0 apart, so their
/// half-balls are disjoint). `ball_builder(z, r0, r0)` supplies the cutoff
/// for B(z,r0) inside B(z,2r0).
pub fn cutoff_cover_max(
    df: &DirichletForm,
    g: &CarpetGraph,
    x0: u32,
    big_r: f64,
    r: f64,
    ball_builder: &dyn Fn(u32, f64, f64) -> Result<CutoffFn>,
) -> Result<(CutoffFn, CoverInfo)> {
    if !(r >= 3.0) {
        return Err(Error::invalid("cutoff_cover_max: width must be >= 3"));
    }
    let r0 = r / 3.0;
    let dist = g.bfs_distances(x0);
    let mut candidates = verts_le(&dist, big_r);
    candidates.sort_by_key(|&v| (dist[v as usize], v));

    let n = g.vertex_count();
    let mut covered = vec![false; n];
    let mut centers: Vec<u32> = Vec::new();
    for &z in &candidates {
        if covered[z as usize] {
            continue;
        }
        centers.push(z);
        let (ball_z, _) = g.ball(z, r0)?;
        for &v in &ball_z {
            covered[v as usize] = true;
        }
    }

    let mut overlap = vec![0usize; n];
    let mut values = vec![0.0f64; n];
    let mut gamma_sum = vec![0.0f64; n];
    for &z in &centers {
        let phi_z = ball_builder(z, r0, r0)?;
        let (support, _) = g.ball(z, 2.0 * r0)?;
        for &v in &support {
            overlap[v as usize] += 1;
        }
        let (_, gz) = df.energy_and_measure(&phi_z.values)?;
        for x in 0..n {
            values[x] = values[x].max(phi_z.values[x]);
            gamma_sum[x] += gz[x];
        }
    }

    let cutoff = CutoffFn::from_parts(
        values,
        CutoffKind::CoverMax,
        x0,
        big_r,
        r,
        verts_le(&dist, big_r),
        verts_lt(&dist, big_r + r),
    )?;
    let (_, gamma_max) = df.energy_and_measure(&cutoff.values)?;
    let mut ratio: f64 = 0.0;
    for x in 0..n {
        if gamma_sum[x] > 0.0 {
            ratio = ratio.max(gamma_max[x] / gamma_sum[x]);
        } else if gamma_max[x] > 0.0 {
            return Err(Error::invalid(
                "cutoff_cover_max: blend has energy where no part does",
            ));
        }
    }
    let info = CoverInfo {
        centers,
        r0,
        max_overlap: overlap.iter().cloned().max().unwrap_or(0),
        subadditivity_max_ratio: ratio,
    };
    Ok((cutoff, info))
}

/// Smallest theta making the annulus inequality hold over `family` with the
/// gradient coefficient pinned at 1/8.
pub fn csd_theta(df: &DirichletForm, phi: &CutoffFn, family: &[VertexField]) -> Result<CsdReport> {
    if family.is_empty() {
        return Err(Error::invalid("csd_theta: empty test family"));
    }
    let u_set = phi.annulus();
    if u_set.is_empty() {
        return Err(Error::invalid("csd_theta: empty annulus"));
    }
    let (_, gamma_phi) = df.energy_and_measure(&phi.values)?;
    let m = df.measure();
    let mut theta_star: f64 = 0.0;
    for f in family {
        let (_, gamma_f) = df.energy_and_measure(f)?;
        let mut lhs = 0.0;
        let mut grad = 0.0;
        let mut mass = 0.0;
        for &v in &u_set {
            let x = v as usize;
            lhs += f[x] * f[x] * gamma_phi[x];
            grad += phi.values[x] * phi.values[x] * gamma_f[x];
            mass += f[x] * f[x] * m[x];
        }
        if mass <= 0.0 {
            continue;
        }
        theta_star = theta_star.max((lhs - 0.125 * grad).max(0.0) / mass);
    }
    Ok(CsdReport {
        theta_star,
        r: phi.width,
        big_r: phi.inner_radius,
        family_size: family.len(),
    })
}

/// Standard seeded test family for theta measurements: the constant, the
/// coordinate functions, low killed eigenvectors near the annulus, harmonic
/// extensions of boundary noise, and 50 heat-smoothed white-noise fields.
pub fn default_test_family(
    df: &DirichletForm,
    g: &CarpetGraph,
    phi: &CutoffFn,
    smoothing_time: f64,
    seed: u64,
) -> Result<Vec<VertexField>> {
    let n = df.vertex_count();
    let u_set = phi.annulus();
    if u_set.is_empty() {
        return Err(Error::invalid("default_test_family: empty annulus"));
    }
    let mut family: Vec<VertexField> = Vec::new();
    family.push(vec![1.0; n]);

    let side = g.side() as f64;
    for axis in 0..g.dim() as usize {
        family.push((0..n).map(|v| g.coords_of(v as u32)[axis] as f64 / side).collect());
    }

    // Low killed eigenvectors of the annulus neighborhood (skipped when the
    // neighborhood has no absorbing boundary).
    let mut hood: Vec<u32> = Vec::new();
    {
        let mut mark = vec![false; n];
        for &v in &u_set {
            if !mark[v as usize] {
                mark[v as usize] = true;
                hood.push(v);
            }
            for &w in g.neighbors(v) {
                if !mark[w as usize] {
                    mark[w as usize] = true;
                    hood.push(w);
                }
            }
        }
        hood.sort_unstable();
    }
    if hood.len() < n && hood.len() > 2 {
        let dom = df.domain(&hood)?;
        let k = 6.min(hood.len() - 1);
        if let Ok(pairs) = df.dirichlet_eigenpairs(&dom, k) {
            for (_, field) in pairs {
                family.push(field);
            }
        }
    }

    // Harmonic extensions of boundary noise onto the annulus.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    if u_set.len() < n {
        let dom = df.domain(&u_set)?;
        for _ in 0..5 {
            let noise: VertexField = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if let Ok(h) = df.harmonic_extension(&dom, &noise) {
                family.push(h);
            }
        }
    }

    // Heat-smoothed white noise.
    rng.set_stream(2);
    for _ in 0..50 {
        let noise: VertexField = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if smoothing_time > 0.0 {
            family.push(df.heat_apply(None, smoothing_time, &noise, 1e-6)?);
        } else {
            family.push(noise);
        }
    }
    Ok(family)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CutoffBuilder {
    Linear,
    Resolvent,
}

/// Build a cutoff for B(x0,R) in B(x0,R+r) with the chosen construction
/// (resolvent multiplier auto-calibrated).
pub fn build_cutoff(
    df: &DirichletForm,
    g: &CarpetGraph,
    sf: &ScalingFunction,
    kind: CutoffBuilder,
    x0: u32,
    big_r: f64,
    r: f64,
) -> Result<CutoffFn> {
    match kind {
        CutoffBuilder::Linear => cutoff_linear(g, x0, big_r, r),
        CutoffBuilder::Resolvent => {
            cutoff_resolvent(df, g, sf, x0, big_r, r, None).map(|(c, _)| c)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CsaCell {
    pub center: u32,
    pub report: CsdReport,
}

/// theta scaling scan over annuli B(x,r) in B(x,2r).
#[derive(Debug, Clone, Serialize)]
pub struct CsaScan {
    pub cells: Vec<CsaCell>,
    /// Fit of log theta(r) (max over centers) against log r.
    pub fit: FitReport,
    /// max over r of theta(r) * Psi(r).
    pub c_s_estimate: f64,
}

pub fn csa_scan(
    df: &DirichletForm,
    g: &CarpetGraph,
    sf: &ScalingFunction,
    centers: &[u32],
    radii: &[f64],
    builder: CutoffBuilder,
    seed: u64,
) -> Result<CsaScan> {
    if centers.is_empty() || radii.is_empty() {
        return Err(Error::invalid("csa_scan: need centers and radii"));
    }
    if builder == CutoffBuilder::Resolvent && radii.iter().any(|&r| r < 10.0) {
        return Err(Error::invalid("csa_scan: resolvent builder needs radii >= 10"));
    }
    // Resolvent multiplier is calibrated once per center, at the largest
    // radius, and reused across the sweep. Recalibrating at every radius
    // folds an r-dependent normalization into theta(r) and contaminates the
    // decay exponent the scan exists to measure.
    let mut c1_by_center: Vec<Option<f64>> = vec![None; centers.len()];
    if builder == CutoffBuilder::Resolvent {
        let rmax = radii.iter().cloned().fold(f64::MIN, f64::max);
        for (i, &x0) in centers.iter().enumerate() {
            let (_, info) = cutoff_resolvent(df, g, sf, x0, rmax, rmax, None)?;
            c1_by_center[i] = Some(info.c1);
        }
    }
    let mut cells = Vec::new();
    let mut per_r: Vec<(f64, f64)> = Vec::new();
    for &r in radii {
        let mut theta_r: f64 = 0.0;
        for (i, &x0) in centers.iter().enumerate() {
            let phi = match builder {
                CutoffBuilder::Linear => cutoff_linear(g, x0, r, r)?,
                CutoffBuilder::Resolvent => {
                    cutoff_resolvent(df, g, sf, x0, r, r, c1_by_center[i])?.0
                }
            };
            let family = default_test_family(df, g, &phi, sf.psi(r)? / 10.0, seed)?;
            let report = csd_theta(df, &phi, &family)?;
            theta_r = theta_r.max(report.theta_star);
            cells.push(CsaCell { center: x0, report });
        }
        per_r.push((r, theta_r));
    }
    let xs: Vec<f64> = per_r.iter().map(|(r, _)| *r).collect();
    let ys: Vec<f64> = per_r.iter().map(|(_, t)| t.max(1e-300)).collect();
    let fit = fit_power_law(&xs, &ys)?;
    let mut c_s: f64 = 0.0;
    for &(r, t) in &per_r {
        c_s = c_s.max(t * sf.psi(r)?);
    }
    Ok(CsaScan { cells, fit, c_s_estimate: c_s })
}

/// min over sampled domains D inside balls B of lambda_1(D) Psi(r)
/// (m(D)/m(B))^nu. Domains cycle through the whole ball, random sub-balls,
/// and random connected subsets.
pub fn fk_scan(
    df: &DirichletForm,
    g: &CarpetGraph,
    sf: &ScalingFunction,
    nu: f64,
    radii: &[f64],
    samples: usize,
    seed: u64,
) -> Result<FkReport> {
    if !(nu > 0.0) {
        return Err(Error::invalid("fk_scan: nu must be > 0"));
    }
    if radii.is_empty() || samples == 0 {
        return Err(Error::invalid("fk_scan: need radii and samples"));
    }
    let n = df.vertex_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c_f = f64::INFINITY;
    let mut used = 0usize;
    let mut violations = 0usize;
    let mut attempts = 0usize;
    while used < samples && attempts < samples * 4 {
        attempts += 1;
        let x = rng.gen_range(0..n) as u32;
        let r = radii[rng.gen_range(0..radii.len())];
        let (ball, m_ball) = g.ball(x, r)?;
        if ball.len() >= n || ball.len() < 3 {
            continue;
        }
        let kind = used % 3;
        let d_verts: Vec<u32> = match kind {
            0 => ball.clone(),
            1 => {
                let y = ball[rng.gen_range(0..ball.len())];
                let rr = (r * rng.gen_range(0.3..0.9)).max(1.0);
                let (sub, _) = g.ball(y, rr)?;
                let mut in_ball = vec![false; n];
                for &v in &ball {
                    in_ball[v as usize] = true;
                }
                connected_within(g, y, &sub, &in_ball)
            }
            _ => {
                let y = ball[rng.gen_range(0..ball.len())];
                let target = ((ball.len() as f64) * rng.gen_range(0.2..0.8)) as usize;
                random_connected_subset(g, y, target.max(2), &ball, &mut rng)
            }
        };
        if d_verts.len() < 2 {
            continue;
        }
        let dom = df.domain(&d_verts)?;
        let lam = match df.lambda1_dirichlet(&dom) {
            Ok(l) => l,
            Err(_) => continue,
        };
        let m_d: f64 = d_verts.iter().map(|&v| df.measure()[v as usize]).sum();
        let value = lam * sf.psi(r)? * (m_d / m_ball).powf(nu);
        c_f = c_f.min(value);
        if kind != 0 && d_verts.len() < ball.len() {
            let dom_b = df.domain(&ball)?;
            if let Ok(lam_b) = df.lambda1_dirichlet(&dom_b) {
                if lam + 1e-9 * lam.abs().max(1.0) < lam_b {
                    violations += 1;
                }
            }
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::invalid("fk_scan: no usable domains sampled"));
    }
    Ok(FkReport { c_f_estimate: c_f, nu, samples: used, monotonicity_violations: violations })
}

/// Connected component of `seed_v` within sub AND mask.
fn connected_within(g: &CarpetGraph, seed_v: u32, sub: &[u32], mask: &[bool]) -> Vec<u32> {
    let mut allowed = vec![false; g.vertex_count()];
    for &v in sub {
        if mask[v as usize] {
            allowed[v as usize] = true;
        }
    }
    if !allowed[seed_v as usize] {
        return Vec::new();
    }
    let mut seen = vec![false; g.vertex_count()];
    let mut stack = vec![seed_v];
    let mut out = Vec::new();
    seen[seed_v as usize] = true;
    while let Some(v) = stack.pop() {
        out.push(v);
        for &w in g.neighbors(v) {
            if allowed[w as usize] && !seen[w as usize] {
                seen[w as usize] = true;
                stack.push(w);
            }
        }
    }
    out.sort_unstable();
    out
}

/// Random connected subset of `within` grown from `seed_v` to `target` size.
fn random_connected_subset(
    g: &CarpetGraph,
    seed_v: u32,
    target: usize,
    within: &[u32],
    rng: &mut ChaCha8Rng,
) -> Vec<u32> {
    let mut allowed = vec![false; g.vertex_count()];
    for &v in within {
        allowed[v as usize] = true;
    }
    let mut chosen = vec![false; g.vertex_count()];
    let mut out = vec![seed_v];
    chosen[seed_v as usize] = true;
    let mut frontier: Vec<u32> = g
        .neighbors(seed_v)
        .iter()
        .copied()
        .filter(|&w| allowed[w as usize])
        .collect();
    while out.len() < target && !frontier.is_empty() {
        let i = rng.gen_range(0..frontier.len());
        let v = frontier.swap_remove(i);
        if chosen[v as usize] {
            continue;
        }
        chosen[v as usize] = true;
        out.push(v);
        for &w in g.neighbors(v) {
            if allowed[w as usize] && !chosen[w as usize] {
                frontier.push(w);
            }
        }
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CacciopoliReport {
    pub max_ratio: f64,
    pub theta: f64,
    /// K = sup |k'| of the time ramp k(t) = min(1, 2t/T).
    pub k_const: f64,
    pub trials: usize,
    pub ratios: Vec<f64>,
}

/// Energy-vs-mass control for caloric functions: evolve random nonnegative
/// data under the semigroup killed outside B(x0,R), truncate at `level`,
/// and compare
///
/// ```text
/// sum v(T)^2 eta(T)^2 m + (2/9) int_0^T E(eta v) dt
///   vs  2((20/9) theta + K) int_0^T sum_B v^2 m dt
/// ```
///
/// with eta(x,t) = phi(x) k(t), phi a linear cutoff for B(x0,R-r) in
/// B(x0,R) whose theta is measured first. Reports the worst ratio.
pub fn cacciopoli_check(
    df: &DirichletForm,
    g: &CarpetGraph,
    x0: u32,
    big_r: f64,
    r: f64,
    horizon: f64,
    level: f64,
    trials: usize,
    seed: u64,
) -> Result<CacciopoliReport> {
    if !(big_r > r) {
        return Err(Error::invalid("cacciopoli_check: need R > r"));
    }
    if !(horizon > 0.0) || trials == 0 {
        return Err(Error::invalid("cacciopoli_check: need horizon > 0 and trials >= 1"));
    }
    let phi = cutoff_linear(g, x0, big_r - r, r)?;
    let family = default_test_family(df, g, &phi, r * r / 10.0, seed)?;
    let theta = csd_theta(df, &phi, &family)?.theta_star;

    let t1 = horizon / 2.0;
    let k_const = 1.0 / t1;
    let ramp = |t: f64| (t / t1).min(1.0);

    let (ball, _) = g.ball(x0, big_r)?;
    let dom = df.domain(&ball)?;
    let n = df.vertex_count();
    let m = df.measure();
    let steps = 64usize;
    let h = horizon / steps as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(100);
    let mut ratios = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut u0 = vec![0.0; n];
        for &v in &ball {
            u0[v as usize] = rng.gen_range(0.0..1.0);
        }
        let sys = df.killed_system(&dom);
        let mut evo = crate::form::HeatEvolver::start(sys, &u0)?;

        let mut energy_term = vec![0.0; steps + 1];
        let mut mass_term = vec![0.0; steps + 1];
        let mut final_term = 0.0;
        for j in 0..=steps {
            let t = h * j as f64;
            evo.advance_to(t, 1e-9)?;
            let u = evo.field(n);
            let k = ramp(t);
            let w: VertexField = (0..n)
                .map(|x| phi.values[x] * k * (u[x] - level).max(0.0))
                .collect();
            let (e_w, _) = df.energy_and_measure(&w)?;
            energy_term[j] = e_w;
            mass_term[j] = ball
                .iter()
                .map(|&v| {
                    let d = (u[v as usize] - level).max(0.0);
                    d * d * m[v as usize]
                })
                .sum();
            if j == steps {
                final_term = ball
                    .iter()
                    .map(|&v| {
                        let x = v as usize;
                        let d = (u[x] - level).max(0.0);
                        let e = phi.values[x] * k;
                        d * d * e * e * m[x]
                    })
                    .sum();
            }
        }
        let lhs = final_term + (2.0 / 9.0) * simpson(&energy_term, h);
        let rhs = 2.0 * ((20.0 / 9.0) * theta + k_const) * simpson(&mass_term, h);
        let ratio = if rhs > 0.0 {
            lhs / rhs
        } else if lhs > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        ratios.push(ratio);
    }
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(CacciopoliReport { max_ratio, theta, k_const, trials, ratios })
}

/// Composite Simpson rule over equally spaced samples (even interval count).
fn simpson(f: &[f64], h: f64) -> f64 {
    let n = f.len() - 1;
    assert!(n >= 2 && n % 2 == 0, "simpson needs an even interval count");
    let mut s = f[0] + f[n];
    for (j, &v) in f.iter().enumerate().take(n).skip(1) {
        s += if j % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub c_factor: f64,
    /// Worst relative escape of the perturbed energy density from the
    /// two-sided C-sandwich, over the family (0 when the sandwich is exact).
    pub gamma_sandwich_max_violation: f64,
    pub c1_grid: Vec<f64>,
    /// Measured c2(c1) on the base form.
    pub c2_base: Vec<f64>,
    /// Measured c2'(C^2 c1) on the perturbed form.
    pub c2_perturbed: Vec<f64>,
    /// max over the grid of c2'(C^2 c1) / (C c2(c1)); at most 1 in theory.
    pub max_c2_ratio: f64,
}

/// Measured weak constant: smallest c2 with
/// sum_U f^2 dGamma(phi,phi) <= c1 sum_U phi^2 dGamma(f,f) + c2/Psi(r) sum_U f^2 dm
/// over the family.
fn weak_c2(
    df: &DirichletForm,
    phi: &CutoffFn,
    family: &[VertexField],
    c1: f64,
    psi_r: f64,
) -> Result<f64> {
    let u_set = phi.annulus();
    if u_set.is_empty() {
        return Err(Error::invalid("weak_c2: empty annulus"));
    }
    let (_, gamma_phi) = df.energy_and_measure(&phi.values)?;
    let m = df.measure();
    let mut c2: f64 = 0.0;
    for f in family {
        let (_, gamma_f) = df.energy_and_measure(f)?;
        let mut lhs = 0.0;
        let mut grad = 0.0;
        let mut mass = 0.0;
        for &v in &u_set {
            let x = v as usize;
            lhs += f[x] * f[x] * gamma_phi[x];
            grad += phi.values[x] * phi.values[x] * gamma_f[x];
            mass += f[x] * f[x] * m[x];
        }
        if mass <= 0.0 {
            continue;
        }
        c2 = c2.max((lhs - c1 * grad).max(0.0) * psi_r / mass);
    }
    Ok(c2)
}

/// Conductance-perturbation stability: per-edge factors within [1/C, C]
/// sandwich the energy density exactly, and the measured weak constants
/// move by at most (C^2, C).
pub fn stability_check(
    df: &DirichletForm,
    sf: &ScalingFunction,
    factors: &[f64],
    c_factor: f64,
    phi: &CutoffFn,
    family: &[VertexField],
) -> Result<StabilityReport> {
    if !(c_factor >= 1.0) {
        return Err(Error::invalid("stability_check: C must be >= 1"));
    }
    let tol = 1e-9;
    if factors
        .iter()
        .any(|&f| !(f >= 1.0 / c_factor * (1.0 - tol) && f <= c_factor * (1.0 + tol)))
    {
        return Err(Error::invalid("stability_check: factor outside [1/C, C]"));
    }
    let df2 = df.perturbed(factors)?;

    let mut sandwich: f64 = 0.0;
    for f in family {
        let (_, g1) = df.energy_and_measure(f)?;
        let (_, g2) = df2.energy_and_measure(f)?;
        for x in 0..g1.len() {
            let lo = g1[x] / c_factor;
            let hi = g1[x] * c_factor;
            let scale = g1[x].max(g2[x]).max(1e-300);
            sandwich = sandwich.max((lo - g2[x]).max(0.0) / scale);
            sandwich = sandwich.max((g2[x] - hi).max(0.0) / scale);
        }
    }

    let psi_r = sf.psi(phi.width)?;
    let c1_grid = vec![0.0, 1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0];
    let mut c2_base = Vec::new();
    let mut c2_pert = Vec::new();
    let mut worst: f64 = 0.0;
    for &c1 in &c1_grid {
        let base = weak_c2(df, phi, family, c1, psi_r)?;
        let pert = weak_c2(&df2, phi, family, c1 * c_factor * c_factor, psi_r)?;
        if base > 0.0 {
            worst = worst.max(pert / (c_factor * base));
        } else if pert > 1e-12 {
            worst = f64::INFINITY;
        }
        c2_base.push(base);
        c2_pert.push(pert);
    }
    Ok(StabilityReport {
        c_factor,
        gamma_sandwich_max_violation: sandwich,
        c1_grid,
        c2_base,
        c2_perturbed: c2_pert,
        max_c2_ratio: worst,
    })
}
