//! Generation-`n` pre-carpet lattices.
//!
//! The model space starts from the unit cube, repeatedly subdivides every
//! remaining cube into 3^d children and discards the central one, then
//! rescales so cells are unit cubes with integer corners. A cell with
//! lower corner `c` in [0, 3^n)^d survives iff at no digit level are all
//! base-3 digits of its coordinates simultaneously 1. Cells are vertices;
//! two cells are adjacent iff they share a (d-1)-face, i.e. their corners
//! differ by 1 in exactly one coordinate. Generation n in dimension d has
//! exactly (3^d - 1)^n cells.
//!
//! Cell sets nest across generations: restricting the generation-N lattice
//! to coordinates below 3^n reproduces generation n with identical
//! adjacency, which lets callers sweep truncations on a single graph.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{Error, Result};

/// Default ceiling on the number of cells a single build may produce.
pub const DEFAULT_CELL_BUDGET: u64 = 2_000_000;

/// Requested carpet lattice: dimension d >= 2 and subdivision depth n >= 0.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CarpetSpec {
    pub dim: u32,
    pub generations: u32,
}

impl CarpetSpec {
    pub fn new(dim: u32, generations: u32) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid(format!("carpet dimension must be >= 2, got {dim}")));
        }
        if generations > 19 {
            return Err(Error::invalid(format!(
                "generation {generations} overflows coordinate arithmetic"
            )));
        }
        Ok(CarpetSpec { dim, generations })
    }

    /// Number of cells each cube splits into, minus the removed centre.
    pub fn branching(&self) -> u64 {
        3u64.pow(self.dim) - 1
    }

    /// Exact cell count (3^d - 1)^n, if it fits in u64.
    pub fn cell_count(&self) -> Result<u64> {
        let mut acc: u128 = 1;
        for _ in 0..self.generations {
            acc *= self.branching() as u128;
            if acc > u64::MAX as u128 {
                return Err(Error::invalid("cell count overflows u64"));
            }
        }
        Ok(acc as u64)
    }

    /// Mass-scaling (fractal) dimension log(3^d - 1) / log 3.
    pub fn fractal_dimension(&self) -> f64 {
        (self.branching() as f64).ln() / 3.0_f64.ln()
    }
}

/// Membership test for a single cell, given by its lower-corner coordinates.
///
/// Rejects coordinates outside [0, 3^n)^d or of the wrong arity.
pub fn cell_in_carpet(spec: &CarpetSpec, coords: &[i64]) -> Result<bool> {
    if coords.len() != spec.dim as usize {
        return Err(Error::invalid(format!(
            "expected {} coordinates, got {}",
            spec.dim,
            coords.len()
        )));
    }
    let side = 3i64.pow(spec.generations);
    for &c in coords {
        if c < 0 || c >= side {
            return Err(Error::invalid(format!(
                "coordinate {c} out of range [0, {side})"
            )));
        }
    }
    let mut divisor = 1i64;
    for _level in 0..spec.generations {
        if coords.iter().all(|&c| (c / divisor) % 3 == 1) {
            return Ok(false);
        }
        divisor *= 3;
    }
    Ok(true)
}

/// Volume-doubling scan report: the worst ratio V(x, 2r) / V(x, r) seen.
#[derive(Debug, Clone, Serialize)]
pub struct VdReport {
    pub c_d_estimate: f64,
    pub samples: usize,
    pub radii: Vec<f64>,
}

/// The pre-carpet lattice at one generation.
#[derive(Debug, Clone)]
pub struct CarpetGraph {
    spec: CarpetSpec,
    side: i64,
    /// Lower corners, `dim` entries per cell, cells in lexicographic order.
    coords: Vec<i32>,
    row_ptr: Vec<usize>,
    nbr: Vec<u32>,
    /// Edge id parallel to `nbr`.
    edge_of: Vec<u32>,
    /// Undirected edges, smaller id first.
    edges: Vec<(u32, u32)>,
    measure: Vec<f64>,
    origin: u32,
}

impl CarpetGraph {
    pub fn spec(&self) -> &CarpetSpec {
        &self.spec
    }

    pub fn dim(&self) -> u32 {
        self.spec.dim
    }

    pub fn generations(&self) -> u32 {
        self.spec.generations
    }

    /// Cells per axis, 3^n.
    pub fn side(&self) -> i64 {
        self.side
    }

    pub fn vertex_count(&self) -> usize {
        self.measure.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn origin(&self) -> u32 {
        self.origin
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn coords_of(&self, v: u32) -> &[i32] {
        let d = self.spec.dim as usize;
        &self.coords[v as usize * d..(v as usize + 1) * d]
    }

    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.nbr[self.row_ptr[v as usize]..self.row_ptr[v as usize + 1]]
    }

    /// (neighbor, edge id) pairs of v.
    pub fn incident(&self, v: u32) -> impl Iterator<Item = (u32, u32)> + '_ {
        let lo = self.row_ptr[v as usize];
        let hi = self.row_ptr[v as usize + 1];
        (lo..hi).map(move |k| (self.nbr[k], self.edge_of[k]))
    }

    /// Vertex id of the cell with the given lower corner, if present.
    pub fn vertex_at(&self, coords: &[i64]) -> Option<u32> {
        if coords.len() != self.spec.dim as usize {
            return None;
        }
        if coords.iter().any(|&c| c < 0 || c >= self.side) {
            return None;
        }
        // Cells are stored in lexicographic order; binary search on coords.
        let d = self.spec.dim as usize;
        let target: Vec<i32> = coords.iter().map(|&c| c as i32).collect();
        let mut lo = 0usize;
        let mut hi = self.vertex_count();
        while lo < hi {
            let mid = (lo + hi) / 2;
            let mc = &self.coords[mid * d..(mid + 1) * d];
            // Lexicographic comparison, most significant axis last (matches
            // the build order: axis 0 varies fastest).
            let ord = mc
                .iter()
                .rev()
                .cmp(target.iter().rev());
            match ord {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return Some(mid as u32),
            }
        }
        None
    }

    /// BFS distances from `from`; u32::MAX marks unreachable vertices.
    pub fn bfs_distances(&self, from: u32) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.vertex_count()];
        let mut q = VecDeque::new();
        dist[from as usize] = 0;
        q.push_back(from);
        while let Some(v) = q.pop_front() {
            let dv = dist[v as usize];
            for &w in self.neighbors(v) {
                if dist[w as usize] == u32::MAX {
                    dist[w as usize] = dv + 1;
                    q.push_back(w);
                }
            }
        }
        dist
    }

    /// Closed ball of graph-distance radius floor(r): sorted vertex ids and
    /// total measure. Rejects negative radius.
    pub fn ball(&self, center: u32, r: f64) -> Result<(Vec<u32>, f64)> {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::invalid(format!("ball radius must be >= 0, got {r}")));
        }
        let cap = r.floor() as u32;
        let mut dist = vec![u32::MAX; self.vertex_count()];
        let mut q = VecDeque::new();
        let mut verts = Vec::new();
        let mut mass = 0.0;
        dist[center as usize] = 0;
        q.push_back(center);
        while let Some(v) = q.pop_front() {
            verts.push(v);
            mass += self.measure[v as usize];
            let dv = dist[v as usize];
            if dv == cap {
                continue;
            }
            for &w in self.neighbors(v) {
                if dist[w as usize] == u32::MAX {
                    dist[w as usize] = dv + 1;
                    q.push_back(w);
                }
            }
        }
        verts.sort_unstable();
        Ok((verts, mass))
    }

    /// Double-sweep BFS lower bound on the diameter (exact on trees, very
    /// tight on these lattices).
    pub fn pseudo_diameter(&self) -> u32 {
        let d0 = self.bfs_distances(self.origin);
        let far = d0
            .iter()
            .enumerate()
            .filter(|(_, d)| **d != u32::MAX)
            .max_by_key(|(_, d)| **d)
            .map(|(i, _)| i as u32)
            .unwrap_or(self.origin);
        let d1 = self.bfs_distances(far);
        d1.iter().filter(|d| **d != u32::MAX).max().copied().unwrap_or(0)
    }

    /// Worst volume-doubling ratio max V(x,2r)/V(x,r) over `samples` seeded
    /// (center, radius) draws. Radii at or beyond the diameter simply reach
    /// the whole graph and contribute ratio 1.
    pub fn vd_scan(&self, samples: usize, radii: &[f64], seed: u64) -> Result<VdReport> {
        if samples == 0 || radii.is_empty() {
            return Err(Error::invalid("vd_scan needs at least one sample and one radius"));
        }
        if radii.iter().any(|&r| !r.is_finite() || r < 1.0) {
            return Err(Error::invalid("vd_scan radii must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.vertex_count();
        let mut worst = 1.0f64;
        let mut used = 0usize;
        for _ in 0..samples {
            let x = rng.gen_range(0..n) as u32;
            let r = radii[rng.gen_range(0..radii.len())];
            let (_, small) = self.ball(x, r)?;
            let (_, big) = self.ball(x, 2.0 * r)?;
            if small > 0.0 {
                worst = worst.max(big / small);
                used += 1;
            }
        }
        Ok(VdReport { c_d_estimate: worst, samples: used, radii: radii.to_vec() })
    }

    /// Cumulative ball masses V(center, r) for each requested radius.
    pub fn ball_volume_profile(&self, center: u32, radii: &[f64]) -> Result<Vec<f64>> {
        if radii.iter().any(|&r| !r.is_finite() || r < 0.0) {
            return Err(Error::invalid("volume profile radii must be >= 0"));
        }
        let dist = self.bfs_distances(center);
        let mut out = Vec::with_capacity(radii.len());
        for &r in radii {
            let cap = r.floor() as u32;
            let mass: f64 = dist
                .iter()
                .zip(&self.measure)
                .filter(|(d, _)| **d != u32::MAX && **d <= cap)
                .map(|(_, m)| m)
                .sum();
            out.push(mass);
        }
        Ok(out)
    }

    /// Largest ratio of graph distance to sup-norm displacement over seeded
    /// vertex pairs; quantifies how far the lattice metric strays from the
    /// ambient one.
    pub fn metric_distortion_sample(&self, sources: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.vertex_count();
        let d = self.spec.dim as usize;
        let mut worst = 1.0f64;
        for _ in 0..sources.max(1) {
            let s = rng.gen_range(0..n) as u32;
            let dist = self.bfs_distances(s);
            let sc = self.coords_of(s).to_vec();
            for v in 0..n {
                let dv = dist[v];
                if dv == u32::MAX || dv == 0 {
                    continue;
                }
                let vc = &self.coords[v * d..(v + 1) * d];
                let linf = sc
                    .iter()
                    .zip(vc)
                    .map(|(a, b)| (a - b).abs())
                    .max()
                    .unwrap_or(0) as f64;
                if linf > 0.0 {
                    worst = worst.max(dv as f64 / linf);
                }
            }
        }
        worst
    }

    /// Write the edge list as CSV (`u,v` per line, vertex ids).
    pub fn write_adjacency_csv(&self, out: &mut dyn std::io::Write) -> std::io::Result<()> {
        writeln!(out, "u,v")?;
        for &(u, v) in &self.edges {
            writeln!(out, "{u},{v}")?;
        }
        Ok(())
    }
}

/// Build the generation-`n` lattice. Fails with `BudgetExceeded` when the
/// exact cell count (3^d - 1)^n would exceed `budget`.
pub fn build_precarpet(spec: &CarpetSpec, budget: Option<u64>) -> Result<CarpetGraph> {
    build_lattice(spec, budget, true)
}

/// Full 3^n x ... x 3^n block with no cells removed: the classical lattice
/// used as a comparison baseline (volume exponent d, walk exponent 2). Note
/// `spec.cell_count()` does not describe this graph; its vertex count is
/// 3^(d*n).
pub fn build_full_block(spec: &CarpetSpec, budget: Option<u64>) -> Result<CarpetGraph> {
    build_lattice(spec, budget, false)
}

fn build_lattice(spec: &CarpetSpec, budget: Option<u64>, holes: bool) -> Result<CarpetGraph> {
    let budget = budget.unwrap_or(DEFAULT_CELL_BUDGET);
    let expected = if holes {
        spec.cell_count()?
    } else {
        let full: u128 = (3u128.pow(spec.generations)).pow(spec.dim);
        u64::try_from(full).map_err(|_| Error::invalid("block too large to count"))?
    };
    if expected > budget {
        return Err(Error::BudgetExceeded { needed: expected, budget });
    }

    let n = spec.generations;
    let d = spec.dim as usize;
    let side = 3i64.pow(n);
    let scan: u64 = (side as u64).pow(spec.dim);

    // Per-axis digit masks: bit k set iff base-3 digit k equals 1. A cell
    // is removed iff the AND over its axes is non-zero.
    let mut digit_mask = vec![0u32; side as usize];
    for (v, m) in digit_mask.iter_mut().enumerate() {
        let mut x = v;
        for k in 0..n {
            if x % 3 == 1 {
                *m |= 1 << k;
            }
            x /= 3;
        }
    }
    let full_mask: u32 = if n == 0 { 0 } else { (1u32 << n) - 1 };

    // Pass 1: membership and id assignment in lexicographic (odometer) order.
    let mut rank = vec![-1i32; scan as usize];
    let mut coords: Vec<i32> = Vec::with_capacity(expected as usize * d);
    let mut odo = vec![0usize; d];
    let mut count: u32 = 0;
    for code in 0..scan as usize {
        let mut acc = if holes { full_mask } else { 0 };
        for &c in &odo {
            acc &= digit_mask[c];
            if acc == 0 {
                break;
            }
        }
        if acc == 0 {
            rank[code] = count as i32;
            for &c in &odo {
                coords.push(c as i32);
            }
            count += 1;
        }
        // Odometer increment, axis 0 fastest.
        for slot in odo.iter_mut() {
            *slot += 1;
            if *slot < side as usize {
                break;
            }
            *slot = 0;
        }
    }
    debug_assert_eq!(count as u64, expected);

    // Pass 2: adjacency along each axis. The negative-direction neighbor has
    // a smaller code, hence a smaller id: edges are discovered once.
    let nverts = count as usize;
    let mut strides = vec![1u64; d];
    for i in 1..d {
        strides[i] = strides[i - 1] * side as u64;
    }
    let mut edges: Vec<(u32, u32)> = Vec::new();
    let mut degree = vec![0u32; nverts];
    for v in 0..nverts {
        let base = &coords[v * d..(v + 1) * d];
        let code: u64 = base
            .iter()
            .enumerate()
            .map(|(i, &c)| c as u64 * strides[i])
            .sum();
        for axis in 0..d {
            if base[axis] > 0 {
                let u = rank[(code - strides[axis]) as usize];
                if u >= 0 {
                    edges.push((u as u32, v as u32));
                    degree[u as usize] += 1;
                    degree[v] += 1;
                }
            }
        }
    }

    let mut row_ptr = vec![0usize; nverts + 1];
    for v in 0..nverts {
        row_ptr[v + 1] = row_ptr[v] + degree[v] as usize;
    }
    let mut cursor = row_ptr.clone();
    let mut nbr = vec![0u32; edges.len() * 2];
    let mut edge_of = vec![0u32; edges.len() * 2];
    for (e, &(u, v)) in edges.iter().enumerate() {
        nbr[cursor[u as usize]] = v;
        edge_of[cursor[u as usize]] = e as u32;
        cursor[u as usize] += 1;
        nbr[cursor[v as usize]] = u;
        edge_of[cursor[v as usize]] = e as u32;
        cursor[v as usize] += 1;
    }

    let origin = rank[0];
    debug_assert!(origin >= 0, "the all-zero corner cell is always present");
    Ok(CarpetGraph {
        spec: *spec,
        side,
        coords,
        row_ptr,
        nbr,
        edge_of,
        edges,
        measure: vec![1.0; nverts],
        origin: origin as u32,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::HashSet;

    /// Independent construction by explicit subdivision: generation g cells
    /// are 3c + o over generation g-1 cells c and non-central offsets o.
    fn subdivision_cells(dim: usize, generations: u32) -> HashSet<Vec<i64>> {
        let mut cells: HashSet<Vec<i64>> = HashSet::new();
        cells.insert(vec![0; dim]);
        for _ in 0..generations {
            let mut next = HashSet::new();
            let offsets = 3usize.pow(dim as u32);
            for cell in &cells {
                for mut o in 0..offsets {
                    let mut child = Vec::with_capacity(dim);
                    let mut all_one = true;
                    for axis in 0..dim {
                        let digit = (o % 3) as i64;
                        o /= 3;
                        all_one &= digit == 1;
                        child.push(3 * cell[axis] + digit);
                    }
                    if !all_one {
                        next.insert(child);
                    }
                }
            }
            cells = next;
        }
        cells
    }

    #[test]
    fn membership_matches_subdivision_oracle() {
        for (d, n) in [(2u32, 0u32), (2, 1), (2, 2), (2, 3), (3, 1), (3, 2)] {
            let spec = CarpetSpec::new(d, n).unwrap();
            let oracle = subdivision_cells(d as usize, n);
            let side = 3i64.pow(n);
            let mut count = 0u64;
            let mut coords = vec![0i64; d as usize];
            loop {
                let member = cell_in_carpet(&spec, &coords).unwrap();
                assert_eq!(
                    member,
                    oracle.contains(&coords),
                    "membership mismatch at {coords:?} (d={d}, n={n})"
                );
                if member {
                    count += 1;
                }
                let mut axis = 0;
                loop {
                    coords[axis] += 1;
                    if coords[axis] < side {
                        break;
                    }
                    coords[axis] = 0;
                    axis += 1;
                    if axis == d as usize {
                        break;
                    }
                }
                if axis == d as usize {
                    break;
                }
            }
            assert_eq!(count, spec.cell_count().unwrap());
        }
    }

    #[test]
    fn membership_examples() {
        let d2n1 = CarpetSpec::new(2, 1).unwrap();
        assert!(!cell_in_carpet(&d2n1, &[1, 1]).unwrap());
        assert!(cell_in_carpet(&d2n1, &[0, 1]).unwrap());
        let d2n3 = CarpetSpec::new(2, 3).unwrap();
        assert!(cell_in_carpet(&d2n3, &[0, 0]).unwrap());
        let d2n2 = CarpetSpec::new(2, 2).unwrap();
        assert!(!cell_in_carpet(&d2n2, &[4, 4]).unwrap());
        // Level-2 middle block [3,6)^2 is removed even off its centre cell.
        assert!(!cell_in_carpet(&d2n2, &[3, 4]).unwrap());
        assert!(cell_in_carpet(&d2n2, &[3, 2]).unwrap());
        assert!(cell_in_carpet(&d2n2, &[1, 0]).unwrap());
        // Out-of-range and wrong-arity coordinates are rejected.
        assert!(cell_in_carpet(&d2n1, &[3, 0]).is_err());
        assert!(cell_in_carpet(&d2n1, &[-1, 0]).is_err());
        assert!(cell_in_carpet(&d2n1, &[0, 0, 0]).is_err());
    }

    #[test]
    fn cell_counts_match_formula() {
        for (d, n, want) in [
            (2u32, 0u32, 1u64),
            (2, 1, 8),
            (2, 2, 64),
            (2, 3, 512),
            (3, 1, 26),
            (3, 2, 676),
        ] {
            let spec = CarpetSpec::new(d, n).unwrap();
            let g = build_precarpet(&spec, None).unwrap();
            assert_eq!(g.vertex_count() as u64, want);
            assert_eq!(spec.cell_count().unwrap(), want);
        }
    }

    #[test]
    fn zero_generation_graph_is_one_cell() {
        let g = build_precarpet(&CarpetSpec::new(2, 0).unwrap(), None).unwrap();
        assert_eq!(g.vertex_count(), 1);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.origin(), 0);
    }

    #[test]
    fn budget_is_enforced() {
        let spec = CarpetSpec::new(2, 3).unwrap();
        match build_precarpet(&spec, Some(100)) {
            Err(Error::BudgetExceeded { needed, budget }) => {
                assert_eq!(needed, 512);
                assert_eq!(budget, 100);
            }
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn adjacency_is_symmetric_and_face_sharing() {
        let g = build_precarpet(&CarpetSpec::new(2, 3).unwrap(), None).unwrap();
        let d = g.dim() as usize;
        for v in 0..g.vertex_count() as u32 {
            for &w in g.neighbors(v) {
                assert!(g.neighbors(w).contains(&v), "asymmetric edge {v}-{w}");
                let diff: i32 = g
                    .coords_of(v)
                    .iter()
                    .zip(g.coords_of(w))
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                assert_eq!(diff, 1, "{v} and {w} do not share a face");
                assert_eq!(d, 2);
            }
        }
    }

    #[test]
    fn ball_examples() {
        let g = build_precarpet(&CarpetSpec::new(2, 2).unwrap(), None).unwrap();
        let (verts, mass) = g.ball(g.origin(), 0.0).unwrap();
        assert_eq!(verts, vec![g.origin()]);
        assert_eq!(mass, 1.0);
        // Corner cell has exactly two lattice neighbors.
        let (verts1, mass1) = g.ball(g.origin(), 1.0).unwrap();
        assert_eq!(verts1.len(), 3);
        assert_eq!(mass1, 3.0);
        assert!(g.ball(g.origin(), -0.5).is_err());
    }

    #[test]
    fn volume_growth_ratios_stay_in_doubling_band() {
        let g = build_precarpet(&CarpetSpec::new(2, 5).unwrap(), None).unwrap();
        let radii: Vec<f64> = (1..=4).map(|k| 3.0f64.powi(k)).collect();
        let vols = g.ball_volume_profile(g.origin(), &radii).unwrap();
        for k in 1..radii.len() {
            let ratio = vols[k] / vols[k - 1];
            assert!(
                (4.0..=16.0).contains(&ratio),
                "V(0,3^{}) / V(0,3^{}) = {ratio}",
                k + 1,
                k
            );
        }
    }

    #[test]
    fn vd_scan_degenerate_cases() {
        let single = build_precarpet(&CarpetSpec::new(2, 0).unwrap(), None).unwrap();
        let rep = single.vd_scan(5, &[1.0], 7).unwrap();
        assert_eq!(rep.c_d_estimate, 1.0);

        let g = build_precarpet(&CarpetSpec::new(2, 2).unwrap(), None).unwrap();
        let diam = g.pseudo_diameter() as f64;
        let rep = g.vd_scan(10, &[diam + 2.0], 7).unwrap();
        assert_eq!(rep.c_d_estimate, 1.0);
        assert!(g.vd_scan(0, &[2.0], 7).is_err());
        assert!(g.vd_scan(4, &[], 7).is_err());
    }

    #[test]
    fn vertex_lookup_round_trips() {
        let g = build_precarpet(&CarpetSpec::new(3, 2).unwrap(), None).unwrap();
        for v in 0..g.vertex_count() as u32 {
            let c: Vec<i64> = g.coords_of(v).iter().map(|&x| x as i64).collect();
            assert_eq!(g.vertex_at(&c), Some(v));
        }
        assert_eq!(g.vertex_at(&[4, 4, 4]), None);
        assert_eq!(g.vertex_at(&[99, 0, 0]), None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn graph_distance_dominates_sup_norm(seed in 0u64..5000) {
            let g = build_precarpet(&CarpetSpec::new(2, 3).unwrap(), None).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rng.gen_range(0..g.vertex_count()) as u32;
            let b = rng.gen_range(0..g.vertex_count()) as u32;
            let dist = g.bfs_distances(a)[b as usize];
            prop_assert!(dist != u32::MAX, "pre-carpet must be connected");
            let linf = g
                .coords_of(a)
                .iter()
                .zip(g.coords_of(b))
                .map(|(x, y)| (x - y).abs())
                .max()
                .unwrap() as u32;
            prop_assert!(dist >= linf);
        }
    }
}
