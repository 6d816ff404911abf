//! Graph Dirichlet forms and their potential theory.
//!
//! A form is a weighted graph: conductances c_xy on edges, a measure m on
//! vertices. The energy and its density are
//!
//! ```text
//! E(f,f) = sum_{edges} c_xy (f(x) - f(y))^2,
//! Gamma(f,f)(x) = (1/2) sum_{y ~ x} c_xy (f(x) - f(y))^2,
//! ```
//!
//! and the generator acts by (Lf)(x) = m(x)^{-1} sum_y c_xy (f(y) - f(x)).
//! Killing outside a domain D keeps the full conductance row sums on the
//! diagonal (edges leaving D absorb), which is the Dirichlet restriction
//! L_D. All spectral work happens on the symmetrized operator
//! M^{1/2} (-L_D) M^{-1/2}, a positive semi-definite matrix.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::carpet::CarpetGraph;
use crate::linalg::csr::{CsrMatrix, DiagMinusCsr};
use crate::linalg::dense::{dense_expv, dense_smallest_eigenvalue};
use crate::linalg::expv::HeatAction;
use crate::linalg::lanczos::{smallest_eigenpairs, EigenPair};
use crate::linalg::cg_solve;
use crate::{Error, Result, VertexField};

/// Relative residual for resolvent / Green / exit-time linear solves.
const SOLVE_TOL: f64 = 1e-10;

/// Relative tolerance for the smallest Dirichlet eigenvalue.
const EIG_TOL: f64 = 1e-9;

const CG_MAX_ITER: usize = 400_000;

/// Weighted graph energy form.
#[derive(Debug, Clone)]
pub struct DirichletForm {
    n: usize,
    row_ptr: Vec<usize>,
    nbr: Vec<u32>,
    edge_of: Vec<u32>,
    edges: Vec<(u32, u32)>,
    conductance: Vec<f64>,
    measure: Vec<f64>,
}

/// Strict sub-domain of the vertex set, with local indexing.
#[derive(Debug, Clone)]
pub struct Domain {
    verts: Vec<u32>,
    /// Global id -> local index, -1 outside.
    pos: Vec<i32>,
}

impl Domain {
    pub fn vertices(&self) -> &[u32] {
        &self.verts
    }

    pub fn len(&self) -> usize {
        self.verts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verts.is_empty()
    }

    pub fn contains(&self, v: u32) -> bool {
        self.pos[v as usize] >= 0
    }

    pub fn local_index(&self, v: u32) -> Option<usize> {
        let p = self.pos[v as usize];
        (p >= 0).then_some(p as usize)
    }
}

/// Dirichlet restriction assembled for one domain: A = diag - C on local
/// indices, plus the symmetrized variant and the local measure.
pub struct KilledSystem {
    pub domain: Domain,
    /// A-form operator: full-degree diagonal minus in-domain couplings.
    a_op: DiagMinusCsr,
    /// Symmetrized couplings c / sqrt(m_x m_y) with diagonal deg/m.
    sym_op: DiagMinusCsr,
    m_local: Vec<f64>,
}

impl KilledSystem {
    pub fn measure(&self) -> &[f64] {
        &self.m_local
    }

    pub fn symmetrized(&self) -> &DiagMinusCsr {
        &self.sym_op
    }

    /// Operator for (shift * M + A) u = b systems.
    fn shifted(&self, shift: f64) -> DiagMinusCsr {
        let mut op = self.a_op.clone();
        for (d, m) in op.diag.iter_mut().zip(&self.m_local) {
            *d += shift * m;
        }
        op
    }

    /// True when no edge leaves the domain: the killed operator is then the
    /// reflecting generator and 0 is an eigenvalue.
    pub fn has_no_boundary(&self) -> bool {
        let mut rowsum = vec![0.0; self.m_local.len()];
        for i in 0..self.m_local.len() {
            for (_, v) in self.a_op.couplings.row(i) {
                rowsum[i] += v;
            }
        }
        rowsum
            .iter()
            .zip(&self.a_op.diag)
            .all(|(s, d)| (d - s).abs() <= 1e-12 * d.max(1.0))
    }
}

impl DirichletForm {
    /// Unit conductances and the graph's own measure.
    pub fn from_graph(g: &CarpetGraph) -> Self {
        let n = g.vertex_count();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut nbr = Vec::new();
        let mut edge_of = Vec::new();
        row_ptr.push(0);
        for v in 0..n as u32 {
            for (w, e) in g.incident(v) {
                nbr.push(w);
                edge_of.push(e);
            }
            row_ptr.push(nbr.len());
        }
        DirichletForm {
            n,
            row_ptr,
            nbr,
            edge_of,
            edges: g.edges().to_vec(),
            conductance: vec![1.0; g.edge_count()],
            measure: g.measure().to_vec(),
        }
    }

    /// Arbitrary weighted graph from an edge list.
    pub fn from_edges(
        n: usize,
        edges: &[(u32, u32)],
        conductance: Vec<f64>,
        measure: Vec<f64>,
    ) -> Result<Self> {
        if conductance.len() != edges.len() || measure.len() != n {
            return Err(Error::invalid("from_edges: length mismatch"));
        }
        if conductance.iter().any(|&c| !(c > 0.0)) || measure.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::invalid(
                "from_edges: conductances and measure must be positive",
            ));
        }
        let mut deg = vec![0usize; n];
        for &(u, v) in edges {
            if u as usize >= n || v as usize >= n || u == v {
                return Err(Error::invalid(format!("from_edges: bad edge ({u},{v})")));
            }
            deg[u as usize] += 1;
            deg[v as usize] += 1;
        }
        let mut row_ptr = vec![0usize; n + 1];
        for i in 0..n {
            row_ptr[i + 1] = row_ptr[i] + deg[i];
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
        Ok(DirichletForm {
            n,
            row_ptr,
            nbr,
            edge_of,
            edges: edges.to_vec(),
            conductance,
            measure,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn conductances(&self) -> &[f64] {
        &self.conductance
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn total_mass(&self) -> f64 {
        self.measure.iter().sum()
    }

    /// Same graph, new vertex measure.
    pub fn with_measure(&self, measure: Vec<f64>) -> Result<Self> {
        if measure.len() != self.n || measure.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::invalid("with_measure: need positive measure per vertex"));
        }
        let mut out = self.clone();
        out.measure = measure;
        Ok(out)
    }

    /// Same graph, conductances multiplied edge-wise by `factors`.
    pub fn perturbed(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.edges.len() {
            return Err(Error::invalid("perturbed: one factor per edge required"));
        }
        if factors.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::invalid("perturbed: factors must be positive"));
        }
        let mut out = self.clone();
        for (c, f) in out.conductance.iter_mut().zip(factors) {
            *c *= f;
        }
        Ok(out)
    }

    pub fn neighbors_of(&self, v: u32) -> impl Iterator<Item = (u32, f64)> + '_ {
        let lo = self.row_ptr[v as usize];
        let hi = self.row_ptr[v as usize + 1];
        (lo..hi).map(move |k| (self.nbr[k], self.conductance[self.edge_of[k] as usize]))
    }

    /// Hop distances from `from` over the conductance graph; `u32::MAX`
    /// marks unreachable vertices.
    pub fn graph_distances(&self, from: u32) -> Result<Vec<u32>> {
        if from as usize >= self.n {
            return Err(Error::invalid("graph_distances: vertex out of range"));
        }
        let mut dist = vec![u32::MAX; self.n];
        let mut queue = VecDeque::new();
        dist[from as usize] = 0;
        queue.push_back(from);
        while let Some(v) = queue.pop_front() {
            let dv = dist[v as usize];
            for (w, _) in self.neighbors_of(v) {
                if dist[w as usize] == u32::MAX {
                    dist[w as usize] = dv + 1;
                    queue.push_back(w);
                }
            }
        }
        Ok(dist)
    }

    /// Closed hop-metric ball of radius floor(r): sorted vertex ids plus
    /// their total measure.
    pub fn metric_ball(&self, center: u32, r: f64) -> Result<(Vec<u32>, f64)> {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::invalid(format!("metric_ball: radius must be >= 0, got {r}")));
        }
        let dist = self.graph_distances(center)?;
        let cut = r.floor() as u32;
        let mut verts = Vec::new();
        let mut mass = 0.0;
        for (v, &d) in dist.iter().enumerate() {
            if d != u32::MAX && d <= cut {
                verts.push(v as u32);
                mass += self.measure[v];
            }
        }
        Ok((verts, mass))
    }

    /// Double-sweep BFS lower bound on the hop diameter.
    pub fn pseudo_diameter(&self) -> Result<u32> {
        if self.n == 0 {
            return Err(Error::invalid("pseudo_diameter: empty graph"));
        }
        let first = self.graph_distances(0)?;
        let mut far = 0u32;
        let mut best = 0u32;
        for (v, &d) in first.iter().enumerate() {
            if d != u32::MAX && d > best {
                best = d;
                far = v as u32;
            }
        }
        let second = self.graph_distances(far)?;
        Ok(second.iter().filter(|&&d| d != u32::MAX).copied().max().unwrap_or(0))
    }

    /// Energy E(f,f) and its vertex density Gamma(f,f).
    pub fn energy_and_measure(&self, f: &[f64]) -> Result<(f64, VertexField)> {
        if f.len() != self.n {
            return Err(Error::invalid("energy: field length mismatch"));
        }
        let mut gamma = vec![0.0; self.n];
        let mut energy = 0.0;
        for (e, &(u, v)) in self.edges.iter().enumerate() {
            let d = f[u as usize] - f[v as usize];
            let contrib = self.conductance[e] * d * d;
            energy += contrib;
            gamma[u as usize] += 0.5 * contrib;
            gamma[v as usize] += 0.5 * contrib;
        }
        Ok((energy, gamma))
    }

    /// Vertex density of the bilinear energy Gamma(u, v).
    pub fn gamma_bilinear(&self, u: &[f64], v: &[f64]) -> Result<VertexField> {
        if u.len() != self.n || v.len() != self.n {
            return Err(Error::invalid("gamma: field length mismatch"));
        }
        let mut gamma = vec![0.0; self.n];
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            let du = u[a as usize] - u[b as usize];
            let dv = v[a as usize] - v[b as usize];
            let contrib = 0.5 * self.conductance[e] * du * dv;
            gamma[a as usize] += contrib;
            gamma[b as usize] += contrib;
        }
        Ok(gamma)
    }

    /// Build a domain from a vertex list (sorted, deduplicated).
    pub fn domain(&self, verts: &[u32]) -> Result<Domain> {
        let mut vs = verts.to_vec();
        vs.sort_unstable();
        vs.dedup();
        if vs.iter().any(|&v| v as usize >= self.n) {
            return Err(Error::invalid("domain: vertex id out of range"));
        }
        let mut pos = vec![-1i32; self.n];
        for (i, &v) in vs.iter().enumerate() {
            pos[v as usize] = i as i32;
        }
        Ok(Domain { verts: vs, pos })
    }

    /// Domain covering every vertex (reflecting problems).
    pub fn full_domain(&self) -> Domain {
        let verts: Vec<u32> = (0..self.n as u32).collect();
        let pos: Vec<i32> = (0..self.n as i32).collect();
        Domain { verts, pos }
    }

    /// Assemble the killed operator pair for a domain.
    pub fn killed_system(&self, dom: &Domain) -> KilledSystem {
        let nd = dom.len();
        let mut diag_a = vec![0.0; nd];
        let mut m_local = vec![0.0; nd];
        let mut rows_a: Vec<Vec<(u32, f64)>> = vec![Vec::new(); nd];
        let mut rows_sym: Vec<Vec<(u32, f64)>> = vec![Vec::new(); nd];
        for (li, &v) in dom.verts.iter().enumerate() {
            let mv = self.measure[v as usize];
            m_local[li] = mv;
            let mut rowsum = 0.0;
            for (w, c) in self.neighbors_of(v) {
                rowsum += c;
                if let Some(lw) = dom.local_index(w) {
                    rows_a[li].push((lw as u32, c));
                    let mw = self.measure[w as usize];
                    rows_sym[li].push((lw as u32, c / (mv * mw).sqrt()));
                }
            }
            diag_a[li] = rowsum;
        }
        let diag_sym: Vec<f64> = diag_a.iter().zip(&m_local).map(|(d, m)| d / m).collect();
        KilledSystem {
            domain: dom.clone(),
            a_op: DiagMinusCsr { diag: diag_a, couplings: CsrMatrix::from_rows(&rows_a) },
            sym_op: DiagMinusCsr { diag: diag_sym, couplings: CsrMatrix::from_rows(&rows_sym) },
            m_local,
        }
    }

    fn checked_proper_domain(&self, dom: &Domain) -> Result<KilledSystem> {
        if dom.is_empty() {
            return Err(Error::invalid("domain is empty"));
        }
        let sys = self.killed_system(dom);
        if sys.has_no_boundary() {
            return Err(Error::invalid(
                "domain has no absorbing boundary (whole graph or isolated component)",
            ));
        }
        Ok(sys)
    }

    /// Smallest eigenvalue of the Dirichlet restriction on `dom`.
    pub fn lambda1_dirichlet(&self, dom: &Domain) -> Result<f64> {
        let sys = self.checked_proper_domain(dom)?;
        let pairs = smallest_eigenpairs(&sys.sym_op, 1, 96, EIG_TOL)?;
        Ok(pairs[0].value)
    }

    /// Dense oracle for `lambda1_dirichlet` (small domains only).
    pub fn lambda1_dense(&self, dom: &Domain) -> Result<f64> {
        let sys = self.checked_proper_domain(dom)?;
        Ok(dense_smallest_eigenvalue(&sys.sym_op))
    }

    /// Smallest `k` Dirichlet eigenpairs on `dom`, eigenvectors extended by
    /// zero to global fields.
    pub fn dirichlet_eigenpairs(&self, dom: &Domain, k: usize) -> Result<Vec<(f64, VertexField)>> {
        let sys = self.checked_proper_domain(dom)?;
        let m_cap = (dom.len()).min(96.max(4 * k));
        let pairs: Vec<EigenPair> = smallest_eigenpairs(&sys.sym_op, k, m_cap, 1e-6)?;
        Ok(pairs
            .into_iter()
            .map(|p| {
                let mut field = vec![0.0; self.n];
                for (li, &v) in dom.verts.iter().enumerate() {
                    // Undo the symmetrization so the field solves the
                    // generalized problem A f = lambda M f.
                    field[v as usize] = p.vector[li] / sys.m_local[li].sqrt();
                }
                (p.value, field)
            })
            .collect())
    }

    /// u = (lambda - L_D)^{-1} rhs, zero outside the domain.
    pub fn resolvent_solve(&self, dom: &Domain, lambda: f64, rhs: &[f64]) -> Result<VertexField> {
        if rhs.len() != self.n {
            return Err(Error::invalid("resolvent: rhs length mismatch"));
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::invalid(format!("resolvent: lambda must be >= 0, got {lambda}")));
        }
        let sys = if lambda > 0.0 {
            if dom.is_empty() {
                return Err(Error::invalid("domain is empty"));
            }
            self.killed_system(dom)
        } else {
            self.checked_proper_domain(dom)?
        };
        let b: Vec<f64> = dom
            .verts
            .iter()
            .enumerate()
            .map(|(li, &v)| sys.m_local[li] * rhs[v as usize])
            .collect();
        let op = sys.shifted(lambda);
        let (u_loc, _) = cg_solve(&op, &b, SOLVE_TOL, CG_MAX_ITER)?;
        let mut u = vec![0.0; self.n];
        for (li, &v) in dom.verts.iter().enumerate() {
            u[v as usize] = u_loc[li];
        }
        Ok(u)
    }

    /// Green column g_D(x0, .) = (-L_D)^{-1} (delta_{x0}/m(x0)), zero
    /// outside the domain.
    pub fn green_column(&self, dom: &Domain, x0: u32) -> Result<VertexField> {
        if !dom.contains(x0) {
            return Err(Error::invalid("green_column: source must lie in the domain"));
        }
        let mut rhs = vec![0.0; self.n];
        rhs[x0 as usize] = 1.0 / self.measure[x0 as usize];
        self.resolvent_solve(dom, 0.0, &rhs)
    }

    /// Mean exit time field: solves L_D u = -1 on the domain.
    pub fn exit_time_solve(&self, dom: &Domain) -> Result<VertexField> {
        self.resolvent_solve(dom, 0.0, &vec![1.0; self.n])
    }

    /// Harmonic extension: L u = 0 on the domain, u = `boundary_values` just
    /// outside it. Returns the extension on the domain and the boundary data
    /// elsewhere.
    pub fn harmonic_extension(&self, dom: &Domain, boundary_values: &[f64]) -> Result<VertexField> {
        if boundary_values.len() != self.n {
            return Err(Error::invalid("harmonic_extension: field length mismatch"));
        }
        let sys = self.checked_proper_domain(dom)?;
        let mut b = vec![0.0; dom.len()];
        for (li, &v) in dom.verts.iter().enumerate() {
            for (w, c) in self.neighbors_of(v) {
                if !dom.contains(w) {
                    b[li] += c * boundary_values[w as usize];
                }
            }
        }
        let (u_loc, _) = cg_solve(&sys.a_op, &b, SOLVE_TOL, CG_MAX_ITER)?;
        let mut out = boundary_values.to_vec();
        for (li, &v) in dom.verts.iter().enumerate() {
            out[v as usize] = u_loc[li];
        }
        Ok(out)
    }

    /// u(t) = e^{t L_D} f (heat semigroup, killed outside `dom` when given),
    /// max-norm error below `tol`.
    pub fn heat_apply(&self, dom: Option<&Domain>, t: f64, f: &[f64], tol: f64) -> Result<VertexField> {
        if f.len() != self.n {
            return Err(Error::invalid("heat_apply: field length mismatch"));
        }
        if !(tol > 0.0) {
            return Err(Error::invalid(format!("heat_apply: tol must be > 0, got {tol}")));
        }
        let full;
        let dom = match dom {
            Some(d) => d,
            None => {
                full = self.full_domain();
                &full
            }
        };
        if dom.is_empty() {
            return Err(Error::invalid("domain is empty"));
        }
        let sys = self.killed_system(dom);
        let mut evo = HeatEvolver::start(sys, f)?;
        evo.advance_to(t, tol)?;
        Ok(evo.field(self.n))
    }

    /// Heat kernel column p_t(x0, .) on the whole (reflecting) graph.
    pub fn heat_kernel_column(&self, x0: u32, t: f64, tol: f64) -> Result<VertexField> {
        if x0 as usize >= self.n {
            return Err(Error::invalid("heat_kernel_column: vertex out of range"));
        }
        let mut f = vec![0.0; self.n];
        f[x0 as usize] = 1.0 / self.measure[x0 as usize];
        self.heat_apply(None, t, &f, tol)
    }

    /// Dense oracle for the killed/reflecting semigroup (small graphs).
    pub fn heat_apply_dense(&self, dom: Option<&Domain>, t: f64, f: &[f64]) -> Result<VertexField> {
        let full;
        let dom = match dom {
            Some(d) => d,
            None => {
                full = self.full_domain();
                &full
            }
        };
        let sys = self.killed_system(dom);
        let v: Vec<f64> = dom
            .verts
            .iter()
            .enumerate()
            .map(|(li, &g)| f[g as usize] * sys.m_local[li].sqrt())
            .collect();
        let w = dense_expv(&sys.sym_op, t, &v);
        let mut out = vec![0.0; self.n];
        for (li, &g) in dom.verts.iter().enumerate() {
            out[g as usize] = w[li] / sys.m_local[li].sqrt();
        }
        Ok(out)
    }

    /// Monte Carlo mean exit time from the sub-domain `dom` started at
    /// `start`: (estimate, standard error). Oracle for `exit_time_solve`.
    pub fn exit_time_mc(
        &self,
        dom: &Domain,
        start: u32,
        walkers: usize,
        seed: u64,
    ) -> Result<(f64, f64)> {
        if walkers == 0 {
            return Err(Error::invalid("exit_time_mc: need at least one walker"));
        }
        if !dom.contains(start) {
            return Err(Error::invalid("exit_time_mc: start must lie in the domain"));
        }
        let sys = self.checked_proper_domain(dom)?;
        drop(sys);
        let times: Vec<f64> = (0..walkers)
            .into_par_iter()
            .map(|w| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(w as u64 + 1);
                let mut x = start;
                let mut t = 0.0f64;
                loop {
                    let rate: f64 =
                        self.neighbors_of(x).map(|(_, c)| c).sum::<f64>() / self.measure[x as usize];
                    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    t -= u.ln() / rate;
                    // Jump proportional to conductance.
                    let total: f64 = self.neighbors_of(x).map(|(_, c)| c).sum();
                    let mut pick = rng.gen_range(0.0..total);
                    let mut next = x;
                    for (y, c) in self.neighbors_of(x) {
                        if pick < c {
                            next = y;
                            break;
                        }
                        pick -= c;
                    }
                    if !dom.contains(next) {
                        return t;
                    }
                    x = next;
                }
            })
            .collect();
        let n = times.len() as f64;
        let mean = times.iter().sum::<f64>() / n;
        let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0);
        Ok((mean, (var / n).sqrt()))
    }
}

/// Sequential heat evolution: steps a field forward through increasing
/// times, reusing the evolved state (the total cost of a time sweep is one
/// pass to the largest time).
pub struct HeatEvolver {
    sys: KilledSystem,
    sigma: f64,
    /// State in the symmetrized coordinates w = M^{1/2} f.
    w: Vec<f64>,
    t: f64,
    sqrt_m: Vec<f64>,
}

impl HeatEvolver {
    pub fn start(sys: KilledSystem, f_global: &[f64]) -> Result<Self> {
        let sqrt_m: Vec<f64> = sys.m_local.iter().map(|m| m.sqrt()).collect();
        let w: Vec<f64> = sys
            .domain
            .verts
            .iter()
            .enumerate()
            .map(|(li, &g)| f_global[g as usize] * sqrt_m[li])
            .collect();
        let sigma = sys
            .sym_op
            .diag
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        Ok(HeatEvolver { sys, sigma, w, t: 0.0, sqrt_m })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Advance to absolute time `t` (monotone), with max-norm error of this
    /// step below `tol`.
    pub fn advance_to(&mut self, t: f64, tol: f64) -> Result<()> {
        if !t.is_finite() || t < self.t {
            return Err(Error::invalid(format!(
                "heat evolution is monotone in time: at {}, asked {t}",
                self.t
            )));
        }
        let dt = t - self.t;
        if dt == 0.0 {
            return Ok(());
        }
        // 2-norm budget in w-coordinates that guarantees the max-norm bound
        // after dividing by sqrt(m).
        let min_sqrt_m = self.sqrt_m.iter().cloned().fold(f64::INFINITY, f64::min);
        let wnorm = crate::linalg::norm2(&self.w);
        if wnorm > 0.0 {
            let rel = (tol * min_sqrt_m / wnorm).min(0.49);
            let ha = HeatAction::with_sigma(&self.sys.sym_op, self.sigma);
            self.w = ha.apply(dt, &self.w, rel)?;
        }
        self.t = t;
        Ok(())
    }

    /// Current field in the original coordinates, extended by zero.
    pub fn field(&self, n_global: usize) -> VertexField {
        let mut out = vec![0.0; n_global];
        for (li, &g) in self.sys.domain.verts.iter().enumerate() {
            out[g as usize] = self.w[li] / self.sqrt_m[li];
        }
        out
    }

    /// Current value at a single global vertex (0 outside the domain).
    pub fn value_at(&self, v: u32) -> f64 {
        match self.sys.domain.local_index(v) {
            Some(li) => self.w[li] / self.sqrt_m[li],
            None => 0.0,
        }
    }

    /// Mass integral of the current field against the domain measure.
    pub fn mass(&self) -> f64 {
        self.sys
            .domain
            .verts
            .iter()
            .enumerate()
            .map(|(li, _)| self.w[li] * self.sqrt_m[li])
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carpet::{build_precarpet, CarpetSpec};
    use proptest::prelude::*;
    use rand::Rng;

    /// Path with `interior` interior vertices and absorbing endpoints,
    /// realized as interior + 2 boundary vertices.
    fn path_form(interior: usize) -> (DirichletForm, Vec<u32>) {
        let n = interior + 2;
        let edges: Vec<(u32, u32)> = (0..n - 1).map(|i| (i as u32, i as u32 + 1)).collect();
        let df =
            DirichletForm::from_edges(n, &edges, vec![1.0; n - 1], vec![1.0; n]).unwrap();
        let dom: Vec<u32> = (1..=interior as u32).collect();
        (df, dom)
    }

    #[test]
    fn energy_basics() {
        let df = DirichletForm::from_edges(2, &[(0, 1)], vec![1.0], vec![1.0, 1.0]).unwrap();
        let (e, gamma) = df.energy_and_measure(&[0.0, 1.0]).unwrap();
        assert_eq!(e, 1.0);
        assert_eq!(gamma, vec![0.5, 0.5]);
        // Constants have zero energy; energy is shift-invariant.
        let (e0, g0) = df.energy_and_measure(&[3.0, 3.0]).unwrap();
        assert_eq!(e0, 0.0);
        assert!(g0.iter().all(|&x| x == 0.0));
        let (e1, _) = df.energy_and_measure(&[10.0, 11.0]).unwrap();
        assert_eq!(e1, 1.0);
    }

    #[test]
    fn lambda1_examples() {
        // Single interior vertex of degree k: lambda_1 = k.
        let (df, dom) = path_form(1);
        let d = df.domain(&dom).unwrap();
        assert!((df.lambda1_dirichlet(&d).unwrap() - 2.0).abs() < 1e-9);

        // Two interior vertices: smallest eigenvalue of [[2,-1],[-1,2]] = 1.
        let (df2, dom2) = path_form(2);
        let d2 = df2.domain(&dom2).unwrap();
        assert!((df2.lambda1_dirichlet(&d2).unwrap() - 1.0).abs() < 1e-9);

        // Rejects the boundaryless full domain.
        let full: Vec<u32> = (0..4).collect();
        let d_all = df2.domain(&full).unwrap();
        assert!(df2.lambda1_dirichlet(&d_all).is_err());
    }

    #[test]
    fn lambda1_domain_monotone() {
        // Bigger domain, smaller ground eigenvalue.
        let (df, _) = path_form(6);
        let small = df.domain(&[2, 3, 4]).unwrap();
        let big = df.domain(&[1, 2, 3, 4, 5, 6]).unwrap();
        let l_small = df.lambda1_dirichlet(&small).unwrap();
        let l_big = df.lambda1_dirichlet(&big).unwrap();
        assert!(l_big < l_small);
    }

    #[test]
    fn lambda1_matches_dense_on_carpet_ball() {
        let g = build_precarpet(&CarpetSpec::new(2, 3).unwrap(), None).unwrap();
        let df = DirichletForm::from_graph(&g);
        let (ball, _) = g.ball(g.origin(), 6.0).unwrap();
        let dom = df.domain(&ball).unwrap();
        let fast = df.lambda1_dirichlet(&dom).unwrap();
        let exact = df.lambda1_dense(&dom).unwrap();
        assert!(
            (fast - exact).abs() <= 1e-8 * exact.abs().max(1.0),
            "lanczos {fast} vs dense {exact}"
        );
    }

    #[test]
    fn resolvent_examples() {
        // Single interior vertex of degree k = 2, lambda = 1, rhs = 1:
        // (1 + 2) u = 1.
        let (df, dom) = path_form(1);
        let d = df.domain(&dom).unwrap();
        let u = df.resolvent_solve(&d, 1.0, &vec![1.0; 3]).unwrap();
        assert!((u[1] - 1.0 / 3.0).abs() < 1e-10);
        assert_eq!(u[0], 0.0);
        assert_eq!(u[2], 0.0);

        // Zero rhs gives the zero field.
        let z = df.resolvent_solve(&d, 2.0, &vec![0.0; 3]).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));

        // Indicator rhs stays within [0, 1/lambda].
        let (df6, dom6) = path_form(6);
        let d6 = df6.domain(&dom6).unwrap();
        let lam = 0.7;
        let u6 = df6.resolvent_solve(&d6, lam, &vec![1.0; 8]).unwrap();
        for &v in &u6 {
            assert!(v >= -1e-12 && v <= 1.0 / lam + 1e-12);
        }
    }

    #[test]
    fn exit_time_examples() {
        // Single interior vertex of degree 2: E tau = 1/2.
        let (df, dom) = path_form(1);
        let d = df.domain(&dom).unwrap();
        let u = df.exit_time_solve(&d).unwrap();
        assert!((u[1] - 0.5).abs() < 1e-10);

        // Domain monotonicity of exit times.
        let (df6, _) = path_form(6);
        let small = df6.domain(&[2, 3]).unwrap();
        let big = df6.domain(&[1, 2, 3, 4]).unwrap();
        let us = df6.exit_time_solve(&small).unwrap();
        let ub = df6.exit_time_solve(&big).unwrap();
        assert!(ub[2] > us[2]);
    }

    #[test]
    fn exit_time_matches_monte_carlo() {
        let (df, dom) = path_form(3);
        let d = df.domain(&dom).unwrap();
        let exact = df.exit_time_solve(&d).unwrap()[2];
        let (mc, se) = df.exit_time_mc(&d, 2, 20_000, 42).unwrap();
        assert!(
            (mc - exact).abs() <= 3.0 * se,
            "mc {mc} +- {se} vs exact {exact}"
        );
    }

    #[test]
    fn heat_two_vertex_closed_form() {
        let df = DirichletForm::from_edges(2, &[(0, 1)], vec![1.0], vec![1.0, 1.0]).unwrap();
        for &t in &[0.0, 0.3, 2.0] {
            let u = df.heat_apply(None, t, &[1.0, 0.0], 1e-11).unwrap();
            let e = (-2.0 * t).exp();
            assert!((u[0] - 0.5 * (1.0 + e)).abs() < 1e-10);
            assert!((u[1] - 0.5 * (1.0 - e)).abs() < 1e-10);
        }
        // t = 0 is the identity, bad tolerance is rejected.
        let u0 = df.heat_apply(None, 0.0, &[0.25, -0.5], 1e-9).unwrap();
        assert_eq!(u0, vec![0.25, -0.5]);
        assert!(df.heat_apply(None, 1.0, &[1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn heat_conserves_mass_and_matches_dense() {
        let g = build_precarpet(&CarpetSpec::new(2, 2).unwrap(), None).unwrap();
        let df = DirichletForm::from_graph(&g);
        let mut f = vec![0.0; df.vertex_count()];
        f[g.origin() as usize] = 1.0;
        let t = 3.7;
        let u = df.heat_apply(None, t, &f, 1e-10).unwrap();
        let dense = df.heat_apply_dense(None, t, &f).unwrap();
        let err = u
            .iter()
            .zip(&dense)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "max err {err}");
        let mass: f64 = u.iter().zip(df.measure()).map(|(u, m)| u * m).sum();
        assert!((mass - 1.0).abs() < 1e-9, "mass {mass}");
        // Markov property: evolution of an indicator stays in [0, 1].
        assert!(u.iter().all(|&x| (-1e-10..=1.0 + 1e-10).contains(&x)));
    }

    #[test]
    fn heat_kernel_column_properties() {
        let g = build_precarpet(&CarpetSpec::new(2, 2).unwrap(), None).unwrap();
        let df = DirichletForm::from_graph(&g);
        let x0 = g.origin();
        let x1 = 17u32;
        let t = 2.5;
        let col0 = df.heat_kernel_column(x0, t, 1e-10).unwrap();
        let col1 = df.heat_kernel_column(x1, t, 1e-10).unwrap();
        // Symmetry p_t(x0, x1) = p_t(x1, x0).
        assert!((col0[x1 as usize] - col1[x0 as usize]).abs() < 1e-8);
        // Conservation: integral against m is 1.
        let mass: f64 = col0.iter().zip(df.measure()).map(|(p, m)| p * m).sum();
        assert!((mass - 1.0).abs() < 1e-8);
        // Chapman-Kolmogorov on the diagonal.
        let col_2t = df.heat_kernel_column(x0, 2.0 * t, 1e-10).unwrap();
        let recomposed: f64 = col0
            .iter()
            .zip(df.measure())
            .map(|(p, m)| p * p * m)
            .sum();
        assert!(
            (col_2t[x0 as usize] - recomposed).abs() < 1e-8,
            "{} vs {recomposed}",
            col_2t[x0 as usize]
        );
    }

    #[test]
    fn green_column_properties() {
        let (df, dom) = path_form(5);
        let d_small = df.domain(&dom[1..4].to_vec()).unwrap();
        let d_big = df.domain(&dom).unwrap();
        let x0 = 3u32;
        let g_small = df.green_column(&d_small, x0).unwrap();
        let g_big = df.green_column(&d_big, x0).unwrap();
        for v in 0..df.vertex_count() {
            assert!(g_big[v] + 1e-12 >= g_small[v], "green not monotone at {v}");
        }
        // Symmetry g(x, y) m-weights: g_D(x,y) = g_D(y,x) for m = 1.
        let g_from_2 = df.green_column(&d_big, 2).unwrap();
        assert!((g_from_2[x0 as usize] - g_big[2]).abs() < 1e-9);
        // Zero outside.
        assert_eq!(g_small[0], 0.0);
        assert!(df.green_column(&d_small, 0).is_err());
    }

    #[test]
    fn generator_identity_energy() {
        // E(f, g) = -<L f, g>_m, via the killed system on the full domain
        // of a reflecting two-cell graph plus a carpet patch.
        let g = build_precarpet(&CarpetSpec::new(2, 1).unwrap(), None).unwrap();
        let df = DirichletForm::from_graph(&g);
        let n = df.vertex_count();
        let f: Vec<f64> = (0..n).map(|i| ((i * 13 + 5) % 7) as f64).collect();
        let h: Vec<f64> = (0..n).map(|i| ((i * 5 + 1) % 11) as f64).collect();
        let gamma = df.gamma_bilinear(&f, &h).unwrap();
        let e_bilinear: f64 = gamma.iter().sum();
        // Independent route through the quadratic form polarization.
        let (e_fh, _) = df
            .energy_and_measure(&f.iter().zip(&h).map(|(a, b)| a + b).collect::<Vec<_>>())
            .unwrap();
        let (e_f, _) = df.energy_and_measure(&f).unwrap();
        let (e_h, _) = df.energy_and_measure(&h).unwrap();
        assert!((e_bilinear - 0.5 * (e_fh - e_f - e_h)).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn semigroup_contracts_and_respects_cauchy_schwarz(
            seed in 0u64..1000, t in 0.01f64..5.0, lam_idx in 0usize..3)
        {
            let g = build_precarpet(&CarpetSpec::new(2, 1).unwrap(), None).unwrap();
            let df = DirichletForm::from_graph(&g);
            let n = df.vertex_count();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u = df.heat_apply(None, t, &f, 1e-11).unwrap();
            let norm = |v: &[f64]| -> f64 {
                v.iter().zip(df.measure()).map(|(x, m)| x * x * m).sum::<f64>().sqrt()
            };
            prop_assert!(norm(&u) <= norm(&f) + 1e-9);

            // Gamma Cauchy-Schwarz with weights, for a few lambda values:
            // |sum f g Gamma(u,v)| <= (1/2l) sum f^2 Gamma(u) + (l/2) sum g^2 Gamma(v).
            let lam = [0.5, 1.0, 2.0][lam_idx];
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wf: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wg: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let guv = df.gamma_bilinear(&u, &v).unwrap();
            let (_, guu) = df.energy_and_measure(&u).unwrap();
            let (_, gvv) = df.energy_and_measure(&v).unwrap();
            let lhs: f64 = (0..n).map(|i| wf[i] * wg[i] * guv[i]).sum();
            let rhs: f64 = (0..n)
                .map(|i| wf[i] * wf[i] * guu[i] / (2.0 * lam) + lam * wg[i] * wg[i] * gvv[i] / 2.0)
                .sum();
            prop_assert!(lhs.abs() <= rhs + 1e-9, "{lhs} vs {rhs}");
        }
    }
}
