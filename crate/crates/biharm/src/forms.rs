//! The penalized bilinear form, the facet-jump lifting operator, the
//! generalized Hessian, and symmetric curls of continuous vector fields.
//!
//! The bilinear form on the broken degree-p space reads
//!
//! ```text
//! B(u,v) = (D2u, D2v) + ([u], {nu.div D2v}) - ([grad u], {nu^T D2v})
//!        + ([v], {nu.div D2u}) - ([grad v], {nu^T D2u})
//!        + c_sigma (h^-3 [u], [v]) + c_tau (h^-1 [grad u], [grad v])
//! ```
//!
//! with jumps relative to the facet's fixed normal. On boundary facets the
//! jumps of the trial function are shifted by the clamped data (u - g1,
//! grad u - g2 nu - (dtau g1) tau); the data parts are assembled into the
//! right-hand side, so the matrix is that of the homogeneous form. The
//! lifting operator represents the same facet terms volumetrically in the
//! degree-p tensor space, and the generalized Hessian is the broken Hessian
//! plus that lifting.

use crate::basis::{basis_dim, eval_basis, nodal_basis, BasisTables, NodalBasis};
use crate::field::{broken_hessian, DgField, Rank};
use crate::linalg::SparseSym;
use crate::mesh::Mesh;
use crate::problems::TestProblem;
use crate::quad::{quad_edge, quad_triangle, EdgeRule};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormsError {
    #[error("polynomial degree {0} rejected: the scheme needs p >= 2")]
    DegreeTooLow(usize),
    #[error("quadrature degree {given} insufficient for degree-{p} assembly (needs >= {needed})")]
    QuadratureTooLow { given: usize, p: usize, needed: usize },
    #[error("field does not match mesh or degree: {0}")]
    FieldMismatch(String),
    #[error("non-conforming coefficient vector: {0}")]
    NonConforming(String),
}

/// Stabilization parameters of the scheme.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyConfig {
    pub c_sigma: f64,
    pub c_tau: f64,
}

impl PenaltyConfig {
    /// The degree-scaled choices used in all experiments.
    pub fn degree_scaled(p: usize) -> PenaltyConfig {
        let pf = p as f64;
        PenaltyConfig {
            c_sigma: 3.0 * pf.powi(6),
            c_tau: 9.0 * pf.powi(2),
        }
    }
}

/// Clamped boundary data: trace g1, normal derivative g2, and the
/// tangential derivatives the boundary-modified jumps and estimator terms
/// need. Directions are passed in so implementations can evaluate exact
/// derivatives; all tangential quantities refer to the facet tangent.
pub trait ClampedData {
    fn g1(&self, x: f64, y: f64) -> f64;
    fn g2(&self, x: f64, y: f64, nu: [f64; 2]) -> f64;
    fn dtau_g1(&self, x: f64, y: f64, tau: [f64; 2]) -> f64;
    fn dtautau_g1(&self, x: f64, y: f64, tau: [f64; 2]) -> f64;
    fn dtau_g2(&self, x: f64, y: f64, nu: [f64; 2], tau: [f64; 2]) -> f64;
}

/// Homogeneous clamped conditions.
pub struct HomogeneousData;

impl ClampedData for HomogeneousData {
    fn g1(&self, _: f64, _: f64) -> f64 {
        0.0
    }
    fn g2(&self, _: f64, _: f64, _: [f64; 2]) -> f64 {
        0.0
    }
    fn dtau_g1(&self, _: f64, _: f64, _: [f64; 2]) -> f64 {
        0.0
    }
    fn dtautau_g1(&self, _: f64, _: f64, _: [f64; 2]) -> f64 {
        0.0
    }
    fn dtau_g2(&self, _: f64, _: f64, _: [f64; 2], _: [f64; 2]) -> f64 {
        0.0
    }
}

/// Boundary data taken from the analytic solution of a test problem; the
/// tangential derivatives come from the exact gradient and Hessian, not
/// from numerical differentiation along the facet.
pub struct ExactData<'a>(pub &'a TestProblem);

impl ClampedData for ExactData<'_> {
    fn g1(&self, x: f64, y: f64) -> f64 {
        self.0.u(x, y)
    }
    fn g2(&self, x: f64, y: f64, nu: [f64; 2]) -> f64 {
        let g = self.0.grad(x, y);
        nu[0] * g[0] + nu[1] * g[1]
    }
    fn dtau_g1(&self, x: f64, y: f64, tau: [f64; 2]) -> f64 {
        let g = self.0.grad(x, y);
        tau[0] * g[0] + tau[1] * g[1]
    }
    fn dtautau_g1(&self, x: f64, y: f64, tau: [f64; 2]) -> f64 {
        let h = self.0.hess(x, y);
        tau[0] * tau[0] * h[0] + 2.0 * tau[0] * tau[1] * h[1] + tau[1] * tau[1] * h[2]
    }
    fn dtau_g2(&self, x: f64, y: f64, nu: [f64; 2], tau: [f64; 2]) -> f64 {
        let h = self.0.hess(x, y);
        tau[0] * nu[0] * h[0] + (tau[0] * nu[1] + tau[1] * nu[0]) * h[1] + tau[1] * nu[1] * h[2]
    }
}

/// Compensated (Neumaier) accumulator. The assembled matrix feeds a solver
/// whose forward error scales with the condition number, so entry noise
/// must stay at the ulp level rather than growing with the quadrature
/// point count. The update sequence is identical under transposition of
/// the entry indices, which keeps the assembled matrix exactly symmetric.
#[derive(Clone, Copy, Default)]
struct Acc {
    s: f64,
    c: f64,
}

impl Acc {
    #[inline]
    fn add(&mut self, t: f64) {
        let s = self.s + t;
        self.c += if self.s.abs() >= t.abs() {
            (self.s - s) + t
        } else {
            (t - s) + self.s
        };
        self.s = s;
    }

    #[inline]
    fn value(self) -> f64 {
        self.s + self.c
    }

    /// accumulate a*b with the product's rounding error carried along
    #[inline]
    fn add_prod(&mut self, a: f64, b: f64) {
        let p = a * b;
        self.c += f64::mul_add(a, b, -p);
        self.add(p);
    }
}

/// Quadrature selection for assembly and facet integrals.
#[derive(Debug, Clone, Copy)]
pub struct AssemblyOpts {
    /// Added on top of the 2p+4 default exactness.
    pub quad_boost: usize,
    /// Explicit override of the volume/edge exactness; must be >= 2p.
    pub quad_degree: Option<usize>,
    /// Assemble the system in double-double arithmetic. The orthogonal
    /// basis makes many stiffness entries vanish by cancellation of large
    /// integrand values; on fine meshes the leftover f64 noise is amplified
    /// by the h^-4 conditioning into the solution. The precise path rounds
    /// each finished entry once.
    pub precise: bool,
}

impl Default for AssemblyOpts {
    fn default() -> Self {
        AssemblyOpts {
            quad_boost: 0,
            quad_degree: None,
            precise: false,
        }
    }
}

impl AssemblyOpts {
    pub fn degree_for(&self, p: usize) -> Result<usize, FormsError> {
        let needed = 2 * p;
        let deg = match self.quad_degree {
            Some(d) => d,
            None => 2 * p + 4 + self.quad_boost,
        };
        if deg < needed {
            return Err(FormsError::QuadratureTooLow {
                given: deg,
                p,
                needed,
            });
        }
        Ok(deg)
    }
}

/// Basis trace tables for the six (local edge, orientation) configurations
/// of facet quadrature points.
pub struct TraceTables {
    pub rule: EdgeRule,
    tables: Vec<BasisTables>,
}

impl TraceTables {
    pub fn build(p: usize, rule: &EdgeRule, max_deriv: usize) -> TraceTables {
        let mut tables = Vec::with_capacity(6);
        for le in 0..3 {
            for rev in 0..2 {
                let pts: Vec<[f64; 2]> = rule
                    .points
                    .iter()
                    .map(|&t| {
                        let s = if rev == 1 { 1.0 - t } else { t };
                        match le {
                            0 => [s, 0.0],
                            1 => [1.0 - s, s],
                            _ => [0.0, 1.0 - s],
                        }
                    })
                    .collect();
                tables.push(eval_basis(p, &pts, max_deriv).expect("trace tables"));
            }
        }
        TraceTables {
            rule: rule.clone(),
            tables,
        }
    }

    pub fn get(&self, local_edge: usize, reversed: bool) -> &BasisTables {
        &self.tables[local_edge * 2 + reversed as usize]
    }
}

/// Per-side basis data at the quadrature points of one facet, pushed to
/// physical coordinates: traces, gradients, nu^T D2 phi, and nu . div D2 phi.
pub struct SideEval {
    pub elem: usize,
    pub dim: usize,
    pub nq: usize,
    pub val: Vec<f64>,
    pub grad: Vec<[f64; 2]>,
    /// nu^T D2 phi (a 2-vector); filled when requested
    pub nu_hess: Vec<[f64; 2]>,
    /// nu . div D2 phi
    pub nu_div_hess: Vec<f64>,
}

pub fn side_eval(
    mesh: &Mesh,
    elem: usize,
    facet: usize,
    traces: &TraceTables,
    with_hess: bool,
) -> SideEval {
    let (le, rev) = mesh.local_edge(elem, facet);
    let tab = traces.get(le, rev);
    let map = mesh.affine_map(elem);
    let nu = mesh.facets[facet].normal;
    let dim = tab.dim;
    let nq = traces.rule.points.len();
    let mut out = SideEval {
        elem,
        dim,
        nq,
        val: vec![0.0; dim * nq],
        grad: vec![[0.0; 2]; dim * nq],
        nu_hess: if with_hess { vec![[0.0; 2]; dim * nq] } else { Vec::new() },
        nu_div_hess: if with_hess { vec![0.0; dim * nq] } else { Vec::new() },
    };
    for k in 0..dim {
        for q in 0..nq {
            let idx = k * nq + q;
            out.val[idx] = tab.val(k, q);
            out.grad[idx] = map.push_grad(tab.gr(k, q));
            if with_hess {
                let h = map.push_hess(tab.hs(k, q));
                out.nu_hess[idx] = [nu[0] * h[0] + nu[1] * h[1], nu[0] * h[1] + nu[1] * h[2]];
                let t = map.push_third(tab.th(k, q));
                // div D2 phi = (xxx + xyy, xxy + yyy)
                out.nu_div_hess[idx] = nu[0] * (t[0] + t[2]) + nu[1] * (t[1] + t[3]);
            }
        }
    }
    out
}

/// Physical quadrature points along a facet, ordered by the stored tangent.
pub fn facet_points(mesh: &Mesh, facet: usize, rule: &EdgeRule) -> Vec<[f64; 2]> {
    let f = &mesh.facets[facet];
    let a = mesh.vertices[f.verts[0]];
    let b = mesh.vertices[f.verts[1]];
    rule.points
        .iter()
        .map(|&t| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])])
        .collect()
}

/// Assemble the system of the scheme: the matrix of the homogeneous
/// bilinear form and the right-hand side carrying the load and all
/// boundary-data terms from the modified jumps.
pub fn assemble_system(
    mesh: &Mesh,
    p: usize,
    penalties: &PenaltyConfig,
    f: &dyn Fn(f64, f64) -> f64,
    bdata: &dyn ClampedData,
    opts: &AssemblyOpts,
) -> Result<(SparseSym, Vec<f64>), FormsError> {
    if p < 2 {
        return Err(FormsError::DegreeTooLow(p));
    }
    let qdeg = opts.degree_for(p)?;
    let dim = basis_dim(p);
    let n = mesh.n_elems() * dim;

    // sparsity: element block row = self + facet neighbors, sorted
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::with_capacity(4); mesh.n_elems()];
    for e in 0..mesh.n_elems() {
        neighbors[e].push(e);
    }
    for fct in &mesh.facets {
        if let [Some(a), Some(b)] = fct.elems {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
        list.dedup();
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0usize);
    for e in 0..mesh.n_elems() {
        let cols = neighbors[e].len() * dim;
        for _ in 0..dim {
            row_ptr.push(row_ptr.last().unwrap() + cols);
        }
    }
    let nnz = *row_ptr.last().unwrap();
    let mut col_idx = vec![0usize; nnz];
    for e in 0..mesh.n_elems() {
        for i in 0..dim {
            let start = row_ptr[e * dim + i];
            let mut ofs = 0;
            for &nb in &neighbors[e] {
                for j in 0..dim {
                    col_idx[start + ofs] = nb * dim + j;
                    ofs += 1;
                }
            }
        }
    }
    let mut values = vec![0.0; nnz];
    let mut rhs = vec![0.0; n];
    let mut values_lo = Vec::new();

    if opts.precise {
        values_lo = vec![0.0; nnz];
        fill_system_dd(
            mesh, p, penalties, f, bdata, qdeg, dim, &neighbors, &row_ptr, &mut values,
            &mut values_lo, &mut rhs,
        );
    } else {
        fill_system_f64(
            mesh, p, penalties, f, bdata, qdeg, dim, &neighbors, &row_ptr, &mut values, &mut rhs,
        );
    }

    Ok((
        SparseSym {
            n,
            row_ptr,
            col_idx,
            values,
            values_lo,
        },
        rhs,
    ))
}

/// Reference coordinates of edge-rule points on a local edge, optionally
/// walked against the facet's stored orientation.
fn trace_points(local_edge: usize, reversed: bool, rule: &EdgeRule) -> Vec<[f64; 2]> {
    rule.points
        .iter()
        .map(|&t| {
            let s = if reversed { 1.0 - t } else { t };
            match local_edge {
                0 => [s, 0.0],
                1 => [1.0 - s, s],
                _ => [0.0, 1.0 - s],
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn fill_system_f64(
    mesh: &Mesh,
    p: usize,
    penalties: &PenaltyConfig,
    f: &dyn Fn(f64, f64) -> f64,
    bdata: &dyn ClampedData,
    qdeg: usize,
    dim: usize,
    neighbors: &[Vec<usize>],
    row_ptr: &[usize],
    values: &mut [f64],
    rhs: &mut [f64],
) {
    let entry = |e: usize, i: usize, nb: usize, j: usize| -> usize {
        let pos = neighbors[e].binary_search(&nb).expect("neighbor block");
        row_ptr[e * dim + i] + pos * dim + j
    };

    // volume terms
    let tri_rule = quad_triangle(qdeg).expect("volume rule");
    let vtab = eval_basis(p, &tri_rule.points, 2).expect("volume tables");
    let nq = tri_rule.points.len();
    let mut hess_phys = vec![[0.0; 3]; dim * nq];
    for e in 0..mesh.n_elems() {
        let map = mesh.affine_map(e);
        let det = map.det;
        for k in 0..dim {
            for q in 0..nq {
                hess_phys[k * nq + q] = map.push_hess(vtab.hs(k, q));
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                let mut acc = Acc::default();
                for q in 0..nq {
                    let hi = hess_phys[i * nq + q];
                    let hj = hess_phys[j * nq + q];
                    acc.add(
                        tri_rule.weights[q] * (hi[0] * hj[0] + 2.0 * hi[1] * hj[1] + hi[2] * hj[2]),
                    );
                }
                values[entry(e, i, e, j)] += det * acc.value();
            }
        }
        for i in 0..dim {
            let mut acc = Acc::default();
            for q in 0..nq {
                let x = map.to_phys(tri_rule.points[q]);
                acc.add(tri_rule.weights[q] * f(x[0], x[1]) * vtab.val(i, q));
            }
            rhs[e * dim + i] += det * acc.value();
        }
    }

    // facet terms
    let edge_rule = quad_edge(qdeg).expect("edge rule");
    let traces = TraceTables::build(p, &edge_rule, 3);
    let enq = edge_rule.points.len();
    for (fid, fct) in mesh.facets.iter().enumerate() {
        let sides: Vec<usize> = fct.elems.iter().flatten().cloned().collect();
        let interior = sides.len() == 2;
        let avg = if interior { 0.5 } else { 1.0 };
        let h = fct.h_f;
        let nu = fct.normal;
        let tau = fct.tangent;
        let evals: Vec<SideEval> = sides
            .iter()
            .map(|&e| side_eval(mesh, e, fid, &traces, true))
            .collect();
        let sgn = |s: usize| if s == 0 { 1.0 } else { -1.0 };

        // consistency block M[(su,i),(sv,j)] = ([phi_i^su], avg nu.divD2 phi_j^sv)
        //                                    - ([grad phi_i^su], avg nu^T D2 phi_j^sv),
        // scattered as M + M^T so the matrix is symmetric by construction
        let ns = sides.len();
        let nd = ns * dim;
        let mut m = vec![0.0; nd * nd];
        for su in 0..ns {
            for sv in 0..ns {
                for i in 0..dim {
                    for j in 0..dim {
                        let mut acc = Acc::default();
                        for q in 0..enq {
                            let vi = evals[su].val[i * enq + q];
                            let gi = evals[su].grad[i * enq + q];
                            let ndh = evals[sv].nu_div_hess[j * enq + q];
                            let nh = evals[sv].nu_hess[j * enq + q];
                            let w = edge_rule.weights[q];
                            acc.add_prod(w * vi, ndh);
                            acc.add_prod(-w * gi[0], nh[0]);
                            acc.add_prod(-w * gi[1], nh[1]);
                        }
                        m[(su * dim + i) * nd + sv * dim + j] = sgn(su) * avg * h * acc.value();
                    }
                }
            }
        }
        let cs = penalties.c_sigma / (h * h * h);
        let ct = penalties.c_tau / h;
        for su in 0..ns {
            for sv in 0..ns {
                for i in 0..dim {
                    for j in 0..dim {
                        let mut acc = Acc::default();
                        for q in 0..enq {
                            let vi = evals[su].val[i * enq + q];
                            let vj = evals[sv].val[j * enq + q];
                            let gi = evals[su].grad[i * enq + q];
                            let gj = evals[sv].grad[j * enq + q];
                            // parenthesized so the entry is exactly symmetric
                            acc.add(
                                edge_rule.weights[q]
                                    * (cs * (vi * vj) + ct * (gi[0] * gj[0] + gi[1] * gj[1])),
                            );
                        }
                        let pen = sgn(su) * sgn(sv) * h * acc.value();
                        let sym = m[(su * dim + i) * nd + sv * dim + j]
                            + m[(sv * dim + j) * nd + su * dim + i];
                        values[entry(sides[su], i, sides[sv], j)] += pen + sym;
                    }
                }
            }
        }

        // boundary data terms on the right-hand side
        if !interior {
            let pts = facet_points(mesh, fid, &edge_rule);
            let e0 = sides[0];
            for i in 0..dim {
                let mut acc = Acc::default();
                for q in 0..enq {
                    let [x, y] = pts[q];
                    let g1 = bdata.g1(x, y);
                    let g2 = bdata.g2(x, y, nu);
                    let dt1 = bdata.dtau_g1(x, y, tau);
                    let gvec = [g2 * nu[0] + dt1 * tau[0], g2 * nu[1] + dt1 * tau[1]];
                    let vi = evals[0].val[i * enq + q];
                    let gi = evals[0].grad[i * enq + q];
                    let ndh = evals[0].nu_div_hess[i * enq + q];
                    let nh = evals[0].nu_hess[i * enq + q];
                    acc.add(
                        edge_rule.weights[q]
                            * (g1 * ndh - (gvec[0] * nh[0] + gvec[1] * nh[1])
                                + cs * g1 * vi
                                + ct * (gvec[0] * gi[0] + gvec[1] * gi[1])),
                    );
                }
                rhs[e0 * dim + i] += h * acc.value();
            }
        }
    }
}

/// Double-double variant of the filling pass; identical structure, with
/// tables, push-forwards, and quadrature sums in extended precision and a
/// single rounding per finished entry.
#[allow(clippy::too_many_arguments)]
fn fill_system_dd(
    mesh: &Mesh,
    p: usize,
    penalties: &PenaltyConfig,
    f: &dyn Fn(f64, f64) -> f64,
    bdata: &dyn ClampedData,
    qdeg: usize,
    dim: usize,
    neighbors: &[Vec<usize>],
    row_ptr: &[usize],
    values: &mut [f64],
    values_lo: &mut [f64],
    rhs: &mut [f64],
) {
    use crate::basis::{eval_basis_dd, geom_dd};
    use crate::dd::Dd;

    let entry = |e: usize, i: usize, nb: usize, j: usize| -> usize {
        let pos = neighbors[e].binary_search(&nb).expect("neighbor block");
        row_ptr[e * dim + i] + pos * dim + j
    };

    // volume terms
    let tri_rule = quad_triangle(qdeg).expect("volume rule");
    let vtab = eval_basis_dd(p, &tri_rule.points);
    let nq = tri_rule.points.len();
    let mut hess_phys = vec![[Dd::ZERO; 3]; dim * nq];
    for e in 0..mesh.n_elems() {
        let verts = mesh.elem_vertices(e);
        let geom = geom_dd(verts[0], verts[1], verts[2]);
        let map = mesh.affine_map(e);
        for k in 0..dim {
            for q in 0..nq {
                hess_phys[k * nq + q] = geom.push_hess(vtab.hs(k, q));
            }
        }
        for i in 0..dim {
            for j in i..dim {
                let mut acc = Dd::ZERO;
                for q in 0..nq {
                    let hi = hess_phys[i * nq + q];
                    let hj = hess_phys[j * nq + q];
                    let frob = hi[0]
                        .mul(hj[0])
                        .add(hi[1].mul(hj[1]).mul_f64(2.0))
                        .add(hi[2].mul(hj[2]));
                    acc = acc.add(frob.mul_f64(tri_rule.weights[q]));
                }
                let v = geom.det.mul(acc);
                let a1 = entry(e, i, e, j);
                add_dd_entry(values, values_lo, a1, v);
                if i != j {
                    add_dd_entry(values, values_lo, entry(e, j, e, i), v);
                }
            }
        }
        for i in 0..dim {
            let mut acc = Dd::ZERO;
            for q in 0..nq {
                let x = map.to_phys(tri_rule.points[q]);
                acc = acc.add(vtab.val(i, q).mul_f64(tri_rule.weights[q] * f(x[0], x[1])));
            }
            rhs[e * dim + i] += geom.det.mul(acc).to_f64();
        }
    }

    // facet terms
    let edge_rule = quad_edge(qdeg).expect("edge rule");
    let mut trace_tabs = Vec::with_capacity(6);
    for le in 0..3 {
        for rev in 0..2 {
            trace_tabs.push(eval_basis_dd(p, &trace_points(le, rev == 1, &edge_rule)));
        }
    }
    let enq = edge_rule.points.len();
    struct SideDd {
        val: Vec<Dd>,
        grad: Vec<[Dd; 2]>,
        nu_hess: Vec<[Dd; 2]>,
        nu_div_hess: Vec<Dd>,
    }
    for (fid, fct) in mesh.facets.iter().enumerate() {
        let sides: Vec<usize> = fct.elems.iter().flatten().cloned().collect();
        let interior = sides.len() == 2;
        let avg = if interior { 0.5 } else { 1.0 };
        let h = fct.h_f;
        let nu = fct.normal;
        let tau = fct.tangent;
        let evals: Vec<SideDd> = sides
            .iter()
            .map(|&e| {
                let (le, rev) = mesh.local_edge(e, fid);
                let tab = &trace_tabs[le * 2 + rev as usize];
                let verts = mesh.elem_vertices(e);
                let geom = geom_dd(verts[0], verts[1], verts[2]);
                let mut out = SideDd {
                    val: vec![Dd::ZERO; dim * enq],
                    grad: vec![[Dd::ZERO; 2]; dim * enq],
                    nu_hess: vec![[Dd::ZERO; 2]; dim * enq],
                    nu_div_hess: vec![Dd::ZERO; dim * enq],
                };
                for k in 0..dim {
                    for q in 0..enq {
                        let idx = k * enq + q;
                        out.val[idx] = tab.val(k, q);
                        out.grad[idx] = geom.push_grad(tab.gr(k, q));
                        let hh = geom.push_hess(tab.hs(k, q));
                        out.nu_hess[idx] = [
                            hh[0].mul_f64(nu[0]).add(hh[1].mul_f64(nu[1])),
                            hh[1].mul_f64(nu[0]).add(hh[2].mul_f64(nu[1])),
                        ];
                        let t = geom.push_third(tab.th(k, q));
                        out.nu_div_hess[idx] = t[0]
                            .add(t[2])
                            .mul_f64(nu[0])
                            .add(t[1].add(t[3]).mul_f64(nu[1]));
                    }
                }
                out
            })
            .collect();
        let sgn = |s: usize| if s == 0 { 1.0 } else { -1.0 };

        let ns = sides.len();
        let nd = ns * dim;
        let mut m = vec![Dd::ZERO; nd * nd];
        for su in 0..ns {
            for sv in 0..ns {
                for i in 0..dim {
                    for j in 0..dim {
                        let mut acc = Dd::ZERO;
                        for q in 0..enq {
                            let vi = evals[su].val[i * enq + q];
                            let gi = evals[su].grad[i * enq + q];
                            let ndh = evals[sv].nu_div_hess[j * enq + q];
                            let nh = evals[sv].nu_hess[j * enq + q];
                            let term = vi
                                .mul(ndh)
                                .sub(gi[0].mul(nh[0]).add(gi[1].mul(nh[1])));
                            acc = acc.add(term.mul_f64(edge_rule.weights[q]));
                        }
                        m[(su * dim + i) * nd + sv * dim + j] =
                            acc.mul_f64(sgn(su) * avg * h);
                    }
                }
            }
        }
        let cs = penalties.c_sigma / (h * h * h);
        let ct = penalties.c_tau / h;
        for su in 0..ns {
            for sv in 0..ns {
                for i in 0..dim {
                    for j in 0..dim {
                        let mut acc = Dd::ZERO;
                        for q in 0..enq {
                            let vi = evals[su].val[i * enq + q];
                            let vj = evals[sv].val[j * enq + q];
                            let gi = evals[su].grad[i * enq + q];
                            let gj = evals[sv].grad[j * enq + q];
                            let term = vi
                                .mul(vj)
                                .mul_f64(cs)
                                .add(gi[0].mul(gj[0]).add(gi[1].mul(gj[1])).mul_f64(ct));
                            acc = acc.add(term.mul_f64(edge_rule.weights[q]));
                        }
                        let pen = acc.mul_f64(sgn(su) * sgn(sv) * h);
                        // canonical order keeps the sum exactly symmetric
                        let a_lin = su * dim + i;
                        let b_lin = sv * dim + j;
                        let sym = if a_lin <= b_lin {
                            m[a_lin * nd + b_lin].add(m[b_lin * nd + a_lin])
                        } else {
                            m[b_lin * nd + a_lin].add(m[a_lin * nd + b_lin])
                        };
                        add_dd_entry(
                            values,
                            values_lo,
                            entry(sides[su], i, sides[sv], j),
                            pen.add(sym),
                        );
                    }
                }
            }
        }

        if !interior {
            let pts = facet_points_rule(mesh, fid, &edge_rule);
            let e0 = sides[0];
            for i in 0..dim {
                let mut acc = Dd::ZERO;
                for q in 0..enq {
                    let [x, y] = pts[q];
                    let g1 = bdata.g1(x, y);
                    let g2 = bdata.g2(x, y, nu);
                    let dt1 = bdata.dtau_g1(x, y, tau);
                    let gvec = [g2 * nu[0] + dt1 * tau[0], g2 * nu[1] + dt1 * tau[1]];
                    let vi = evals[0].val[i * enq + q];
                    let gi = evals[0].grad[i * enq + q];
                    let ndh = evals[0].nu_div_hess[i * enq + q];
                    let nh = evals[0].nu_hess[i * enq + q];
                    let term = ndh
                        .mul_f64(g1)
                        .sub(nh[0].mul_f64(gvec[0]).add(nh[1].mul_f64(gvec[1])))
                        .add(vi.mul_f64(cs * g1))
                        .add(gi[0].mul_f64(ct * gvec[0]).add(gi[1].mul_f64(ct * gvec[1])));
                    acc = acc.add(term.mul_f64(edge_rule.weights[q]));
                }
                rhs[e0 * dim + i] += acc.mul_f64(h).to_f64();
            }
        }
    }
}

fn facet_points_rule(mesh: &Mesh, facet: usize, rule: &EdgeRule) -> Vec<[f64; 2]> {
    facet_points(mesh, facet, rule)
}

/// Accumulate a double-double contribution into split (hi, lo) storage.
fn add_dd_entry(values: &mut [f64], values_lo: &mut [f64], idx: usize, v: crate::dd::Dd) {
    let cur = crate::dd::Dd {
        hi: values[idx],
        lo: values_lo[idx],
    };
    let next = cur.add(v);
    values[idx] = next.hi;
    values_lo[idx] = next.lo;
}


/// Jump values of a scalar field and its gradient at the quadrature points
/// of a facet, with the boundary modification [u] = u - g1,
/// [grad u] = grad u - g2 nu - (dtau g1) tau.
pub fn facet_jumps(
    mesh: &Mesh,
    fid: usize,
    v: &DgField,
    traces: &TraceTables,
    bdata: &dyn ClampedData,
) -> (Vec<f64>, Vec<[f64; 2]>) {
    let fct = &mesh.facets[fid];
    let nq = traces.rule.points.len();
    let mut jump_v = vec![0.0; nq];
    let mut jump_g = vec![[0.0; 2]; nq];
    for (s, elem) in fct.elems.iter().flatten().enumerate() {
        let sgn = if s == 0 { 1.0 } else { -1.0 };
        let (le, rev) = mesh.local_edge(*elem, fid);
        let tab = traces.get(le, rev);
        let map = mesh.affine_map(*elem);
        for q in 0..nq {
            jump_v[q] += sgn * v.value_at(*elem, 0, tab, q);
            let g = v.grad_at(*elem, 0, tab, &map, q);
            jump_g[q][0] += sgn * g[0];
            jump_g[q][1] += sgn * g[1];
        }
    }
    if fct.is_boundary() {
        let pts = facet_points(mesh, fid, &traces.rule);
        let (nu, tau) = (fct.normal, fct.tangent);
        for q in 0..nq {
            let [x, y] = pts[q];
            let g1 = bdata.g1(x, y);
            let g2 = bdata.g2(x, y, nu);
            let dt1 = bdata.dtau_g1(x, y, tau);
            jump_v[q] -= g1;
            jump_g[q][0] -= g2 * nu[0] + dt1 * tau[0];
            jump_g[q][1] -= g2 * nu[1] + dt1 * tau[1];
        }
    }
    (jump_v, jump_g)
}

/// The lifting of the facet jumps of `v` into the degree-p tensor DG space:
/// (L(v), B) = ([v], {nu . div B}) - ([grad v], {nu^T B}) for all tensor
/// test fields B of degree p. Solved element by element against the
/// diagonal mass matrix.
pub fn lifting(
    mesh: &Mesh,
    p: usize,
    v: &DgField,
    bdata: &dyn ClampedData,
    opts: &AssemblyOpts,
) -> Result<DgField, FormsError> {
    if v.rank != Rank::Scalar {
        return Err(FormsError::FieldMismatch("lifting input must be scalar".into()));
    }
    if v.n_elems != mesh.n_elems() {
        return Err(FormsError::FieldMismatch(
            "lifting input lives on another mesh".into(),
        ));
    }
    if v.degree > p {
        return Err(FormsError::FieldMismatch(format!(
            "lifting input degree {} exceeds target degree {p}",
            v.degree
        )));
    }
    let qdeg = opts.degree_for(p)?;
    let edge_rule = quad_edge(qdeg).expect("edge rule");
    let traces_v = TraceTables::build(v.degree, &edge_rule, 1);
    let traces_b = TraceTables::build(p, &edge_rule, 1);
    let nq = edge_rule.points.len();
    let dim = basis_dim(p);
    let mut out = DgField::zeros(Rank::Tensor, p, mesh.n_elems());

    for (fid, fct) in mesh.facets.iter().enumerate() {
        let (jump_v, jump_g) = facet_jumps(mesh, fid, v, &traces_v, bdata);
        let sides: Vec<usize> = fct.elems.iter().flatten().cloned().collect();
        let avg = if sides.len() == 2 { 0.5 } else { 1.0 };
        let nu = fct.normal;
        let h = fct.h_f;
        for &elem in &sides {
            let (le, rev) = mesh.local_edge(elem, fid);
            let tab = traces_b.get(le, rev);
            let map = mesh.affine_map(elem);
            let scale = avg * h / map.det;
            for k in 0..dim {
                let mut acc = [0.0; 4];
                for q in 0..nq {
                    let w = edge_rule.weights[q];
                    let val = tab.val(k, q);
                    let g = map.push_grad(tab.gr(k, q));
                    // component (a,b): nu_a ( [v] d_b phi - [grad v]_b phi )
                    let tx = jump_v[q] * g[0] - jump_g[q][0] * val;
                    let ty = jump_v[q] * g[1] - jump_g[q][1] * val;
                    acc[0] += w * nu[0] * tx;
                    acc[1] += w * nu[0] * ty;
                    acc[2] += w * nu[1] * tx;
                    acc[3] += w * nu[1] * ty;
                }
                for c in 0..4 {
                    out.comp_mut(elem, c)[k] += scale * acc[c];
                }
            }
        }
    }
    Ok(out)
}

/// Generalized Hessian: broken Hessian plus the lifting of the solution's
/// facet jumps (boundary jumps shifted by the clamped data).
pub fn generalized_hessian(
    mesh: &Mesh,
    u_h: &DgField,
    bdata: &dyn ClampedData,
    opts: &AssemblyOpts,
) -> Result<DgField, FormsError> {
    let mut h = broken_hessian(mesh, u_h);
    let l = lifting(mesh, u_h.degree, u_h, bdata, opts)?;
    h.add_assign(&l);
    Ok(h)
}

/// L2 inner product of two fields of equal rank (possibly different
/// degrees), by quadrature exact for the product.
pub fn l2_inner(mesh: &Mesh, a: &DgField, b: &DgField) -> f64 {
    assert_eq!(a.rank, b.rank);
    let rule = quad_triangle(a.degree + b.degree).expect("inner product rule");
    let tab_a = eval_basis(a.degree, &rule.points, 0).expect("tables");
    let tab_b = eval_basis(b.degree, &rule.points, 0).expect("tables");
    let mut total = 0.0;
    for e in 0..mesh.n_elems() {
        let det = 2.0 * mesh.area(e);
        let mut acc = 0.0;
        for c in 0..a.rank.ncomp() {
            for (q, w) in rule.weights.iter().enumerate() {
                acc += w * a.value_at(e, c, &tab_a, q) * b.value_at(e, c, &tab_b, q);
            }
        }
        total += det * acc;
    }
    total
}

/// Squared jump seminorms of a scalar field: (sum_F h^-3 ||[v]||^2,
/// sum_F h^-1 ||[grad v]||^2), boundary jumps shifted by the data.
pub fn jump_seminorms(
    mesh: &Mesh,
    v: &DgField,
    bdata: &dyn ClampedData,
    qdeg: usize,
) -> (f64, f64) {
    let edge_rule = quad_edge(qdeg).expect("edge rule");
    let traces = TraceTables::build(v.degree, &edge_rule, 1);
    let nq = edge_rule.points.len();
    let (mut s_jump, mut s_grad) = (0.0, 0.0);
    for fid in 0..mesh.n_facets() {
        let h = mesh.facets[fid].h_f;
        let (jv, jg) = facet_jumps(mesh, fid, v, &traces, bdata);
        let mut a0 = 0.0;
        let mut a1 = 0.0;
        for q in 0..nq {
            a0 += edge_rule.weights[q] * jv[q] * jv[q];
            a1 += edge_rule.weights[q] * (jg[q][0] * jg[q][0] + jg[q][1] * jg[q][1]);
        }
        s_jump += h * a0 / (h * h * h);
        s_grad += h * a1 / h;
    }
    (s_jump, s_grad)
}

/// Broken H2 seminorm squared: sum_T ||D2 v||^2.
pub fn broken_hess_norm_sq(mesh: &Mesh, v: &DgField) -> f64 {
    let h = broken_hessian(mesh, v);
    l2_inner(mesh, &h, &h)
}

/// DG norm of a scalar field (homogeneous jumps).
pub fn dg_norm(mesh: &Mesh, v: &DgField, qdeg: usize) -> f64 {
    let (j, g) = jump_seminorms(mesh, v, &HomogeneousData, qdeg);
    (broken_hess_norm_sq(mesh, v) + j + g).sqrt()
}

/// The bilinear form through the lifting rewriting:
/// (D2u, D2v) + (L(u), D2v) + (D2u, L(v)) + penalties.
pub fn apply_bilinear(
    mesh: &Mesh,
    u: &DgField,
    v: &DgField,
    penalties: &PenaltyConfig,
    opts: &AssemblyOpts,
) -> Result<f64, FormsError> {
    if u.n_elems != mesh.n_elems() || v.n_elems != mesh.n_elems() {
        return Err(FormsError::FieldMismatch("fields live on another mesh".into()));
    }
    if u.degree != v.degree {
        return Err(FormsError::FieldMismatch("fields have different degrees".into()));
    }
    let p = u.degree;
    let hu = broken_hessian(mesh, u);
    let hv = broken_hessian(mesh, v);
    let lu = lifting(mesh, p, u, &HomogeneousData, opts)?;
    let lv = lifting(mesh, p, v, &HomogeneousData, opts)?;
    let qdeg = opts.degree_for(p)?;
    let edge_rule = quad_edge(qdeg).expect("edge rule");
    let traces = TraceTables::build(p, &edge_rule, 1);
    let nq = edge_rule.points.len();
    let mut pen = 0.0;
    for fid in 0..mesh.n_facets() {
        let h = mesh.facets[fid].h_f;
        let (ju, jgu) = facet_jumps(mesh, fid, u, &traces, &HomogeneousData);
        let (jv, jgv) = facet_jumps(mesh, fid, v, &traces, &HomogeneousData);
        let mut a0 = 0.0;
        let mut a1 = 0.0;
        for q in 0..nq {
            a0 += edge_rule.weights[q] * ju[q] * jv[q];
            a1 += edge_rule.weights[q] * (jgu[q][0] * jgv[q][0] + jgu[q][1] * jgv[q][1]);
        }
        pen += penalties.c_sigma * h * a0 / (h * h * h) + penalties.c_tau * h * a1 / h;
    }
    Ok(l2_inner(mesh, &hu, &hv) + l2_inner(mesh, &lu, &hv) + l2_inner(mesh, &hu, &lv) + pen)
}

/// The bilinear form in its facet-average writing (no lifting), using the
/// averages of nu^T D2 and nu . div D2 directly.
pub fn apply_bilinear_facet(
    mesh: &Mesh,
    u: &DgField,
    v: &DgField,
    penalties: &PenaltyConfig,
    opts: &AssemblyOpts,
) -> Result<f64, FormsError> {
    if u.degree != v.degree {
        return Err(FormsError::FieldMismatch("fields have different degrees".into()));
    }
    let p = u.degree;
    let hu = broken_hessian(mesh, u);
    let hv = broken_hessian(mesh, v);
    let mut total = l2_inner(mesh, &hu, &hv);
    let qdeg = opts.degree_for(p)?;
    let edge_rule = quad_edge(qdeg).expect("edge rule");
    let traces = TraceTables::build(p, &edge_rule, 3);
    let nq = edge_rule.points.len();
    for (fid, fct) in mesh.facets.iter().enumerate() {
        let sides: Vec<usize> = fct.elems.iter().flatten().cloned().collect();
        let avg = if sides.len() == 2 { 0.5 } else { 1.0 };
        let h = fct.h_f;
        let (ju, jgu) = facet_jumps(mesh, fid, u, &traces, &HomogeneousData);
        let (jv, jgv) = facet_jumps(mesh, fid, v, &traces, &HomogeneousData);
        let mut avg_ndh_u = vec![0.0; nq];
        let mut avg_nh_u = vec![[0.0; 2]; nq];
        let mut avg_ndh_v = vec![0.0; nq];
        let mut avg_nh_v = vec![[0.0; 2]; nq];
        for &elem in &sides {
            let (nh_u, ndh_u) = side_field_hess(mesh, elem, fid, u, &traces);
            let (nh_v, ndh_v) = side_field_hess(mesh, elem, fid, v, &traces);
            for q in 0..nq {
                avg_ndh_u[q] += avg * ndh_u[q];
                avg_nh_u[q][0] += avg * nh_u[q][0];
                avg_nh_u[q][1] += avg * nh_u[q][1];
                avg_ndh_v[q] += avg * ndh_v[q];
                avg_nh_v[q][0] += avg * nh_v[q][0];
                avg_nh_v[q][1] += avg * nh_v[q][1];
            }
        }
        let mut acc = 0.0;
        for q in 0..nq {
            let w = edge_rule.weights[q];
            acc += w
                * (ju[q] * avg_ndh_v[q]
                    - (jgu[q][0] * avg_nh_v[q][0] + jgu[q][1] * avg_nh_v[q][1])
                    + jv[q] * avg_ndh_u[q]
                    - (jgv[q][0] * avg_nh_u[q][0] + jgv[q][1] * avg_nh_u[q][1])
                    + penalties.c_sigma / (h * h * h) * ju[q] * jv[q]
                    + penalties.c_tau / h * (jgu[q][0] * jgv[q][0] + jgu[q][1] * jgv[q][1]));
        }
        total += h * acc;
    }
    Ok(total)
}

/// nu^T D2 w and nu . div D2 w traces of a scalar field on one side of a facet.
fn side_field_hess(
    mesh: &Mesh,
    elem: usize,
    fid: usize,
    w: &DgField,
    traces: &TraceTables,
) -> (Vec<[f64; 2]>, Vec<f64>) {
    let (le, rev) = mesh.local_edge(elem, fid);
    let tab = traces.get(le, rev);
    let map = mesh.affine_map(elem);
    let nu = mesh.facets[fid].normal;
    let nq = traces.rule.points.len();
    let mut nh = vec![[0.0; 2]; nq];
    let mut ndh = vec![0.0; nq];
    for q in 0..nq {
        let h = w.hess_at(elem, 0, tab, &map, q);
        nh[q] = [nu[0] * h[0] + nu[1] * h[1], nu[0] * h[1] + nu[1] * h[2]];
        let t = w.third_at(elem, 0, tab, &map, q);
        ndh[q] = nu[0] * (t[0] + t[2]) + nu[1] * (t[1] + t[3]);
    }
    (nh, ndh)
}

/// Continuous vector Lagrange space of degree p on a mesh: global node
/// numbering (vertices, then facet nodes ordered along each facet's stored
/// orientation, then element interiors) and the per-element gather map in
/// the local lattice ordering.
pub struct LagrangeSpace {
    pub p: usize,
    pub n_nodes: usize,
    pub elem_nodes: Vec<Vec<usize>>,
    pub nodal: NodalBasis,
}

pub fn lagrange_space(mesh: &Mesh, p: usize) -> LagrangeSpace {
    assert!(p >= 1);
    let nv = mesh.vertices.len();
    let nf = mesh.n_facets();
    let per_edge = p - 1;
    let n_int = basis_dim(p) - 3 - 3 * per_edge;
    let n_nodes = nv + nf * per_edge + mesh.n_elems() * n_int;
    let mut elem_nodes = Vec::with_capacity(mesh.n_elems());
    for e in 0..mesh.n_elems() {
        let tri = mesh.triangles[e];
        let mut nodes = Vec::with_capacity(basis_dim(p));
        nodes.extend_from_slice(&[tri[0], tri[1], tri[2]]);
        for le in 0..3 {
            let fid = mesh.elem_facets[e][le];
            let a = tri[le];
            let forward = mesh.facets[fid].verts[0] == a;
            for i in 1..p {
                let fi = if forward { i - 1 } else { p - 1 - i };
                nodes.push(nv + fid * per_edge + fi);
            }
        }
        for i in 0..n_int {
            nodes.push(nv + nf * per_edge + e * n_int + i);
        }
        elem_nodes.push(nodes);
    }
    LagrangeSpace {
        p,
        n_nodes,
        elem_nodes,
        nodal: nodal_basis(p),
    }
}

impl LagrangeSpace {
    /// Modal (orthonormal-basis) coefficients of one component of a vector
    /// field on an element; global coefficients are interleaved per node.
    pub fn modal_coeffs(&self, e: usize, theta: &[f64], comp: usize) -> Vec<f64> {
        let dim = basis_dim(self.p);
        let mut modal = vec![0.0; dim];
        for (j, &g) in self.elem_nodes[e].iter().enumerate() {
            let nodal_val = theta[2 * g + comp];
            if nodal_val != 0.0 {
                for k in 0..dim {
                    modal[k] += self.nodal.to_modal[(k, j)] * nodal_val;
                }
            }
        }
        modal
    }

    /// Interpolate an analytic vector field at the global nodes.
    pub fn interpolate(&self, mesh: &Mesh, f: &dyn Fn(f64, f64) -> [f64; 2]) -> Vec<f64> {
        let mut theta = vec![0.0; 2 * self.n_nodes];
        let mut seen = vec![false; self.n_nodes];
        for e in 0..mesh.n_elems() {
            let map = mesh.affine_map(e);
            for (j, &g) in self.elem_nodes[e].iter().enumerate() {
                if seen[g] {
                    continue;
                }
                seen[g] = true;
                let x = map.to_phys(self.nodal.nodes[j]);
                let v = f(x[0], x[1]);
                theta[2 * g] = v[0];
                theta[2 * g + 1] = v[1];
            }
        }
        theta
    }
}

/// Symmetric part of the row-wise curl of a continuous degree-p vector
/// Lagrange field, as a degree-(p-1) tensor DG field. Row i of the curl is
/// (d_y theta_i, -d_x theta_i), so div div of the result vanishes
/// identically.
pub fn symcurl_lagrange(
    mesh: &Mesh,
    space: &LagrangeSpace,
    theta: &[f64],
) -> Result<DgField, FormsError> {
    if theta.len() != 2 * space.n_nodes {
        return Err(FormsError::NonConforming(format!(
            "expected {} coefficients, got {}",
            2 * space.n_nodes,
            theta.len()
        )));
    }
    let p = space.p;
    let out_deg = p - 1;
    let rule = quad_triangle(2 * p).expect("projection rule");
    let tab_p = eval_basis(p, &rule.points, 1).expect("tables");
    let tab_out = eval_basis(out_deg, &rule.points, 0).expect("tables");
    let dim_p = basis_dim(p);
    let dim_out = basis_dim(out_deg);
    let mut out = DgField::zeros(Rank::Tensor, out_deg, mesh.n_elems());
    for e in 0..mesh.n_elems() {
        let map = mesh.affine_map(e);
        let cx = space.modal_coeffs(e, theta, 0);
        let cy = space.modal_coeffs(e, theta, 1);
        let mut vals = vec![[0.0; 4]; rule.points.len()];
        for (q, v) in vals.iter_mut().enumerate() {
            let mut gx = [0.0; 2];
            let mut gy = [0.0; 2];
            for k in 0..dim_p {
                let g = tab_p.gr(k, q);
                gx[0] += cx[k] * g[0];
                gx[1] += cx[k] * g[1];
                gy[0] += cy[k] * g[0];
                gy[1] += cy[k] * g[1];
            }
            let gx = map.push_grad(gx);
            let gy = map.push_grad(gy);
            // curl rows (d_y t1, -d_x t1; d_y t2, -d_x t2), then symmetrize
            let c11 = gx[1];
            let c12 = -gx[0];
            let c21 = gy[1];
            let c22 = -gy[0];
            *v = [c11, 0.5 * (c12 + c21), 0.5 * (c12 + c21), c22];
        }
        for c in 0..4 {
            let slot = out.comp_mut(e, c);
            for k in 0..dim_out {
                let mut acc = 0.0;
                for (q, w) in rule.weights.iter().enumerate() {
                    acc += w * vals[q][c] * tab_out.val(k, q);
                }
                slot[k] = acc;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::project_scalar;
    use crate::linalg::solve;
    use crate::mesh::{lshape, uniform_refine, unit_square};
    use crate::problems::{Domain, PolySolution, TestProblem};
    use rand::Rng;
    use rand::SeedableRng;

    fn random_field(p: usize, n_elems: usize, seed: u64) -> DgField {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut f = DgField::zeros(Rank::Scalar, p, n_elems);
        for c in f.coeffs.iter_mut() {
            *c = rng.random_range(-1.0..1.0);
        }
        f
    }

    #[test]
    fn system_dimension_and_symmetry() {
        let mesh = unit_square();
        let pen = PenaltyConfig::degree_scaled(2);
        let (a, b) = assemble_system(
            &mesh,
            2,
            &pen,
            &|_, _| 1.0,
            &HomogeneousData,
            &AssemblyOpts::default(),
        )
        .unwrap();
        assert_eq!(a.n, 12);
        assert_eq!(b.len(), 12);
        assert_eq!(a.max_asymmetry(), 0.0);
    }

    #[test]
    fn degree_one_rejected() {
        let mesh = unit_square();
        let pen = PenaltyConfig::degree_scaled(1);
        let r = assemble_system(
            &mesh,
            1,
            &pen,
            &|_, _| 0.0,
            &HomogeneousData,
            &AssemblyOpts::default(),
        );
        assert!(matches!(r, Err(FormsError::DegreeTooLow(1))));
    }

    #[test]
    fn low_quadrature_flagged() {
        let mesh = unit_square();
        let pen = PenaltyConfig::degree_scaled(3);
        let opts = AssemblyOpts {
            quad_degree: Some(3),
            ..AssemblyOpts::default()
        };
        let r = assemble_system(&mesh, 3, &pen, &|_, _| 0.0, &HomogeneousData, &opts);
        assert!(matches!(r, Err(FormsError::QuadratureTooLow { .. })));
    }

    #[test]
    fn polynomial_solution_reproduced() {
        // manufactured degree-3 solution with its exact clamped data
        let poly = TestProblem::Poly(PolySolution {
            terms: vec![
                (3, 0, 0.5),
                (2, 1, -1.0),
                (0, 3, 0.25),
                (1, 1, 2.0),
                (2, 0, -0.5),
                (0, 0, 0.3),
            ],
            domain: Domain::Square,
        });
        let mesh = uniform_refine(&unit_square());
        let p = 3;
        let pen = PenaltyConfig::degree_scaled(p);
        let data = ExactData(&poly);
        let opts = AssemblyOpts::default();
        let (a, b) = assemble_system(&mesh, p, &pen, &|x, y| poly.rhs(x, y), &data, &opts).unwrap();
        let x = solve(&a, &b).unwrap();
        let u_h = DgField {
            rank: Rank::Scalar,
            degree: p,
            n_elems: mesh.n_elems(),
            coeffs: x,
        };
        let exact = project_scalar(&mesh, p, 2 * p + 4, &|x, y| poly.u(x, y));
        let mut diff = u_h.clone();
        for (d, e) in diff.coeffs.iter_mut().zip(&exact.coeffs) {
            *d -= e;
        }
        let err = dg_norm(&mesh, &diff, 2 * p + 4);
        let scale = dg_norm(&mesh, &exact, 2 * p + 4);
        assert!(err / scale < 1e-8, "DG error {err} vs scale {scale}");
    }

    #[test]
    fn lifting_vanishes_on_jump_free_fields() {
        let poly = TestProblem::Poly(PolySolution {
            terms: vec![(3, 0, 1.0), (1, 2, -2.0), (1, 0, 1.0)],
            domain: Domain::Square,
        });
        let mesh = uniform_refine(&unit_square());
        let p = 3;
        let v = project_scalar(&mesh, p, 2 * p + 4, &|x, y| poly.u(x, y));
        let data = ExactData(&poly);
        let l = lifting(&mesh, p, &v, &data, &AssemblyOpts::default()).unwrap();
        let max = l.coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        assert!(max < 1e-12, "lifting coefficients up to {max}");
    }

    #[test]
    fn lifting_matches_dense_oracle_on_two_elements() {
        // v = 1 on element 0, 0 on element 1; compare against a dense solve
        // of the defining linear system with the tensor mass matrix
        let mesh = unit_square();
        let p = 2;
        let mut v = DgField::zeros(Rank::Scalar, p, 2);
        let one = project_scalar(&mesh, p, 6, &|_, _| 1.0);
        for k in 0..basis_dim(p) {
            v.comp_mut(0, 0)[k] = one.comp(0, 0)[k];
        }
        let l = lifting(&mesh, p, &v, &HomogeneousData, &AssemblyOpts::default()).unwrap();

        let dim = basis_dim(p);
        let nt = 2 * 4 * dim;
        let mut m = nalgebra::DMatrix::<f64>::zeros(nt, nt);
        for e in 0..2 {
            let det = 2.0 * mesh.area(e);
            for c in 0..4 {
                for k in 0..dim {
                    let idx = e * 4 * dim + c * dim + k;
                    m[(idx, idx)] = det;
                }
            }
        }
        let qdeg = 2 * p + 4;
        let edge_rule = quad_edge(qdeg).unwrap();
        let traces = TraceTables::build(p, &edge_rule, 1);
        let nq = edge_rule.points.len();
        let mut rhs = nalgebra::DVector::<f64>::zeros(nt);
        for (fid, fct) in mesh.facets.iter().enumerate() {
            let (jv, jg) = facet_jumps(&mesh, fid, &v, &traces, &HomogeneousData);
            let sides: Vec<usize> = fct.elems.iter().flatten().cloned().collect();
            let avg = if sides.len() == 2 { 0.5 } else { 1.0 };
            let nu = fct.normal;
            for &elem in &sides {
                let (le, rev) = mesh.local_edge(elem, fid);
                let tab = traces.get(le, rev);
                let map = mesh.affine_map(elem);
                for k in 0..dim {
                    for q in 0..nq {
                        let w = edge_rule.weights[q] * fct.h_f;
                        let val = tab.val(k, q);
                        let g = map.push_grad(tab.gr(k, q));
                        for (c, (a, b)) in [(0, (0, 0)), (1, (0, 1)), (2, (1, 0)), (3, (1, 1))] {
                            let term = jv[q] * g[b] - jg[q][b] * val;
                            rhs[elem * 4 * dim + c * dim + k] += w * avg * nu[a] * term;
                        }
                    }
                }
            }
        }
        let sol = m.lu().solve(&rhs).unwrap();
        let mut max_diff = 0.0f64;
        for e in 0..2 {
            for c in 0..4 {
                for k in 0..dim {
                    let got = l.comp(e, c)[k];
                    let want = sol[e * 4 * dim + c * dim + k];
                    max_diff = max_diff.max((got - want).abs());
                }
            }
        }
        assert!(max_diff < 1e-13, "lifting vs dense oracle differ by {max_diff}");
        let norm = l.coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        assert!(norm > 1e-3, "lifting should be nonzero via facet terms");
    }

    #[test]
    fn lifting_stability_constant_finite() {
        let mesh = uniform_refine(&unit_square());
        let p = 2;
        let qdeg = 2 * p + 4;
        let mut worst = 0.0f64;
        for seed in 0..100 {
            let v = random_field(p, mesh.n_elems(), seed);
            let l = lifting(&mesh, p, &v, &HomogeneousData, &AssemblyOpts::default()).unwrap();
            let l_norm = l2_inner(&mesh, &l, &l).sqrt();
            let (j, g) = jump_seminorms(&mesh, &v, &HomogeneousData, qdeg);
            let denom = (j + g).sqrt();
            if denom > 1e-14 {
                worst = worst.max(l_norm / denom);
            }
        }
        assert!(worst.is_finite() && worst > 0.0);
        assert!(worst < 50.0, "lifting stability constant {worst}");
    }

    #[test]
    fn bilinear_forms_agree() {
        let mesh = uniform_refine(&unit_square());
        let p = 2;
        let pen = PenaltyConfig::degree_scaled(p);
        let opts = AssemblyOpts::default();
        let qdeg = 2 * p + 4;
        for seed in 0..50 {
            let u = random_field(p, mesh.n_elems(), 1000 + seed);
            let v = random_field(p, mesh.n_elems(), 2000 + seed);
            let b1 = apply_bilinear(&mesh, &u, &v, &pen, &opts).unwrap();
            let b2 = apply_bilinear_facet(&mesh, &u, &v, &pen, &opts).unwrap();
            let scale = dg_norm(&mesh, &u, qdeg) * dg_norm(&mesh, &v, qdeg);
            assert!(
                (b1 - b2).abs() <= 1e-10 * scale.max(1.0) * pen.c_sigma.max(1.0),
                "forms differ: {b1} vs {b2} (seed {seed})"
            );
        }
    }

    #[test]
    fn bilinear_matches_assembled_matrix() {
        let mesh = unit_square();
        let p = 2;
        let pen = PenaltyConfig::degree_scaled(p);
        let opts = AssemblyOpts::default();
        let (a, _) = assemble_system(&mesh, p, &pen, &|_, _| 0.0, &HomogeneousData, &opts).unwrap();
        for seed in 0..5 {
            let u = random_field(p, mesh.n_elems(), 100 + seed);
            let v = random_field(p, mesh.n_elems(), 200 + seed);
            let mut au = vec![0.0; a.n];
            a.matvec(&u.coeffs, &mut au);
            let quad: f64 = au.iter().zip(&v.coeffs).map(|(x, y)| x * y).sum();
            let b2 = apply_bilinear_facet(&mesh, &u, &v, &pen, &opts).unwrap();
            let scale = quad.abs().max(b2.abs()).max(1.0);
            assert!(
                (quad - b2).abs() < 1e-10 * scale,
                "matrix route {quad} vs facet route {b2}"
            );
        }
    }

    #[test]
    fn bilinear_symmetry_exact() {
        let mesh = unit_square();
        let p = 2;
        let pen = PenaltyConfig::degree_scaled(p);
        let opts = AssemblyOpts::default();
        let u = random_field(p, mesh.n_elems(), 7);
        let v = random_field(p, mesh.n_elems(), 8);
        let (a, _) = assemble_system(&mesh, p, &pen, &|_, _| 0.0, &HomogeneousData, &opts).unwrap();
        let mut au = vec![0.0; a.n];
        let mut av = vec![0.0; a.n];
        a.matvec(&u.coeffs, &mut au);
        a.matvec(&v.coeffs, &mut av);
        let buv: f64 = au.iter().zip(&v.coeffs).map(|(x, y)| x * y).sum();
        let bvu: f64 = av.iter().zip(&u.coeffs).map(|(x, y)| x * y).sum();
        let scale = buv.abs().max(1.0);
        assert!((buv - bvu).abs() < 1e-12 * scale);
    }

    #[test]
    fn symcurl_constant_for_linear_theta() {
        // theta = (y, 0): curl rows give ((1,0),(0,0)); symcurl = [[1,0],[0,0]]
        let mesh = unit_square();
        let space = lagrange_space(&mesh, 2);
        let theta = space.interpolate(&mesh, &|_, y| [y, 0.0]);
        let sc = symcurl_lagrange(&mesh, &space, &theta).unwrap();
        let pts = [[0.3, 0.3], [0.1, 0.6]];
        let tab = eval_basis(sc.degree, &pts, 0).unwrap();
        for e in 0..2 {
            for q in 0..2 {
                assert!((sc.value_at(e, 0, &tab, q) - 1.0).abs() < 1e-12);
                assert!(sc.value_at(e, 1, &tab, q).abs() < 1e-12);
                assert!(sc.value_at(e, 2, &tab, q).abs() < 1e-12);
                assert!(sc.value_at(e, 3, &tab, q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn symcurl_kernel_contains_rt0() {
        let mesh = lshape();
        let space = lagrange_space(&mesh, 3);
        for f in [
            (|_: f64, _: f64| [1.0, 0.0]) as fn(f64, f64) -> [f64; 2],
            |_, _| [0.0, 1.0],
            |x, y| [x, y],
        ] {
            let theta = space.interpolate(&mesh, &f);
            let sc = symcurl_lagrange(&mesh, &space, &theta).unwrap();
            let max = sc.coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
            assert!(max < 1e-12, "symcurl of RT0 member up to {max}");
        }
    }

    #[test]
    fn divdiv_of_symcurl_vanishes() {
        let mesh = unit_square();
        let p = 3;
        let space = lagrange_space(&mesh, p);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut theta = vec![0.0; 2 * space.n_nodes];
        for t in theta.iter_mut() {
            *t = rng.random_range(-1.0..1.0);
        }
        let sc = symcurl_lagrange(&mesh, &space, &theta).unwrap();
        // div div A = dxx Axx + dxy (Axy + Ayx) + dyy Ayy from component Hessians
        let pts = [[0.2, 0.2], [0.5, 0.3], [0.1, 0.7]];
        let tab = eval_basis(sc.degree, &pts, 2).unwrap();
        let scale = sc.coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        for e in 0..mesh.n_elems() {
            let map = mesh.affine_map(e);
            for q in 0..pts.len() {
                let hxx = sc.hess_at(e, 0, &tab, &map, q);
                let hxy = sc.hess_at(e, 1, &tab, &map, q);
                let hyx = sc.hess_at(e, 2, &tab, &map, q);
                let hyy = sc.hess_at(e, 3, &tab, &map, q);
                let divdiv = hxx[0] + hxy[1] + hyx[1] + hyy[2];
                assert!(divdiv.abs() < 1e-12 * scale.max(1.0), "divdiv {divdiv}");
            }
        }
        assert!(symcurl_lagrange(&mesh, &space, &theta[1..]).is_err());
    }

    #[test]
    fn curl_of_broken_hessian_vanishes() {
        let mesh = unit_square();
        let u = project_scalar(&mesh, 4, 12, &|x, y| {
            x.powi(4) - 2.0 * x * x * y + y.powi(3) - x * y
        });
        let h = broken_hessian(&mesh, &u);
        // row-wise curl: (curl A)_i = d_x A_i2 - d_y A_i1
        let pts = [[0.25, 0.3], [0.6, 0.2]];
        let tab = eval_basis(h.degree, &pts, 1).unwrap();
        for e in 0..mesh.n_elems() {
            let map = mesh.affine_map(e);
            for q in 0..pts.len() {
                let g11 = h.grad_at(e, 0, &tab, &map, q);
                let g12 = h.grad_at(e, 1, &tab, &map, q);
                let g21 = h.grad_at(e, 2, &tab, &map, q);
                let g22 = h.grad_at(e, 3, &tab, &map, q);
                let c1 = g12[0] - g11[1];
                let c2 = g22[0] - g21[1];
                assert!(c1.abs() < 1e-10 && c2.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn generalized_hessian_reduces_to_broken_hessian_when_conforming() {
        let poly = TestProblem::Poly(PolySolution {
            terms: vec![(2, 1, 1.0), (0, 2, -1.0)],
            domain: Domain::Square,
        });
        let mesh = unit_square();
        let p = 3;
        let u = project_scalar(&mesh, p, 10, &|x, y| poly.u(x, y));
        let data = ExactData(&poly);
        let gh = generalized_hessian(&mesh, &u, &data, &AssemblyOpts::default()).unwrap();
        let bh = broken_hessian(&mesh, &u);
        let mut max = 0.0f64;
        for (a, b) in gh.coeffs.iter().zip(&bh.coeffs) {
            max = max.max((a - b).abs());
        }
        assert!(max < 1e-12);
    }
}
