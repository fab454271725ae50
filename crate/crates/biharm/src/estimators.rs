//! The two a posteriori error estimators.
//!
//! `eta` is evaluated on a generalized Hessian field H and involves no
//! stabilization term: elemental residual f - div div H, facet jumps of the
//! normal-normal component, of the combined tangential/divergence trace, the
//! elemental curl of sym H, and tangential jumps of sym H. `gimel` is the
//! classical DG residual estimator evaluated on the discrete solution
//! itself, jumps of u and grad u included. Every mesh-size weight h^lambda
//! is degree-scaled to (h/p)^lambda. On boundary facets the data-carrying
//! jumps are shifted by the clamped data; the tangential sym-H jump uses
//! tau^T sym H - (dtautau g1) tau - (dtau g2) nu.

use crate::basis::eval_basis;
use crate::field::{broken_hessian, DgField, Rank};
use crate::forms::{facet_points, AssemblyOpts, ClampedData, FormsError, TraceTables};
use crate::mesh::{Mesh, PatchKind};
use crate::quad::{quad_edge, quad_triangle};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Eta,
    Gimel,
}

#[derive(Debug, Clone)]
pub struct EtaReport {
    /// eta_{j,T}, j = 1..5 (unsquared)
    pub local: Vec<[f64; 5]>,
    pub elem: Vec<f64>,
    pub global: f64,
}

#[derive(Debug, Clone)]
pub struct GimelReport {
    /// gimel_{l,T}, l = 1..6 (unsquared)
    pub local: Vec<[f64; 6]>,
    pub elem: Vec<f64>,
    pub global: f64,
}

#[derive(Debug, Clone)]
pub struct EstimatorReport {
    pub eta: EtaReport,
    pub gimel: GimelReport,
    /// data-oscillation diagnostic (h_T/p)^2 ||f - Pi_p f||_{0,T}
    pub f_osc: Vec<f64>,
}

/// Tensor-field traces on one side of a facet: values of H, div H, the
/// tangential derivative of tau^T H nu, and sym H.
struct TensorTrace {
    /// H components (xx, xy, yx, yy) at each point
    h: Vec<[f64; 4]>,
    /// div H = (dx Hxx + dy Hxy, dx Hyx + dy Hyy)
    div: Vec<[f64; 2]>,
    /// tau . grad (tau^T H nu)
    dtau_thn: Vec<f64>,
}

fn tensor_trace(
    mesh: &Mesh,
    elem: usize,
    fid: usize,
    field: &DgField,
    traces: &TraceTables,
) -> TensorTrace {
    let (le, rev) = mesh.local_edge(elem, fid);
    let tab = traces.get(le, rev);
    let map = mesh.affine_map(elem);
    let nu = mesh.facets[fid].normal;
    let tau = mesh.facets[fid].tangent;
    let nq = traces.rule.points.len();
    let mut out = TensorTrace {
        h: vec![[0.0; 4]; nq],
        div: vec![[0.0; 2]; nq],
        dtau_thn: vec![0.0; nq],
    };
    for q in 0..nq {
        let mut grads = [[0.0; 2]; 4];
        for c in 0..4 {
            out.h[q][c] = field.value_at(elem, c, tab, q);
            grads[c] = field.grad_at(elem, c, tab, &map, q);
        }
        out.div[q] = [grads[0][0] + grads[1][1], grads[2][0] + grads[3][1]];
        // grad(tau^T H nu) = sum_ab tau_a nu_b grad H_ab, rows (a,b) in
        // component order (xx, xy, yx, yy)
        let w = [tau[0] * nu[0], tau[0] * nu[1], tau[1] * nu[0], tau[1] * nu[1]];
        let mut g = [0.0; 2];
        for c in 0..4 {
            g[0] += w[c] * grads[c][0];
            g[1] += w[c] * grads[c][1];
        }
        out.dtau_thn[q] = tau[0] * g[0] + tau[1] * g[1];
    }
    out
}

/// The stabilization-free estimator on a generalized Hessian field.
pub fn eta(
    mesh: &Mesh,
    p: usize,
    h_field: &DgField,
    f: &dyn Fn(f64, f64) -> f64,
    bdata: &dyn ClampedData,
    opts: &AssemblyOpts,
) -> Result<EtaReport, FormsError> {
    if h_field.rank != Rank::Tensor || h_field.n_elems != mesh.n_elems() {
        return Err(FormsError::FieldMismatch(
            "eta expects a tensor field on this mesh".into(),
        ));
    }
    let pf = p as f64;
    let qdeg = opts.degree_for(p)?;
    let ne = mesh.n_elems();
    let mut sq = vec![[0.0f64; 5]; ne];

    // elemental terms: (h_T/p)^4 ||f - divdiv H||^2 and (h_T/p)^2 ||curl sym H||^2
    let tri_rule = quad_triangle(qdeg).expect("rule");
    let tab = eval_basis(h_field.degree, &tri_rule.points, 2).expect("tables");
    for e in 0..ne {
        let map = mesh.affine_map(e);
        let det = map.det;
        let mut racc = 0.0;
        let mut cacc = 0.0;
        for (q, w) in tri_rule.weights.iter().enumerate() {
            let x = map.to_phys(tri_rule.points[q]);
            // divdiv H from component Hessians
            let hxx = h_field.hess_at(e, 0, &tab, &map, q);
            let hxy = h_field.hess_at(e, 1, &tab, &map, q);
            let hyx = h_field.hess_at(e, 2, &tab, &map, q);
            let hyy = h_field.hess_at(e, 3, &tab, &map, q);
            let divdiv = hxx[0] + hxy[1] + hyx[1] + hyy[2];
            let r = f(x[0], x[1]) - divdiv;
            racc += w * r * r;
            // curl sym H from component gradients
            let g11 = h_field.grad_at(e, 0, &tab, &map, q);
            let g12 = h_field.grad_at(e, 1, &tab, &map, q);
            let g21 = h_field.grad_at(e, 2, &tab, &map, q);
            let g22 = h_field.grad_at(e, 3, &tab, &map, q);
            let c1 = 0.5 * (g12[0] + g21[0]) - g11[1];
            let c2 = g22[0] - 0.5 * (g12[1] + g21[1]);
            cacc += w * (c1 * c1 + c2 * c2);
        }
        let ht = mesh.h_t[e] / pf;
        sq[e][0] = ht.powi(4) * det * racc;
        sq[e][3] = ht.powi(2) * det * cacc;
    }

    // facet terms
    let edge_rule = quad_edge(qdeg).expect("rule");
    let traces = TraceTables::build(h_field.degree, &edge_rule, 1);
    let nq = edge_rule.points.len();
    for (fid, fct) in mesh.facets.iter().enumerate() {
        let sides: Vec<usize> = fct.elems.iter().flatten().cloned().collect();
        let interior = sides.len() == 2;
        let hf = fct.h_f / pf;
        let nu = fct.normal;
        let tau = fct.tangent;
        let trs: Vec<TensorTrace> = sides
            .iter()
            .map(|&e| tensor_trace(mesh, e, fid, h_field, &traces))
            .collect();
        if interior {
            // eta_2: nu^T [H] nu; eta_3: dtau(tau^T [H] nu) + nu^T [div H]
            let mut acc2 = 0.0;
            let mut acc3 = 0.0;
            for q in 0..nq {
                let jh: [f64; 4] =
                    std::array::from_fn(|c| trs[0].h[q][c] - trs[1].h[q][c]);
                let nhn = nu[0] * (nu[0] * jh[0] + nu[1] * jh[1])
                    + nu[1] * (nu[0] * jh[2] + nu[1] * jh[3]);
                let jdiv = [
                    trs[0].div[q][0] - trs[1].div[q][0],
                    trs[0].div[q][1] - trs[1].div[q][1],
                ];
                let t3 = (trs[0].dtau_thn[q] - trs[1].dtau_thn[q])
                    + (nu[0] * jdiv[0] + nu[1] * jdiv[1]);
                let w = edge_rule.weights[q];
                acc2 += w * nhn * nhn;
                acc3 += w * t3 * t3;
            }
            for &e in &sides {
                sq[e][1] += 0.5 * hf * fct.h_f * acc2;
                sq[e][2] += 0.5 * hf.powi(3) * fct.h_f * acc3;
            }
        }
        // eta_5: tau^T [sym H] over all facets, data correction on the boundary
        let pts = facet_points(mesh, fid, &edge_rule);
        let mut acc5 = 0.0;
        for q in 0..nq {
            let mut j: [f64; 4] = trs[0].h[q];
            if interior {
                for c in 0..4 {
                    j[c] -= trs[1].h[q][c];
                }
            }
            let s12 = 0.5 * (j[1] + j[2]);
            // tau^T sym J: components (tau . column b)
            let mut v = [
                tau[0] * j[0] + tau[1] * s12,
                tau[0] * s12 + tau[1] * j[3],
            ];
            if !interior {
                let [x, y] = pts[q];
                let dtt1 = bdata.dtautau_g1(x, y, tau);
                let dt2 = bdata.dtau_g2(x, y, nu, tau);
                v[0] -= dtt1 * tau[0] + dt2 * nu[0];
                v[1] -= dtt1 * tau[1] + dt2 * nu[1];
            }
            acc5 += edge_rule.weights[q] * (v[0] * v[0] + v[1] * v[1]);
        }
        for &e in &sides {
            sq[e][4] += hf * fct.h_f * acc5;
        }
    }

    finalize_eta(sq)
}

fn finalize_eta(sq: Vec<[f64; 5]>) -> Result<EtaReport, FormsError> {
    let local: Vec<[f64; 5]> = sq
        .iter()
        .map(|row| std::array::from_fn(|j| row[j].sqrt()))
        .collect();
    let elem: Vec<f64> = sq.iter().map(|row| row.iter().sum::<f64>().sqrt()).collect();
    let global = elem.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(EtaReport { local, elem, global })
}

/// The classical DG residual estimator on the discrete solution.
pub fn gimel(
    mesh: &Mesh,
    p: usize,
    u_h: &DgField,
    f: &dyn Fn(f64, f64) -> f64,
    bdata: &dyn ClampedData,
    opts: &AssemblyOpts,
) -> Result<GimelReport, FormsError> {
    if u_h.rank != Rank::Scalar || u_h.n_elems != mesh.n_elems() {
        return Err(FormsError::FieldMismatch(
            "gimel expects a scalar field on this mesh".into(),
        ));
    }
    let pf = p as f64;
    let qdeg = opts.degree_for(p)?;
    let ne = mesh.n_elems();
    let mut sq = vec![[0.0f64; 6]; ne];

    // elemental residual via the broken Hessian field (divdiv D2 u = Delta^2 u)
    let hess_field = broken_hessian(mesh, u_h);
    let tri_rule = quad_triangle(qdeg).expect("rule");
    let htab = eval_basis(hess_field.degree, &tri_rule.points, 2).expect("tables");
    for e in 0..ne {
        let map = mesh.affine_map(e);
        let det = map.det;
        let mut racc = 0.0;
        for (q, w) in tri_rule.weights.iter().enumerate() {
            let x = map.to_phys(tri_rule.points[q]);
            let hxx = hess_field.hess_at(e, 0, &htab, &map, q);
            let hxy = hess_field.hess_at(e, 1, &htab, &map, q);
            let hyx = hess_field.hess_at(e, 2, &htab, &map, q);
            let hyy = hess_field.hess_at(e, 3, &htab, &map, q);
            let divdiv = hxx[0] + hxy[1] + hyx[1] + hyy[2];
            let r = f(x[0], x[1]) - divdiv;
            racc += w * r * r;
        }
        sq[e][0] = (mesh.h_t[e] / pf).powi(4) * det * racc;
    }

    // facet terms from traces of u_h and its derivatives
    let edge_rule = quad_edge(qdeg).expect("rule");
    let traces = TraceTables::build(u_h.degree, &edge_rule, 3);
    let nq = edge_rule.points.len();
    for (fid, fct) in mesh.facets.iter().enumerate() {
        let sides: Vec<usize> = fct.elems.iter().flatten().cloned().collect();
        let interior = sides.len() == 2;
        let hf = fct.h_f / pf;
        let nu = fct.normal;
        let tau = fct.tangent;
        let pts = facet_points(mesh, fid, &edge_rule);

        // per-side values, gradients, Hessians, div D2
        let mut vals = vec![vec![0.0; nq]; sides.len()];
        let mut grads = vec![vec![[0.0; 2]; nq]; sides.len()];
        let mut hesses = vec![vec![[0.0; 3]; nq]; sides.len()];
        let mut divh = vec![vec![[0.0; 2]; nq]; sides.len()];
        for (s, &e) in sides.iter().enumerate() {
            let (le, rev) = mesh.local_edge(e, fid);
            let tab = traces.get(le, rev);
            let map = mesh.affine_map(e);
            for q in 0..nq {
                vals[s][q] = u_h.value_at(e, 0, tab, q);
                grads[s][q] = u_h.grad_at(e, 0, tab, &map, q);
                hesses[s][q] = u_h.hess_at(e, 0, tab, &map, q);
                let t = u_h.third_at(e, 0, tab, &map, q);
                divh[s][q] = [t[0] + t[2], t[1] + t[3]];
            }
        }

        let (mut a2, mut a3, mut a4, mut a5, mut a6) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for q in 0..nq {
            let w = edge_rule.weights[q];
            // [u], [grad u] with data on the boundary
            let mut ju = vals[0][q];
            let mut jg = grads[0][q];
            if interior {
                ju -= vals[1][q];
                jg[0] -= grads[1][q][0];
                jg[1] -= grads[1][q][1];
            } else {
                let [x, y] = pts[q];
                let g1 = bdata.g1(x, y);
                let g2 = bdata.g2(x, y, nu);
                let dt1 = bdata.dtau_g1(x, y, tau);
                ju -= g1;
                jg[0] -= g2 * nu[0] + dt1 * tau[0];
                jg[1] -= g2 * nu[1] + dt1 * tau[1];
            }
            a2 += w * ju * ju;
            a3 += w * (jg[0] * jg[0] + jg[1] * jg[1]);

            // Hessian jumps
            if interior {
                let dh = [
                    hesses[0][q][0] - hesses[1][q][0],
                    hesses[0][q][1] - hesses[1][q][1],
                    hesses[0][q][2] - hesses[1][q][2],
                ];
                let hn = [dh[0] * nu[0] + dh[1] * nu[1], dh[1] * nu[0] + dh[2] * nu[1]];
                a4 += w * (hn[0] * hn[0] + hn[1] * hn[1]);
                let ht = [dh[0] * tau[0] + dh[1] * tau[1], dh[1] * tau[0] + dh[2] * tau[1]];
                a5 += w * (ht[0] * ht[0] + ht[1] * ht[1]);
                let jd = [divh[0][q][0] - divh[1][q][0], divh[0][q][1] - divh[1][q][1]];
                let jdn = jd[0] * nu[0] + jd[1] * nu[1];
                a6 += w * jdn * jdn;
            } else {
                // tangential Hessian trace is data-corrected on the boundary,
                // matching the boundary treatment of the sym-H estimator
                let [x, y] = pts[q];
                let dh = hesses[0][q];
                let mut ht = [dh[0] * tau[0] + dh[1] * tau[1], dh[1] * tau[0] + dh[2] * tau[1]];
                let dtt1 = bdata.dtautau_g1(x, y, tau);
                let dt2 = bdata.dtau_g2(x, y, nu, tau);
                ht[0] -= dtt1 * tau[0] + dt2 * nu[0];
                ht[1] -= dtt1 * tau[1] + dt2 * nu[1];
                a5 += w * (ht[0] * ht[0] + ht[1] * ht[1]);
            }
        }
        for &e in &sides {
            sq[e][1] += fct.h_f * a2 / hf.powi(3);
            sq[e][2] += fct.h_f * a3 / hf;
            sq[e][3] += fct.h_f * a4 * hf;
            sq[e][4] += fct.h_f * a5 * hf;
            sq[e][5] += fct.h_f * a6 * hf.powi(3);
        }
    }

    let local: Vec<[f64; 6]> = sq
        .iter()
        .map(|row| std::array::from_fn(|j| row[j].sqrt()))
        .collect();
    let elem: Vec<f64> = sq.iter().map(|row| row.iter().sum::<f64>().sqrt()).collect();
    let global = elem.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(GimelReport { local, elem, global })
}

/// Data oscillation diagnostic: (h_T/p)^2 ||f - Pi_p f||_{0,T} per element.
pub fn f_oscillation(
    mesh: &Mesh,
    p: usize,
    f: &dyn Fn(f64, f64) -> f64,
    opts: &AssemblyOpts,
) -> Result<Vec<f64>, FormsError> {
    let qdeg = opts.degree_for(p)?.max(2 * p + 8);
    let rule = quad_triangle(qdeg).expect("rule");
    let tab = eval_basis(p, &rule.points, 0).expect("tables");
    let dim = tab.dim;
    let pf = p as f64;
    let mut out = Vec::with_capacity(mesh.n_elems());
    for e in 0..mesh.n_elems() {
        let map = mesh.affine_map(e);
        let vals: Vec<f64> = rule
            .points
            .iter()
            .map(|&r| {
                let x = map.to_phys(r);
                f(x[0], x[1])
            })
            .collect();
        let mut coeff = vec![0.0; dim];
        for (k, c) in coeff.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (q, w) in rule.weights.iter().enumerate() {
                acc += w * vals[q] * tab.val(k, q);
            }
            *c = acc;
        }
        let mut err = 0.0;
        for (q, w) in rule.weights.iter().enumerate() {
            let mut proj = 0.0;
            for k in 0..dim {
                proj += coeff[k] * tab.val(k, q);
            }
            let d = vals[q] - proj;
            err += w * d * d;
        }
        out.push((mesh.h_t[e] / pf).powi(2) * (map.det * err).sqrt());
    }
    Ok(out)
}

/// Run both estimators plus the oscillation diagnostic.
pub fn estimate(
    mesh: &Mesh,
    p: usize,
    u_h: &DgField,
    h_field: &DgField,
    f: &dyn Fn(f64, f64) -> f64,
    bdata: &dyn ClampedData,
    opts: &AssemblyOpts,
) -> Result<EstimatorReport, FormsError> {
    Ok(EstimatorReport {
        eta: eta(mesh, p, h_field, f, bdata, opts)?,
        gimel: gimel(mesh, p, u_h, f, bdata, opts)?,
        f_osc: f_oscillation(mesh, p, f, opts)?,
    })
}

/// Largest ratio eta_T / sqrt(sum of gimel_T'^2 over the vertex patch of T);
/// the patchwise comparison constant of the two estimators.
pub fn comparison_constant(mesh: &Mesh, er: &EtaReport, gr: &GimelReport) -> f64 {
    let mut worst = 0.0f64;
    for t in 0..mesh.n_elems() {
        if er.elem[t] == 0.0 {
            continue;
        }
        let patch = mesh
            .patch(PatchKind::ElementVertex(t))
            .expect("element id valid");
        let denom: f64 = patch.elems.iter().map(|&e| gr.elem[e] * gr.elem[e]).sum();
        if denom > 0.0 {
            worst = worst.max(er.elem[t] / denom.sqrt());
        }
    }
    worst
}

/// Per-element indicator table: element id, eta_{1..5,T}, gimel_{1..6,T}.
pub fn write_indicator_csv(report: &EstimatorReport, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "elem,eta1,eta2,eta3,eta4,eta5,eta_t,gimel1,gimel2,gimel3,gimel4,gimel5,gimel6,gimel_t,f_osc"
    )?;
    for e in 0..report.eta.local.len() {
        let l = &report.eta.local[e];
        let g = &report.gimel.local[e];
        write!(out, "{e}")?;
        for v in l {
            write!(out, ",{v:.12e}")?;
        }
        write!(out, ",{:.12e}", report.eta.elem[e])?;
        for v in g {
            write!(out, ",{v:.12e}")?;
        }
        writeln!(out, ",{:.12e},{:.12e}", report.gimel.elem[e], report.f_osc[e])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::project_scalar;
    use crate::forms::{
        assemble_system, generalized_hessian, ExactData, HomogeneousData, PenaltyConfig,
    };
    use crate::linalg::solve;
    use crate::mesh::{build_mesh, uniform_refine, unit_square};
    use crate::problems::{Domain, PolySolution, TestProblem};

    #[test]
    fn exact_polynomial_solution_has_zero_indicators() {
        let poly = TestProblem::Poly(PolySolution {
            terms: vec![(3, 1, 1.0), (4, 0, -0.5), (2, 2, 0.75), (1, 1, -1.0)],
            domain: Domain::Square,
        });
        let mesh = uniform_refine(&unit_square());
        let p = 4;
        let pen = PenaltyConfig::degree_scaled(p);
        let opts = AssemblyOpts::default();
        let data = ExactData(&poly);
        let (a, b) = assemble_system(&mesh, p, &pen, &|x, y| poly.rhs(x, y), &data, &opts).unwrap();
        let x = solve(&a, &b).unwrap();
        let u_h = DgField {
            rank: Rank::Scalar,
            degree: p,
            n_elems: mesh.n_elems(),
            coeffs: x,
        };
        let h = generalized_hessian(&mesh, &u_h, &data, &opts).unwrap();
        let rep = estimate(&mesh, p, &u_h, &h, &|x, y| poly.rhs(x, y), &data, &opts).unwrap();
        assert!(rep.eta.global < 1e-9, "eta = {}", rep.eta.global);
        assert!(rep.gimel.global < 1e-8, "gimel = {}", rep.gimel.global);
        for e in 0..mesh.n_elems() {
            for j in 0..5 {
                assert!(rep.eta.local[e][j] < 1e-9);
            }
            for l in 0..6 {
                assert!(rep.gimel.local[e][l] < 1e-8);
            }
        }
    }

    #[test]
    fn eta4_vanishes_on_broken_hessian_fields() {
        // a pure broken Hessian has zero row-wise curl, so eta_4 = 0
        let mesh = unit_square();
        let u = project_scalar(&mesh, 3, 10, &|x, y| x.powi(3) - x * y * y + y.powi(3));
        let h = broken_hessian(&mesh, &u);
        let rep = eta(
            &mesh,
            3,
            &h,
            &|_, _| 0.0,
            &HomogeneousData,
            &AssemblyOpts::default(),
        )
        .unwrap();
        for e in 0..mesh.n_elems() {
            assert!(rep.local[e][3] < 1e-11, "eta4 = {}", rep.local[e][3]);
        }
    }

    #[test]
    fn gimel2_unit_jump_weight() {
        // interior facet of unit length, p = 2: a unit jump contributes
        // (h_F/p)^{-3} * 1 = 8 to the squared second indicator
        let mesh = build_mesh(
            vec![[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0]],
            vec![[0, 1, 2], [0, 3, 1]],
        )
        .unwrap();
        let f = mesh.facets.iter().position(|f| !f.is_boundary()).unwrap();
        assert!((mesh.facets[f].h_f - 1.0).abs() < 1e-14);
        let p = 2;
        let one = project_scalar(&mesh, p, 6, &|_, _| 1.0);
        let mut u = DgField::zeros(Rank::Scalar, p, 2);
        for k in 0..u.dim() {
            u.comp_mut(0, 0)[k] = one.comp(0, 0)[k];
        }
        let rep = gimel(
            &mesh,
            p,
            &u,
            &|_, _| 0.0,
            &HomogeneousData,
            &AssemblyOpts::default(),
        )
        .unwrap();
        // element 1 is zero, so its only jump is across the shared facet
        let got = rep.local[1][1];
        assert!(
            (got - 8.0f64.sqrt()).abs() < 1e-10,
            "gimel_2 on the zero side: {got}, want sqrt(8)"
        );
    }

    #[test]
    fn report_square_sums_consistent() {
        let mesh = uniform_refine(&unit_square());
        let p = 2;
        let u = project_scalar(&mesh, p, 8, &|x, y| x * x * y + y * y);
        let h = broken_hessian(&mesh, &u);
        let opts = AssemblyOpts::default();
        let rep = estimate(&mesh, p, &u, &h, &|_, _| 1.0, &HomogeneousData, &opts).unwrap();
        let mut total = 0.0;
        for e in 0..mesh.n_elems() {
            let s: f64 = rep.eta.local[e].iter().map(|v| v * v).sum();
            assert!((s - rep.eta.elem[e] * rep.eta.elem[e]).abs() <= 1e-12 * s.max(1e-30));
            total += rep.eta.elem[e] * rep.eta.elem[e];
        }
        assert!((total - rep.eta.global * rep.eta.global).abs() <= 1e-12 * total);
        assert!(rep.eta.local.iter().flatten().all(|v| *v >= 0.0));
        assert!(rep.gimel.local.iter().flatten().all(|v| *v >= 0.0));
    }

    #[test]
    fn indicator_csv_shape() {
        let mesh = unit_square();
        let p = 2;
        let u = project_scalar(&mesh, p, 8, &|x, y| x * y);
        let h = broken_hessian(&mesh, &u);
        let opts = AssemblyOpts::default();
        let rep = estimate(&mesh, p, &u, &h, &|_, _| 0.0, &HomogeneousData, &opts).unwrap();
        let mut buf = Vec::new();
        write_indicator_csv(&rep, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + mesh.n_elems());
        assert_eq!(lines[0].split(',').count(), 15);
        assert_eq!(lines[1].split(',').count(), 15);
    }
}
