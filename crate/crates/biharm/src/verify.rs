//! The invariant suite: machine-checkable identities behind the scheme,
//! each reported with its measured residual and threshold.
//!
//! Checks marked "degenerate" intentionally break an assumption (zero
//! stabilization) and pass when the breakage is detected.

use crate::adapt::doerfler_mark;
use crate::basis::{basis_dim, eval_basis, lattice_nodes};
use crate::driver::level_solve;
use crate::estimators::comparison_constant;
use crate::field::{broken_hessian, project_scalar, DgField, Rank};
use crate::forms::{
    apply_bilinear, apply_bilinear_facet, dg_norm, facet_points, lagrange_space, lifting,
    symcurl_lagrange, AssemblyOpts, ClampedData, ExactData, PenaltyConfig, TraceTables,
};
use crate::mesh::{uniform_refine, unit_square, Mesh};
use crate::problems::{Domain, PolySolution, TestProblem};
use crate::quad::{quad_edge, quad_triangle};
use rand::Rng;
use rand::SeedableRng;

pub const TOL_LIFTING_VANISH: f64 = 1e-12;
pub const TOL_FORM_EQUIV: f64 = 1e-10;
pub const TOL_GH2: f64 = 1e-8;
pub const TOL_GH1: f64 = 1e-8;
pub const TOL_GREEN: f64 = 1e-12;
pub const TOL_COMPLEX: f64 = 1e-12;
pub const TOL_REPRODUCTION: f64 = 1e-8;
/// Ceiling for the patchwise eta/gimel comparison constant. Measured values
/// across p = 2..5 on both domains peak at 10.2 on the coarsest singular
/// mesh and decrease under refinement; the ceiling asserts uniform
/// boundedness with headroom.
pub const TOL_COMPARISON: f64 = 20.0;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    /// measured residual or recorded constant
    pub measured: f64,
    /// pass iff measured <= threshold (or detection succeeded)
    pub threshold: f64,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn bounded(name: &'static str, measured: f64, threshold: f64, detail: String) -> CheckResult {
        CheckResult {
            name,
            measured,
            threshold,
            pass: measured.is_finite() && measured <= threshold,
            detail,
        }
    }
}

fn random_field(p: usize, n_elems: usize, seed: u64) -> DgField {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut f = DgField::zeros(Rank::Scalar, p, n_elems);
    for c in f.coeffs.iter_mut() {
        *c = rng.random_range(-1.0..1.0);
    }
    f
}

fn test_cubic() -> TestProblem {
    TestProblem::Poly(PolySolution {
        terms: vec![(3, 0, 0.5), (2, 1, -1.0), (1, 2, 0.7), (0, 3, 0.25), (1, 1, 2.0)],
        domain: Domain::Square,
    })
}

/// Lifting vanishes on fields without jumps (including matched boundary
/// data), coefficientwise.
pub fn check_lifting_vanishing() -> CheckResult {
    let poly = test_cubic();
    let mesh = uniform_refine(&unit_square());
    let p = 3;
    let v = project_scalar(&mesh, p, 2 * p + 4, &|x, y| poly.u(x, y));
    let data = ExactData(&poly);
    let l = lifting(&mesh, p, &v, &data, &AssemblyOpts::default()).expect("lifting");
    let max = l.coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    CheckResult::bounded(
        "lifting_vanishing",
        max,
        TOL_LIFTING_VANISH,
        "max |L(v)| coefficient for a jump-free cubic".into(),
    )
}

/// The facet-average and lifting writings of the bilinear form agree.
pub fn check_bilinear_equivalence(pen: &PenaltyConfig) -> CheckResult {
    let mesh = uniform_refine(&unit_square());
    let p = 2;
    let opts = AssemblyOpts::default();
    let qdeg = 2 * p + 4;
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let u = random_field(p, mesh.n_elems(), 10_000 + seed);
        let v = random_field(p, mesh.n_elems(), 20_000 + seed);
        let b1 = apply_bilinear(&mesh, &u, &v, pen, &opts).expect("lift route");
        let b2 = apply_bilinear_facet(&mesh, &u, &v, pen, &opts).expect("facet route");
        let scale = dg_norm(&mesh, &u, qdeg) * dg_norm(&mesh, &v, qdeg);
        worst = worst.max((b1 - b2).abs() / scale);
    }
    CheckResult::bounded(
        "bilinear_form_equivalence",
        worst,
        TOL_FORM_EQUIV,
        "max |B_facet - B_lift| / (|u|_DG |v|_DG) over 50 random pairs".into(),
    )
}

/// Residual of the exact discrete identity behind the generalized-Hessian
/// orthogonality: for every vector Lagrange shape, (H, symcurl theta)
/// equals the interior vertex-fan terms sign * {u_h} * [tau^T A nu] plus
/// the boundary-data terms. For test fields whose symcurl is continuous at
/// the vertices the right-hand side reduces to the data terms and the
/// orthogonality holds verbatim.
pub fn gh2_residual(
    mesh: &Mesh,
    p: usize,
    u_h: &DgField,
    h_field: &DgField,
    bdata: &dyn ClampedData,
    opts: &AssemblyOpts,
) -> f64 {
    let space = lagrange_space(mesh, p);
    let qdeg = opts.degree_for(p).expect("quadrature degree");
    let rule = quad_triangle(qdeg).expect("rule");
    let nb = &space.nodal;
    let dim = basis_dim(p);
    let nodal_tab = eval_basis(p, &rule.points, 1).expect("tables");
    let htab = eval_basis(h_field.degree, &rule.points, 0).expect("tables");
    let n = 2 * space.n_nodes;
    let mut r = vec![0.0; n];
    let mut s_sq = vec![0.0; n];

    // element moments of H against symcurl of each nodal shape
    let nq = rule.points.len();
    let mut ngrad = vec![[0.0; 2]; dim * nq];
    for e in 0..mesh.n_elems() {
        let map = mesh.affine_map(e);
        let det = map.det;
        for j in 0..dim {
            for q in 0..nq {
                let mut g = [0.0; 2];
                for k in 0..dim {
                    let gk = nodal_tab.gr(k, q);
                    g[0] += nb.to_modal[(k, j)] * gk[0];
                    g[1] += nb.to_modal[(k, j)] * gk[1];
                }
                ngrad[j * nq + q] = map.push_grad(g);
            }
        }
        for q in 0..nq {
            let w = rule.weights[q] * det;
            let hxx = h_field.value_at(e, 0, &htab, q);
            let hxy = h_field.value_at(e, 1, &htab, q);
            let hyx = h_field.value_at(e, 2, &htab, q);
            let hyy = h_field.value_at(e, 3, &htab, q);
            let hsym = 0.5 * (hxy + hyx);
            for j in 0..dim {
                let g = ngrad[j * nq + q];
                let gid = space.elem_nodes[e][j];
                // theta = (N, 0): (H, symcurl) = Hxx N_y - sym(H)_12 N_x
                r[2 * gid] += w * (hxx * g[1] - hsym * g[0]);
                s_sq[2 * gid] += w * (g[1] * g[1] + 0.5 * g[0] * g[0]);
                // theta = (0, N): (H, symcurl) = sym(H)_12 N_y - Hyy N_x
                r[2 * gid + 1] += w * (hsym * g[1] - hyy * g[0]);
                s_sq[2 * gid + 1] += w * (g[0] * g[0] + 0.5 * g[1] * g[1]);
            }
        }
    }

    let mut d = vec![0.0; n];

    // interior vertex-fan terms: sign * {u_h}(v) * [tau^T A nu]_F(v), where
    // A is the symcurl of the nodal shape on each side
    for fct in mesh.facets.iter() {
        if fct.is_boundary() {
            continue;
        }
        let (nu, tau) = (fct.normal, fct.tangent);
        let elems: Vec<usize> = fct.elems.iter().flatten().cloned().collect();
        for (vid, sgn) in [(fct.verts[0], -1.0), (fct.verts[1], 1.0)] {
            let xv = mesh.vertices[vid];
            let mut avg_u = 0.0;
            for &elem in &elems {
                let map = mesh.affine_map(elem);
                let rv = map.to_ref(xv);
                let tab = eval_basis(p, &[rv], 0).expect("tables");
                avg_u += 0.5 * u_h.value_at(elem, 0, &tab, 0);
            }
            for (sidx, &elem) in elems.iter().enumerate() {
                let side_sgn = if sidx == 0 { 1.0 } else { -1.0 };
                let map = mesh.affine_map(elem);
                let rv = map.to_ref(xv);
                let tab = eval_basis(p, &[rv], 1).expect("tables");
                for j in 0..dim {
                    let mut g = [0.0; 2];
                    for k in 0..dim {
                        let gk = tab.gr(k, 0);
                        g[0] += nb.to_modal[(k, j)] * gk[0];
                        g[1] += nb.to_modal[(k, j)] * gk[1];
                    }
                    let g = map.push_grad(g);
                    let gid = space.elem_nodes[elem][j];
                    // theta = (N, 0): A = [[N_y, -N_x/2], [-N_x/2, 0]]
                    {
                        let an = [g[1] * nu[0] - 0.5 * g[0] * nu[1], -0.5 * g[0] * nu[0]];
                        let tan = tau[0] * an[0] + tau[1] * an[1];
                        d[2 * gid] += sgn * avg_u * side_sgn * tan;
                    }
                    // theta = (0, N): A = [[0, N_y/2], [N_y/2, -N_x]]
                    {
                        let an = [0.5 * g[1] * nu[1], 0.5 * g[1] * nu[0] - g[0] * nu[1]];
                        let tan = tau[0] * an[0] + tau[1] * an[1];
                        d[2 * gid + 1] += sgn * avg_u * side_sgn * tan;
                    }
                }
            }
        }
    }

    // boundary-data terms of the identity (vanish for homogeneous data)
    let edge_rule = quad_edge(qdeg).expect("rule");
    let traces = TraceTables::build(p, &edge_rule, 2);
    for (fid, fct) in mesh.facets.iter().enumerate() {
        if !fct.is_boundary() {
            continue;
        }
        let elem = fct.elems[0].expect("boundary facet has one element");
        let (le, rev) = mesh.local_edge(elem, fid);
        let tab = traces.get(le, rev);
        let map = mesh.affine_map(elem);
        let (nu, tau) = (fct.normal, fct.tangent);
        let pts = facet_points(mesh, fid, &edge_rule);
        let h = fct.h_f;
        for q in 0..edge_rule.points.len() {
            let [x, y] = pts[q];
            let g1 = bdata.g1(x, y);
            let g2 = bdata.g2(x, y, nu);
            let dt1 = bdata.dtau_g1(x, y, tau);
            let w = edge_rule.weights[q] * h;
            for j in 0..dim {
                let mut g = [0.0; 2];
                let mut hess = [0.0; 3];
                for k in 0..dim {
                    let c = nb.to_modal[(k, j)];
                    let gk = tab.gr(k, q);
                    g[0] += c * gk[0];
                    g[1] += c * gk[1];
                    let hk = tab.hs(k, q);
                    hess[0] += c * hk[0];
                    hess[1] += c * hk[1];
                    hess[2] += c * hk[2];
                }
                let g = map.push_grad(g);
                let hess = map.push_hess(hess);
                let gid = space.elem_nodes[elem][j];
                // theta = (N, 0): A = [[N_y, -N_x/2], [-N_x/2, 0]],
                // div A = (N_xy/2, -N_xx/2)
                {
                    let a = [[g[1], -0.5 * g[0]], [-0.5 * g[0], 0.0]];
                    let diva = [0.5 * hess[1], -0.5 * hess[0]];
                    d[2 * gid] += w * data_term(&a, &diva, nu, tau, g1, g2, dt1);
                }
                // theta = (0, N): A = [[0, N_y/2], [N_y/2, -N_x]],
                // div A = (N_yy/2, -N_xy/2)
                {
                    let a = [[0.0, 0.5 * g[1]], [0.5 * g[1], -g[0]]];
                    let diva = [0.5 * hess[2], -0.5 * hess[1]];
                    d[2 * gid + 1] += w * data_term(&a, &diva, nu, tau, g1, g2, dt1);
                }
            }
        }
    }

    let h_norm = crate::forms::l2_inner(mesh, h_field, h_field).sqrt();
    let mut worst = 0.0f64;
    for i in 0..n {
        let scale = h_norm * s_sq[i].sqrt() + 1e-14 * h_norm.max(1.0);
        worst = worst.max((r[i] - d[i]).abs() / scale);
    }
    worst
}

/// Verbatim orthogonality against test fields whose symcurl is continuous
/// at vertices (global polynomial vector fields up to degree p).
pub fn gh2_smooth_residual(
    mesh: &Mesh,
    p: usize,
    h_field: &DgField,
    bdata: &dyn ClampedData,
    opts: &AssemblyOpts,
) -> f64 {
    let space = lagrange_space(mesh, p);
    let h_norm = crate::forms::l2_inner(mesh, h_field, h_field).sqrt();
    let mut worst = 0.0f64;
    let mut check = |theta: Vec<f64>| {
        let sc = symcurl_lagrange(mesh, &space, &theta).expect("symcurl");
        let sn = crate::forms::l2_inner(mesh, &sc, &sc).sqrt();
        if sn < 1e-14 {
            return;
        }
        let ip = crate::forms::l2_inner(mesh, h_field, &sc);
        let d = gh2_boundary_moment(mesh, &space, &theta, bdata, opts);
        worst = worst.max((ip - d).abs() / (h_norm * sn));
    };
    // monomial vector fields x^a y^b e_c for a+b <= p
    for c in 0..2usize {
        for a in 0..=p {
            for b in 0..=(p - a) {
                if a + b < 1 {
                    continue; // constants have zero symcurl
                }
                let theta = space.interpolate(mesh, &|x: f64, y: f64| {
                    let v = x.powi(a as i32) * y.powi(b as i32);
                    if c == 0 {
                        [v, 0.0]
                    } else {
                        [0.0, v]
                    }
                });
                check(theta);
            }
        }
    }
    worst
}

/// Boundary-data moment -(g1, nu.divA) + (g2, nu^T A nu) + (dtau g1,
/// tau^T A nu) for A = symcurl theta, by facet quadrature.
fn gh2_boundary_moment(
    mesh: &Mesh,
    space: &crate::forms::LagrangeSpace,
    theta: &[f64],
    bdata: &dyn ClampedData,
    opts: &AssemblyOpts,
) -> f64 {
    let p = space.p;
    let qdeg = opts.degree_for(p).expect("degree");
    let edge_rule = quad_edge(qdeg).expect("rule");
    let traces = TraceTables::build(p, &edge_rule, 2);
    let mut total = 0.0;
    for (fid, fct) in mesh.facets.iter().enumerate() {
        if !fct.is_boundary() {
            continue;
        }
        let elem = fct.elems[0].expect("boundary facet");
        let (le, rev) = mesh.local_edge(elem, fid);
        let tab = traces.get(le, rev);
        let map = mesh.affine_map(elem);
        let (nu, tau) = (fct.normal, fct.tangent);
        let pts = facet_points(mesh, fid, &edge_rule);
        let cx = space.modal_coeffs(elem, theta, 0);
        let cy = space.modal_coeffs(elem, theta, 1);
        let dim = basis_dim(p);
        for q in 0..edge_rule.points.len() {
            let [x, y] = pts[q];
            let g1 = bdata.g1(x, y);
            let g2 = bdata.g2(x, y, nu);
            let dt1 = bdata.dtau_g1(x, y, tau);
            let w = edge_rule.weights[q] * fct.h_f;
            let (mut gx, mut gy) = ([0.0; 2], [0.0; 2]);
            let (mut hx, mut hy) = ([0.0; 3], [0.0; 3]);
            for k in 0..dim {
                let gk = tab.gr(k, q);
                gx[0] += cx[k] * gk[0];
                gx[1] += cx[k] * gk[1];
                gy[0] += cy[k] * gk[0];
                gy[1] += cy[k] * gk[1];
                let hk = tab.hs(k, q);
                for d in 0..3 {
                    hx[d] += cx[k] * hk[d];
                    hy[d] += cy[k] * hk[d];
                }
            }
            let gx = map.push_grad(gx);
            let gy = map.push_grad(gy);
            let hx = map.push_hess(hx);
            let hy = map.push_hess(hy);
            // A = symcurl theta; div A rows from second derivatives
            let a = [
                [gx[1], 0.5 * (-gx[0] + gy[1])],
                [0.5 * (-gx[0] + gy[1]), -gy[0]],
            ];
            // divA_1 = dx A11 + dy A12; divA_2 = dx A21 + dy A22
            let diva = [
                0.5 * (hx[1] + hy[2]),
                -0.5 * (hx[0] + hy[1]),
            ];
            total += w * data_term(&a, &diva, nu, tau, g1, g2, dt1);
        }
    }
    total
}


/// -(g1, nu . div A) + (g2, nu^T A nu) + (dtau g1, tau^T A nu), pointwise.
fn data_term(
    a: &[[f64; 2]; 2],
    diva: &[f64; 2],
    nu: [f64; 2],
    tau: [f64; 2],
    g1: f64,
    g2: f64,
    dt1: f64,
) -> f64 {
    let an = [
        a[0][0] * nu[0] + a[0][1] * nu[1],
        a[1][0] * nu[0] + a[1][1] * nu[1],
    ];
    let nan = nu[0] * an[0] + nu[1] * an[1];
    let tan = tau[0] * an[0] + tau[1] * an[1];
    let ndiva = nu[0] * diva[0] + nu[1] * diva[1];
    -g1 * ndiva + g2 * nan + dt1 * tan
}

/// GH orthogonality on the three solved verification problems.
pub fn check_gh2(pen_p2: &PenaltyConfig) -> Vec<CheckResult> {
    let mut out = Vec::new();
    // homogeneous square problem, p = 3, level 2
    {
        let problem = TestProblem::SquareSine;
        let mesh = crate::mesh::uniform_refine_nvb(&problem.initial_mesh()).expect("mesh");
        let opts = AssemblyOpts::default();
        let pen = PenaltyConfig::degree_scaled(3);
        let data = level_solve(&mesh, &problem, 3, &pen, &opts, 1).expect("solve");
        let res = gh2_residual(&mesh, 3, &data.u_h, &data.h_field, &ExactData(&problem), &opts);
        out.push(CheckResult::bounded(
            "gh_identity_square",
            res,
            TOL_GH2,
            "exact symcurl-moment identity of H (vertex terms included), square-sine p=3".into(),
        ));
        let smooth = gh2_smooth_residual(&mesh, 3, &data.h_field, &ExactData(&problem), &opts);
        out.push(CheckResult::bounded(
            "gh_orthogonality_smooth_square",
            smooth,
            TOL_GH2,
            "verbatim orthogonality against polynomial test fields, square-sine p=3".into(),
        ));
    }
    // singular problem with inhomogeneous boundary data, p = 2; a solver
    // breakdown (degenerate penalty override) is reported, not fatal
    {
        let problem = TestProblem::LshapeSingular;
        let mesh = problem.initial_mesh();
        let opts = AssemblyOpts::default();
        match level_solve(&mesh, &problem, 2, pen_p2, &opts, 1) {
            Ok(data) => {
                let res =
                    gh2_residual(&mesh, 2, &data.u_h, &data.h_field, &ExactData(&problem), &opts);
                out.push(CheckResult::bounded(
                    "gh_identity_lshape",
                    res,
                    TOL_GH2,
                    "exact symcurl-moment identity with boundary-data terms, L-shape p=2".into(),
                ));
                let smooth =
                    gh2_smooth_residual(&mesh, 2, &data.h_field, &ExactData(&problem), &opts);
                out.push(CheckResult::bounded(
                    "gh_orthogonality_smooth_lshape",
                    smooth,
                    TOL_GH2,
                    "verbatim orthogonality against polynomial test fields, L-shape p=2".into(),
                ));
            }
            Err(e) => out.push(CheckResult {
                name: "gh_identity_lshape",
                measured: f64::INFINITY,
                threshold: TOL_GH2,
                pass: false,
                detail: format!("solve failed under the given penalties: {e}"),
            }),
        }
    }
    out
}

/// property (f, w) = (H, D2 w) for interior C1 bubbles at p = 6.
pub fn check_gh1_bubbles() -> CheckResult {
    let problem = TestProblem::SquareSine;
    let p = 6;
    let mesh = crate::mesh::uniform_refine_nvb(&problem.initial_mesh()).expect("mesh");
    let opts = AssemblyOpts::default();
    let pen = PenaltyConfig::degree_scaled(p);
    let data = level_solve(&mesh, &problem, p, &pen, &opts, 1).expect("solve");
    // w = (xy(1-x-y))^2 on the reference element, expanded in the modal basis
    let qdeg = opts.degree_for(p).expect("degree");
    let rule = quad_triangle(qdeg).expect("rule");
    let tab = eval_basis(p, &rule.points, 2).expect("tables");
    let dim = basis_dim(p);
    let bubble = |r: &[f64; 2]| {
        let b = r[0] * r[1] * (1.0 - r[0] - r[1]);
        b * b
    };
    let mut wcoef = vec![0.0; dim];
    for (k, c) in wcoef.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (q, wq) in rule.weights.iter().enumerate() {
            acc += wq * bubble(&rule.points[q]) * tab.val(k, q);
        }
        *c = acc;
    }
    let mut worst = 0.0f64;
    for e in 0..mesh.n_elems() {
        let map = mesh.affine_map(e);
        let det = map.det;
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        let mut h_norm = 0.0;
        let mut w_norm = 0.0;
        for (q, wq) in rule.weights.iter().enumerate() {
            // D2 w at the quadrature point
            let mut hess = [0.0; 3];
            let mut wval = 0.0;
            for k in 0..dim {
                let hk = tab.hs(k, q);
                hess[0] += wcoef[k] * hk[0];
                hess[1] += wcoef[k] * hk[1];
                hess[2] += wcoef[k] * hk[2];
                wval += wcoef[k] * tab.val(k, q);
            }
            let hess = map.push_hess(hess);
            let hxx = data.h_field.value_at(e, 0, &tab, q);
            let hxy = data.h_field.value_at(e, 1, &tab, q);
            let hyx = data.h_field.value_at(e, 2, &tab, q);
            let hyy = data.h_field.value_at(e, 3, &tab, q);
            lhs += wq * (hxx * hess[0] + (hxy + hyx) * hess[1] + hyy * hess[2]);
            let x = map.to_phys(rule.points[q]);
            rhs += wq * problem.rhs(x[0], x[1]) * wval;
            h_norm += wq * (hxx * hxx + hxy * hxy + hyx * hyx + hyy * hyy);
            w_norm += wq * (hess[0] * hess[0] + 2.0 * hess[1] * hess[1] + hess[2] * hess[2]);
        }
        let scale = det * (h_norm.sqrt() * w_norm.sqrt()) + (det * rhs).abs();
        worst = worst.max((det * (lhs - rhs)).abs() / scale);
    }
    CheckResult::bounded(
        "gh_bubble_identity",
        worst,
        TOL_GH1,
        "max relative |(H, D2 w) - (f, w)| over elemental C1 bubbles, p=6".into(),
    )
}

/// Green identity on a single scalene triangle, random symmetric tensor and
/// scalar polynomials of degree three.
pub fn check_green_identity() -> CheckResult {
    let mesh = crate::mesh::build_mesh(
        vec![[0.0, 0.0], [2.0, 0.3], [0.5, 1.4]],
        vec![[0, 1, 2]],
    )
    .expect("triangle");
    let p = 3;
    let dim = basis_dim(p);
    let rule = quad_triangle(2 * p + 6).expect("rule");
    let vol_tab = eval_basis(p, &rule.points, 2).expect("tables");
    let edge_rule = quad_edge(2 * p + 6).expect("rule");
    let map = mesh.affine_map(0);
    let det = map.det;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut b_field = DgField::zeros(Rank::Tensor, p, 1);
        let mut v_field = DgField::zeros(Rank::Scalar, p, 1);
        for k in 0..dim {
            let bxx = rng.random_range(-1.0..1.0);
            let bxy = rng.random_range(-1.0..1.0);
            let byy = rng.random_range(-1.0..1.0);
            b_field.comp_mut(0, 0)[k] = bxx;
            b_field.comp_mut(0, 1)[k] = bxy;
            b_field.comp_mut(0, 2)[k] = bxy;
            b_field.comp_mut(0, 3)[k] = byy;
            v_field.comp_mut(0, 0)[k] = rng.random_range(-1.0..1.0);
        }
        // volume terms
        let mut lhs = 0.0;
        let mut vol = 0.0;
        let mut scale = 0.0;
        for (q, w) in rule.weights.iter().enumerate() {
            let hxx = b_field.hess_at(0, 0, &vol_tab, &map, q);
            let hxy = b_field.hess_at(0, 1, &vol_tab, &map, q);
            let hyx = b_field.hess_at(0, 2, &vol_tab, &map, q);
            let hyy = b_field.hess_at(0, 3, &vol_tab, &map, q);
            let divdiv = hxx[0] + hxy[1] + hyx[1] + hyy[2];
            let vv = v_field.value_at(0, 0, &vol_tab, q);
            lhs += w * divdiv * vv;
            let d2v = v_field.hess_at(0, 0, &vol_tab, &map, q);
            let bxx = b_field.value_at(0, 0, &vol_tab, q);
            let bxy = b_field.value_at(0, 1, &vol_tab, q);
            let byy = b_field.value_at(0, 3, &vol_tab, q);
            let t = bxx * d2v[0] + 2.0 * bxy * d2v[1] + byy * d2v[2];
            vol += w * t;
            scale += w * (t.abs() + (divdiv * vv).abs());
        }
        lhs *= det;
        vol *= det;
        scale *= det;
        // facet terms
        let traces = TraceTables::build(p, &edge_rule, 1);
        let mut edges = 0.0;
        let mut vertex = 0.0;
        for fid in 0..mesh.n_facets() {
            let fct = &mesh.facets[fid];
            let (nu, tau) = (fct.normal, fct.tangent);
            let (le, rev) = mesh.local_edge(0, fid);
            let tab = traces.get(le, rev);
            let h = fct.h_f;
            for q in 0..edge_rule.points.len() {
                let w = edge_rule.weights[q] * h;
                let bxx = b_field.value_at(0, 0, tab, q);
                let bxy = b_field.value_at(0, 1, tab, q);
                let byy = b_field.value_at(0, 3, tab, q);
                let bn = [bxx * nu[0] + bxy * nu[1], bxy * nu[0] + byy * nu[1]];
                let nbn = nu[0] * bn[0] + nu[1] * bn[1];
                let gv = v_field.grad_at(0, 0, tab, &map, q);
                let dnv = nu[0] * gv[0] + nu[1] * gv[1];
                // grad(tau^T B nu) . tau
                let gxx = b_field.grad_at(0, 0, tab, &map, q);
                let gxy = b_field.grad_at(0, 1, tab, &map, q);
                let gyy = b_field.grad_at(0, 3, tab, &map, q);
                let wgt = [tau[0] * nu[0], tau[0] * nu[1] + tau[1] * nu[0], tau[1] * nu[1]];
                let gtbn = [
                    wgt[0] * gxx[0] + wgt[1] * gxy[0] + wgt[2] * gyy[0],
                    wgt[0] * gxx[1] + wgt[1] * gxy[1] + wgt[2] * gyy[1],
                ];
                let dtau_tbn = tau[0] * gtbn[0] + tau[1] * gtbn[1];
                let ndivb = nu[0] * (gxx[0] + gxy[1]) + nu[1] * (gxy[0] + gyy[1]);
                let vv = v_field.value_at(0, 0, tab, q);
                edges += w * (nbn * dnv - (dtau_tbn + ndivb) * vv);
                scale += w * (nbn * dnv).abs() + w * ((dtau_tbn + ndivb) * vv).abs();
            }
            // vertex terms: sign +1 at the tangent head, -1 at the tail
            for (vid, sgn) in [(fct.verts[0], -1.0), (fct.verts[1], 1.0)] {
                let vref = map.to_ref(mesh.vertices[vid]);
                let vt = eval_basis(p, &[vref], 0).expect("tables");
                let bxx = b_field.value_at(0, 0, &vt, 0);
                let bxy = b_field.value_at(0, 1, &vt, 0);
                let byy = b_field.value_at(0, 3, &vt, 0);
                let bn = [bxx * nu[0] + bxy * nu[1], bxy * nu[0] + byy * nu[1]];
                let tbn = tau[0] * bn[0] + tau[1] * bn[1];
                let vv = v_field.value_at(0, 0, &vt, 0);
                vertex += sgn * tbn * vv;
                scale += (tbn * vv).abs();
            }
        }
        let rhs = vol - vertex - edges;
        worst = worst.max((lhs - rhs).abs() / scale.max(1e-30));
    }
    CheckResult::bounded(
        "green_identity",
        worst,
        TOL_GREEN,
        "max relative residual over 20 random degree-3 (B, v) pairs".into(),
    )
}

/// div div (symcurl theta) = 0 and rowwise curl of broken Hessians = 0.
pub fn check_complex_identities() -> Vec<CheckResult> {
    let mut out = Vec::new();
    {
        let mesh = unit_square();
        let p = 3;
        let space = lagrange_space(&mesh, p);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut theta = vec![0.0; 2 * space.n_nodes];
        for t in theta.iter_mut() {
            *t = rng.random_range(-1.0..1.0);
        }
        let sc = symcurl_lagrange(&mesh, &space, &theta).expect("symcurl");
        let pts = lattice_nodes(4);
        let tab = eval_basis(sc.degree, &pts, 2).expect("tables");
        let scale = sc.coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs())).max(1.0);
        let mut worst = 0.0f64;
        for e in 0..mesh.n_elems() {
            let map = mesh.affine_map(e);
            for q in 0..pts.len() {
                let hxx = sc.hess_at(e, 0, &tab, &map, q);
                let hxy = sc.hess_at(e, 1, &tab, &map, q);
                let hyx = sc.hess_at(e, 2, &tab, &map, q);
                let hyy = sc.hess_at(e, 3, &tab, &map, q);
                worst = worst.max((hxx[0] + hxy[1] + hyx[1] + hyy[2]).abs() / scale);
            }
        }
        out.push(CheckResult::bounded(
            "divdiv_symcurl_zero",
            worst,
            TOL_COMPLEX,
            "pointwise div div symcurl of a random cubic Lagrange field".into(),
        ));
    }
    {
        let mesh = unit_square();
        let u = project_scalar(&mesh, 4, 12, &|x, y| {
            x.powi(4) - 2.0 * x * x * y + y.powi(3) - x * y + 0.5 * y.powi(4)
        });
        let h = broken_hessian(&mesh, &u);
        let pts = lattice_nodes(4);
        let tab = eval_basis(h.degree, &pts, 1).expect("tables");
        let scale = h.coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs())).max(1.0);
        let mut worst = 0.0f64;
        for e in 0..mesh.n_elems() {
            let map = mesh.affine_map(e);
            for q in 0..pts.len() {
                let g11 = h.grad_at(e, 0, &tab, &map, q);
                let g12 = h.grad_at(e, 1, &tab, &map, q);
                let g21 = h.grad_at(e, 2, &tab, &map, q);
                let g22 = h.grad_at(e, 3, &tab, &map, q);
                worst = worst.max((g12[0] - g11[1]).abs() / scale);
                worst = worst.max((g22[0] - g21[1]).abs() / scale);
            }
        }
        out.push(CheckResult::bounded(
            "curl_hessian_zero",
            worst,
            TOL_COMPLEX,
            "pointwise rowwise curl of a broken polynomial Hessian".into(),
        ));
    }
    out
}

/// Coercivity at the given penalties over 100 random fields plus a
/// piecewise-constant witness; returns the minimal Rayleigh quotient.
pub fn coercivity_min_ratio(pen: &PenaltyConfig) -> f64 {
    let mesh = uniform_refine(&unit_square());
    let p = 2;
    let opts = AssemblyOpts::default();
    let qdeg = 2 * p + 4;
    let mut min_ratio = f64::INFINITY;
    for seed in 0..100 {
        let v = random_field(p, mesh.n_elems(), 30_000 + seed);
        let b = apply_bilinear(&mesh, &v, &v, pen, &opts).expect("form");
        let n = dg_norm(&mesh, &v, qdeg);
        min_ratio = min_ratio.min(b / (n * n));
    }
    // piecewise constant on one element: zero broken Hessian, pure jumps
    let one = project_scalar(&mesh, p, qdeg, &|_, _| 1.0);
    let mut v = DgField::zeros(Rank::Scalar, p, mesh.n_elems());
    for k in 0..v.dim() {
        v.comp_mut(0, 0)[k] = one.comp(0, 0)[k];
    }
    let b = apply_bilinear(&mesh, &v, &v, pen, &opts).expect("form");
    let n = dg_norm(&mesh, &v, qdeg);
    min_ratio.min(b / (n * n))
}

pub fn check_coercivity(pen: &PenaltyConfig) -> CheckResult {
    let min_ratio = coercivity_min_ratio(pen);
    CheckResult {
        name: "coercivity",
        measured: min_ratio,
        threshold: 0.0,
        pass: min_ratio > 0.0,
        detail: "min B(v,v)/|v|_DG^2 over 100 random fields and a jump witness".into(),
    }
}

/// The zero-stabilization form must lose coercivity, and the suite must
/// see it.
pub fn check_coercivity_degenerate_detection() -> CheckResult {
    let zero = PenaltyConfig {
        c_sigma: 0.0,
        c_tau: 0.0,
    };
    let min_ratio = coercivity_min_ratio(&zero);
    CheckResult {
        name: "coercivity_zero_penalty_detected",
        measured: min_ratio,
        threshold: 0.0,
        pass: min_ratio <= 1e-8,
        detail: "min Rayleigh quotient at c_sigma = c_tau = 0 (must be non-positive)".into(),
    }
}

/// Manufactured degree-p polynomial is reproduced and both estimators see
/// a zero-residual solution.
pub fn check_polynomial_reproduction() -> Vec<CheckResult> {
    let poly = test_cubic();
    let mesh = uniform_refine(&unit_square());
    let p = 3;
    let pen = PenaltyConfig::degree_scaled(p);
    let opts = AssemblyOpts::default();
    let data = level_solve(&mesh, &poly, p, &pen, &opts, 1).expect("solve");
    let exact = project_scalar(&mesh, p, 2 * p + 4, &|x, y| poly.u(x, y));
    let mut diff = data.u_h.clone();
    for (d, e) in diff.coeffs.iter_mut().zip(&exact.coeffs) {
        *d -= e;
    }
    let err = dg_norm(&mesh, &diff, 2 * p + 4);
    let scale = dg_norm(&mesh, &exact, 2 * p + 4);
    vec![
        CheckResult::bounded(
            "polynomial_reproduction_dg",
            err / scale,
            TOL_REPRODUCTION,
            "relative DG error of the manufactured cubic solution".into(),
        ),
        CheckResult::bounded(
            "polynomial_reproduction_eta",
            data.report.eta.global,
            TOL_REPRODUCTION,
            "stabilization-free estimator on the reproduced solution".into(),
        ),
        CheckResult::bounded(
            "polynomial_reproduction_gimel",
            data.report.gimel.global,
            TOL_REPRODUCTION,
            "residual estimator on the reproduced solution".into(),
        ),
    ]
}

/// Patchwise comparison eta_T <= C (sum of gimel over the vertex patch)^1/2
/// across representative solved problems; records the constant.
pub fn check_comparison_constant() -> CheckResult {
    let opts = AssemblyOpts::default();
    let mut worst = 0.0f64;
    for (problem, p, refines) in [
        (TestProblem::SquareSine, 2usize, 2usize),
        (TestProblem::SquareSine, 3, 1),
        (TestProblem::LshapeSingular, 2, 0),
        (TestProblem::LshapeSingular, 2, 1),
        (TestProblem::LshapeSingular, 3, 1),
    ] {
        let mut mesh = problem.initial_mesh();
        for _ in 0..refines {
            mesh = crate::mesh::uniform_refine_nvb(&mesh).expect("mesh");
        }
        let pen = PenaltyConfig::degree_scaled(p);
        let data = level_solve(&mesh, &problem, p, &pen, &opts, 1).expect("solve");
        worst = worst.max(comparison_constant(&mesh, &data.report.eta, &data.report.gimel));
    }
    CheckResult::bounded(
        "eta_gimel_comparison",
        worst,
        TOL_COMPARISON,
        "max_T eta_T / (sum over vertex patch of gimel^2)^1/2 across runs".into(),
    )
}

/// Dörfler marking returns exactly the greedy-minimal descending prefix.
pub fn check_doerfler_minimality() -> CheckResult {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    let mut worst_ok = true;
    for _ in 0..50 {
        let n = rng.random_range(1..40);
        let ind: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0f64)).collect();
        let theta = rng.random_range(0.05..0.95);
        let marked = doerfler_mark(&ind, theta);
        let total: f64 = ind.iter().sum();
        let sum: f64 = marked.iter().map(|&e| ind[e]).sum();
        if sum < theta * total {
            worst_ok = false;
        }
        if let Some(&last) = marked.last() {
            // dropping the last-picked element must fall below the target
            if sum - ind[last] >= theta * total && marked.len() > 1 {
                worst_ok = false;
            }
        }
    }
    CheckResult {
        name: "doerfler_greedy_minimal",
        measured: if worst_ok { 0.0 } else { 1.0 },
        threshold: 0.5,
        pass: worst_ok,
        detail: "greedy prefix reaches the target and is minimal, 50 random draws".into(),
    }
}

/// Run the whole suite; `penalties` overrides the p=2 stabilization used by
/// the coercivity and solved-problem checks (the degenerate-detection check
/// always runs with zero penalties internally).
pub fn run_all(penalties: Option<PenaltyConfig>) -> Vec<CheckResult> {
    let pen2 = penalties.unwrap_or_else(|| PenaltyConfig::degree_scaled(2));
    let mut results = Vec::new();
    results.push(check_lifting_vanishing());
    results.push(check_bilinear_equivalence(&pen2));
    results.extend(check_gh2(&pen2));
    results.push(check_gh1_bubbles());
    results.push(check_green_identity());
    results.extend(check_complex_identities());
    results.push(check_coercivity(&pen2));
    results.push(check_coercivity_degenerate_detection());
    results.extend(check_polynomial_reproduction());
    results.push(check_comparison_constant());
    results.push(check_doerfler_minimality());
    results
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn green_identity_holds() {
        let r = check_green_identity();
        assert!(r.pass, "{}: {:.3e}", r.name, r.measured);
    }

    #[test]
    fn complex_identities_hold() {
        for r in check_complex_identities() {
            assert!(r.pass, "{}: {:.3e}", r.name, r.measured);
        }
    }

    #[test]
    fn coercivity_and_detection() {
        let pen = PenaltyConfig::degree_scaled(2);
        let r = check_coercivity(&pen);
        assert!(r.pass, "min ratio {:.3e}", r.measured);
        let d = check_coercivity_degenerate_detection();
        assert!(d.pass, "degenerate ratio {:.3e}", d.measured);
    }

    #[test]
    fn gh_identities_hold() {
        let pen = PenaltyConfig::degree_scaled(2);
        for r in check_gh2(&pen) {
            assert!(r.pass, "{}: {:.3e}", r.name, r.measured);
        }
        let r = check_gh1_bubbles();
        assert!(r.pass, "{}: {:.3e}", r.name, r.measured);
    }
}
