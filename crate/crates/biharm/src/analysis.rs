//! Error measures against analytic solutions, effectivity indices, and
//! empirical orders of convergence.

use crate::basis::eval_basis;
use crate::field::{DgField, Rank};
use crate::forms::{jump_seminorms, ClampedData, ExactData};
use crate::mesh::Mesh;
use crate::problems::TestProblem;
use crate::quad::quad_triangle;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("effectivity undefined: error {0:.3e} is below 1e-14")]
    DivisionByZero(f64),
}

/// Extra dyadic subdivision levels toward the singular corner when
/// integrating error norms on corner-adjacent elements. The integrand
/// behaves like r^{2(z-1)} there: integrable but slowly resolved.
pub const CORNER_LEVELS: usize = 3;

/// L2 norm over one element of point-wise squared data, with dyadic
/// refinement toward `corner` if that point is a vertex of the triangle.
/// `diff_sq` receives physical points and returns the squared integrand.
fn elem_integral_corner(
    verts: [[f64; 2]; 3],
    corner: Option<[f64; 2]>,
    levels: usize,
    rule: &crate::quad::TriangleRule,
    diff_sq: &mut dyn FnMut(&[[f64; 2]]) -> Vec<f64>,
) -> f64 {
    let corner_local = corner.and_then(|c| {
        verts
            .iter()
            .position(|v| (v[0] - c[0]).abs() + (v[1] - c[1]).abs() < 1e-14)
    });
    match corner_local {
        Some(ci) if levels > 0 => {
            // red split; recurse into the child at the corner, integrate the
            // other three at this level
            let m01 = mid(verts[0], verts[1]);
            let m12 = mid(verts[1], verts[2]);
            let m20 = mid(verts[2], verts[0]);
            let children = [
                [verts[0], m01, m20],
                [m01, verts[1], m12],
                [m20, m12, verts[2]],
                [m01, m12, m20],
            ];
            let corner_child = match ci {
                0 => 0,
                1 => 1,
                _ => 2,
            };
            let mut total = 0.0;
            for (i, ch) in children.iter().enumerate() {
                let lv = if i == corner_child { levels - 1 } else { 0 };
                total += elem_integral_corner(*ch, corner, lv, rule, diff_sq);
            }
            total
        }
        _ => {
            let map = crate::basis::AffineMap::from_vertices(verts[0], verts[1], verts[2]);
            let pts: Vec<[f64; 2]> = rule.points.iter().map(|&r| map.to_phys(r)).collect();
            let vals = diff_sq(&pts);
            let mut acc = 0.0;
            for (q, w) in rule.weights.iter().enumerate() {
                acc += w * vals[q];
            }
            map.det * acc
        }
    }
}

fn mid(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

/// || D2u - H ||_{0,Omega} for a tensor field H against the exact Hessian,
/// by elementwise quadrature of exactness 2p+8 with corner refinement.
pub fn hessian_error(mesh: &Mesh, problem: &TestProblem, h_field: &DgField) -> f64 {
    assert_eq!(h_field.rank, Rank::Tensor);
    let p = h_field.degree;
    let rule = quad_triangle(2 * p + 8).expect("error rule");
    let corner = problem.singular_corner();
    let mut total = 0.0;
    for e in 0..mesh.n_elems() {
        let map = mesh.affine_map(e);
        let verts = mesh.elem_vertices(e);
        let mut diff_sq = |pts: &[[f64; 2]]| -> Vec<f64> {
            let refs: Vec<[f64; 2]> = pts.iter().map(|&x| map.to_ref(x)).collect();
            let tab = eval_basis(p, &refs, 0).expect("tables");
            pts.iter()
                .enumerate()
                .map(|(q, &[x, y])| {
                    let eh = problem.hess(x, y);
                    let exact = [eh[0], eh[1], eh[1], eh[2]];
                    let mut s = 0.0;
                    for c in 0..4 {
                        let d = exact[c] - h_field.value_at(e, c, &tab, q);
                        s += d * d;
                    }
                    s
                })
                .collect()
        };
        total += elem_integral_corner(verts, corner, CORNER_LEVELS, &rule, &mut diff_sq);
    }
    total.sqrt()
}

/// DG-norm error || u - u_h ||_DG: broken Hessian error plus the h^{-3/2}
/// and h^{-1/2} jump terms of u_h (interior jumps of u vanish; boundary
/// jumps are taken against the clamped data).
pub fn dg_error(mesh: &Mesh, problem: &TestProblem, u_h: &DgField) -> f64 {
    assert_eq!(u_h.rank, Rank::Scalar);
    let p = u_h.degree;
    let rule = quad_triangle(2 * p + 8).expect("error rule");
    let corner = problem.singular_corner();
    let mut total = 0.0;
    for e in 0..mesh.n_elems() {
        let map = mesh.affine_map(e);
        let verts = mesh.elem_vertices(e);
        let mut diff_sq = |pts: &[[f64; 2]]| -> Vec<f64> {
            let refs: Vec<[f64; 2]> = pts.iter().map(|&x| map.to_ref(x)).collect();
            let tab = eval_basis(p, &refs, 2).expect("tables");
            pts.iter()
                .enumerate()
                .map(|(q, &[x, y])| {
                    let eh = problem.hess(x, y);
                    let hh = u_h.hess_at(e, 0, &tab, &map, q);
                    let d = [eh[0] - hh[0], eh[1] - hh[1], eh[2] - hh[2]];
                    d[0] * d[0] + 2.0 * d[1] * d[1] + d[2] * d[2]
                })
                .collect()
        };
        total += elem_integral_corner(verts, corner, CORNER_LEVELS, &rule, &mut diff_sq);
    }
    let data = ExactData(problem);
    let (j, g) = jump_seminorms(mesh, u_h, &data as &dyn ClampedData, 2 * p + 8);
    (total + j + g).sqrt()
}

/// Effectivity indices (estimator / error).
pub fn effectivity(estimator: f64, error: f64) -> Result<f64, AnalysisError> {
    if error < 1e-14 {
        return Err(AnalysisError::DivisionByZero(error));
    }
    Ok(estimator / error)
}

/// Empirical orders of convergence: orders[i] relates entries i and i+1.
pub fn eoc(errors: &[f64], hs: &[f64]) -> Vec<f64> {
    assert_eq!(errors.len(), hs.len());
    let mut out = Vec::new();
    for i in 1..errors.len() {
        out.push((errors[i - 1] / errors[i]).ln() / (hs[i - 1] / hs[i]).ln());
    }
    out
}

/// Least-squares slope of log(err) against log(dofs) over the last `take`
/// points; the error-vs-N convergence rate.
pub fn loglog_slope(dofs: &[usize], errors: &[f64], take: usize) -> f64 {
    let n = dofs.len();
    assert!(n >= 2);
    let k = take.min(n).max(2);
    let xs: Vec<f64> = dofs[n - k..].iter().map(|&d| (d as f64).ln()).collect();
    let ys: Vec<f64> = errors[n - k..].iter().map(|&e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k as f64;
    let my = ys.iter().sum::<f64>() / k as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..k {
        num += (xs[i] - mx) * (ys[i] - my);
        den += (xs[i] - mx) * (xs[i] - mx);
    }
    num / den
}

/// One row of a convergence study.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub level: usize,
    pub nelem: usize,
    pub ndof: usize,
    pub max_h: f64,
    pub err_hess: f64,
    pub err_dg: f64,
    pub eta: f64,
    pub gimel: f64,
    /// EOC against the previous record (NaN on the first row)
    pub eoc_hess: f64,
    pub eoc_dg: f64,
    pub eff_hess: f64,
    pub eff_dg: f64,
}

impl RunRecord {
    /// Fill the EOC columns of a freshly appended record.
    pub fn link_eoc(records: &mut [RunRecord]) {
        for i in 0..records.len() {
            if i == 0 {
                records[i].eoc_hess = f64::NAN;
                records[i].eoc_dg = f64::NAN;
            } else {
                let ratio = (records[i - 1].max_h / records[i].max_h).ln();
                records[i].eoc_hess = (records[i - 1].err_hess / records[i].err_hess).ln() / ratio;
                records[i].eoc_dg = (records[i - 1].err_dg / records[i].err_dg).ln() / ratio;
            }
        }
    }
}

pub const RUN_CSV_HEADER: &str =
    "level,nelem,ndof,err_hess,eoc_hess,err_dg,eoc_dg,eta,gimel,eff_hess,eff_dg";

fn fmt_or_empty(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.6e}")
    }
}

pub fn write_records_csv(records: &[RunRecord], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{RUN_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{:.6e},{},{:.6e},{},{:.6e},{:.6e},{:.6e},{:.6e}",
            r.level,
            r.nelem,
            r.ndof,
            r.err_hess,
            fmt_or_empty(r.eoc_hess),
            r.err_dg,
            fmt_or_empty(r.eoc_dg),
            r.eta,
            r.gimel,
            r.eff_hess,
            r.eff_dg
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{broken_hessian, project_scalar};
    use crate::mesh::{unit_square, uniform_refine};
    use crate::problems::{Domain, PolySolution};

    #[test]
    fn hessian_error_zero_for_exact_polynomial() {
        let poly = TestProblem::Poly(PolySolution {
            terms: vec![(2, 1, 1.5), (3, 0, -1.0), (1, 1, 0.5)],
            domain: Domain::Square,
        });
        let mesh = uniform_refine(&unit_square());
        let u = project_scalar(&mesh, 3, 10, &|x, y| poly.u(x, y));
        let h = broken_hessian(&mesh, &u);
        assert!(hessian_error(&mesh, &poly, &h) < 1e-12);
        assert!(dg_error(&mesh, &poly, &u) < 1e-11);
    }

    #[test]
    fn eoc_basic() {
        let orders = eoc(&[0.1, 0.025], &[1.0, 0.5]);
        assert!((orders[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn effectivity_basic_and_degenerate() {
        assert!((effectivity(2.0, 1.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(
            effectivity(1.0, 1e-16),
            Err(AnalysisError::DivisionByZero(_))
        ));
    }

    #[test]
    fn loglog_slope_recovers_power_law() {
        let dofs: Vec<usize> = (1..=6).map(|k| 10usize.pow(k)).collect();
        let errors: Vec<f64> = dofs.iter().map(|&d| 3.0 * (d as f64).powf(-0.5)).collect();
        let s = loglog_slope(&dofs, &errors, 6);
        assert!((s + 0.5).abs() < 1e-12, "slope {s}");
    }

    #[test]
    fn csv_format() {
        let mut recs = vec![
            RunRecord {
                level: 1,
                nelem: 2,
                ndof: 12,
                max_h: 1.0,
                err_hess: 1.0,
                err_dg: 2.0,
                eta: 3.0,
                gimel: 4.0,
                eoc_hess: f64::NAN,
                eoc_dg: f64::NAN,
                eff_hess: 3.0,
                eff_dg: 2.0,
            },
            RunRecord {
                level: 2,
                nelem: 8,
                ndof: 48,
                max_h: 0.5,
                err_hess: 0.5,
                err_dg: 1.0,
                eta: 1.5,
                gimel: 2.0,
                eoc_hess: f64::NAN,
                eoc_dg: f64::NAN,
                eff_hess: 3.0,
                eff_dg: 2.0,
            },
        ];
        RunRecord::link_eoc(&mut recs);
        assert!((recs[1].eoc_hess - 1.0).abs() < 1e-12);
        let mut buf = Vec::new();
        write_records_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], RUN_CSV_HEADER);
        assert_eq!(lines.len(), 3);
        // the first row has empty EOC fields but the full column count
        assert_eq!(lines[1].split(',').count(), 11);
    }
}
