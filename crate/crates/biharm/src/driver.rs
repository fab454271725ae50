//! Experiment drivers: uniform convergence studies, the p-study on the
//! fixed six-triangle mesh, and the shared solve-and-measure step.

use crate::analysis::{dg_error, hessian_error, RunRecord};
use crate::estimators::{estimate, EstimatorReport};
use crate::field::{DgField, Rank};
use crate::forms::{
    assemble_system, generalized_hessian, AssemblyOpts, ExactData, FormsError, PenaltyConfig,
};
use crate::linalg::{solve_lenient, LinalgError};
use crate::mesh::{uniform_refine_nvb, Mesh, MeshError};
use crate::problems::TestProblem;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("assembly failed: {0}")]
    Assembly(#[from] FormsError),
    #[error("solver failed: {0}")]
    Solver(#[from] LinalgError),
    #[error("mesh refinement failed: {0}")]
    Mesh(#[from] MeshError),
}

/// Discrete solution and derived quantities on one mesh.
pub struct LevelData {
    pub u_h: DgField,
    pub h_field: DgField,
    pub report: EstimatorReport,
    pub record: RunRecord,
    pub solve_rel_residual: f64,
    pub solver_ok: bool,
}

/// Assemble, solve, build the generalized Hessian, measure errors, and run
/// both estimators on one mesh.
pub fn level_solve(
    mesh: &Mesh,
    problem: &TestProblem,
    p: usize,
    penalties: &PenaltyConfig,
    opts: &AssemblyOpts,
    level: usize,
) -> Result<LevelData, DriverError> {
    let data = ExactData(problem);
    let f = |x: f64, y: f64| problem.rhs(x, y);
    let (a, b) = assemble_system(mesh, p, penalties, &f, &data, opts)?;
    let (x, rel, ok) = solve_lenient(&a, &b)?;
    let u_h = DgField {
        rank: Rank::Scalar,
        degree: p,
        n_elems: mesh.n_elems(),
        coeffs: x,
    };
    let h_field = generalized_hessian(mesh, &u_h, &data, opts)?;
    let report = estimate(mesh, p, &u_h, &h_field, &f, &data, opts)?;
    let err_hess = hessian_error(mesh, problem, &h_field);
    let err_dg = dg_error(mesh, problem, &u_h);
    let record = RunRecord {
        level,
        nelem: mesh.n_elems(),
        ndof: a.n,
        max_h: mesh.max_h(),
        err_hess,
        err_dg,
        eta: report.eta.global,
        gimel: report.gimel.global,
        eoc_hess: f64::NAN,
        eoc_dg: f64::NAN,
        eff_hess: report.eta.global / err_hess,
        eff_dg: report.gimel.global / err_dg,
    };
    Ok(LevelData {
        u_h,
        h_field,
        report,
        record,
        solve_rel_residual: rel,
        solver_ok: ok,
    })
}

#[derive(Debug, Clone)]
pub struct UniformConfig {
    pub problem: TestProblem,
    pub p: usize,
    pub levels: usize,
    pub max_dofs: usize,
    pub penalties: Option<PenaltyConfig>,
    pub opts: AssemblyOpts,
}

impl UniformConfig {
    pub fn new(problem: TestProblem, p: usize, levels: usize) -> UniformConfig {
        UniformConfig {
            problem,
            p,
            levels,
            max_dofs: 1_000_000,
            penalties: None,
            opts: AssemblyOpts::default(),
        }
    }
}

pub struct UniformOutput {
    pub records: Vec<RunRecord>,
    /// set when the dof cap stopped the run before the requested level
    pub truncated: bool,
    /// mesh and solve data of the last completed level
    pub last: Option<(Mesh, LevelData)>,
}

/// Uniformly refined convergence study: level 1 is the built-in coarse
/// mesh, and each level halves h by a pair of all-element bisections.
pub fn uniform_run(cfg: &UniformConfig) -> Result<UniformOutput, DriverError> {
    let pen = cfg
        .penalties
        .unwrap_or_else(|| PenaltyConfig::degree_scaled(cfg.p));
    let mut mesh = cfg.problem.initial_mesh();
    let mut records = Vec::new();
    let mut truncated = false;
    let mut last = None;
    for level in 1..=cfg.levels {
        let ndof = mesh.n_elems() * crate::basis::basis_dim(cfg.p);
        if ndof > cfg.max_dofs {
            truncated = true;
            break;
        }
        let data = level_solve(&mesh, &cfg.problem, cfg.p, &pen, &cfg.opts, level)?;
        records.push(data.record.clone());
        let done = level == cfg.levels;
        if done {
            last = Some((mesh.clone(), data));
        } else {
            let next = uniform_refine_nvb(&mesh)?;
            last = Some((mesh, data));
            mesh = next;
        }
    }
    RunRecord::link_eoc(&mut records);
    Ok(UniformOutput {
        records,
        truncated,
        last,
    })
}

#[derive(Debug, Clone)]
pub struct PStudyConfig {
    pub problem: TestProblem,
    pub p_min: usize,
    pub p_max: usize,
    pub penalties_override: Option<PenaltyConfig>,
    pub opts: AssemblyOpts,
}

impl PStudyConfig {
    pub fn new(p_min: usize, p_max: usize) -> PStudyConfig {
        PStudyConfig {
            problem: TestProblem::LshapeSingular,
            p_min,
            p_max,
            penalties_override: None,
            opts: AssemblyOpts::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PStudyRecord {
    pub p: usize,
    pub ndof: usize,
    pub err_hess: f64,
    pub err_dg: f64,
    pub eta: f64,
    pub gimel: f64,
    pub eff_hess: f64,
    pub eff_dg: f64,
    pub solve_rel_residual: f64,
    pub solver_ok: bool,
}

/// Degree sweep on the fixed coarse mesh of the problem's domain; solver
/// conditioning trouble at high p is reported per row, not fatal.
pub fn pstudy_run(cfg: &PStudyConfig) -> Result<Vec<PStudyRecord>, DriverError> {
    let mesh = cfg.problem.initial_mesh();
    let mut out = Vec::new();
    for p in cfg.p_min..=cfg.p_max {
        let pen = cfg
            .penalties_override
            .unwrap_or_else(|| PenaltyConfig::degree_scaled(p));
        let data = level_solve(&mesh, &cfg.problem, p, &pen, &cfg.opts, p)?;
        out.push(PStudyRecord {
            p,
            ndof: data.record.ndof,
            err_hess: data.record.err_hess,
            err_dg: data.record.err_dg,
            eta: data.record.eta,
            gimel: data.record.gimel,
            eff_hess: data.record.eff_hess,
            eff_dg: data.record.eff_dg,
            solve_rel_residual: data.solve_rel_residual,
            solver_ok: data.solver_ok,
        });
    }
    Ok(out)
}

pub const PSTUDY_CSV_HEADER: &str =
    "p,ndof,err_hess,err_dg,eta,gimel,eff_hess,eff_dg,solve_rel_residual,solver_ok";

pub fn write_pstudy_csv(records: &[PStudyRecord], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{PSTUDY_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.3e},{}",
            r.p,
            r.ndof,
            r.err_hess,
            r.err_dg,
            r.eta,
            r.gimel,
            r.eff_hess,
            r.eff_dg,
            r.solve_rel_residual,
            r.solver_ok as u8
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_run_levels_and_truncation() {
        let cfg = UniformConfig::new(TestProblem::SquareSine, 2, 3);
        let out = uniform_run(&cfg).unwrap();
        assert_eq!(out.records.len(), 3);
        assert!(!out.truncated);
        assert_eq!(out.records[0].nelem, 2);
        assert_eq!(out.records[1].nelem, 8);
        assert_eq!(out.records[2].nelem, 32);
        // dof cap truncates gracefully
        let mut cfg2 = UniformConfig::new(TestProblem::SquareSine, 2, 6);
        cfg2.max_dofs = 100;
        let out2 = uniform_run(&cfg2).unwrap();
        assert!(out2.truncated);
        assert_eq!(out2.records.len(), 2);
    }

    #[test]
    fn pstudy_two_rows() {
        let cfg = PStudyConfig::new(2, 3);
        let rows = pstudy_run(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.eff_hess.is_finite() && r.eff_hess > 0.0));
        let mut buf = Vec::new();
        write_pstudy_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
