//! Dörfler marking and the SOLVE / ESTIMATE / MARK / REFINE loop.

use crate::analysis::RunRecord;
use crate::driver::{level_solve, DriverError};
use crate::estimators::{EstimatorKind, EstimatorReport};
use crate::field::DgField;
use crate::forms::{AssemblyOpts, PenaltyConfig};
use crate::mesh::{refine_nvb, Mesh};
use crate::problems::TestProblem;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("iteration {iter} failed: {source}")]
    Step { iter: usize, source: DriverError },
    #[error("refinement failed at iteration {iter}: {source}")]
    Refine {
        iter: usize,
        source: crate::mesh::MeshError,
    },
    #[error("invalid marking parameter theta = {0}; need 0 < theta < 1")]
    BadTheta(f64),
}

#[derive(Debug, Clone)]
pub struct AdaptConfig {
    pub estimator: EstimatorKind,
    pub theta: f64,
    pub max_iters: usize,
    pub max_dofs: usize,
    pub p: usize,
    pub penalties: Option<PenaltyConfig>,
    pub opts: AssemblyOpts,
}

impl AdaptConfig {
    pub fn new(p: usize) -> AdaptConfig {
        AdaptConfig {
            estimator: EstimatorKind::Eta,
            theta: 0.5,
            max_iters: 30,
            max_dofs: 50_000,
            p,
            penalties: None,
            opts: AssemblyOpts::default(),
        }
    }
}

/// Greedy Dörfler marking: the minimal prefix of elements, sorted by
/// decreasing squared indicator (ties by element id), whose squared sum
/// reaches theta times the total. All-zero indicators give an empty set.
pub fn doerfler_mark(indicators_sq: &[f64], theta: f64) -> Vec<usize> {
    let total: f64 = indicators_sq.iter().sum();
    if total <= 0.0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..indicators_sq.len()).collect();
    order.sort_by(|&a, &b| {
        indicators_sq[b]
            .total_cmp(&indicators_sq[a])
            .then(a.cmp(&b))
    });
    let target = theta * total;
    let mut acc = 0.0;
    let mut marked = Vec::new();
    for &e in &order {
        marked.push(e);
        acc += indicators_sq[e];
        if acc >= target {
            break;
        }
    }
    marked
}

/// One pass of the adaptive loop on a given mesh: solve, measure, estimate.
/// Returns the record, the marked set, and the discrete solution.
pub struct AdaptStep {
    pub record: RunRecord,
    pub marked: Vec<usize>,
    pub u_h: DgField,
    pub report: EstimatorReport,
}

pub fn adapt_step(
    mesh: &Mesh,
    problem: &TestProblem,
    config: &AdaptConfig,
    iter: usize,
) -> Result<AdaptStep, AdaptError> {
    let pen = config
        .penalties
        .unwrap_or_else(|| PenaltyConfig::degree_scaled(config.p));
    let data = level_solve(mesh, problem, config.p, &pen, &config.opts, iter)
        .map_err(|source| AdaptError::Step { iter, source })?;
    let ind_sq: Vec<f64> = match config.estimator {
        EstimatorKind::Eta => data.report.eta.elem.iter().map(|v| v * v).collect(),
        EstimatorKind::Gimel => data.report.gimel.elem.iter().map(|v| v * v).collect(),
    };
    let marked = doerfler_mark(&ind_sq, config.theta);
    Ok(AdaptStep {
        record: data.record,
        marked,
        u_h: data.u_h,
        report: data.report,
    })
}

/// Full adaptive run from the problem's initial mesh. `on_iter` observes
/// each mesh/record pair (for mesh dumps and diagnostics).
pub fn adapt_run(
    problem: &TestProblem,
    config: &AdaptConfig,
    mut on_iter: impl FnMut(&Mesh, &RunRecord, &EstimatorReport),
) -> Result<Vec<RunRecord>, AdaptError> {
    if !(config.theta > 0.0 && config.theta < 1.0) {
        return Err(AdaptError::BadTheta(config.theta));
    }
    let mut mesh = problem.initial_mesh();
    let mut records = Vec::new();
    for iter in 1..=config.max_iters {
        let step = adapt_step(&mesh, problem, config, iter)?;
        on_iter(&mesh, &step.record, &step.report);
        let ndof = step.record.ndof;
        records.push(step.record);
        if ndof >= config.max_dofs || iter == config.max_iters {
            break;
        }
        mesh = refine_nvb(&mesh, &step.marked)
            .map_err(|source| AdaptError::Refine { iter, source })?;
    }
    RunRecord::link_eoc(&mut records);
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doerfler_greedy_examples() {
        // squared indicators {16, 9, 4, 1}, theta = 1/2, total 30: the
        // largest element alone reaches 16 >= 15
        let marked = doerfler_mark(&[16.0, 9.0, 4.0, 1.0], 0.5);
        assert_eq!(marked, vec![0]);
        // theta near 1 marks everything
        let marked = doerfler_mark(&[16.0, 9.0, 4.0, 1.0], 0.999);
        assert_eq!(marked.len(), 4);
        // equal indicators: ceil(N/2) marked, ties by id
        let marked = doerfler_mark(&[1.0; 7], 0.5);
        assert_eq!(marked, vec![0, 1, 2, 3]);
        // all zero: empty
        assert!(doerfler_mark(&[0.0; 5], 0.5).is_empty());
    }

    #[test]
    fn doerfler_minimal_prefix_property() {
        let ind = [0.3, 5.0, 0.1, 2.0, 2.0, 0.7];
        let theta = 0.6;
        let marked = doerfler_mark(&ind, theta);
        let total: f64 = ind.iter().sum();
        let sum: f64 = marked.iter().map(|&e| ind[e]).sum();
        assert!(sum >= theta * total);
        // dropping the least of the marked set must fall below the target
        let min_marked = marked
            .iter()
            .cloned()
            .min_by(|&a, &b| ind[a].total_cmp(&ind[b]))
            .unwrap();
        assert!(sum - ind[min_marked] < theta * total);
    }

    #[test]
    fn bad_theta_rejected() {
        let problem = TestProblem::SquareSine;
        let mut cfg = AdaptConfig::new(2);
        cfg.theta = 1.5;
        assert!(matches!(
            adapt_run(&problem, &cfg, |_, _, _| {}),
            Err(AdaptError::BadTheta(_))
        ));
    }

    #[test]
    fn short_adaptive_run_on_square() {
        let problem = TestProblem::SquareSine;
        let mut cfg = AdaptConfig::new(2);
        cfg.max_iters = 4;
        cfg.max_dofs = 10_000;
        let mut meshes_seen = 0;
        let records = adapt_run(&problem, &cfg, |_, _, _| meshes_seen += 1).unwrap();
        assert_eq!(records.len(), meshes_seen);
        assert!(records.len() >= 2);
        // errors decrease across the run
        assert!(records.last().unwrap().err_hess < records[0].err_hess);
        // dof counts grow
        assert!(records.last().unwrap().ndof > records[0].ndof);
    }
}
