//! Command-line driver: uniform and adaptive convergence studies, the
//! degree study on the fixed coarse mesh, and the invariant verification
//! suite. Results are written as CSV; figures are meant to be produced by
//! external plotting.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver failure,
//! 4 invariant failure.

use biharm::adapt::{adapt_run, AdaptConfig, AdaptError};
use biharm::analysis::write_records_csv;
use biharm::estimators::write_indicator_csv;
use biharm::driver::{pstudy_run, uniform_run, write_pstudy_csv, DriverError, PStudyConfig, UniformConfig};
use biharm::estimators::EstimatorKind;
use biharm::forms::{AssemblyOpts, PenaltyConfig};
use biharm::problems::TestProblem;
use clap::{Args, Parser, Subcommand};
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_INVARIANT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "biharm",
    about = "Interior penalty DG solver for the clamped biharmonic problem with a posteriori error estimation and adaptive refinement"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Convergence study under uniform mesh refinement (one CSV row per level)
    Uniform(CommonArgs),
    /// Adaptive SOLVE-ESTIMATE-MARK-REFINE loop (one CSV row per iteration)
    Adaptive(CommonArgs),
    /// Degree sweep p_min..p_max on the fixed coarse mesh
    Pstudy(CommonArgs),
    /// Run the invariant suite and report pass/fail per check
    Verify(CommonArgs),
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Problem tag: square-sine | lshape-singular
    #[arg(long)]
    problem: Option<String>,
    /// Polynomial degree p >= 2
    #[arg(long)]
    degree: Option<usize>,
    /// Number of uniform levels
    #[arg(long)]
    levels: Option<usize>,
    /// Stop when the dof count would exceed this
    #[arg(long)]
    max_dofs: Option<usize>,
    /// Adaptive iteration cap
    #[arg(long)]
    max_iters: Option<usize>,
    /// Estimator driving the marking: eta | gimel
    #[arg(long)]
    estimator: Option<String>,
    /// Dörfler marking parameter in (0,1)
    #[arg(long)]
    theta: Option<f64>,
    /// Override of the jump stabilization (default 3 p^6)
    #[arg(long)]
    c_sigma: Option<f64>,
    /// Override of the gradient-jump stabilization (default 9 p^2)
    #[arg(long)]
    c_tau: Option<f64>,
    /// Output directory for CSV files
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra quadrature exactness on top of 2p+4
    #[arg(long)]
    quad_boost: Option<usize>,
    /// Extended-precision assembly (default: on for uniform, off otherwise)
    #[arg(long)]
    precise: Option<bool>,
    /// Smallest degree of the p-study
    #[arg(long)]
    p_min: Option<usize>,
    /// Largest degree of the p-study
    #[arg(long)]
    p_max: Option<usize>,
    /// Write per-element indicator CSVs for the final mesh
    #[arg(long, default_value_t = false)]
    dump_indicators: bool,
    /// Write each adaptive mesh in the plain-text format
    #[arg(long, default_value_t = false)]
    dump_meshes: bool,
    /// Optional key=value file; command-line flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

struct Settings {
    file: HashMap<String, String>,
}

impl Settings {
    fn load(path: &Option<PathBuf>) -> Result<Settings, String> {
        let mut file = HashMap::new();
        if let Some(p) = path {
            let text = fs::read_to_string(p).map_err(|e| format!("cannot read config {p:?}: {e}"))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| format!("config line {} is not key=value: {line:?}", lineno + 1))?;
                file.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Settings { file })
    }

    fn get<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|e| format!("config key {key}={raw:?}: {e}")),
            None => Ok(default),
        }
    }
}

fn parse_problem(tag: &str) -> Result<TestProblem, String> {
    TestProblem::from_tag(tag).map_err(|e| e.to_string())
}

fn parse_estimator(tag: &str) -> Result<EstimatorKind, String> {
    match tag {
        "eta" => Ok(EstimatorKind::Eta),
        "gimel" => Ok(EstimatorKind::Gimel),
        other => Err(format!("unknown estimator {other:?} (expected eta or gimel)")),
    }
}

fn penalties(p: usize, c_sigma: Option<f64>, c_tau: Option<f64>) -> Option<PenaltyConfig> {
    if c_sigma.is_none() && c_tau.is_none() {
        return None;
    }
    let defaults = PenaltyConfig::degree_scaled(p);
    Some(PenaltyConfig {
        c_sigma: c_sigma.unwrap_or(defaults.c_sigma),
        c_tau: c_tau.unwrap_or(defaults.c_tau),
    })
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf, String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {dir:?}: {e}"))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| format!("cannot write {path:?}: {e}"))?;
    Ok(path)
}

fn run_uniform(args: &CommonArgs) -> Result<(), (u8, String)> {
    let cfgf = Settings::load(&args.config).map_err(|e| (EXIT_CONFIG, e))?;
    let tag = cfgf
        .get(args.problem.clone(), "problem", "square-sine".into())
        .map_err(|e| (EXIT_CONFIG, e))?;
    let problem = parse_problem(&tag).map_err(|e| (EXIT_CONFIG, e))?;
    let p = cfgf.get(args.degree, "degree", 2).map_err(|e| (EXIT_CONFIG, e))?;
    let levels = cfgf.get(args.levels, "levels", 8).map_err(|e| (EXIT_CONFIG, e))?;
    let max_dofs = cfgf
        .get(args.max_dofs, "max-dofs", 1_000_000)
        .map_err(|e| (EXIT_CONFIG, e))?;
    let quad_boost = cfgf
        .get(args.quad_boost, "quad-boost", 0)
        .map_err(|e| (EXIT_CONFIG, e))?;
    let precise = cfgf
        .get(args.precise, "precise", true)
        .map_err(|e| (EXIT_CONFIG, e))?;
    let out_dir = cfgf
        .get(args.out.clone(), "out", PathBuf::from("."))
        .map_err(|e| (EXIT_CONFIG, e))?;
    let c_sigma = cfgf.get(args.c_sigma, "c-sigma", f64::NAN).map_err(|e| (EXIT_CONFIG, e))?;
    let c_tau = cfgf.get(args.c_tau, "c-tau", f64::NAN).map_err(|e| (EXIT_CONFIG, e))?;

    let mut cfg = UniformConfig::new(problem, p, levels);
    cfg.max_dofs = max_dofs;
    cfg.opts = AssemblyOpts {
        quad_boost,
        quad_degree: None,
        precise,
    };
    cfg.penalties = penalties(
        p,
        c_sigma.is_finite().then_some(c_sigma),
        c_tau.is_finite().then_some(c_tau),
    );

    let out = uniform_run(&cfg).map_err(map_driver_err)?;
    if args.dump_indicators {
        if let Some((_, data)) = &out.last {
            let mut buf = Vec::new();
            write_indicator_csv(&data.report, &mut buf).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
            let path = write_file(
                &out_dir,
                &format!("indicators_{}_p{}_final.csv", problem_tagname(&tag), p),
                &buf,
            )
            .map_err(|e| (EXIT_CONFIG, e))?;
            println!("wrote {}", path.display());
        }
    }
    let mut buf = Vec::new();
    write_records_csv(&out.records, &mut buf).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    if out.truncated {
        buf.extend_from_slice(b"# truncated: dof cap reached before the requested level\n");
        eprintln!("warning: run truncated by --max-dofs before level {levels}");
    }
    let path = write_file(&out_dir, &format!("uniform_{}_p{}.csv", problem_tagname(&tag), p), &buf)
        .map_err(|e| (EXIT_CONFIG, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn problem_tagname(tag: &str) -> String {
    tag.replace('/', "_")
}

fn run_adaptive(args: &CommonArgs) -> Result<(), (u8, String)> {
    let cfgf = Settings::load(&args.config).map_err(|e| (EXIT_CONFIG, e))?;
    let tag = cfgf
        .get(args.problem.clone(), "problem", "lshape-singular".into())
        .map_err(|e| (EXIT_CONFIG, e))?;
    let problem = parse_problem(&tag).map_err(|e| (EXIT_CONFIG, e))?;
    let p = cfgf.get(args.degree, "degree", 2).map_err(|e| (EXIT_CONFIG, e))?;
    let est_tag = cfgf
        .get(args.estimator.clone(), "estimator", "eta".into())
        .map_err(|e| (EXIT_CONFIG, e))?;
    let estimator = parse_estimator(&est_tag).map_err(|e| (EXIT_CONFIG, e))?;
    let theta = cfgf.get(args.theta, "theta", 0.5).map_err(|e| (EXIT_CONFIG, e))?;
    let max_iters = cfgf
        .get(args.max_iters, "max-iters", 30)
        .map_err(|e| (EXIT_CONFIG, e))?;
    let max_dofs = cfgf
        .get(args.max_dofs, "max-dofs", 50_000)
        .map_err(|e| (EXIT_CONFIG, e))?;
    let quad_boost = cfgf
        .get(args.quad_boost, "quad-boost", 0)
        .map_err(|e| (EXIT_CONFIG, e))?;
    let precise = cfgf
        .get(args.precise, "precise", false)
        .map_err(|e| (EXIT_CONFIG, e))?;
    let out_dir = cfgf
        .get(args.out.clone(), "out", PathBuf::from("."))
        .map_err(|e| (EXIT_CONFIG, e))?;
    let c_sigma = cfgf.get(args.c_sigma, "c-sigma", f64::NAN).map_err(|e| (EXIT_CONFIG, e))?;
    let c_tau = cfgf.get(args.c_tau, "c-tau", f64::NAN).map_err(|e| (EXIT_CONFIG, e))?;

    let mut cfg = AdaptConfig::new(p);
    cfg.estimator = estimator;
    cfg.theta = theta;
    cfg.max_iters = max_iters;
    cfg.max_dofs = max_dofs;
    cfg.opts = AssemblyOpts {
        quad_boost,
        quad_degree: None,
        precise,
    };
    cfg.penalties = penalties(
        p,
        c_sigma.is_finite().then_some(c_sigma),
        c_tau.is_finite().then_some(c_tau),
    );

    let dump = args.dump_meshes;
    let dump_ind = args.dump_indicators;
    let out_dir2 = out_dir.clone();
    let records = adapt_run(&problem, &cfg, |mesh, rec, report| {
        if dump {
            let _ = write_file(
                &out_dir2,
                &format!("adaptive_{}_p{}_{}_iter{:03}.mesh", problem_tagname(&tag), p, est_tag, rec.level),
                mesh.to_text().as_bytes(),
            );
        }
        if dump_ind {
            let mut buf = Vec::new();
            if write_indicator_csv(report, &mut buf).is_ok() {
                let _ = write_file(
                    &out_dir2,
                    &format!(
                        "indicators_{}_p{}_{}_iter{:03}.csv",
                        problem_tagname(&tag),
                        p,
                        est_tag,
                        rec.level
                    ),
                    &buf,
                );
            }
        }
    })
    .map_err(map_adapt_err)?;
    let mut buf = Vec::new();
    write_records_csv(&records, &mut buf).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    let path = write_file(
        &out_dir,
        &format!("adaptive_{}_p{}_{}.csv", problem_tagname(&tag), p, est_tag),
        &buf,
    )
    .map_err(|e| (EXIT_CONFIG, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run_pstudy(args: &CommonArgs) -> Result<(), (u8, String)> {
    let cfgf = Settings::load(&args.config).map_err(|e| (EXIT_CONFIG, e))?;
    let tag = cfgf
        .get(args.problem.clone(), "problem", "lshape-singular".into())
        .map_err(|e| (EXIT_CONFIG, e))?;
    let problem = parse_problem(&tag).map_err(|e| (EXIT_CONFIG, e))?;
    let p_min = cfgf.get(args.p_min, "p-min", 2).map_err(|e| (EXIT_CONFIG, e))?;
    let p_max = cfgf.get(args.p_max, "p-max", 20).map_err(|e| (EXIT_CONFIG, e))?;
    if p_min < 2 || p_max < p_min {
        return Err((EXIT_CONFIG, format!("invalid degree range {p_min}..{p_max}")));
    }
    let quad_boost = cfgf
        .get(args.quad_boost, "quad-boost", 0)
        .map_err(|e| (EXIT_CONFIG, e))?;
    let precise = cfgf
        .get(args.precise, "precise", false)
        .map_err(|e| (EXIT_CONFIG, e))?;
    let out_dir = cfgf
        .get(args.out.clone(), "out", PathBuf::from("."))
        .map_err(|e| (EXIT_CONFIG, e))?;

    let mut cfg = PStudyConfig::new(p_min, p_max);
    cfg.problem = problem;
    cfg.opts = AssemblyOpts {
        quad_boost,
        quad_degree: None,
        precise,
    };
    let rows = pstudy_run(&cfg).map_err(map_driver_err)?;
    let mut buf = Vec::new();
    write_pstudy_csv(&rows, &mut buf).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    let path = write_file(&out_dir, &format!("pstudy_{}.csv", problem_tagname(&tag)), &buf)
        .map_err(|e| (EXIT_CONFIG, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run_verify(args: &CommonArgs) -> Result<(), (u8, String)> {
    let cfgf = Settings::load(&args.config).map_err(|e| (EXIT_CONFIG, e))?;
    let c_sigma = cfgf.get(args.c_sigma, "c-sigma", f64::NAN).map_err(|e| (EXIT_CONFIG, e))?;
    let c_tau = cfgf.get(args.c_tau, "c-tau", f64::NAN).map_err(|e| (EXIT_CONFIG, e))?;
    let pen = penalties(
        2,
        c_sigma.is_finite().then_some(c_sigma),
        c_tau.is_finite().then_some(c_tau),
    );
    let results = biharm::verify::run_all(pen);
    let mut ok = true;
    for r in &results {
        println!(
            "{} {} measured={:.6e} threshold={:.1e} :: {}",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.measured,
            r.threshold,
            r.detail
        );
        ok &= r.pass;
    }
    if ok {
        println!("verify: all {} checks passed", results.len());
        Ok(())
    } else {
        Err((EXIT_INVARIANT, "invariant suite reported failures".into()))
    }
}

fn map_driver_err(e: DriverError) -> (u8, String) {
    match e {
        DriverError::Solver(inner) => (EXIT_SOLVER, inner.to_string()),
        other => (EXIT_CONFIG, other.to_string()),
    }
}

fn map_adapt_err(e: AdaptError) -> (u8, String) {
    match e {
        AdaptError::Step {
            iter,
            source: DriverError::Solver(inner),
        } => (EXIT_SOLVER, format!("iteration {iter}: {inner}")),
        other => (EXIT_CONFIG, other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Uniform(args) => run_uniform(args),
        Cmd::Adaptive(args) => run_adaptive(args),
        Cmd::Pstudy(args) => run_pstudy(args),
        Cmd::Verify(args) => run_verify(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
