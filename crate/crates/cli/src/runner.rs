//! Executes an expanded experiment: every sweep point writes its own file,
//! then the manifest is written last.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use stokes_core::krylov::{gmres_solve, SolveStatus};
use stokes_core::multigrid::{mg_solve_cell_history, mg_solve_face_history, MgHierarchy, SmootherParams};
use stokes_core::operators::NullSpace;
use stokes_core::problems::{make_rhs, PRNG_NAME};
use stokes_core::spectrum::analyze_stokes_spectrum;

use crate::config::{describe, expand, MgSolver, Mode, RunPoint};
use crate::error::{CliError, CliResult};
use crate::output::{history_csv, mg_csv, write_atomic, MgRow};

pub const MANIFEST: &str = "manifest.json";

/// Everything a subcommand needs besides the configuration itself.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub mode: Mode,
    pub config: toml::Value,
    /// Preset name or config path, echoed into the manifest.
    pub source: String,
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub index: usize,
    pub overrides: BTreeMap<String, toml::Value>,
    pub file: Option<String>,
    pub status: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scalar_vcycles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_rel_resid_true: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_rel_resid_precond: Option<f64>,
    pub wall_time_s: f64,
}

impl RunRecord {
    fn ok(&self) -> bool {
        matches!(self.status.as_str(), "converged" | "breakdown" | "complete")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: Mode,
    pub source: String,
    pub prng: &'static str,
    pub seed_override: Option<u64>,
    pub config: serde_json::Value,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
    pub status: String,
    pub runs: Vec<RunRecord>,
}

/// Validates every sweep point, runs them and writes the manifest. Returns
/// the exit code: 0 when every run succeeded, 1 otherwise.
pub fn execute(inv: &Invocation) -> CliResult<i32> {
    let points = expand(&inv.config, inv.mode, inv.seed)?;
    std::fs::create_dir_all(&inv.out_dir).map_err(|e| CliError::io(&inv.out_dir, e))?;
    let started = Instant::now();
    let started_unix_s = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(inv.jobs.max(1))
        .build()
        .map_err(|e| CliError::Run(e.to_string()))?;
    let runs: Vec<RunRecord> = pool.install(|| points.par_iter().map(|p| run_point(inv.mode, p, &inv.out_dir)).collect());
    let failed = runs.iter().filter(|r| !r.ok()).count();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: inv.mode,
        source: inv.source.clone(),
        prng: PRNG_NAME,
        seed_override: inv.seed,
        config: serde_json::to_value(&inv.config).map_err(|e| CliError::Run(e.to_string()))?,
        started_unix_s,
        wall_time_s: started.elapsed().as_secs_f64(),
        status: if failed == 0 { "ok".into() } else { format!("{failed} of {} runs did not succeed", runs.len()) },
        runs,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Run(e.to_string()))?;
    write_atomic(&inv.out_dir.join(MANIFEST), &json)?;
    Ok(if failed == 0 { 0 } else { 1 })
}

fn file_name(mode: Mode, index: usize) -> String {
    match mode {
        Mode::Run => format!("run-{index:03}.csv"),
        Mode::MgBench => format!("mg-{index:03}.csv"),
        Mode::Spectrum => format!("spectrum-{index:03}.json"),
    }
}

fn run_point(mode: Mode, p: &RunPoint, out: &Path) -> RunRecord {
    let t = Instant::now();
    let mut rec = RunRecord {
        index: p.index,
        overrides: p.overrides.clone(),
        file: None,
        status: String::new(),
        seed: p.config.problem.seed,
        message: None,
        iterations: None,
        scalar_vcycles: None,
        final_rel_resid_true: None,
        final_rel_resid_precond: None,
        wall_time_s: 0.0,
    };
    let name = file_name(mode, p.index);
    let result = match mode {
        Mode::Run => run_solve(p, &out.join(&name), &mut rec),
        Mode::MgBench => run_mg(p, &out.join(&name)).map(|_| "complete".to_string()),
        Mode::Spectrum => run_spectrum(p, &out.join(&name)).map(|_| "complete".to_string()),
    };
    match result {
        Ok(status) => {
            rec.status = status;
            rec.file = Some(name);
        }
        Err(e) => {
            rec.status = "failed".into();
            rec.message = Some(e.to_string());
        }
    }
    rec.wall_time_s = t.elapsed().as_secs_f64();
    eprintln!("[{:03}] {} {} ({:.1} s)", p.index, describe(&p.overrides), rec.status, rec.wall_time_s);
    rec
}

fn run_solve(p: &RunPoint, path: &Path, rec: &mut RunRecord) -> CliResult<String> {
    let prob = p.config.build_problem()?;
    let (_, h) = gmres_solve(&prob.rhs, &prob.system, &p.config.precond(), &p.config.solver.gmres)?;
    write_atomic(path, &history_csv(&h)?)?;
    let (r0, last) = (h.initial(), h.last());
    rec.iterations = Some(h.iterations());
    rec.scalar_vcycles = Some(last.scalar_vcycles);
    rec.final_rel_resid_true = Some(last.resid_true / r0.resid_true);
    rec.final_rel_resid_precond = Some(last.resid_precond / r0.resid_precond);
    Ok(match h.status {
        SolveStatus::Converged => "converged",
        SolveStatus::Breakdown => "breakdown",
        SolveStatus::MaxIterations => "max_iterations",
    }
    .into())
}

fn run_mg(p: &RunPoint, path: &Path) -> CliResult<()> {
    let cfg = &p.config;
    let coeff = cfg.coefficients()?;
    let g = *coeff.grid();
    let (mut rhs, _) = make_rhs(&g, &coeff, cfg.problem.seed)?;
    if cfg.mg_bench.zero_rhs {
        rhs.scale(0.0);
    }
    NullSpace::of(&coeff).project(&mut rhs);
    rhs.p.subtract_mean();
    let hierarchy = MgHierarchy::build(&coeff)?;
    let bench = &cfg.mg_bench;
    let base = cfg.precond().smoother;
    let mut rows = Vec::new();
    for &solver in &bench.solvers {
        for &s in &bench.sweeps {
            let params = SmootherParams { sweeps_down: s, sweeps_up: s, ..base };
            let hist = match solver {
                MgSolver::Pressure => mg_solve_cell_history(&rhs.p, &hierarchy, &params, bench.cycles)?.1,
                MgSolver::Velocity => mg_solve_face_history(&rhs.u, &hierarchy, &params, bench.cycles)?.1,
            };
            let r0 = if bench.zero_rhs { 0.0 } else { 1.0 };
            rows.push(MgRow { solver: solver.name(), sweeps: s, cycle: 0, rel_residual: r0 });
            rows.extend(hist.iter().enumerate().map(|(k, &r)| MgRow { solver: solver.name(), sweeps: s, cycle: k + 1, rel_residual: r }));
        }
    }
    write_atomic(path, &mg_csv(&rows)?)
}

fn run_spectrum(p: &RunPoint, path: &Path) -> CliResult<()> {
    let coeff = p.config.coefficients()?;
    let report = analyze_stokes_spectrum(&coeff, p.config.spectrum.target, p.config.spectrum.bins)?;
    let json = serde_json::to_vec_pretty(&report).map_err(|e| CliError::Run(e.to_string()))?;
    write_atomic(path, &json)
}
