//! Plot-ready files. Every file is written to a temporary sibling and
//! renamed into place, so readers never observe a partial file.

use std::io::Write;
use std::path::Path;

use stokes_core::krylov::ConvergenceHistory;

use crate::error::{CliError, CliResult};

pub const HISTORY_HEADER: [&str; 5] = ["iteration", "scalar_vcycles", "resid_precond", "resid_true", "restart_flag"];
pub const MG_HEADER: [&str; 4] = ["solver", "sweeps", "cycle", "rel_residual"];

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

fn rel(v: f64, v0: f64) -> f64 {
    if v0 > 0.0 {
        v / v0
    } else {
        v
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Run(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Run(format!("csv: {e}")))
}

/// Residuals relative to the initial ones (absolute when the initial residual is zero).
pub fn history_csv(h: &ConvergenceHistory) -> CliResult<Vec<u8>> {
    let r0 = h.initial();
    let rows = h.records.iter().map(|r| {
        vec![
            r.iteration.to_string(),
            r.scalar_vcycles.to_string(),
            format!("{:e}", rel(r.resid_precond, r0.resid_precond)),
            format!("{:e}", rel(r.resid_true, r0.resid_true)),
            u8::from(r.restart).to_string(),
        ]
    });
    csv_bytes(&HISTORY_HEADER, rows)
}

/// Long format: one row per (solver, sweeps, cycle); cycle 0 is the zero guess.
pub struct MgRow {
    pub solver: &'static str,
    pub sweeps: usize,
    pub cycle: usize,
    pub rel_residual: f64,
}

pub fn mg_csv(rows: &[MgRow]) -> CliResult<Vec<u8>> {
    csv_bytes(
        &MG_HEADER,
        rows.iter().map(|r| vec![r.solver.to_string(), r.sweeps.to_string(), r.cycle.to_string(), format!("{:e}", r.rel_residual)]),
    )
}
