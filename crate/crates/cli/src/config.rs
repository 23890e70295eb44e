//! Experiment configuration: a TOML tree with `problem`, `solver`, `sweep`,
//! `output`, `mg_bench` and `spectrum` tables. See the README for the schema.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use stokes_core::dense::DENSE_CAP;
use stokes_core::grid::{BoundaryCondition, CellField, GridSpec, StokesVector};
use stokes_core::krylov::GmresConfig;
use stokes_core::multigrid::SmootherParams;
use stokes_core::operators::{rescale, CoefficientSet, ViscousForm};
use stokes_core::precond::PrecondConfig;
use stokes_core::problems::{bubble_coefficients, cfl_to_theta, constant_coefficients, make_rhs, BubbleSpec, CflSpec};
use stokes_core::spectrum::SpectrumTarget;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Constant,
    Bubble,
}

/// Bubble geometry and contrast. Reference viscosity, density and the
/// noise seed come from the enclosing problem table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BubbleTable {
    pub r_mu: f64,
    pub r_rho: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 3]>,
    pub noise_amp: f64,
    pub outside_positive: bool,
}

impl Default for BubbleTable {
    fn default() -> Self {
        let d = BubbleSpec::default();
        Self {
            r_mu: d.r_mu,
            r_rho: d.r_rho,
            epsilon: d.epsilon,
            radius: d.radius,
            center: d.center,
            noise_amp: d.noise_amp,
            outside_positive: d.outside_positive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemBlock {
    pub kind: ProblemKind,
    pub dim: usize,
    pub n: usize,
    /// Domain edge length; `h = length / n`.
    pub length: f64,
    pub bc: BoundaryCondition,
    pub viscous_form: ViscousForm,
    pub mu0: f64,
    pub rho0: f64,
    /// Bulk viscosity for the `stress-bulk` form.
    pub gamma0: f64,
    /// Used when `cfl` is absent.
    pub theta: f64,
    /// Viscous CFL number; `0` is inviscid, `inf` is steady.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfl: Option<f64>,
    /// Seeds both the bubble noise and the right-hand side.
    pub seed: u64,
    /// Scale velocity equations and pressure by `h / mu_max`.
    pub rescale: bool,
    pub bubble: BubbleTable,
}

impl Default for ProblemBlock {
    fn default() -> Self {
        Self {
            kind: ProblemKind::Bubble,
            dim: 2,
            n: 64,
            length: 1.0,
            bc: BoundaryCondition::NoSlip,
            viscous_form: ViscousForm::Stress,
            mu0: 1.0,
            rho0: 1.0,
            gamma0: 0.0,
            theta: 0.0,
            cfl: None,
            seed: 1,
            rescale: true,
            bubble: BubbleTable::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverBlock {
    pub precond: PrecondConfig,
    pub gmres: GmresConfig,
    /// Overrides `precond.smoother` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoother: Option<SmootherParams>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    /// Used when neither `--out` nor the environment names a directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MgSolver {
    Pressure,
    Velocity,
}

impl MgSolver {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pressure => "pressure",
            Self::Velocity => "velocity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MgBenchBlock {
    pub solvers: Vec<MgSolver>,
    pub sweeps: Vec<usize>,
    pub cycles: usize,
    /// Solve with a zero right-hand side (absolute residuals are reported).
    pub zero_rhs: bool,
}

impl Default for MgBenchBlock {
    fn default() -> Self {
        Self { solvers: vec![MgSolver::Pressure, MgSolver::Velocity], sweeps: vec![1, 2, 3, 4], cycles: 20, zero_rhs: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumBlock {
    pub target: SpectrumTarget,
    pub bins: usize,
}

impl Default for SpectrumBlock {
    fn default() -> Self {
        Self { target: SpectrumTarget::PrecondS, bins: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub problem: ProblemBlock,
    pub solver: SolverBlock,
    /// Dotted path to a list of values; the runs are the cartesian product.
    /// A table value is merged into the table at its path.
    pub sweep: BTreeMap<String, toml::Value>,
    pub output: OutputBlock,
    pub mg_bench: MgBenchBlock,
    pub spectrum: SpectrumBlock,
}

/// Which subcommand will consume the configuration; validation differs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Run,
    MgBench,
    Spectrum,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Run => "run",
            Self::MgBench => "mg-bench",
            Self::Spectrum => "spectrum",
        }
    }
}

/// One point of the sweep.
#[derive(Debug, Clone)]
pub struct RunPoint {
    pub index: usize,
    pub overrides: BTreeMap<String, toml::Value>,
    pub config: ExperimentConfig,
}

/// A discretized problem ready to solve.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: GridSpec,
    /// As discretized, before rescaling.
    pub coeff: CoefficientSet,
    /// The system handed to GMRES (rescaled when configured).
    pub system: CoefficientSet,
    pub rhs: StokesVector,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn parse_config(text: &str) -> CliResult<toml::Value> {
    let value: toml::Value = toml::from_str(text).map_err(|e| invalid(format!("malformed config: {e}")))?;
    // Typed parse up front so unknown keys are reported before sweeps are expanded.
    ExperimentConfig::deserialize(value.clone()).map_err(|e| invalid(format!("invalid config: {e}")))?;
    Ok(value)
}

/// Deep merge of `patch` into `base`; tables merge key by key, other values replace.
pub fn merge(base: &mut toml::Value, patch: &toml::Value) {
    match (base, patch) {
        (toml::Value::Table(b), toml::Value::Table(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn set_path(root: &mut toml::Value, path: &str, value: &toml::Value) -> CliResult<()> {
    let mut cur = root;
    for key in path.split('.') {
        let table = cur.as_table_mut().ok_or_else(|| invalid(format!("sweep path {path:?} crosses a non-table value")))?;
        cur = table.entry(key.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    merge(cur, value);
    Ok(())
}

/// Flattens the sweep table: nested tables extend the dotted path, arrays are leaves.
fn sweep_axes(prefix: &str, v: &toml::Value, out: &mut Vec<(String, Vec<toml::Value>)>) -> CliResult<()> {
    match v {
        toml::Value::Array(items) if items.is_empty() => Err(invalid(format!("sweep {prefix:?} has no values"))),
        toml::Value::Array(items) => {
            out.push((prefix.to_string(), items.clone()));
            Ok(())
        }
        toml::Value::Table(t) => {
            for (k, sub) in t {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                sweep_axes(&p, sub, out)?;
            }
            Ok(())
        }
        _ => Err(invalid(format!("sweep {prefix:?} must be a list of values"))),
    }
}

/// Expands the sweep and validates every point for `mode`. Nothing is run
/// or written here, so a bad point rejects the whole experiment.
pub fn expand(root: &toml::Value, mode: Mode, seed: Option<u64>) -> CliResult<Vec<RunPoint>> {
    let mut base = root.clone();
    let sweep = base.as_table_mut().and_then(|t| t.remove("sweep"));
    let mut axes = Vec::new();
    if let Some(s) = &sweep {
        sweep_axes("", s, &mut axes)?;
    }
    let total: usize = axes.iter().map(|(_, v)| v.len()).product();
    let mut points = Vec::with_capacity(total);
    for index in 0..total {
        let mut value = base.clone();
        let mut overrides = BTreeMap::new();
        // Row-major: the last axis varies fastest.
        let mut rem = index;
        let mut picks = vec![0; axes.len()];
        for (k, (_, vals)) in axes.iter().enumerate().rev() {
            picks[k] = rem % vals.len();
            rem /= vals.len();
        }
        for ((path, vals), &pick) in axes.iter().zip(&picks) {
            set_path(&mut value, path, &vals[pick])?;
            overrides.insert(path.clone(), vals[pick].clone());
        }
        let mut config = ExperimentConfig::deserialize(value)
            .map_err(|e| invalid(format!("sweep point {index} {}: {e}", describe(&overrides))))?;
        if let Some(s) = seed {
            config.problem.seed = s;
        }
        config
            .validate(mode)
            .map_err(|e| invalid(format!("sweep point {index} {}: {e}", describe(&overrides))))?;
        points.push(RunPoint { index, overrides, config });
    }
    Ok(points)
}

pub fn describe(overrides: &BTreeMap<String, toml::Value>) -> String {
    let parts: Vec<String> = overrides.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("[{}]", parts.join(", "))
}

impl ExperimentConfig {
    pub fn precond(&self) -> PrecondConfig {
        let mut p = self.solver.precond;
        if let Some(s) = self.solver.smoother {
            p.smoother = s;
        }
        p
    }

    pub fn grid(&self) -> CliResult<GridSpec> {
        let p = &self.problem;
        if p.n == 0 || !(p.length > 0.0) {
            return Err(invalid("problem.n and problem.length must be positive"));
        }
        Ok(GridSpec::uniform(p.dim, p.n, p.length / p.n as f64, p.bc)?)
    }

    pub fn validate(&self, mode: Mode) -> CliResult<()> {
        let p = &self.problem;
        let g = self.grid()?;
        if let Some(beta) = p.cfl {
            cfl_to_theta(CflSpec { beta }, p.mu0, p.rho0, g.h())?;
        } else if !(p.theta >= 0.0) {
            return Err(invalid("problem.theta must be nonnegative"));
        }
        if !(p.mu0 >= 0.0 && p.rho0 > 0.0 && p.gamma0 >= 0.0) {
            return Err(invalid("problem.mu0 and gamma0 must be nonnegative and rho0 positive"));
        }
        self.bubble_spec().validate()?;
        let pre = self.precond();
        pre.validate()?;
        self.solver.gmres.validate()?;
        let dense = match mode {
            Mode::Spectrum => true,
            Mode::Run => pre.exact_subsolvers,
            Mode::MgBench => false,
        };
        if dense && g.num_unknowns() > DENSE_CAP {
            return Err(invalid(format!("{} unknowns exceed the dense cap of {DENSE_CAP}", g.num_unknowns())));
        }
        if mode == Mode::MgBench {
            let b = &self.mg_bench;
            if b.solvers.is_empty() || b.sweeps.is_empty() || b.cycles == 0 {
                return Err(invalid("mg_bench needs solvers, sweeps and a positive cycle count"));
            }
            for &s in &b.sweeps {
                SmootherParams { sweeps_down: s, sweeps_up: s, ..pre.smoother }.validate()?;
            }
        }
        if mode == Mode::Spectrum && self.spectrum.bins == 0 {
            return Err(invalid("spectrum.bins must be positive"));
        }
        Ok(())
    }

    pub fn bubble_spec(&self) -> BubbleSpec {
        let b = &self.problem.bubble;
        BubbleSpec {
            r_mu: b.r_mu,
            r_rho: b.r_rho,
            epsilon: b.epsilon,
            radius: b.radius,
            center: b.center,
            noise_amp: b.noise_amp,
            seed: self.problem.seed,
            outside_positive: b.outside_positive,
            mu0: self.problem.mu0,
            rho0: self.problem.rho0,
        }
    }

    pub fn coefficients(&self) -> CliResult<CoefficientSet> {
        let p = &self.problem;
        let g = self.grid()?;
        let (theta, mu0) = match p.cfl {
            Some(beta) => {
                let regime = cfl_to_theta(CflSpec { beta }, p.mu0, p.rho0, g.h())?;
                (regime.theta, if regime.inviscid { 0.0 } else { p.mu0 })
            }
            None => (p.theta, p.mu0),
        };
        let mut c = match p.kind {
            ProblemKind::Constant => constant_coefficients(&g, mu0, p.rho0, theta, p.viscous_form)?,
            ProblemKind::Bubble => {
                let spec = BubbleSpec { mu0, ..self.bubble_spec() };
                bubble_coefficients(&g, &spec, theta, p.viscous_form)?
            }
        };
        if p.gamma0 > 0.0 {
            c.gamma_cell = CellField::constant(&g, p.gamma0);
        }
        Ok(c)
    }

    pub fn build_problem(&self) -> CliResult<Problem> {
        let coeff = self.coefficients()?;
        let grid = *coeff.grid();
        let (rhs, _) = make_rhs(&grid, &coeff, self.problem.seed)?;
        let (system, rhs) = if self.problem.rescale {
            let (c, r, _) = rescale(&coeff, &rhs);
            (c, r)
        } else {
            (coeff.clone(), rhs)
        };
        Ok(Problem { grid, coeff, system, rhs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_is_cartesian_and_row_major() {
        let v = parse_config(
            r#"
            [problem]
            n = 16
            [sweep]
            "problem.n" = [16, 32]
            "solver.precond.kind" = ["p1", "p2", "p3"]
            "#,
        )
        .unwrap();
        let pts = expand(&v, Mode::Run, None).unwrap();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[1].config.problem.n, 16);
        assert_eq!(pts[1].config.solver.precond.kind, stokes_core::precond::PrecondKind::P2);
        assert_eq!(pts[3].config.problem.n, 32);
    }

    #[test]
    fn nested_sweep_tables_and_table_values_merge() {
        let v = parse_config(
            r#"
            [problem.bubble]
            r_mu = 7.0
            [sweep.problem]
            bubble = [{ r_rho = 2.0 }, { r_rho = 3.0 }]
            "#,
        )
        .unwrap();
        let pts = expand(&v, Mode::Run, Some(9)).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].config.problem.bubble.r_rho, 3.0);
        assert_eq!(pts[1].config.problem.bubble.r_mu, 7.0);
        assert_eq!(pts[0].config.problem.seed, 9);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(parse_config("problem = [").is_err());
        assert!(parse_config("[problem]\nnn = 3").is_err());
        assert!(parse_config("[solver.gmres]\nrestart = \"ten\"").is_err());
        let v = parse_config("[sweep]\n\"solver.gmres.restart\" = [10, 0]").unwrap();
        assert!(expand(&v, Mode::Run, None).is_err());
        let v = parse_config("[problem]\nn = 512").unwrap();
        assert!(expand(&v, Mode::Spectrum, None).is_err());
        assert!(expand(&v, Mode::Run, None).is_ok());
    }

    #[test]
    fn readme_example_config_is_valid() {
        let readme = include_str!("../../../README.md");
        let start = readme.find("```toml\n").unwrap() + 8;
        let end = start + readme[start..].find("```").unwrap();
        let pts = expand(&parse_config(&readme[start..end]).unwrap(), Mode::Run, None).unwrap();
        assert_eq!(pts.len(), 4);
    }

    #[test]
    fn infinite_cfl_is_steady_and_zero_is_inviscid() {
        let v = parse_config("[problem]\nn = 16\ncfl = inf").unwrap();
        let c = expand(&v, Mode::Run, None).unwrap()[0].config.coefficients().unwrap();
        assert_eq!(c.theta, 0.0);
        let v = parse_config("[problem]\nn = 16\ncfl = 0.0").unwrap();
        let c = expand(&v, Mode::Run, None).unwrap()[0].config.coefficients().unwrap();
        assert_eq!(c.theta, 1.0);
        assert!(c.is_inviscid());
    }
}
