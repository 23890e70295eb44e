//! Shipped experiment presets, one per convergence study plus two small problems.
//! Default sizes fit a workstation; `full` patches restore the published sizes.

use crate::config::{merge, parse_config, Mode};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub name: &'static str,
    pub mode: Mode,
    pub description: &'static str,
    pub desk: &'static str,
    /// Merged over `desk` with `--full-scale`.
    pub full: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "fig1-mg-sweeps",
        mode: Mode::MgBench,
        description: "pressure and velocity multigrid alone, 1 to 4 smoothing sweeps",
        desk: r#"
name = "fig1-mg-sweeps"
[problem]
kind = "constant"
bc = "no-slip"
[mg_bench]
solvers = ["pressure", "velocity"]
sweeps = [1, 2, 3, 4]
cycles = 20
[sweep]
problem = [{ dim = 2, n = 256 }, { dim = 3, n = 32 }]
"#,
        full: r#"
[sweep]
problem = [{ dim = 2, n = 512 }, { dim = 3, n = 128 }]
"#,
    },
    Preset {
        name: "fig2-vcycles",
        mode: Mode::Run,
        description: "P1 without restarts, 1/2/4 V-cycles per subsolve against exact subsolvers",
        desk: r#"
name = "fig2-vcycles"
[problem]
n = 32
[solver.precond]
kind = "p1"
[solver.gmres]
restart = 200
max_iters = 200
rtol = 1e-10
[sweep]
problem = [{ kind = "constant", bc = "periodic" }, { kind = "bubble", bc = "no-slip" }]
"solver.precond" = [
    { velocity_cycles = 1, schur = { pressure_cycles = 1 } },
    { velocity_cycles = 2, schur = { pressure_cycles = 2 } },
    { velocity_cycles = 4, schur = { pressure_cycles = 4 } },
    { exact_subsolvers = true },
]
"#,
        full: r#"
[problem]
n = 512
[sweep]
"solver.precond" = [
    { velocity_cycles = 1, schur = { pressure_cycles = 1 } },
    { velocity_cycles = 2, schur = { pressure_cycles = 2 } },
    { velocity_cycles = 4, schur = { pressure_cycles = 4 } },
    { velocity_cycles = 16, schur = { pressure_cycles = 16 } },
]
"#,
    },
    Preset {
        name: "fig3-restarts",
        mode: Mode::Run,
        description: "P1/P2/P3 with restart 5 and 10, inviscid and steady bubble",
        desk: r#"
name = "fig3-restarts"
[problem]
n = 128
[solver.gmres]
max_iters = 200
rtol = 1e-10
[sweep]
"problem.cfl" = [0.0, inf]
"solver.precond.kind" = ["p1", "p2", "p3"]
"solver.gmres.restart" = [5, 10]
"#,
        full: r#"
[problem]
n = 512
"#,
    },
    Preset {
        name: "fig4-precond-compare",
        mode: Mode::Run,
        description: "all five preconditioners on the steady bubble in 2D and 3D",
        desk: r#"
name = "fig4-precond-compare"
[solver.gmres]
restart = 10
max_iters = 200
rtol = 1e-10
[sweep]
problem = [{ dim = 2, n = 128 }, { dim = 3, n = 32 }]
"solver.precond.kind" = ["p1", "p2", "p3", "p4", "p5"]
"#,
        full: r#"
[sweep]
problem = [{ dim = 2, n = 512 }, { dim = 3, n = 128 }]
"#,
    },
    Preset {
        name: "fig5-cfl",
        mode: Mode::Run,
        description: "P1 and P2 on the bubble from the inviscid to the steady limit",
        desk: r#"
name = "fig5-cfl"
[solver.gmres]
max_iters = 200
rtol = 1e-10
[sweep]
problem = [{ dim = 2, n = 128 }, { dim = 3, n = 32 }]
"problem.cfl" = [0.0, 1.0, 1e4, inf]
"solver.precond.kind" = ["p1", "p2"]
"#,
        full: r#"
[sweep]
problem = [{ dim = 2, n = 512 }, { dim = 3, n = 128 }]
"#,
    },
    Preset {
        name: "fig6-scaling",
        mode: Mode::Run,
        description: "P1 and P2 on the steady bubble as the grid is refined, contrast 100 and 2",
        desk: r#"
name = "fig6-scaling"
[solver.gmres]
max_iters = 300
rtol = 1e-10
[sweep]
problem = [
    { dim = 2, n = 64 }, { dim = 2, n = 128 }, { dim = 2, n = 256 },
    { dim = 3, n = 16 }, { dim = 3, n = 32 },
]
"problem.bubble" = [{ r_mu = 100.0, r_rho = 100.0 }, { r_mu = 2.0, r_rho = 2.0 }]
"solver.precond.kind" = ["p1", "p2"]
"#,
        full: r#"
[sweep]
problem = [
    { dim = 3, n = 32 }, { dim = 3, n = 64 }, { dim = 3, n = 128 },
    { dim = 3, n = 256 }, { dim = 3, n = 512 },
]
"#,
    },
    Preset {
        name: "fig7-spectrum",
        mode: Mode::Spectrum,
        description: "eigenvalues of M and of the preconditioned Schur complement",
        desk: r#"
name = "fig7-spectrum"
[problem]
viscous_form = "stress"
bc = "no-slip"
[spectrum]
bins = 50
[sweep]
problem = [{ kind = "constant", n = 32 }, { kind = "bubble", n = 16 }]
"spectrum.target" = ["m", "precond_s"]
"#,
        full: "",
    },
    Preset {
        name: "constant-periodic-steady",
        mode: Mode::Run,
        description: "constant-coefficient periodic steady Stokes, P1 with exact subsolvers",
        desk: r#"
name = "constant-periodic-steady"
[problem]
kind = "constant"
bc = "periodic"
n = 64
[solver.precond]
kind = "p1"
exact_subsolvers = true
[solver.gmres]
rtol = 1e-10
"#,
        full: "",
    },
    Preset {
        name: "bubble-2d",
        mode: Mode::Run,
        description: "steady contrast-100 bubble, P2 with one V-cycle, restart 10",
        desk: r#"
name = "bubble-2d"
[problem]
n = 128
[solver.precond]
kind = "p2"
[solver.gmres]
restart = 10
max_iters = 200
rtol = 1e-10
"#,
        full: r#"
[problem]
n = 512
"#,
    },
];

pub fn find(name: &str) -> CliResult<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        CliError::Config(format!("unknown preset {name:?}; available: {}", names.join(", ")))
    })
}

impl Preset {
    pub fn source(&self, full_scale: bool) -> CliResult<String> {
        let mut v: toml::Value = toml::from_str(self.desk).map_err(|e| CliError::Config(e.to_string()))?;
        if full_scale {
            let patch: toml::Value = toml::from_str(self.full).map_err(|e| CliError::Config(e.to_string()))?;
            merge(&mut v, &patch);
        }
        toml::to_string(&v).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn value(&self, full_scale: bool) -> CliResult<toml::Value> {
        parse_config(&self.source(full_scale)?)
    }
}
