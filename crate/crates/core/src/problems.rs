//! Test problems: constant and bubble coefficient fields, manufactured
//! right-hand sides and the viscous CFL parameterization.
//!
//! Random values come from `ChaCha8Rng` with one stream per purpose and the
//! word position derived from the cell index, so every value depends only
//! on (seed, stream, cell).

use rand::distributions::{Distribution, Open01, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StokesError};
use crate::grid::{CellField, FaceField, GridSpec, StokesVector};
use crate::operators::{apply_m, CoefficientSet, NullSpace, ViscousForm};

/// Identifier recorded in run metadata.
pub const PRNG_NAME: &str = "ChaCha8Rng";

const STREAM_MU_NOISE: u64 = 0;
const STREAM_RHO_NOISE: u64 = 1;
const STREAM_RHS: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BubbleSpec {
    pub r_mu: f64,
    pub r_rho: f64,
    /// Interface width; `None` means one grid spacing.
    pub epsilon: Option<f64>,
    /// `None` means a quarter of the domain length.
    pub radius: Option<f64>,
    /// `None` means the domain center.
    pub center: Option<[f64; 3]>,
    pub noise_amp: f64,
    pub seed: u64,
    /// Signed distance positive outside the bubble, so the ambient fluid
    /// carries the contrast factor. `false` flips the phases.
    pub outside_positive: bool,
    pub mu0: f64,
    pub rho0: f64,
}

impl Default for BubbleSpec {
    fn default() -> Self {
        Self {
            r_mu: 100.0,
            r_rho: 100.0,
            epsilon: None,
            radius: None,
            center: None,
            noise_amp: 0.1,
            seed: 0,
            outside_positive: true,
            mu0: 1.0,
            rho0: 1.0,
        }
    }
}

impl BubbleSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(StokesError::InvalidParameter(m.to_string()));
        if !(self.r_mu >= 1.0 && self.r_rho >= 1.0) {
            return bad("contrast ratios must be at least 1");
        }
        if self.epsilon.is_some_and(|e| !(e > 0.0)) {
            return bad("epsilon must be positive");
        }
        if self.radius.is_some_and(|r| !(r > 0.0)) {
            return bad("radius must be positive");
        }
        if !(self.noise_amp >= 0.0) {
            return bad("noise amplitude must be nonnegative");
        }
        if !(self.mu0 >= 0.0 && self.rho0 > 0.0) {
            return bad("mu0 must be nonnegative and rho0 positive");
        }
        Ok(())
    }
}

/// `f = (r+1)/2 + (r-1)/2 tanh(d/eps) + noise`.
pub fn bubble_profile(d: f64, r: f64, eps: f64, noise: f64) -> f64 {
    0.5 * (r + 1.0) + 0.5 * (r - 1.0) * (d / eps).tanh() + noise
}

/// Uniform noise in (0, 1) for one cell of one stream.
fn cell_noise(seed: u64, stream: u64, cell: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(2 * cell as u128);
    Open01.sample(&mut rng)
}

/// Signed distance from `x` to the bubble surface for this spec.
pub fn bubble_distance(g: &GridSpec, spec: &BubbleSpec, x: [f64; 3]) -> f64 {
    let len = g.domain_length(0);
    let radius = spec.radius.unwrap_or(0.25 * len);
    let center = spec.center.unwrap_or_else(|| {
        let mut c = [0.0; 3];
        for (a, v) in c.iter_mut().enumerate().take(g.dim()) {
            *v = 0.5 * g.domain_length(a);
        }
        c
    });
    let r: f64 = (0..g.dim()).map(|a| (x[a] - center[a]).powi(2)).sum::<f64>().sqrt();
    let d = r - radius;
    if spec.outside_positive {
        d
    } else {
        -d
    }
}

/// Bubble viscosity and density, `mu = mu0 f(r_mu)`, `rho = rho0 f(r_rho)`,
/// with independent noise fields.
pub fn bubble_coefficients(g: &GridSpec, spec: &BubbleSpec, theta: f64, form: ViscousForm) -> Result<CoefficientSet> {
    spec.validate()?;
    let eps = spec.epsilon.unwrap_or(g.h());
    let shape = g.cell_shape();
    let field = |r: f64, scale: f64, stream: u64| {
        CellField::from_fn(g, |idx| {
            let cell = crate::grid::linear(shape, idx);
            let d = bubble_distance(g, spec, g.cell_center(idx));
            let noise = if spec.noise_amp > 0.0 { spec.noise_amp * cell_noise(spec.seed, stream, cell) } else { 0.0 };
            scale * bubble_profile(d, r, eps, noise)
        })
    };
    let mu = field(spec.r_mu, spec.mu0, STREAM_MU_NOISE);
    let rho = field(spec.r_rho, spec.rho0, STREAM_RHO_NOISE);
    CoefficientSet::new(theta, rho, mu, None, form)
}

pub fn constant_coefficients(g: &GridSpec, mu0: f64, rho0: f64, theta: f64, form: ViscousForm) -> Result<CoefficientSet> {
    CoefficientSet::new(theta, CellField::constant(g, rho0), CellField::constant(g, mu0), None, form)
}

/// Viscous CFL number `beta = mu0 / (theta rho0 h^2)`; infinity is steady flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CflSpec {
    pub beta: f64,
}

/// Time-step parameters implied by a CFL number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CflRegime {
    pub theta: f64,
    /// `beta = 0`: the viscosity is dropped and `theta` is one.
    pub inviscid: bool,
}

pub fn cfl_to_theta(spec: CflSpec, mu0: f64, rho0: f64, h: f64) -> Result<CflRegime> {
    let beta = spec.beta;
    if beta.is_nan() || beta < 0.0 {
        return Err(StokesError::InvalidParameter(format!("CFL number {beta} must be nonnegative")));
    }
    if beta == 0.0 {
        return Ok(CflRegime { theta: 1.0, inviscid: true });
    }
    if beta.is_infinite() {
        return Ok(CflRegime { theta: 0.0, inviscid: false });
    }
    Ok(CflRegime { theta: mu0 / (beta * rho0 * h * h), inviscid: false })
}

pub fn theta_to_cfl(theta: f64, mu0: f64, rho0: f64, h: f64) -> f64 {
    if theta == 0.0 {
        f64::INFINITY
    } else {
        mu0 / (theta * rho0 * h * h)
    }
}

/// Random `x` in the unknown space (null modes removed) and `rhs = M x`.
/// A draw whose velocity right-hand side vanishes is rejected.
pub fn make_rhs(g: &GridSpec, coeff: &CoefficientSet, seed: u64) -> Result<(StokesVector, StokesVector)> {
    let null = NullSpace::of(coeff);
    let dist = Uniform::new(-1.0, 1.0);
    for attempt in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_RHS + 16 * attempt);
        let u = FaceField::from_unknown_fn(g, |_, _| rng.sample(dist));
        let p = CellField::from_fn(g, |_| rng.sample(dist));
        let mut x = StokesVector::new(u, p)?;
        null.project(&mut x);
        let rhs = apply_m(&x, coeff)?;
        if rhs.u.norm2() > 0.0 {
            return Ok((rhs, x));
        }
    }
    Err(StokesError::Singular("could not draw a right-hand side with nonzero velocity part".into()))
}
