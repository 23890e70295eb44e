use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stokes_core::grid::{face_from_unknowns, BoundaryCondition, CellField, GridSpec};
use stokes_core::multigrid::{mg_solve_cell_history, mg_solve_face_history, MgHierarchy, SmootherParams};
use stokes_core::operators::{CoefficientSet, ViscousForm};

fn unit_coeff(g: &GridSpec, form: ViscousForm) -> CoefficientSet {
    CoefficientSet::new(0.0, CellField::constant(g, 1.0), CellField::constant(g, 1.0), None, form).unwrap()
}

fn random_cell_rhs(g: &GridSpec, seed: u64) -> CellField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = CellField::from_fn(g, |_| rng.gen_range(-1.0..1.0));
    r.subtract_mean();
    r
}

fn ratios(hist: &[f64]) -> Vec<f64> {
    let mut out = vec![hist[0]];
    out.extend(hist.windows(2).map(|w| w[1] / w[0]));
    out
}

/// Per-cycle ratios up to the cycle that first reaches `target`; beyond
/// that the residual sits at round-off and ratios carry no information.
fn ratios_until(hist: &[f64], target: f64) -> Vec<f64> {
    let end = hist.iter().position(|&r| r <= target).map_or(hist.len(), |i| i + 1);
    ratios(&hist[..end])
}

fn pressure_history(g: &GridSpec, sweeps: usize, cycles: usize) -> Vec<f64> {
    let c = unit_coeff(g, ViscousForm::Stress);
    let h = MgHierarchy::build(&c).unwrap();
    let r = random_cell_rhs(g, 11);
    mg_solve_cell_history(&r, &h, &SmootherParams::with_sweeps(sweeps), cycles).unwrap().1
}

#[test]
fn pressure_cycles_no_slip_2d() {
    let g = GridSpec::uniform(2, 256, 1.0, BoundaryCondition::NoSlip).unwrap();
    let hist = pressure_history(&g, 2, 15);
    let rates = ratios_until(&hist, 1e-10);
    eprintln!("2d pressure {:?}", rates);
    assert!(hist[14] <= 1e-10);
    assert!(rates.iter().all(|&q| q <= 0.15));
}

#[test]
fn pressure_cycles_no_slip_3d() {
    let g = GridSpec::uniform(3, 48, 1.0, BoundaryCondition::NoSlip).unwrap();
    let hist = pressure_history(&g, 2, 15);
    let rates = ratios_until(&hist, 1e-10);
    eprintln!("3d pressure {:?}", rates);
    assert!(hist[14] <= 1e-10);
    assert!(rates[2..].iter().all(|&q| q <= 0.2));
}

#[test]
fn twelve_cycles_at_512() {
    let g = GridSpec::uniform(2, 512, 1.0, BoundaryCondition::NoSlip).unwrap();
    let hist = pressure_history(&g, 2, 12);
    eprintln!("512 {:?}", hist);
    assert!(hist[11] <= 1e-10);
}

#[test]
fn two_sweeps_beat_one() {
    let g = GridSpec::uniform(2, 128, 1.0, BoundaryCondition::NoSlip).unwrap();
    let one = pressure_history(&g, 1, 20);
    let two = pressure_history(&g, 2, 20);
    let first = |h: &[f64]| h.iter().position(|&r| r <= 1e-10).unwrap_or(usize::MAX);
    eprintln!("one {:?}\ntwo {:?}", ratios(&one), ratios(&two));
    assert!(first(&two) < first(&one));
}

#[test]
fn velocity_cycles_stress_form() {
    let g = GridSpec::uniform(2, 128, 1.0, BoundaryCondition::NoSlip).unwrap();
    let c = unit_coeff(&g, ViscousForm::Stress);
    let h = MgHierarchy::build(&c).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let v: Vec<f64> = (0..g.num_velocity_unknowns()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = face_from_unknowns(&g, &v);
    let (_, hist) = mg_solve_face_history(&r, &h, &SmootherParams::default(), 10).unwrap();
    let rates = ratios(&hist);
    eprintln!("velocity {:?}", rates);
    assert!(rates.iter().all(|&q| q <= 0.2));
}
