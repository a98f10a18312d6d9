use std::sync::Arc;

use gslab::mesh::{Grid, ScalarField};
use gslab::oracle::{self, EvenInstance1d};
use gslab::problem::{self, ProblemInstance};
use gslab::solver::{self, SolverConfig};
use gslab::spectral::{self, SpectralOptions};
use gslab::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Shooting value of the reference instance, frozen from a 2e-5 step run.
const S_STAR: f64 = 4.043570738576;

fn reference() -> EvenInstance1d {
    EvenInstance1d::ball(1.0, 4.0, 0.25, 1.0, -1.0, 0.0).unwrap()
}

fn reference_instance(n: usize) -> Arc<ProblemInstance> {
    let g = Grid::new(1, &[-1.0], &[1.0], &[n]).unwrap();
    Arc::new(problem::kerr_shrinking_ball(&g, &[0.25], &[0.0], 1).unwrap().remove(0))
}

#[test]
fn reference_profile_is_positive_and_even() {
    let inst = reference();
    let bracket = inst.find_bracket(20.0, 400, 1e-3).unwrap();
    let r = oracle::shoot_1d(&inst, bracket, 5e-5).unwrap();
    assert!(r.match_norm < 1e-10);
    assert!(r.min_value() > -1e-9);
    assert!(r.profile.iter().all(|s| s.u >= -1e-9));
    assert_eq!(r.eval(0.3), r.eval(-0.3));
    assert!((r.s_value - S_STAR).abs() / S_STAR < 1e-10);
}

#[test]
fn integrator_converges_under_step_halving() {
    let inst = reference();
    let bracket = inst.find_bracket(20.0, 400, 1e-3).unwrap();
    let a = oracle::shoot_1d(&inst, bracket, 1e-4).unwrap();
    let b = oracle::shoot_1d(&inst, bracket, 5e-5).unwrap();
    assert!((a.u0 - b.u0).abs() < 1e-8);
    assert!((a.s_value - b.s_value).abs() < 1e-10);
}

#[test]
fn nonpositive_q_gives_no_bracket() {
    let inst = EvenInstance1d::ball(1.0, 4.0, 0.25, -1.0, -1.0, 0.0).unwrap();
    assert!(inst.find_bracket(30.0, 300, 1e-3).is_none());
    assert!(matches!(oracle::shoot_1d(&inst, (0.5, 30.0), 1e-3), Err(Error::NoBracket { .. })));
}

#[test]
fn solver_approaches_oracle_under_refinement() {
    let errs: Vec<f64> = [500usize, 1000, 2000]
        .iter()
        .map(|n| {
            let gs = solver::solve_ground_state(reference_instance(*n), &SolverConfig::default()).unwrap();
            (gs.s - S_STAR).abs() / S_STAR
        })
        .collect();
    assert!(errs[2] < 1e-3, "{errs:?}");
    // the solver never undercuts the continuum value by more than discretization
    assert!(errs.iter().all(|e| *e < 5e-3), "{errs:?}");
}

#[test]
fn solver_started_at_oracle_stays_put() {
    let inst = reference();
    let shot = oracle::shoot_1d(&inst, inst.find_bracket(20.0, 400, 1e-3).unwrap(), 5e-5).unwrap();
    let pi = reference_instance(2000);
    let u = shot.to_field(&pi.grid).unwrap();
    let s0 = solver::rayleigh(&pi, &u).unwrap();
    let m = solver::minimize_rayleigh(&pi, &SolverConfig::default(), &u).unwrap();
    assert!(m.converged);
    assert!(m.iterations <= 15, "{} iterations", m.iterations);
    assert!(m.s <= s0 * (1.0 + solver::ROUNDING_WINDOW));
    assert!((s0 - m.s) / m.s < 1e-5, "{s0} vs {}", m.s);
}

#[test]
fn dense_and_iterative_eigenvalues_agree() {
    let opts = SpectralOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let grids = [
        Grid::new(1, &[0.0], &[1.0], &[200]).unwrap(),
        Grid::new(1, &[-2.0], &[3.0], &[37]).unwrap(),
        Grid::new(2, &[0.0, 0.0], &[1.0, 1.0], &[14, 14]).unwrap(),
        Grid::new(2, &[-1.0, -1.0], &[1.0, 2.0], &[9, 20]).unwrap(),
    ];
    for g in &grids {
        let v = ScalarField::new(g.clone(), (0..g.len()).map(|_| rng.gen_range(0.0..10.0)).collect()).unwrap();
        let it = spectral::smallest_eigenvalue(&v, &opts).unwrap();
        let dense = oracle::dense_min_eig(&v).unwrap();
        assert!((it.min_eig - dense).abs() / dense < 1e-8, "{} vs {dense}", it.min_eig);
    }
}

#[test]
fn minimizer_passes_the_probe() {
    let config = SolverConfig::default();
    let gs = solver::solve_ground_state(reference_instance(400), &config).unwrap();
    let t = 1e-3;
    let worst = oracle::minimality_probe(&gs.instance, &gs.v, 100, t, 23).unwrap();
    assert!(worst <= config.grad_tol * t, "violation {worst:e}");
    assert_eq!(oracle::minimality_probe(&gs.instance, &gs.v, 10, 0.0, 1).unwrap(), 0.0);
}
