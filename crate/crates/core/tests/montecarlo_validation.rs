//! Cross-validation between the two halves of the library: direct particle
//! simulation must reproduce the densities, survival rates, and exponents
//! computed from the discretized operators.

use holelab_core::*;

fn tent_setup(
    delta: f64,
    sigma: f64,
    n: usize,
) -> (MapModel, NoiseModel, Grid, TransferOperator) {
    let noise = NoiseModel::new(sigma);
    let model = build_map(&MapSpec::tent_flat(delta), &noise).unwrap();
    let grid = Grid::new(n, model.phase());
    let op = assemble_transfer(&model, grid, &noise).unwrap();
    (model, noise, grid, op)
}

/// A long free-running ensemble occupies the cells in the proportions the
/// stationary density predicts.
#[test]
fn histogram_reproduces_stationary_density() {
    let (model, noise, grid, op) = tent_setup(0.01, 0.02, 1024);
    let stat = stationary_density(&op, &SolverOptions::default()).unwrap();
    let cfg = SimConfig {
        seed: 7,
        steps: 100_000,
        burn_in: 1_000,
        ensemble_size: 128,
    };
    let run = simulate_histogram(&model, &noise, grid, &cfg).unwrap();
    assert!(run.coverage > 0.99, "coverage only {}", run.coverage);
    assert!(!run.non_ergodic_suspect);
    let (l1d, _, _) = distance_norms(&grid, run.density.values(), stat.density.values());
    assert!(
        l1d < 0.05,
        "simulated occupation is {l1d:.4} from the stationary density in L1"
    );

    // Time averages of a smooth observable agree with the space average
    // against the stationary density (ergodic consistency).
    let g: Vec<f64> = (0..grid.len())
        .map(|i| (2.0 * std::f64::consts::PI * grid.cell_center(i)).cos())
        .collect();
    let time_avg: f64 = run
        .density
        .values()
        .iter()
        .zip(&g)
        .map(|(d, gi)| d * gi)
        .sum::<f64>()
        * grid.h();
    let space_avg: f64 = stat
        .density
        .values()
        .iter()
        .zip(&g)
        .map(|(d, gi)| d * gi)
        .sum::<f64>()
        * grid.h();
    assert!(
        (time_avg - space_avg).abs() < 0.02,
        "Birkhoff average {time_avg:.5} vs ensemble average {space_avg:.5}"
    );
}

/// Killing particles in the hole reproduces both the survival eigenvalue and
/// the quasi-stationary profile of the conditioned operator.
#[test]
fn killed_ensemble_reproduces_conditioned_spectrum() {
    let (model, noise, grid, op) = tent_setup(0.01, 0.02, 1024);
    let hole = model.hole().unwrap();
    let keep: Vec<f64> = grid
        .hole_overlap_fractions(&hole)
        .iter()
        .map(|f| 1.0 - f)
        .collect();
    let cond = op.mask_columns(&keep);
    let qsd = qsd_eigenpair(&cond, &SolverOptions::default()).unwrap();

    let cfg = SimConfig {
        seed: 11,
        steps: 2_000,
        burn_in: 200,
        ensemble_size: 4_000,
    };
    let run = killed_ensemble(&model, &noise, grid, &cfg).unwrap();
    let survival = (-run.escape_rate).exp();
    assert!(
        (survival - qsd.eigenvalue).abs() < 3e-3,
        "simulated survival {survival:.5} vs eigenvalue {:.5}",
        qsd.eigenvalue
    );
    let (l1d, _, _) = distance_norms(&grid, run.density.values(), qsd.density.values());
    assert!(
        l1d < 0.05,
        "killed occupation is {l1d:.4} from the quasi-stationary density in L1"
    );
    assert!(run.kills > 0);
}

/// Two independent seeds agree with each other to within sampling error;
/// catching any seed-dependent bias in the parallel reduction.
#[test]
fn independent_seeds_agree() {
    let (model, noise, grid, _) = tent_setup(0.01, 0.02, 512);
    let mk = |seed| SimConfig {
        seed,
        steps: 20_000,
        burn_in: 500,
        ensemble_size: 64,
    };
    let a = simulate_histogram(&model, &noise, grid, &mk(1)).unwrap();
    let b = simulate_histogram(&model, &noise, grid, &mk(2)).unwrap();
    let (l1d, _, _) = distance_norms(&grid, a.density.values(), b.density.values());
    assert!(l1d < 0.05, "two seeds differ by {l1d:.4} in L1");
    assert!(l1d > 0.0, "distinct seeds should not coincide exactly");
}

/// Sampled finite-time Lyapunov exponents match the density-weighted
/// integral of the log-derivative.
#[test]
fn sampled_lyapunov_matches_integral() {
    let spec = MapSpec::doubling_power_sink(0.0, 0.01, 2.0);
    let sigma = 0.05;
    let noise = NoiseModel::new(sigma);
    let model = build_map(&spec, &noise).unwrap();
    let grid = Grid::new(Grid::auto_size(sigma, 0.01, model.phase()), model.phase());
    let op = assemble_transfer(&model, grid, &noise).unwrap();
    let stat = stationary_density(&op, &SolverOptions::default()).unwrap();
    let exact = lyapunov_exponent(&model, &stat.density);
    assert!(!exact.diverged);

    let cfg = SimConfig {
        seed: 3,
        steps: 50_000,
        burn_in: 1_000,
        ensemble_size: 64,
    };
    let sample = simulate_lyapunov(&model, &noise, &cfg).unwrap();
    assert_eq!(sample.flat_fraction, 0.0);
    assert!(
        (sample.mean_log_slope - exact.value()).abs() < 0.01,
        "sampled exponent {:.5} vs integral {:.5}",
        sample.mean_log_slope,
        exact.value()
    );
}
