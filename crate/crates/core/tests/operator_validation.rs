//! Independent validation of the Ulam assembly: matrix columns are checked
//! against brute-force Monte Carlo landing statistics and against a direct
//! Riemann integration of the noise-smeared image, neither of which shares
//! any code with the closed-form assembly.

use holelab_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Empirical landing distribution from a column: sample start points
/// uniformly in the source cell, step them with the noisy map, and bin.
fn empirical_column(
    model: &MapModel,
    grid: Grid,
    sigma: f64,
    j: usize,
    samples: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = grid.cell_bounds(j);
    let mut freq = vec![0.0; grid.len()];
    for _ in 0..samples {
        let x = rng.gen_range(lo..hi);
        let w = if sigma > 0.0 {
            rng.gen_range(-sigma..=sigma)
        } else {
            0.0
        };
        freq[grid.index_of(model.eval_noisy(x, w))] += 1.0;
    }
    for f in freq.iter_mut() {
        *f /= samples as f64;
    }
    freq
}

fn matrix_column(op: &TransferOperator, j: usize) -> Vec<f64> {
    let n = op.grid().len();
    let mut col = vec![0.0; n];
    let mut e = vec![0.0; n];
    e[j] = 1.0;
    op.apply_into(&e, &mut col);
    col
}

fn check_columns(model: &MapModel, sigma: f64, n: usize, columns: &[usize], tol: f64) {
    let noise = NoiseModel::new(sigma);
    let grid = Grid::new(n, model.phase());
    let op = assemble_transfer(model, grid, &noise).unwrap();
    for (t, &j) in columns.iter().enumerate() {
        let emp = empirical_column(model, grid, sigma, j, 1_000_000, 0xC01 + t as u64);
        let exact = matrix_column(&op, j);
        // Columns are landing probabilities (column sums are 1), so the two
        // distributions are directly comparable in total variation.
        let l1: f64 = emp
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
        assert!(
            l1 < tol,
            "column {j}: sampled landing distribution is {l1:.4} away in L1 (tolerance {tol})"
        );
    }
}

#[test]
fn tent_columns_match_sampled_landing_distributions() {
    let noise = NoiseModel::new(0.02);
    let model = build_map(&MapSpec::tent_flat(0.01), &noise).unwrap();
    let grid = Grid::new(1024, Phase::Circle);
    let cols = [
        grid.index_of(0.5),  // hole plateau
        grid.index_of(0.49), // hole boundary straddler
        grid.index_of(0.0),  // crease at the wrap point
        1023,                // last cell (wrapping landing window)
        300,                 // generic expanding cell
    ];
    check_columns(&model, 0.02, 1024, &cols, 0.03);
}

#[test]
fn power_sink_columns_match_sampled_landing_distributions() {
    let noise = NoiseModel::new(0.015);
    let model = build_map(&MapSpec::doubling_power_sink(0.0, 0.01, 2.0), &noise).unwrap();
    let grid = Grid::new(1024, Phase::Circle);
    let cols = [
        0,                    // right half of the sink, pivot cell
        grid.index_of(0.995), // left half of the sink
        grid.index_of(0.9999),
        512,
    ];
    check_columns(&model, 0.015, 1024, &cols, 0.03);
}

#[test]
fn flat_connector_columns_match_sampled_landing_distributions() {
    let noise = NoiseModel::new(0.01);
    let model = build_map(&MapSpec::doubling_flat(0.02), &noise).unwrap();
    let grid = Grid::new(1024, Phase::Circle);
    let cols = [
        grid.index_of(0.995), // inner plateau
        grid.index_of(0.985), // connector ramp
        grid.index_of(0.015), // right connector
        7,
    ];
    check_columns(&model, 0.01, 1024, &cols, 0.03);
}

#[test]
fn noiseless_columns_match_sampled_landing_distributions() {
    let noise = NoiseModel::new(0.0);
    let model = build_map(&MapSpec::tent_flat(0.05), &noise).unwrap();
    check_columns(&model, 0.0, 256, &[25, 127, 128, 200], 0.01);
}

/// A single-cell impulse smeared by noise must reproduce, cell by cell, the
/// directly integrated trapezoidal profile of "affine image convolved with a
/// uniform kernel".
#[test]
fn impulse_response_matches_direct_integration() {
    let noise = NoiseModel::new(0.05);
    let model = build_map(
        &MapSpec {
            name: "doubling".into(),
            base: BaseMap::Doubling,
            phase: Phase::Circle,
            hole: None,
        },
        &noise,
    )
    .unwrap();
    let n = 500;
    let grid = Grid::new(n, Phase::Circle);
    let op = assemble_transfer(&model, grid, &noise).unwrap();
    let j0 = 100; // cell [0.2, 0.202): image [0.4, 0.404)
    let col = matrix_column(&op, j0);

    let (img_lo, img_hi): (f64, f64) = (0.4, 0.404);
    let sigma = 0.05;
    let h = grid.h();
    // Output density of a unit-value input on the source cell: the image
    // carries density 1/2, smeared by the uniform kernel.
    let density_at = |y: f64| {
        let over = (img_hi.min(y + sigma) - img_lo.max(y - sigma)).max(0.0);
        0.5 * over / (2.0 * sigma)
    };
    for i in 0..n {
        let (clo, _) = grid.cell_bounds(i);
        let m = 20_000;
        let riemann: f64 = (0..m)
            .map(|k| density_at(clo + (k as f64 + 0.5) * h / m as f64))
            .sum::<f64>()
            / m as f64; // average value over the cell = matrix entry
        assert!(
            (riemann - col[i]).abs() < 1e-7,
            "cell {i}: direct integration {riemann} vs matrix {}",
            col[i]
        );
    }
}

/// On an interval phase whose noisy image is a strict subset, the stationary
/// density must vanish on the unreachable margin.
#[test]
fn interval_map_leaves_unreachable_margin_empty() {
    let teeth: Vec<AffineBranch> = (0..5)
        .map(|i| {
            let lo = i as f64 * 0.2;
            let (intercept, slope) = if i % 2 == 0 {
                (0.3 - 2.0 * lo, 2.0)
            } else {
                (0.7 + 2.0 * lo, -2.0)
            };
            AffineBranch {
                lo,
                hi: lo + 0.2,
                intercept,
                slope,
            }
        })
        .collect();
    let spec = MapSpec {
        name: "sawtooth".into(),
        base: BaseMap::PiecewiseAffine(teeth),
        phase: Phase::Interval { lo: 0.0, hi: 1.0 },
        hole: None,
    };
    let noise = NoiseModel::new(0.05);
    let model = build_map(&spec, &noise).unwrap();
    let grid = Grid::new(128, Phase::Interval { lo: 0.0, hi: 1.0 });
    let op = assemble_transfer(&model, grid, &noise).unwrap();
    // Mass stays inside the interval even with noise at the image edges.
    for (j, s) in op.column_sums().iter().enumerate() {
        assert!((s - 1.0).abs() < 1e-10, "column {j} sums to {s}");
    }
    let res = stationary_density(&op, &SolverOptions::default()).unwrap();
    for (i, v) in res.density.values().iter().enumerate() {
        let c = grid.cell_center(i);
        if c < 0.24 || c > 0.76 {
            assert!(
                v.abs() < 1e-13,
                "unreachable cell {i} at {c} carries density {v}"
            );
        }
    }
    assert!((res.density.mass() - 1.0).abs() < 1e-12);
}
