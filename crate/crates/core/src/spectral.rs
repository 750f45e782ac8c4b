//! Fixed densities, quasi-stationary densities, and operator-norm
//! diagnostics, all computed by plain power iteration in the L1 geometry.
//!
//! Power iteration is the right tool here: the operators are Markov (or
//! sub-Markov) matrices with a dominant simple eigenvalue, every iterate is a
//! genuine density, and the L1 residual is monotone for mass-conserving
//! operators, which gives a clean stopping rule.

use crate::grid::{bv, l1, variation, Density};
use crate::operators::{Operator, TransferOperator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Stop when the L1 residual drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-12,
            max_iterations: 1_000_000,
        }
    }
}

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error(
        "power iteration did not converge: residual {residual:.3e} after {iterations} iterations (tolerance {tolerance:.1e})"
    )]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },
    #[error("operator annihilates every density: survival mass underflowed")]
    ZeroOperator,
    #[error("resolvent series did not converge within {budget} terms (spectral gap too small)")]
    SingularResolvent { budget: usize },
}

#[derive(Debug, Clone)]
pub struct SpectralResult {
    /// Dominant eigenvalue: 1 for mass-conserving operators, the survival
    /// rate for conditioned ones.
    pub eigenvalue: f64,
    /// Eigendensity, normalized to total mass 1.
    pub density: Density,
    /// Final L1 residual ||T d - lambda d||_1.
    pub residual: f64,
    pub iterations: usize,
    /// Residual after each iteration.
    pub residual_history: Vec<f64>,
}

/// Fixed density of a mass-conserving operator by power iteration from the
/// uniform density.
pub fn stationary_density(
    op: &impl Operator,
    opts: &SolverOptions,
) -> Result<SpectralResult, SpectralError> {
    let grid = op.grid();
    let mut d = Density::uniform(grid).into_values();
    let mut y = vec![0.0; d.len()];
    let mut history = Vec::new();
    for it in 1..=opts.max_iterations {
        op.apply_into(&d, &mut y);
        let mass_in: f64 = d.iter().sum::<f64>() * grid.h();
        let mass_out: f64 = y.iter().sum::<f64>() * grid.h();
        if mass_out.abs() < 1e-200 {
            return Err(SpectralError::ZeroOperator);
        }
        let eigenvalue = mass_out / mass_in;
        // Renormalize so rounding drift cannot accumulate over many steps.
        let scale = 1.0 / mass_out;
        let mut residual = 0.0;
        for (yi, di) in y.iter_mut().zip(d.iter()) {
            *yi *= scale;
            residual += (*yi - di / mass_in).abs();
        }
        let residual = residual * grid.h();
        history.push(residual);
        std::mem::swap(&mut d, &mut y);
        if residual <= opts.tolerance {
            return Ok(SpectralResult {
                eigenvalue,
                density: Density::new(grid, d),
                residual,
                iterations: it,
                residual_history: history,
            });
        }
    }
    Err(SpectralError::NoConvergence {
        iterations: opts.max_iterations,
        residual: *history.last().unwrap_or(&f64::INFINITY),
        tolerance: opts.tolerance,
    })
}

/// Dominant eigenpair of a sub-Markov (conditioned) operator: the
/// quasi-stationary density and the survival rate.
pub fn qsd_eigenpair(
    op: &impl Operator,
    opts: &SolverOptions,
) -> Result<SpectralResult, SpectralError> {
    let grid = op.grid();
    let mut d = Density::uniform(grid).into_values();
    let mut y = vec![0.0; d.len()];
    let mut history = Vec::new();
    for it in 1..=opts.max_iterations {
        op.apply_into(&d, &mut y);
        let lambda: f64 = y.iter().sum::<f64>() * grid.h();
        if lambda < 1e-100 {
            return Err(SpectralError::ZeroOperator);
        }
        // Residual of the eigenproblem at the current normalized iterate.
        let mut residual = 0.0;
        for (yi, di) in y.iter().zip(d.iter()) {
            residual += (yi - lambda * di).abs();
        }
        let residual = residual * grid.h();
        history.push(residual);
        for yi in y.iter_mut() {
            *yi /= lambda;
        }
        std::mem::swap(&mut d, &mut y);
        if residual <= opts.tolerance {
            return Ok(SpectralResult {
                eigenvalue: lambda,
                density: Density::new(grid, d),
                residual,
                iterations: it,
                residual_history: history,
            });
        }
    }
    Err(SpectralError::NoConvergence {
        iterations: opts.max_iterations,
        residual: *history.last().unwrap_or(&f64::INFINITY),
        tolerance: opts.tolerance,
    })
}

/// Stationary density of the one-step operator rebuilt from a fixed density
/// of the two-regime composite: the hole mass is still "in flight" for
/// gap_steps - 1 intermediate steps, and adding those snapshots back yields
/// an exact fixed density of the one-step operator.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Normalized reconstructed stationary density.
    pub density: Density,
    /// Normalized in-flight remainder (the reconstruction minus the
    /// composite fixed density).
    pub tail: Density,
    pub defect_l1: f64,
    pub tail_l1: f64,
    pub tail_bv: f64,
}

pub fn reconstruct_stationary(
    full: &TransferOperator,
    hole_fraction: &[f64],
    composite_fixed: &Density,
    gap_steps: u32,
) -> Reconstruction {
    assert!(gap_steps >= 1);
    let grid = full.grid();
    let u = composite_fixed.values();
    assert_eq!(u.len(), grid.len());
    assert_eq!(hole_fraction.len(), grid.len());

    let mut term: Vec<f64> = u.iter().zip(hole_fraction).map(|(v, f)| v * f).collect();
    let mut tail = vec![0.0; u.len()];
    let mut buf = vec![0.0; u.len()];
    for _ in 1..gap_steps {
        full.apply_into(&term, &mut buf);
        std::mem::swap(&mut term, &mut buf);
        for (t, v) in tail.iter_mut().zip(&term) {
            *t += v;
        }
    }
    let mut dens: Vec<f64> = u.iter().zip(&tail).map(|(a, b)| a + b).collect();
    let mass: f64 = dens.iter().sum::<f64>() * grid.h();
    let scale = 1.0 / mass;
    for v in dens.iter_mut() {
        *v *= scale;
    }
    for v in tail.iter_mut() {
        *v *= scale;
    }

    let stepped = full.apply(&dens);
    let defect_l1 = stepped
        .iter()
        .zip(&dens)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        * grid.h();
    let tail_l1 = l1(&grid, &tail);
    let tail_bv = bv(&grid, &tail);
    Reconstruction {
        density: Density::new(grid, dens),
        tail: Density::new(grid, tail),
        defect_l1,
        tail_l1,
        tail_bv,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeOptions {
    /// Random mean-zero probes for the resolvent norm.
    pub resolvent_probes: usize,
    /// Haar levels for the operator-difference probes (2^levels - 1 probes).
    pub haar_levels: u32,
    /// Maximum Neumann-series terms before giving up.
    pub neumann_budget: usize,
    /// Series truncation: stop once the term's L1 norm falls below this
    /// fraction of the probe's.
    pub series_tolerance: f64,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            resolvent_probes: 50,
            haar_levels: 7,
            neumann_budget: 100_000,
            series_tolerance: 1e-10,
            seed: 0x5eed_d1a6,
        }
    }
}

/// Probe estimate (from below) of the operator norm of (I - T)^{-1} on the
/// mean-zero subspace, in the bounded-variation norm. T must conserve mass.
pub fn resolvent_norm_estimate(
    op: &impl Operator,
    opts: &ProbeOptions,
) -> Result<f64, SpectralError> {
    let grid = op.grid();
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best = 0.0f64;
    for _ in 0..opts.resolvent_probes {
        let mut b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mean = b.iter().sum::<f64>() / n as f64;
        for v in b.iter_mut() {
            *v -= mean;
        }
        let b_bv = bv(&grid, &b);
        if b_bv == 0.0 {
            continue;
        }
        let x = neumann_sum(op, &b, opts)?;
        best = best.max(bv(&grid, &x) / b_bv);
    }
    Ok(best)
}

/// x = (I - T)^{-1} b = sum of T^m b, truncated once terms are negligible.
fn neumann_sum(
    op: &impl Operator,
    b: &[f64],
    opts: &ProbeOptions,
) -> Result<Vec<f64>, SpectralError> {
    let grid = op.grid();
    let stop = l1(&grid, b) * opts.series_tolerance;
    let mut x = b.to_vec();
    let mut term = b.to_vec();
    let mut buf = vec![0.0; b.len()];
    for _ in 0..opts.neumann_budget {
        op.apply_into(&term, &mut buf);
        std::mem::swap(&mut term, &mut buf);
        for (xi, t) in x.iter_mut().zip(&term) {
            *xi += t;
        }
        if l1(&grid, &term) <= stop {
            return Ok(x);
        }
    }
    Err(SpectralError::SingularResolvent {
        budget: opts.neumann_budget,
    })
}

/// Probe estimate (from below) of ||T - R/lambda|| in the bounded-variation
/// norm, over Haar step functions and the constant.
pub fn difference_norm_estimate(
    t: &impl Operator,
    conditioned: &TransferOperator,
    lambda: f64,
    opts: &ProbeOptions,
) -> f64 {
    let grid = t.grid();
    let n = grid.len();
    assert!(lambda > 0.0);
    let mut best = 0.0f64;
    let mut probe = |phi: &[f64]| {
        let phi_bv = bv(&grid, phi);
        if phi_bv == 0.0 {
            return;
        }
        let a = t.apply(phi);
        let b = conditioned.apply(phi);
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y / lambda).collect();
        best = best.max(bv(&grid, &diff) / phi_bv);
    };
    probe(&vec![1.0; n]);
    for level in 1..=opts.haar_levels {
        let blocks = 1usize << (level - 1);
        for k in 0..blocks {
            let lo = grid.phase().lo() + grid.phase().len() * k as f64 / blocks as f64;
            let mid = lo + grid.phase().len() / (2 * blocks) as f64;
            let hi = lo + grid.phase().len() / blocks as f64;
            let phi: Vec<f64> = (0..n)
                .map(|i| {
                    let c = grid.cell_center(i);
                    if c >= lo && c < mid {
                        1.0
                    } else if c >= mid && c < hi {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            probe(&phi);
        }
    }
    best
}

/// Analytic upper bound for ||T - R/lambda|| in the bounded-variation norm,
/// from the noise-smoothing inequality: one noisy step has variation at most
/// (1/sigma) of the input mass, the difference acts only on the hole mass
/// (at most 2 delta per unit sup), and conditioning rescales by 1/lambda.
pub fn difference_norm_bound(delta: f64, sigma: f64, lambda: f64) -> f64 {
    assert!(sigma > 0.0 && lambda > 0.0);
    let smooth = 1.0 + 2.0 / sigma;
    2.0 * delta * smooth + (1.0 / lambda - 1.0) * smooth
}

/// Empirical one-step variation-contraction coefficient: the smallest alpha
/// such that Var(T phi) <= alpha Var(phi) + (2/sigma) |phi|_1 over the probe
/// family. Strictly below 1 for noisy expanding systems.
pub fn variation_contraction_estimate(
    op: &impl Operator,
    sigma: f64,
    opts: &ProbeOptions,
) -> f64 {
    let grid = op.grid();
    let n = grid.len();
    let beta = 2.0 / sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xa5a5_a5a5);
    let mut alpha = 0.0f64;
    for p in 0..opts.resolvent_probes {
        let phi: Vec<f64> = if p % 2 == 0 {
            (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
        } else {
            // Blocky probes with large variation relative to mass.
            let blocks = 4 << (p % 6);
            (0..n)
                .map(|i| if (i * blocks / n) % 2 == 0 { 1.0 } else { 0.0 })
                .collect()
        };
        let var_in = variation(&grid, &phi);
        if var_in == 0.0 {
            continue;
        }
        let out = op.apply(&phi);
        let var_out = variation(&grid, &out);
        let needed = (var_out - beta * l1(&grid, &phi)) / var_in;
        alpha = alpha.max(needed);
    }
    alpha.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{distance_norms, Grid};
    use crate::maps::{build_map, BaseMap, MapSpec, NoiseModel};
    use crate::operators::{assemble_transfer, CompositeOperator};
    use crate::phase::Phase;

    fn doubling_bare() -> crate::maps::MapModel {
        build_map(
            &MapSpec {
                name: "doubling".into(),
                base: BaseMap::Doubling,
                phase: Phase::Circle,
                hole: None,
            },
            &NoiseModel::new(0.0),
        )
        .unwrap()
    }

    #[test]
    fn stationary_density_of_doubling_is_uniform() {
        let noise = NoiseModel::new(0.05);
        let op = assemble_transfer(&doubling_bare(), Grid::new(512, Phase::Circle), &noise)
            .unwrap();
        let res = stationary_density(&op, &SolverOptions::default()).unwrap();
        assert!(res.residual <= 1e-12);
        assert!((res.eigenvalue - 1.0).abs() < 1e-12);
        for v in res.density.values() {
            assert!((v - 1.0).abs() < 1e-10);
        }
        // The L1 residual of a mass-conserving operator never increases.
        for w in res.residual_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn qsd_survival_rate_reflects_small_hole() {
        let noise = NoiseModel::new(0.005);
        let model = build_map(&MapSpec::doubling_flat(0.01), &noise).unwrap();
        let grid = Grid::new(1024, Phase::Circle);
        let op = assemble_transfer(&model, grid, &noise).unwrap();
        let frac = grid.hole_overlap_fractions(&model.hole().unwrap());
        let keep: Vec<f64> = frac.iter().map(|f| 1.0 - f).collect();
        let cond = op.mask_columns(&keep);
        let res = qsd_eigenpair(&cond, &SolverOptions::default()).unwrap();
        assert!(res.eigenvalue > 0.9 && res.eigenvalue < 1.0);
        assert!((res.density.mass() - 1.0).abs() < 1e-10);
        assert!(res.residual <= 1e-12);
        // Escaping mass per step equals the qsd mass inside the hole.
        let hole_mass: f64 = res
            .density
            .values()
            .iter()
            .zip(&frac)
            .map(|(v, f)| v * f)
            .sum::<f64>()
            * grid.h();
        assert!((1.0 - res.eigenvalue - hole_mass).abs() < 1e-9);
    }

    #[test]
    fn reconstruction_is_a_fixed_density_of_the_one_step_operator() {
        let noise = NoiseModel::new(0.02);
        let model = build_map(&MapSpec::tent_flat(0.01), &noise).unwrap();
        let grid = Grid::new(1024, Phase::Circle);
        let op = assemble_transfer(&model, grid, &noise).unwrap();
        let frac = grid.hole_overlap_fractions(&model.hole().unwrap());
        let keep: Vec<f64> = frac.iter().map(|f| 1.0 - f).collect();
        let cond = op.mask_columns(&keep);

        let direct = stationary_density(&op, &SolverOptions::default()).unwrap();
        for k in [1u32, 3] {
            let q = CompositeOperator::new(&op, &cond, &frac, k);
            let fixed = stationary_density(&q, &SolverOptions::default()).unwrap();
            let rec = reconstruct_stationary(&op, &frac, &fixed.density, k);
            assert!(
                rec.defect_l1 <= 1e-10,
                "k = {k}: reconstruction defect {}",
                rec.defect_l1
            );
            let (dl1, _, _) = distance_norms(
                &grid,
                rec.density.values(),
                direct.density.values(),
            );
            assert!(dl1 <= 1e-6, "k = {k}: reconstruction off by {dl1}");
            if k == 1 {
                assert!(rec.tail_l1 == 0.0 && rec.tail_bv == 0.0);
            } else {
                assert!(rec.tail_l1 > 0.0);
            }
        }
    }

    #[test]
    fn resolvent_estimate_is_finite_and_deterministic() {
        let noise = NoiseModel::new(0.05);
        let op = assemble_transfer(&doubling_bare(), Grid::new(256, Phase::Circle), &noise)
            .unwrap();
        let opts = ProbeOptions::default();
        let a = resolvent_norm_estimate(&op, &opts).unwrap();
        let b = resolvent_norm_estimate(&op, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a >= 1.0 && a < 100.0, "resolvent norm estimate {a}");
    }

    #[test]
    fn difference_probes_stay_below_analytic_bound() {
        let noise = NoiseModel::new(0.02);
        let model = build_map(&MapSpec::tent_flat(0.01), &noise).unwrap();
        let grid = Grid::new(2048, Phase::Circle);
        let op = assemble_transfer(&model, grid, &noise).unwrap();
        let frac = grid.hole_overlap_fractions(&model.hole().unwrap());
        let keep: Vec<f64> = frac.iter().map(|f| 1.0 - f).collect();
        let cond = op.mask_columns(&keep);
        let lam = qsd_eigenpair(&cond, &SolverOptions::default())
            .unwrap()
            .eigenvalue;
        let opts = ProbeOptions::default();
        let lower = difference_norm_estimate(&op, &cond, lam, &opts);
        let upper = difference_norm_bound(0.01, 0.02, lam);
        assert!(lower > 0.0);
        assert!(
            lower <= upper,
            "probe estimate {lower} exceeds analytic bound {upper}"
        );
    }

    #[test]
    fn variation_contraction_is_strictly_below_one() {
        let noise = NoiseModel::new(0.05);
        let op = assemble_transfer(&doubling_bare(), Grid::new(512, Phase::Circle), &noise)
            .unwrap();
        let alpha = variation_contraction_estimate(&op, 0.05, &ProbeOptions::default());
        assert!(alpha < 1.0, "contraction coefficient {alpha}");
    }

    #[test]
    fn exhausted_budget_reports_no_convergence() {
        let noise = NoiseModel::new(0.05);
        let op = assemble_transfer(&doubling_bare(), Grid::new(256, Phase::Circle), &noise)
            .unwrap();
        let err = stationary_density(
            &op,
            &SolverOptions {
                tolerance: 1e-300,
                max_iterations: 3,
            },
        )
        .unwrap_err();
        assert!(matches!(err, SpectralError::NoConvergence { .. }));
    }
}
