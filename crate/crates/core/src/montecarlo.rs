//! Monte Carlo cross-validation of the operator computations: long-run
//! histograms for stationary densities, and a kill-and-resample ensemble for
//! quasi-stationary densities and escape rates.
//!
//! Reproducibility contract: runs are bitwise deterministic for a fixed
//! (seed, configuration) pair regardless of thread count. Each particle owns
//! a counter-mode RNG stream derived from the seed, per-particle histograms
//! are integer counts merged by commutative addition, and resampling draws
//! from a dedicated master stream in a sequential pass.

use crate::grid::{Density, Grid};
use crate::maps::{MapModel, NoiseModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    /// Recorded steps per particle.
    pub steps: u64,
    /// Unrecorded steps per particle before sampling starts.
    pub burn_in: u64,
    /// Number of particles.
    pub ensemble_size: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            steps: 100_000,
            burn_in: 1_000,
            ensemble_size: 64,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("ensemble went extinct at step {step}: every particle was inside the hole")]
    Extinction { step: u64 },
    #[error("simulation needs at least one particle and one step")]
    EmptyRun,
}

/// Ergodic histogram of the noisy map: every particle's post-move positions
/// are binned after burn-in.
#[derive(Debug, Clone)]
pub struct HistogramRun {
    /// Normalized occupation density.
    pub density: Density,
    /// Fraction of grid cells ever visited (after burn-in).
    pub coverage: f64,
    /// Set when coverage is below 10%: time averages are then suspect of
    /// being trapped in a small invariant region.
    pub non_ergodic_suspect: bool,
    pub total_samples: u64,
}

fn particle_rng(seed: u64, particle: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Stream 0 is reserved for ensemble-level decisions (resampling).
    rng.set_stream(particle + 1);
    rng
}

fn stratified_start(grid: Grid, particle: usize, total: usize) -> f64 {
    let phase = grid.phase();
    phase.lo() + phase.len() * (particle as f64 + 0.5) / total as f64
}

fn draw_noise(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        rng.gen_range(-sigma..=sigma)
    } else {
        0.0
    }
}

pub fn simulate_histogram(
    model: &MapModel,
    noise: &NoiseModel,
    grid: Grid,
    cfg: &SimConfig,
) -> Result<HistogramRun, SimError> {
    if cfg.ensemble_size == 0 || cfg.steps == 0 {
        return Err(SimError::EmptyRun);
    }
    assert_eq!(grid.phase(), model.phase());
    let sigma = noise.half_width;
    let n = grid.len();
    let counts: Vec<u64> = (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|p| {
            let mut rng = particle_rng(cfg.seed, p as u64);
            let mut x = stratified_start(grid, p, cfg.ensemble_size);
            let mut local = vec![0u64; n];
            for _ in 0..cfg.burn_in {
                x = model.eval_noisy(x, draw_noise(&mut rng, sigma));
            }
            for _ in 0..cfg.steps {
                x = model.eval_noisy(x, draw_noise(&mut rng, sigma));
                local[grid.index_of(x)] += 1;
            }
            local
        })
        .reduce(
            || vec![0u64; n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                a
            },
        );
    let total: u64 = cfg.steps * cfg.ensemble_size as u64;
    let visited = counts.iter().filter(|&&c| c > 0).count();
    let coverage = visited as f64 / n as f64;
    let values: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / (total as f64 * grid.h()))
        .collect();
    Ok(HistogramRun {
        density: Density::new(grid, values),
        coverage,
        non_ergodic_suspect: coverage < 0.10,
        total_samples: total,
    })
}

/// Kill-and-resample ensemble for the conditioned dynamics: each step kills
/// the particles currently inside the hole (replacing them with copies of
/// random survivors), then moves everyone one noisy step. The occupation
/// histogram of post-move positions estimates the quasi-stationary density,
/// and the per-step survival fractions estimate the escape rate.
#[derive(Debug, Clone)]
pub struct KilledRun {
    /// Normalized occupation density of surviving ensembles.
    pub density: Density,
    /// -(1/T) sum of ln(survival fraction per step), after burn-in.
    pub escape_rate: f64,
    pub kills: u64,
    pub total_samples: u64,
}

pub fn killed_ensemble(
    model: &MapModel,
    noise: &NoiseModel,
    grid: Grid,
    cfg: &SimConfig,
) -> Result<KilledRun, SimError> {
    if cfg.ensemble_size == 0 || cfg.steps == 0 {
        return Err(SimError::EmptyRun);
    }
    assert_eq!(grid.phase(), model.phase());
    let hole = model
        .hole()
        .expect("killed ensemble needs a map with a hole");
    let phase = model.phase();
    let sigma = noise.half_width;
    let n = grid.len();
    let total_particles = cfg.ensemble_size;

    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed); // stream 0
    let mut rngs: Vec<ChaCha8Rng> = (0..total_particles)
        .map(|p| particle_rng(cfg.seed, p as u64))
        .collect();
    let mut xs: Vec<f64> = (0..total_particles)
        .map(|p| stratified_start(grid, p, total_particles))
        .collect();

    let mut counts = vec![0u64; n];
    let mut kills = 0u64;
    let mut log_survival_sum = 0.0f64;
    let mut recorded_steps = 0u64;

    for step in 0..cfg.burn_in + cfg.steps {
        // Kill pass: survivors keep their state; the dead copy a survivor
        // chosen from the master stream (sequential, hence deterministic).
        let dead: Vec<usize> = (0..total_particles)
            .filter(|&i| hole.contains(&phase, xs[i]))
            .collect();
        let survivors = total_particles - dead.len();
        if survivors == 0 {
            return Err(SimError::Extinction { step });
        }
        if !dead.is_empty() {
            let alive: Vec<f64> = (0..total_particles)
                .filter(|i| !hole.contains(&phase, xs[*i]))
                .map(|i| xs[i])
                .collect();
            for &i in &dead {
                xs[i] = alive[master.gen_range(0..alive.len())];
            }
        }
        let recording = step >= cfg.burn_in;
        if recording {
            kills += dead.len() as u64;
            log_survival_sum += (survivors as f64 / total_particles as f64).ln();
            recorded_steps += 1;
        }

        // Move pass: independent per-particle streams, safe to parallelize.
        xs.par_iter_mut().zip(rngs.par_iter_mut()).for_each(|(x, rng)| {
            *x = model.eval_noisy(*x, draw_noise(rng, sigma));
        });

        if recording {
            for &x in &xs {
                counts[grid.index_of(x)] += 1;
            }
        }
    }

    let total: u64 = recorded_steps * total_particles as u64;
    let values: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / (total as f64 * grid.h()))
        .collect();
    Ok(KilledRun {
        density: Density::new(grid, values),
        escape_rate: -log_survival_sum / recorded_steps as f64,
        kills,
        total_samples: total,
    })
}

/// Ensemble Birkhoff average of ln |f'| along noisy orbits; the flat fraction
/// counts samples landing where f' = 0 (each of which makes the true average
/// diverge to -infinity).
#[derive(Debug, Clone, Copy)]
pub struct LyapunovSample {
    pub mean_log_slope: f64,
    pub flat_fraction: f64,
}

pub fn simulate_lyapunov(
    model: &MapModel,
    noise: &NoiseModel,
    cfg: &SimConfig,
) -> Result<LyapunovSample, SimError> {
    if cfg.ensemble_size == 0 || cfg.steps == 0 {
        return Err(SimError::EmptyRun);
    }
    let sigma = noise.half_width;
    let phase = model.phase();
    let accum: (f64, u64) = (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|p| {
            let mut rng = particle_rng(cfg.seed, p as u64);
            let mut x = phase.lo() + phase.len() * (p as f64 + 0.5) / cfg.ensemble_size as f64;
            for _ in 0..cfg.burn_in {
                x = model.eval_noisy(x, draw_noise(&mut rng, sigma));
            }
            let mut sum = 0.0f64;
            let mut flat = 0u64;
            for _ in 0..cfg.steps {
                let d = model.derivative(x).abs();
                if d == 0.0 {
                    flat += 1;
                } else {
                    sum += d.ln();
                }
                x = model.eval_noisy(x, draw_noise(&mut rng, sigma));
            }
            (sum, flat)
        })
        .reduce(|| (0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let total = cfg.steps * cfg.ensemble_size as u64;
    Ok(LyapunovSample {
        mean_log_slope: accum.0 / total as f64,
        flat_fraction: accum.1 as f64 / total as f64,
    })
}
