//! Orbit-level quantities: set-valued reachability out of the hole, the
//! derivative-chain obstruction check, Lyapunov exponents against a density,
//! closed-form gap predictions for periodic sinks, and power-law fitting.

use crate::grid::Density;
use crate::maps::{MapModel, NoiseModel, SinkOrder};
use crate::phase::Phase;
use thiserror::Error;

const MERGE_TOL: f64 = 1e-12;
const MAX_PARTS: usize = 10_000;

/// Finite union of intervals inside the fundamental domain, kept sorted and
/// disjoint. Used as the state of set-valued dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalUnion {
    phase: Phase,
    parts: Vec<(f64, f64)>,
}

impl IntervalUnion {
    pub fn from_lifted(phase: Phase, lo: f64, hi: f64) -> Self {
        let mut u = IntervalUnion {
            phase,
            parts: phase.normalize_interval(lo, hi),
        };
        u.canonicalize();
        u
    }

    pub fn parts(&self) -> &[(f64, f64)] {
        &self.parts
    }

    pub fn measure(&self) -> f64 {
        self.parts.iter().map(|(a, b)| b - a).sum()
    }

    pub fn contains_point(&self, x: f64) -> bool {
        let x = self.phase.reduce(x);
        self.parts
            .iter()
            .any(|&p| self.phase.interval_contains(p, x))
    }

    /// Overlap with a lifted interval.
    pub fn overlap_len(&self, iv: (f64, f64)) -> f64 {
        self.parts
            .iter()
            .map(|&p| self.phase.overlap_len(iv, p))
            .sum()
    }

    /// One step of the set dynamics: image under the map, then inflation by
    /// the noise half-width.
    pub fn step(&self, model: &MapModel, sigma: f64) -> IntervalUnion {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for &(plo, phi) in &self.parts {
            for (a, b, formula) in model.pieces_overlapping(plo, phi) {
                let (vlo, vhi) = formula.value_range(a, b);
                out.extend(self.phase.normalize_interval(vlo - sigma, vhi + sigma));
            }
        }
        let mut u = IntervalUnion {
            phase: self.phase,
            parts: out,
        };
        u.canonicalize();
        u
    }

    fn canonicalize(&mut self) {
        self.parts
            .sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for &(lo, hi) in &self.parts {
            if let Some(last) = merged.last_mut() {
                if lo <= last.1 + MERGE_TOL {
                    last.1 = last.1.max(hi);
                    continue;
                }
            }
            merged.push((lo, hi));
        }
        // Defensive cap: coalesce the narrowest gaps if the union fragments
        // beyond all reason (an over-approximation, safe for reachability).
        while merged.len() > MAX_PARTS {
            let mut gap_idx = 0;
            let mut gap = f64::INFINITY;
            for i in 0..merged.len() - 1 {
                let g = merged[i + 1].0 - merged[i].1;
                if g < gap {
                    gap = g;
                    gap_idx = i;
                }
            }
            merged[gap_idx].1 = merged[gap_idx + 1].1;
            merged.remove(gap_idx + 1);
        }
        self.parts = merged;
    }
}

/// Number of noisy steps for mass leaving the hole to reach the hole again,
/// computed by set-valued iteration and capped at max(1, floor(|ln delta|)).
#[derive(Debug, Clone, PartialEq)]
pub struct GapTime {
    pub steps: u32,
    /// True when the cap was reached without the set meeting the hole.
    pub cap_hit: bool,
    /// Per-step records of the reachable set.
    pub sweep: Vec<GapStep>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapStep {
    pub set_measure: f64,
    pub hole_overlap: f64,
}

/// None when the map has no hole.
pub fn gap_time(model: &MapModel, noise: &NoiseModel) -> Option<GapTime> {
    let hole = model.hole()?;
    let phase = model.phase();
    let cap = gap_cap(hole.radius);
    let (hlo, hhi) = hole.bounds();
    let mut set = IntervalUnion::from_lifted(phase, hlo, hhi);
    let mut sweep = Vec::new();
    for n in 1..=cap {
        set = set.step(model, noise.half_width);
        let overlap = set.overlap_len(hole.bounds());
        sweep.push(GapStep {
            set_measure: set.measure(),
            hole_overlap: overlap,
        });
        if overlap > 1e-12 {
            return Some(GapTime {
                steps: n,
                cap_hit: false,
                sweep,
            });
        }
    }
    Some(GapTime {
        steps: cap,
        cap_hit: true,
        sweep,
    })
}

pub fn gap_cap(radius: f64) -> u32 {
    debug_assert!(radius > 0.0);
    (radius.ln().abs().floor() as u32).max(1)
}

/// Checks that the first gap_steps - 1 noisy images of the hole stay clear of
/// every kink of the map, so derivative chains along escaping orbits see only
/// smooth branches until the mass returns to the hole.
#[derive(Debug, Clone, PartialEq)]
pub struct KinkAvoidance {
    pub satisfied: bool,
    /// (step, kink location) pairs where an inflated image covers a kink.
    pub violations: Vec<(u32, f64)>,
}

pub fn images_avoid_kinks(model: &MapModel, noise: &NoiseModel, gap_steps: u32) -> KinkAvoidance {
    let hole = match model.hole() {
        Some(h) => h,
        None => {
            return KinkAvoidance {
                satisfied: true,
                violations: Vec::new(),
            }
        }
    };
    let kinks = model.kink_points();
    let (hlo, hhi) = hole.bounds();
    let mut set = IntervalUnion::from_lifted(model.phase(), hlo, hhi);
    let mut violations = Vec::new();
    for j in 1..gap_steps {
        set = set.step(model, noise.half_width);
        for &c in &kinks {
            if set.contains_point(c) {
                violations.push((j, c));
            }
        }
    }
    KinkAvoidance {
        satisfied: violations.is_empty(),
        violations,
    }
}

/// Lyapunov exponent of the noisy map against a piecewise-constant density:
/// the integral of ln |f'| weighted by the density, cell by cell, with every
/// cell integral in closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovEstimate {
    /// Integral over the region where f' != 0.
    pub finite_part: f64,
    /// Density mass sitting on zero-derivative plateaus; the exponent is
    /// -infinity when this is positive.
    pub flat_mass: f64,
    pub diverged: bool,
}

impl LyapunovEstimate {
    pub fn value(&self) -> f64 {
        if self.diverged {
            f64::NEG_INFINITY
        } else {
            self.finite_part
        }
    }
}

pub fn lyapunov_exponent(model: &MapModel, density: &Density) -> LyapunovEstimate {
    let grid = density.grid();
    assert_eq!(grid.phase(), model.phase());
    let mut finite = 0.0;
    let mut flat_mass = 0.0;
    for (i, &v) in density.values().iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let (lo, hi) = grid.cell_bounds(i);
        let (log_int, flat_len) = model.log_derivative_integral(lo, hi);
        finite += v * log_int;
        flat_mass += v * flat_len;
    }
    LyapunovEstimate {
        finite_part: finite,
        flat_mass,
        diverged: flat_mass > 1e-12,
    }
}

/// Closed-form predictions for the Lyapunov gap induced by a super-attracting
/// periodic sink of power order l and period p in a hole of radius delta,
/// under noise of half-width sigma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapPrediction {
    /// Fixed-point-regime estimate: l d^2 |ln d| / s + s |ln s|.
    pub fixed_point: f64,
    /// General periodic estimate:
    /// p d + (1 + p d) (l d^2 |ln d| / (E^(p-1) s) + s |ln s| + d |ln d|),
    /// with E the expansion factor along the free orbit.
    pub periodic: f64,
}

pub fn sink_gap_prediction(
    order: SinkOrder,
    period: u32,
    delta: f64,
    sigma: f64,
    expansion: f64,
) -> GapPrediction {
    assert!(delta > 0.0 && sigma > 0.0 && expansion > 1.0 && period >= 1);
    let l = match order {
        SinkOrder::Power(l) => l,
        // A flat sink traps more strongly than any finite power order, so
        // the interior term (and with it the prediction) is infinite.
        SinkOrder::Flat => f64::INFINITY,
    };
    let p = period as f64;
    let ld2 = if l.is_finite() {
        l * delta * delta * delta.ln().abs()
    } else {
        f64::INFINITY
    };
    let fixed_point = ld2 / sigma + sigma * sigma.ln().abs();
    let periodic = p * delta
        + (1.0 + p * delta)
            * (ld2 / (expansion.powf(p - 1.0) * sigma)
                + sigma * sigma.ln().abs()
                + delta * delta.ln().abs());
    GapPrediction {
        fixed_point,
        periodic,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    /// Slope of ln y against ln x.
    pub exponent: f64,
    /// Intercept: ln of the prefactor.
    pub log_prefactor: f64,
    pub r_squared: f64,
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("power-law fit needs at least two positive (x, y) points, got {0}")]
    TooFewPoints(usize),
    #[error("power-law fit is degenerate: {0}")]
    Degenerate(String),
}

/// Least-squares fit of y = C x^a through positive samples.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<PowerLawFit, FitError> {
    assert_eq!(xs.len(), ys.len());
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(FitError::TooFewPoints(pts.len()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if sxx < 1e-300 {
        return Err(FitError::Degenerate(
            "all x values coincide".to_string(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy < 1e-300 {
        1.0 // perfectly flat data is perfectly fit by a flat line
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Ok(PowerLawFit {
        exponent: slope,
        log_prefactor: intercept,
        r_squared,
    })
}
