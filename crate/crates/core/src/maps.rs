//! Piecewise expanding maps with a modified neighborhood ("hole") around a
//! marked point.
//!
//! A map is stored as an ordered list of pieces that tile the phase. Each
//! piece carries a closed-form formula (affine, constant, or a one-sided power
//! profile), so evaluation, derivatives, image intervals and the integrals the
//! operator assembly needs are all exact — no quadrature anywhere downstream.
//!
//! Pieces are kept in *lifted* coordinates: a piece (lo, hi) may extend past 1
//! on the circle and is read mod 1. This keeps the formula on a piece
//! continuous even when the piece straddles the wrap point, which matters for
//! exact image computations.

use crate::phase::{Hole, Phase};
use thiserror::Error;

/// Bounded additive noise: increments are uniform on [-half_width, half_width].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub half_width: f64,
}

impl NoiseModel {
    pub fn new(half_width: f64) -> Self {
        assert!(
            half_width.is_finite() && half_width >= 0.0,
            "noise half-width must be finite and non-negative"
        );
        NoiseModel { half_width }
    }
}

/// Closed-form formula on one piece.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Formula {
    /// x -> intercept + slope * x
    Affine { intercept: f64, slope: f64 },
    /// x -> value
    Constant { value: f64 },
    /// x -> value_at_pivot + coeff * |x - pivot|^exponent, with the piece
    /// lying entirely on one side of the pivot.
    Power {
        pivot: f64,
        value_at_pivot: f64,
        coeff: f64,
        exponent: f64,
    },
}

impl Formula {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Formula::Affine { intercept, slope } => intercept + slope * x,
            Formula::Constant { value } => value,
            Formula::Power {
                pivot,
                value_at_pivot,
                coeff,
                exponent,
            } => value_at_pivot + coeff * (x - pivot).abs().powf(exponent),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Formula::Affine { slope, .. } => slope,
            Formula::Constant { .. } => 0.0,
            Formula::Power {
                pivot,
                coeff,
                exponent,
                ..
            } => {
                let d = (x - pivot).abs();
                let side = if x >= pivot { 1.0 } else { -1.0 };
                if exponent == 1.0 {
                    side * coeff
                } else {
                    side * coeff * exponent * d.powf(exponent - 1.0)
                }
            }
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match *self {
            Formula::Affine { .. } | Formula::Constant { .. } => 0.0,
            Formula::Power {
                pivot,
                coeff,
                exponent,
                ..
            } => {
                if exponent == 1.0 {
                    0.0
                } else {
                    let d = (x - pivot).abs();
                    coeff * exponent * (exponent - 1.0) * d.powf(exponent - 2.0)
                }
            }
        }
    }

    /// Translate the domain by an integer: the returned formula satisfies
    /// g(x) = f(x + k).
    fn translate(&self, k: f64) -> Formula {
        match *self {
            Formula::Affine { intercept, slope } => Formula::Affine {
                intercept: intercept + slope * k,
                slope,
            },
            Formula::Constant { value } => Formula::Constant { value },
            Formula::Power {
                pivot,
                value_at_pivot,
                coeff,
                exponent,
            } => Formula::Power {
                pivot: pivot - k,
                value_at_pivot,
                coeff,
                exponent,
            },
        }
    }

    /// Exact value range over [lo, hi] (every formula is monotone or constant
    /// on a valid piece).
    pub fn value_range(&self, lo: f64, hi: f64) -> (f64, f64) {
        let a = self.eval(lo);
        let b = self.eval(hi);
        (a.min(b), a.max(b))
    }

    fn min_abs_slope(&self, lo: f64, hi: f64) -> f64 {
        match *self {
            Formula::Affine { slope, .. } => slope.abs(),
            Formula::Constant { .. } => 0.0,
            Formula::Power {
                pivot,
                coeff,
                exponent,
                ..
            } => {
                let d0 = (lo - pivot).abs().min((hi - pivot).abs());
                let d1 = (lo - pivot).abs().max((hi - pivot).abs());
                let c = coeff.abs() * exponent;
                if exponent >= 1.0 {
                    c * d0.powf(exponent - 1.0)
                } else {
                    c * d1.powf(exponent - 1.0)
                }
            }
        }
    }

    fn max_abs_slope(&self, lo: f64, hi: f64) -> f64 {
        match *self {
            Formula::Affine { slope, .. } => slope.abs(),
            Formula::Constant { .. } => 0.0,
            Formula::Power {
                pivot,
                coeff,
                exponent,
                ..
            } => {
                let d0 = (lo - pivot).abs().min((hi - pivot).abs());
                let d1 = (lo - pivot).abs().max((hi - pivot).abs());
                let c = coeff.abs() * exponent;
                if exponent >= 1.0 {
                    c * d1.powf(exponent - 1.0)
                } else {
                    c * d0.powf(exponent - 1.0)
                }
            }
        }
    }

    fn max_abs_curvature(&self, lo: f64, hi: f64) -> f64 {
        match *self {
            Formula::Affine { .. } | Formula::Constant { .. } => 0.0,
            Formula::Power {
                pivot,
                coeff,
                exponent,
                ..
            } => {
                if exponent == 1.0 {
                    return 0.0;
                }
                let d0 = (lo - pivot).abs().min((hi - pivot).abs());
                let d1 = (lo - pivot).abs().max((hi - pivot).abs());
                let c = (coeff * exponent * (exponent - 1.0)).abs();
                if exponent >= 2.0 {
                    c * d1.powf(exponent - 2.0)
                } else if d0 > 0.0 {
                    c * d0.powf(exponent - 2.0)
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Exact integral of ln |f'| over [lo, hi]. Returns the finite part and
    /// the length of the zero-slope set (positive only for constant pieces,
    /// where ln |f'| = -inf).
    pub fn log_abs_slope_integral(&self, lo: f64, hi: f64) -> (f64, f64) {
        let len = hi - lo;
        if len <= 0.0 {
            return (0.0, 0.0);
        }
        match *self {
            Formula::Affine { slope, .. } => (len * slope.abs().ln(), 0.0),
            Formula::Constant { .. } => (0.0, len),
            Formula::Power {
                pivot,
                coeff,
                exponent,
                ..
            } => {
                if coeff == 0.0 {
                    return (0.0, len);
                }
                // |f'| = |coeff| * l * d^(l-1) with d = |x - pivot|;
                // integral of ln d over [d0, d1] is [d ln d - d].
                let d0 = (lo - pivot).abs().min((hi - pivot).abs());
                let d1 = (lo - pivot).abs().max((hi - pivot).abs());
                let base = len * (coeff.abs() * exponent).ln();
                let prim = |d: f64| if d > 0.0 { d * d.ln() - d } else { 0.0 };
                (base + (exponent - 1.0) * (prim(d1) - prim(d0)), 0.0)
            }
        }
    }
}

/// One monotone (or constant) piece of the map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    /// Lifted bounds: 0 <= lo < 1, lo < hi <= lo + 1.
    pub lo: f64,
    pub hi: f64,
    pub formula: Formula,
    /// True when the piece lies inside the modified neighborhood.
    pub in_hole: bool,
}

impl Piece {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }
}

/// How the map is replaced on the hole B_delta(center).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HoleProfile {
    /// Constant value across the whole neighborhood. If `value` is None the
    /// boundary value of the unmodified map is used (both sides must agree).
    Plateau { value: Option<f64> },
    /// value_at_center + c * |x - center|^exponent on each half, with the
    /// coefficients chosen to match the unmodified map at the boundary.
    PowerSink { exponent: f64 },
    /// Constant equal to f(center) on the inner fraction of the neighborhood,
    /// with power-profile connectors restoring continuity on the flanks.
    PlateauWithConnectors {
        plateau_fraction: f64,
        connector_exponent: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoleSpec {
    pub center: f64,
    pub radius: f64,
    pub profile: HoleProfile,
}

/// Unmodified base dynamics.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseMap {
    /// x -> 2x mod 1 on the circle.
    Doubling,
    /// x -> 2 min(x, 1 - x); continuous as a circle map.
    Tent,
    /// User-supplied affine branches tiling the phase.
    PiecewiseAffine(Vec<AffineBranch>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineBranch {
    pub lo: f64,
    pub hi: f64,
    pub intercept: f64,
    pub slope: f64,
}

/// Declarative description of a map; `build_map` turns it into a validated
/// [`MapModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct MapSpec {
    pub name: String,
    pub base: BaseMap,
    pub phase: Phase,
    pub hole: Option<HoleSpec>,
}

impl MapSpec {
    /// Doubling map with the fixed point at 0 flattened: constant 0 on the
    /// inner half of B_delta(0), affine connectors on the flanks.
    pub fn doubling_flat(delta: f64) -> MapSpec {
        MapSpec {
            name: "doubling-flat".to_string(),
            base: BaseMap::Doubling,
            phase: Phase::Circle,
            hole: (delta > 0.0).then_some(HoleSpec {
                center: 0.0,
                radius: delta,
                profile: HoleProfile::PlateauWithConnectors {
                    plateau_fraction: 0.5,
                    connector_exponent: 1.0,
                },
            }),
        }
    }

    /// Tent map with the turning point flattened: constant 1 - 2*delta on
    /// B_delta(1/2).
    pub fn tent_flat(delta: f64) -> MapSpec {
        MapSpec {
            name: "tent-flat".to_string(),
            base: BaseMap::Tent,
            phase: Phase::Circle,
            hole: (delta > 0.0).then_some(HoleSpec {
                center: 0.5,
                radius: delta,
                profile: HoleProfile::Plateau { value: None },
            }),
        }
    }

    /// Doubling map with a power-profile sink |x - center|^exponent glued into
    /// B_delta(center).
    pub fn doubling_power_sink(center: f64, delta: f64, exponent: f64) -> MapSpec {
        MapSpec {
            name: "doubling-sink".to_string(),
            base: BaseMap::Doubling,
            phase: Phase::Circle,
            hole: (delta > 0.0).then_some(HoleSpec {
                center,
                radius: delta,
                profile: HoleProfile::PowerSink { exponent },
            }),
        }
    }
}

/// Order of the sink profile at the marked point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SinkOrder {
    /// g - g(center) behaves like |x - center|^l near the center.
    Power(f64),
    /// Identically constant near the center (infinitely flat).
    Flat,
}

/// Present when the marked point is a periodic point of the modified map and
/// the profile has zero derivative there (a super-attracting sink).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkInfo {
    pub period: u32,
    pub order: SinkOrder,
}

#[derive(Debug, Error)]
pub enum MapBuildError {
    #[error("map discontinuous near the hole: gap {gap:.3e} at x = {at}")]
    ContinuityViolation { at: f64, gap: f64 },
    #[error("expansion fails on [{lo:.6}, {hi:.6}]: min |f'| = {min_slope:.6} <= 1")]
    ExpansionViolation { lo: f64, hi: f64, min_slope: f64 },
    #[error(
        "noisy image [{img_lo:.6}, {img_hi:.6}] inflated by {sigma} leaves the interval [{lo}, {hi}]"
    )]
    PhaseLeak {
        img_lo: f64,
        img_hi: f64,
        sigma: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid map specification: {0}")]
    InvalidSpec(String),
}

/// A validated piecewise map ready for operator assembly and simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct MapModel {
    name: String,
    phase: Phase,
    pieces: Vec<Piece>,
    hole: Option<Hole>,
    sink: Option<SinkInfo>,
    min_expansion: f64,
    max_derivative: f64,
    max_curvature: f64,
    /// ln |slope| when the base map has constant absolute slope (then the
    /// unperturbed Lyapunov exponent is independent of the invariant measure).
    base_log_slope: Option<f64>,
}

const JUNCTION_TOL: f64 = 1e-9;
const BOUNDARY_MATCH_TOL: f64 = 1e-12;

/// Build and validate a map model. The noise model is needed to check that an
/// interval phase traps the noisy dynamics.
pub fn build_map(spec: &MapSpec, noise: &NoiseModel) -> Result<MapModel, MapBuildError> {
    if spec.phase.is_empty() || spec.phase.lo() < 0.0 || spec.phase.hi() > 1.0 {
        return Err(MapBuildError::InvalidSpec(format!(
            "phase must be a non-empty subset of [0, 1], got {:?}",
            spec.phase
        )));
    }
    let base = base_cover(spec)?;
    let mut pieces = Vec::new();
    let mut hole = None;

    match &spec.hole {
        None => pieces.extend(base.iter().cloned()),
        Some(h) => {
            validate_hole_geometry(spec, h)?;
            hole = Some(Hole {
                center: h.center,
                radius: h.radius,
            });
            carve_base(&spec.phase, &base, h, &mut pieces)?;
            build_hole_pieces(&spec.phase, &base, h, &mut pieces)?;
        }
    }

    normalize_and_sort(&spec.phase, &mut pieces)?;
    validate_coverage(&spec.phase, &pieces)?;
    if spec.hole.is_some() {
        validate_hole_continuity(&spec.phase, &pieces)?;
    }

    let mut min_expansion = f64::INFINITY;
    let mut max_derivative: f64 = 0.0;
    let mut max_curvature: f64 = 0.0;
    for p in &pieces {
        max_derivative = max_derivative.max(p.formula.max_abs_slope(p.lo, p.hi));
        if !p.in_hole {
            let m = p.formula.min_abs_slope(p.lo, p.hi);
            if m <= 1.0 {
                return Err(MapBuildError::ExpansionViolation {
                    lo: p.lo,
                    hi: p.hi,
                    min_slope: m,
                });
            }
            min_expansion = min_expansion.min(m);
            max_curvature = max_curvature.max(p.formula.max_abs_curvature(p.lo, p.hi));
        }
    }

    if let Phase::Interval { lo, hi } = spec.phase {
        let (mut img_lo, mut img_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &pieces {
            let (a, b) = p.formula.value_range(p.lo, p.hi);
            img_lo = img_lo.min(a);
            img_hi = img_hi.max(b);
        }
        let s = noise.half_width;
        if img_lo - s < lo - 1e-12 || img_hi + s > hi + 1e-12 {
            return Err(MapBuildError::PhaseLeak {
                img_lo,
                img_hi,
                sigma: s,
                lo,
                hi,
            });
        }
    }

    let base_log_slope = constant_base_log_slope(&base);

    let mut model = MapModel {
        name: spec.name.clone(),
        phase: spec.phase,
        pieces,
        hole,
        sink: None,
        min_expansion,
        max_derivative,
        max_curvature,
        base_log_slope,
    };
    model.sink = detect_sink(&model, spec);
    Ok(model)
}

impl MapModel {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn hole(&self) -> Option<Hole> {
        self.hole
    }

    pub fn sink(&self) -> Option<SinkInfo> {
        self.sink
    }

    /// Infimum of |f'| outside the hole (strictly > 1 by validation).
    pub fn min_expansion(&self) -> f64 {
        self.min_expansion
    }

    pub fn max_derivative(&self) -> f64 {
        self.max_derivative
    }

    /// Supremum of |f''| outside the hole.
    pub fn max_curvature(&self) -> f64 {
        self.max_curvature
    }

    /// Lyapunov exponent of the unmodified base map when it is measure-free
    /// (constant |f'|), e.g. ln 2 for doubling and tent.
    pub fn base_lyapunov(&self) -> Option<f64> {
        self.base_log_slope
    }

    /// Locate the piece containing x (x in the fundamental domain). Returns
    /// the piece index and the lifted coordinate to evaluate the formula at.
    fn locate(&self, x: f64) -> (usize, f64) {
        let pieces = &self.pieces;
        let mut xl = x;
        if self.phase.is_circle() {
            if xl < pieces[0].lo {
                xl += 1.0;
            }
        } else {
            xl = xl.clamp(pieces[0].lo, pieces.last().unwrap().hi);
        }
        // partition_point: first index with lo > xl
        let idx = pieces.partition_point(|p| p.lo <= xl);
        let idx = idx.saturating_sub(1);
        debug_assert!(
            xl >= pieces[idx].lo - 1e-9 && xl <= pieces[idx].hi + 1e-9,
            "lookup out of piece: x = {xl}, piece = [{}, {}]",
            pieces[idx].lo,
            pieces[idx].hi
        );
        (idx, xl)
    }

    /// Deterministic image f(x), reduced to the fundamental domain.
    pub fn eval(&self, x: f64) -> f64 {
        let x = self.phase.reduce(x);
        let (idx, xl) = self.locate(x);
        self.phase.reduce(self.pieces[idx].formula.eval(xl))
    }

    /// One noisy step: f(x) + w, reduced to the fundamental domain.
    pub fn eval_noisy(&self, x: f64, w: f64) -> f64 {
        self.phase.reduce(self.eval(x) + w)
    }

    /// Derivative at x (one-sided at piece junctions).
    pub fn derivative(&self, x: f64) -> f64 {
        let x = self.phase.reduce(x);
        let (idx, xl) = self.locate(x);
        self.pieces[idx].formula.derivative(xl)
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        let x = self.phase.reduce(x);
        let (idx, xl) = self.locate(x);
        self.pieces[idx].formula.second_derivative(xl)
    }

    /// Points (outside the open hole) where the map has a genuine one-sided
    /// derivative mismatch, plus the hole endpoints. This is the obstruction
    /// set for derivative chains along orbits out of the hole.
    pub fn kink_points(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let k = self.pieces.len();
        for i in 0..k {
            let p = &self.pieces[i];
            let q = &self.pieces[(i + 1) % k];
            // Junction between p and q (the last junction wraps on the circle).
            let xj = if i + 1 < k { q.lo } else { self.phase.reduce(q.lo) };
            let d_left = p.formula.derivative(p.hi);
            let d_right = q.formula.derivative(q.lo);
            // Values must also connect for the junction to be a kink rather
            // than an outright jump; jumps count as obstructions too.
            let v_left = p.formula.eval(p.hi);
            let v_right = q.formula.eval(q.lo);
            let value_gap = mod_gap(self.phase, v_left, v_right);
            let kinked = (d_left - d_right).abs() > 1e-9 || value_gap > 1e-9;
            if !kinked {
                continue;
            }
            let inside_open_hole = self
                .hole
                .map(|h| self.phase.dist(xj, h.center) < h.radius - 1e-12)
                .unwrap_or(false);
            if !inside_open_hole {
                out.push(self.phase.reduce(xj));
            }
        }
        if let Some(h) = self.hole {
            out.push(self.phase.reduce(h.center - h.radius));
            out.push(self.phase.reduce(h.center + h.radius));
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        out
    }

    /// Exact integral of ln |f'| over the lifted interval [lo, hi].
    /// Returns (finite part, total length where f' = 0).
    pub fn log_derivative_integral(&self, lo: f64, hi: f64) -> (f64, f64) {
        let mut finite = 0.0;
        let mut flat = 0.0;
        for (a, b, formula) in self.pieces_overlapping(lo, hi) {
            let (v, z) = formula.log_abs_slope_integral(a, b);
            finite += v;
            flat += z;
        }
        (finite, flat)
    }

    /// Sub-pieces of the map intersecting the lifted interval [lo, hi]
    /// (hi - lo <= phase length). Yields (a, b, formula) with the formula
    /// translated so it is evaluated directly on [a, b] in lifted coordinates.
    pub fn pieces_overlapping(&self, lo: f64, hi: f64) -> Vec<(f64, f64, Formula)> {
        let mut out = Vec::new();
        debug_assert!(hi - lo <= self.phase.len() + 1e-12);
        for p in &self.pieces {
            for shift in [-1.0, 0.0, 1.0] {
                if !self.phase.is_circle() && shift != 0.0 {
                    continue;
                }
                let plo = p.lo + shift;
                let phi = p.hi + shift;
                let a = plo.max(lo);
                let b = phi.min(hi);
                if b > a + 1e-15 {
                    // Domain moved by +shift, so the formula is read at
                    // x - shift.
                    out.push((a, b, p.formula.translate(-shift)));
                }
            }
        }
        out.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        out
    }

    /// Verdict on whether the hole hosts a super-attracting periodic sink
    /// whose profile matches the unmodified map on the boundary (the setting
    /// of the periodic-sink Lyapunov estimates).
    pub fn admissibility(&self) -> AdmissibilityReport {
        let hole = match self.hole {
            Some(h) => h,
            None => {
                return AdmissibilityReport {
                    sink: None,
                    range_condition: false,
                    admissible: false,
                }
            }
        };
        let range_condition = self.range_condition_holds(hole);
        AdmissibilityReport {
            sink: self.sink,
            range_condition,
            admissible: self.sink.is_some() && range_condition,
        }
    }

    /// Range condition: the modified map covers exactly the image the
    /// unmodified map had on the hole.
    fn range_condition_holds(&self, hole: Hole) -> bool {
        let (hlo, hhi) = hole.bounds();
        let mut sink_img: Vec<(f64, f64)> = Vec::new();
        let mut base_img: Vec<(f64, f64)> = Vec::new();
        for (a, b, f) in self.pieces_overlapping(hlo, hhi) {
            let (vlo, vhi) = f.value_range(a, b);
            for part in self.phase.normalize_interval(vlo, vhi) {
                sink_img.push(part);
            }
        }
        // Reconstruct the base image from the boundary values and the
        // expansion of the flanking branches: the unmodified branch through
        // the hole is affine for every supported base, so its image is the
        // interval between the boundary values extended through the center.
        // We instead compare against the value range of the continuation of
        // the flanking formulas across the hole.
        let left = self.formula_adjacent(hlo, true);
        let right = self.formula_adjacent(hhi, false);
        if let (Some(lf), Some(rf)) = (left, right) {
            let (llo, lhi) = lf.value_range(hlo, hole.center);
            let (rlo, rhi) = rf.value_range(hole.center, hhi);
            for part in self.phase.normalize_interval(llo, lhi) {
                base_img.push(part);
            }
            for part in self.phase.normalize_interval(rlo, rhi) {
                base_img.push(part);
            }
        } else {
            return false;
        }
        union_measure_close(&mut sink_img, &mut base_img)
    }

    /// Formula of the non-hole piece touching the lifted point x from the
    /// given side, translated to be evaluable near x.
    fn formula_adjacent(&self, x: f64, from_left: bool) -> Option<Formula> {
        for p in &self.pieces {
            if p.in_hole {
                continue;
            }
            for shift in [-1.0, 0.0, 1.0] {
                let (plo, phi) = (p.lo + shift, p.hi + shift);
                let touches = if from_left {
                    (phi - x).abs() < 1e-9
                } else {
                    (plo - x).abs() < 1e-9
                };
                if touches {
                    return Some(p.formula.translate(-shift));
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibilityReport {
    pub sink: Option<SinkInfo>,
    pub range_condition: bool,
    pub admissible: bool,
}

fn mod_gap(phase: Phase, a: f64, b: f64) -> f64 {
    if phase.is_circle() {
        let d = (a - b).rem_euclid(1.0);
        d.min(1.0 - d)
    } else {
        (a - b).abs()
    }
}

/// Compare two interval unions for equality of their merged endpoints.
fn union_measure_close(a: &mut Vec<(f64, f64)>, b: &mut Vec<(f64, f64)>) -> bool {
    let merge = |v: &mut Vec<(f64, f64)>| {
        v.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        let mut out: Vec<(f64, f64)> = Vec::new();
        for &(lo, hi) in v.iter() {
            if let Some(last) = out.last_mut() {
                if lo <= last.1 + 1e-9 {
                    last.1 = last.1.max(hi);
                    continue;
                }
            }
            out.push((lo, hi));
        }
        out
    };
    let ma = merge(a);
    let mb = merge(b);
    if ma.len() != mb.len() {
        return false;
    }
    ma.iter()
        .zip(mb.iter())
        .all(|(x, y)| (x.0 - y.0).abs() < 1e-9 && (x.1 - y.1).abs() < 1e-9)
}

fn base_cover(spec: &MapSpec) -> Result<Vec<Piece>, MapBuildError> {
    let mk = |lo: f64, hi: f64, formula: Formula| Piece {
        lo,
        hi,
        formula,
        in_hole: false,
    };
    match &spec.base {
        BaseMap::Doubling => Ok(vec![
            mk(0.0, 0.5, Formula::Affine { intercept: 0.0, slope: 2.0 }),
            mk(0.5, 1.0, Formula::Affine { intercept: -1.0, slope: 2.0 }),
        ]),
        BaseMap::Tent => Ok(vec![
            mk(0.0, 0.5, Formula::Affine { intercept: 0.0, slope: 2.0 }),
            mk(0.5, 1.0, Formula::Affine { intercept: 2.0, slope: -2.0 }),
        ]),
        BaseMap::PiecewiseAffine(branches) => {
            if branches.is_empty() {
                return Err(MapBuildError::InvalidSpec("empty branch list".into()));
            }
            let mut bs = branches.clone();
            bs.sort_by(|a, b| a.lo.partial_cmp(&b.lo).unwrap());
            let lo = spec.phase.lo();
            let hi = spec.phase.hi();
            if (bs[0].lo - lo).abs() > JUNCTION_TOL || (bs.last().unwrap().hi - hi).abs() > JUNCTION_TOL {
                return Err(MapBuildError::InvalidSpec(format!(
                    "branches must tile [{lo}, {hi}]"
                )));
            }
            for w in bs.windows(2) {
                if (w[0].hi - w[1].lo).abs() > JUNCTION_TOL {
                    return Err(MapBuildError::InvalidSpec(format!(
                        "branch gap between {} and {}",
                        w[0].hi, w[1].lo
                    )));
                }
            }
            Ok(bs
                .iter()
                .map(|b| {
                    mk(
                        b.lo,
                        b.hi,
                        Formula::Affine {
                            intercept: b.intercept,
                            slope: b.slope,
                        },
                    )
                })
                .collect())
        }
    }
}

fn constant_base_log_slope(base: &[Piece]) -> Option<f64> {
    let mut slope: Option<f64> = None;
    for p in base {
        let s = match p.formula {
            Formula::Affine { slope, .. } => slope.abs(),
            _ => return None,
        };
        match slope {
            None => slope = Some(s),
            Some(prev) if (prev - s).abs() < 1e-12 => {}
            _ => return None,
        }
    }
    slope.map(|s| s.ln())
}

fn validate_hole_geometry(spec: &MapSpec, h: &HoleSpec) -> Result<(), MapBuildError> {
    if !(h.radius > 0.0) || h.radius >= spec.phase.len() / 2.0 {
        return Err(MapBuildError::InvalidSpec(format!(
            "hole radius {} out of range",
            h.radius
        )));
    }
    if let Phase::Interval { lo, hi } = spec.phase {
        if h.center - h.radius <= lo || h.center + h.radius >= hi {
            return Err(MapBuildError::InvalidSpec(
                "hole must be interior to the interval phase".into(),
            ));
        }
    }
    match h.profile {
        HoleProfile::PowerSink { exponent } => {
            if !(exponent >= 1.0) {
                return Err(MapBuildError::InvalidSpec(format!(
                    "sink exponent must be >= 1, got {exponent}"
                )));
            }
        }
        HoleProfile::PlateauWithConnectors {
            plateau_fraction,
            connector_exponent,
        } => {
            if !(plateau_fraction > 0.0 && plateau_fraction < 1.0) {
                return Err(MapBuildError::InvalidSpec(format!(
                    "plateau fraction must lie in (0, 1), got {plateau_fraction}"
                )));
            }
            if !(connector_exponent >= 1.0) {
                return Err(MapBuildError::InvalidSpec(format!(
                    "connector exponent must be >= 1, got {connector_exponent}"
                )));
            }
        }
        HoleProfile::Plateau { .. } => {}
    }
    Ok(())
}

/// Base pieces restricted to the complement of the hole.
fn carve_base(
    phase: &Phase,
    base: &[Piece],
    h: &HoleSpec,
    out: &mut Vec<Piece>,
) -> Result<(), MapBuildError> {
    let targets: Vec<(f64, f64)> = if phase.is_circle() {
        vec![(h.center + h.radius, h.center - h.radius + 1.0)]
    } else {
        vec![
            (phase.lo(), h.center - h.radius),
            (h.center + h.radius, phase.hi()),
        ]
    };
    for (s, t) in targets {
        if t <= s {
            continue;
        }
        for p in base {
            let shifts: &[f64] = if phase.is_circle() { &[0.0, 1.0, 2.0] } else { &[0.0] };
            for &m in shifts {
                let a = (p.lo + m).max(s);
                let b = (p.hi + m).min(t);
                if b > a + 1e-15 {
                    out.push(Piece {
                        lo: a,
                        hi: b,
                        formula: p.formula.translate(-m),
                        in_hole: false,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Value of the base map at lifted point x evaluated with the branch valid on
/// the given side; errs when the one-sided neighborhood crosses a branch cut.
fn base_formula_for_range(
    phase: &Phase,
    base: &[Piece],
    lo: f64,
    hi: f64,
) -> Result<Formula, MapBuildError> {
    let shifts: &[f64] = if phase.is_circle() {
        &[-1.0, 0.0, 1.0, 2.0]
    } else {
        &[0.0]
    };
    for p in base {
        for &m in shifts {
            if p.lo + m <= lo + 1e-12 && hi - 1e-12 <= p.hi + m {
                return Ok(p.formula.translate(-m));
            }
        }
    }
    Err(MapBuildError::InvalidSpec(format!(
        "hole side [{lo}, {hi}] crosses a branch boundary of the base map"
    )))
}

fn build_hole_pieces(
    phase: &Phase,
    base: &[Piece],
    h: &HoleSpec,
    out: &mut Vec<Piece>,
) -> Result<(), MapBuildError> {
    let x0 = h.center;
    let d = h.radius;
    let left = base_formula_for_range(phase, base, x0 - d, x0)?;
    let right = base_formula_for_range(phase, base, x0, x0 + d)?;
    let f_l_edge = left.eval(x0 - d);
    let f_l_center = left.eval(x0);
    let f_r_center = right.eval(x0);
    let f_r_edge = right.eval(x0 + d);

    let mut push = |lo: f64, hi: f64, formula: Formula| {
        out.push(Piece {
            lo,
            hi,
            formula,
            in_hole: true,
        })
    };

    match h.profile {
        HoleProfile::Plateau { value } => {
            // A single constant across the hole: both boundary values must
            // agree (mod 1 on the circle) with it.
            let (v_l, v_r) = match value {
                Some(v) => (v, v),
                None => (f_l_edge, f_r_edge),
            };
            let gap = mod_gap(*phase, v_l, f_l_edge).max(mod_gap(*phase, v_r, f_r_edge));
            if gap > BOUNDARY_MATCH_TOL {
                return Err(MapBuildError::ContinuityViolation {
                    at: x0 - d,
                    gap,
                });
            }
            let cross = mod_gap(*phase, v_l, v_r);
            if cross > BOUNDARY_MATCH_TOL {
                return Err(MapBuildError::ContinuityViolation { at: x0, gap: cross });
            }
            push(x0 - d, x0, Formula::Constant { value: v_l });
            push(x0, x0 + d, Formula::Constant { value: v_r });
        }
        HoleProfile::PowerSink { exponent } => {
            let scale = d.powf(exponent);
            push(
                x0 - d,
                x0,
                Formula::Power {
                    pivot: x0,
                    value_at_pivot: f_l_center,
                    coeff: (f_l_edge - f_l_center) / scale,
                    exponent,
                },
            );
            push(
                x0,
                x0 + d,
                Formula::Power {
                    pivot: x0,
                    value_at_pivot: f_r_center,
                    coeff: (f_r_edge - f_r_center) / scale,
                    exponent,
                },
            );
        }
        HoleProfile::PlateauWithConnectors {
            plateau_fraction,
            connector_exponent,
        } => {
            let r = d * plateau_fraction;
            let w = d - r;
            let scale = w.powf(connector_exponent);
            // Left connector rises from f(x0 - d) to f(x0) over [x0-d, x0-r].
            push(
                x0 - d,
                x0 - r,
                Formula::Power {
                    pivot: x0 - r,
                    value_at_pivot: f_l_center,
                    coeff: (f_l_edge - f_l_center) / scale,
                    exponent: connector_exponent,
                },
            );
            push(x0 - r, x0, Formula::Constant { value: f_l_center });
            push(x0, x0 + r, Formula::Constant { value: f_r_center });
            push(
                x0 + r,
                x0 + d,
                Formula::Power {
                    pivot: x0 + r,
                    value_at_pivot: f_r_center,
                    coeff: (f_r_edge - f_r_center) / scale,
                    exponent: connector_exponent,
                },
            );
        }
    }
    Ok(())
}

/// Translate every piece so lo lands in the fundamental domain, then sort.
fn normalize_and_sort(phase: &Phase, pieces: &mut Vec<Piece>) -> Result<(), MapBuildError> {
    for p in pieces.iter_mut() {
        if phase.is_circle() {
            let k = p.lo.floor();
            if k != 0.0 {
                p.lo -= k;
                p.hi -= k;
                p.formula = p.formula.translate(k);
            }
            // Guard against lo == 1.0 after rounding.
            if p.lo >= 1.0 {
                p.lo -= 1.0;
                p.hi -= 1.0;
                p.formula = p.formula.translate(1.0);
            }
        }
        if !(p.hi > p.lo) {
            return Err(MapBuildError::InvalidSpec(format!(
                "degenerate piece [{}, {}]",
                p.lo, p.hi
            )));
        }
    }
    pieces.sort_by(|a, b| a.lo.partial_cmp(&b.lo).unwrap());
    Ok(())
}

fn validate_coverage(phase: &Phase, pieces: &[Piece]) -> Result<(), MapBuildError> {
    let total: f64 = pieces.iter().map(|p| p.hi - p.lo).sum();
    if (total - phase.len()).abs() > 1e-9 {
        return Err(MapBuildError::InvalidSpec(format!(
            "pieces cover length {total}, expected {}",
            phase.len()
        )));
    }
    for w in pieces.windows(2) {
        if (w[0].hi - w[1].lo).abs() > JUNCTION_TOL {
            return Err(MapBuildError::InvalidSpec(format!(
                "gap or overlap between pieces at {} vs {}",
                w[0].hi, w[1].lo
            )));
        }
    }
    if phase.is_circle() {
        let wrap = pieces.last().unwrap().hi - (pieces[0].lo + 1.0);
        if wrap.abs() > JUNCTION_TOL {
            return Err(MapBuildError::InvalidSpec(format!(
                "pieces do not close up around the circle (defect {wrap})"
            )));
        }
    } else {
        if (pieces[0].lo - phase.lo()).abs() > JUNCTION_TOL
            || (pieces.last().unwrap().hi - phase.hi()).abs() > JUNCTION_TOL
        {
            return Err(MapBuildError::InvalidSpec(
                "pieces do not tile the interval phase".into(),
            ));
        }
    }
    Ok(())
}

/// The modified map must match the unmodified one at the hole boundary and be
/// continuous across internal profile junctions.
fn validate_hole_continuity(phase: &Phase, pieces: &[Piece]) -> Result<(), MapBuildError> {
    let k = pieces.len();
    for i in 0..k {
        let p = &pieces[i];
        let q = &pieces[(i + 1) % k];
        if !(p.in_hole || q.in_hole) {
            continue;
        }
        let gap = mod_gap(*phase, p.formula.eval(p.hi), q.formula.eval(q.lo));
        if gap > 100.0 * BOUNDARY_MATCH_TOL {
            return Err(MapBuildError::ContinuityViolation {
                at: phase.reduce(q.lo),
                gap,
            });
        }
    }
    Ok(())
}

/// Detect a super-attracting periodic sink: the profile must have zero
/// derivative at the center and the center must return to itself under the
/// modified map without re-entering the hole on the way.
fn detect_sink(model: &MapModel, spec: &MapSpec) -> Option<SinkInfo> {
    let h = spec.hole.as_ref()?;
    let order = match h.profile {
        HoleProfile::PowerSink { exponent } => {
            if exponent > 1.0 {
                SinkOrder::Power(exponent)
            } else {
                return None;
            }
        }
        HoleProfile::Plateau { .. } | HoleProfile::PlateauWithConnectors { .. } => SinkOrder::Flat,
    };
    let x0 = model.phase.reduce(h.center);
    let hole = model.hole?;
    let mut x = x0;
    // Horizon: after p steps of expansion ~2 the rounding drift is about
    // 2^p * eps, so a return can be certified against the 1e-9 tolerance
    // only for p <= ~24. Beyond ~45 steps binary orbits of slope-2 maps
    // collapse onto exact dyadics (mantissa exhaustion) and would produce
    // spurious returns, so a longer search would be unsound, not stronger.
    for p in 1..=24u32 {
        x = model.eval(x);
        if model.phase.dist(x, x0) < 1e-9 {
            return Some(SinkInfo { period: p, order });
        }
        if hole.contains(&model.phase, x) {
            // Re-entered the hole away from the center: not a clean periodic
            // orbit of the marked point.
            return None;
        }
    }
    None
}
