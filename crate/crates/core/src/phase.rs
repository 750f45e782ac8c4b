//! Phase space: the unit circle, or a noise-trapped subinterval of [0, 1].
//!
//! Coordinates always live in [0, 1]. On the circle they are understood mod 1;
//! on an interval phase the dynamics are validated elsewhere to never leave it,
//! so reduction is the identity. Intervals of the phase are frequently handled
//! in "lifted" coordinates: a pair (lo, hi) with lo < hi <= lo + 1 that is read
//! mod 1 on the circle, which keeps formulas on a piece continuous even when
//! the piece straddles the wrap point.

/// The space the dynamics act on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase {
    /// Circle of circumference 1.
    Circle,
    /// Subinterval [lo, hi] of [0, 1] that traps the noisy dynamics.
    Interval { lo: f64, hi: f64 },
}

impl Phase {
    /// Total length of the phase.
    pub fn len(&self) -> f64 {
        match self {
            Phase::Circle => 1.0,
            Phase::Interval { lo, hi } => hi - lo,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 0.0
    }

    /// Left endpoint of the fundamental domain.
    pub fn lo(&self) -> f64 {
        match self {
            Phase::Circle => 0.0,
            Phase::Interval { lo, .. } => *lo,
        }
    }

    pub fn hi(&self) -> f64 {
        match self {
            Phase::Circle => 1.0,
            Phase::Interval { hi, .. } => *hi,
        }
    }

    pub fn is_circle(&self) -> bool {
        matches!(self, Phase::Circle)
    }

    /// Bring a coordinate back into the fundamental domain. On the circle this
    /// is reduction mod 1; on an interval the caller guarantees containment and
    /// we only clip floating-point dust at the ends.
    pub fn reduce(&self, x: f64) -> f64 {
        match self {
            Phase::Circle => {
                let r = x.rem_euclid(1.0);
                // rem_euclid can return exactly 1.0 for tiny negative inputs.
                if r >= 1.0 {
                    0.0
                } else {
                    r
                }
            }
            Phase::Interval { lo, hi } => x.clamp(*lo, *hi),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match self {
            Phase::Circle => (0.0..1.0).contains(&x),
            Phase::Interval { lo, hi } => (*lo..=*hi).contains(&x),
        }
    }

    /// Distance between two points (arc distance on the circle).
    pub fn dist(&self, a: f64, b: f64) -> f64 {
        match self {
            Phase::Circle => {
                let d = (a - b).rem_euclid(1.0);
                d.min(1.0 - d)
            }
            Phase::Interval { .. } => (a - b).abs(),
        }
    }

    /// Overlap length of two lifted intervals read on this phase.
    ///
    /// Both intervals must satisfy hi - lo <= phase length. On the circle the
    /// second interval is tested against integer translates of the first.
    pub fn overlap_len(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        match self {
            Phase::Circle => {
                let mut total = 0.0;
                for shift in [-1.0, 0.0, 1.0] {
                    let lo = (a.0 + shift).max(b.0);
                    let hi = (a.1 + shift).min(b.1);
                    if hi > lo {
                        total += hi - lo;
                    }
                }
                total
            }
            Phase::Interval { .. } => {
                let lo = a.0.max(b.0);
                let hi = a.1.min(b.1);
                (hi - lo).max(0.0)
            }
        }
    }

    /// Does a lifted interval contain the point x (read mod 1 on the circle)?
    pub fn interval_contains(&self, iv: (f64, f64), x: f64) -> bool {
        match self {
            Phase::Circle => {
                for shift in [-1.0, 0.0, 1.0] {
                    let p = x + shift;
                    if p >= iv.0 && p <= iv.1 {
                        return true;
                    }
                }
                false
            }
            Phase::Interval { .. } => x >= iv.0 && x <= iv.1,
        }
    }

    /// Split a lifted interval into pieces inside the fundamental domain.
    /// Returns one or two (lo, hi) pairs with lo < hi, plus degenerate points
    /// preserved as zero-length pairs.
    pub fn normalize_interval(&self, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        debug_assert!(hi >= lo);
        match self {
            Phase::Circle => {
                if hi - lo >= 1.0 {
                    return vec![(0.0, 1.0)];
                }
                let lo_r = lo.rem_euclid(1.0);
                let hi_r = lo_r + (hi - lo);
                if hi_r <= 1.0 {
                    vec![(lo_r, hi_r)]
                } else {
                    vec![(lo_r, 1.0), (0.0, hi_r - 1.0)]
                }
            }
            Phase::Interval { lo: a, hi: b } => {
                let l = lo.max(*a);
                let h = hi.min(*b);
                if h >= l {
                    vec![(l, h)]
                } else {
                    vec![]
                }
            }
        }
    }
}

/// The removed/modified neighborhood B_delta(center) of the phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hole {
    pub center: f64,
    pub radius: f64,
}

impl Hole {
    /// Lifted bounds (center - radius, center + radius); may leave [0, 1) on
    /// the circle and is read mod 1 there.
    pub fn bounds(&self) -> (f64, f64) {
        (self.center - self.radius, self.center + self.radius)
    }

    pub fn contains(&self, phase: &Phase, x: f64) -> bool {
        phase.dist(x, self.center) < self.radius
    }

    /// Measure of the intersection of the hole with a lifted interval.
    pub fn overlap_len(&self, phase: &Phase, iv: (f64, f64)) -> f64 {
        phase.overlap_len(self.bounds(), iv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_reduction_wraps_both_ways() {
        let p = Phase::Circle;
        assert!((p.reduce(1.3) - 0.3).abs() < 1e-15);
        assert!((p.reduce(-0.25) - 0.75).abs() < 1e-15);
        assert_eq!(p.reduce(0.0), 0.0);
        assert!(p.reduce(-1e-300) < 1.0);
    }

    #[test]
    fn circle_distance_is_arc_distance() {
        let p = Phase::Circle;
        assert!((p.dist(0.1, 0.9) - 0.2).abs() < 1e-15);
        assert!((p.dist(0.9, 0.1) - 0.2).abs() < 1e-15);
        assert!((p.dist(0.2, 0.5) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn wrapping_interval_splits_at_zero() {
        let p = Phase::Circle;
        let parts = p.normalize_interval(0.9, 1.1);
        assert_eq!(parts.len(), 2);
        assert!((parts[0].0 - 0.9).abs() < 1e-15 && (parts[0].1 - 1.0).abs() < 1e-15);
        assert!(parts[1].0.abs() < 1e-15 && (parts[1].1 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn hole_overlap_accounts_for_wrap() {
        let p = Phase::Circle;
        let hole = Hole { center: 0.0, radius: 0.01 };
        // Interval [0.995, 1.0) overlaps the left flank of the hole.
        assert!((hole.overlap_len(&p, (0.995, 1.0)) - 0.005).abs() < 1e-15);
        assert!((hole.overlap_len(&p, (0.0, 0.004)) - 0.004).abs() < 1e-15);
        assert_eq!(hole.overlap_len(&p, (0.3, 0.4)), 0.0);
    }
}
