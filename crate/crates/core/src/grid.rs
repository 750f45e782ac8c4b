//! Uniform partition of the phase and piecewise-constant densities on it.
//!
//! Densities are stored as cell values of a piecewise-constant function (not
//! cell masses): a probability density has `sum(values) * h == 1`. The
//! discrete norms mirror the function-space ones: `l1` integrates |v|, and
//! `variation` sums the jumps between adjacent cells (wrapping on the
//! circle), so `bv = l1 + variation` is the discrete bounded-variation norm.

use crate::phase::{Hole, Phase};

pub const MIN_CELLS: usize = 16;
pub const MAX_AUTO_CELLS: usize = 65_536;
pub const MIN_AUTO_CELLS: usize = 512;
const DEFAULT_AUTO_CELLS: usize = 4_096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n: usize,
    phase: Phase,
}

impl Grid {
    pub fn new(n: usize, phase: Phase) -> Self {
        assert!(n >= MIN_CELLS, "grid must have at least {MIN_CELLS} cells");
        assert!(!phase.is_empty(), "grid phase must be non-empty");
        Grid { n, phase }
    }

    /// Pick a resolution that keeps at least four cells inside the smallest
    /// length scale of the problem (noise half-width, hole radius), rounded up
    /// to a multiple of 512 and clamped to a practical range.
    pub fn auto_size(sigma: f64, delta: f64, phase: Phase) -> usize {
        let mut scale = f64::INFINITY;
        if sigma > 0.0 {
            scale = scale.min(sigma);
        }
        if delta > 0.0 {
            scale = scale.min(delta);
        }
        if !scale.is_finite() {
            return DEFAULT_AUTO_CELLS;
        }
        let raw = (4.0 * phase.len() / scale).ceil() as usize;
        let rounded = raw.div_ceil(MIN_AUTO_CELLS) * MIN_AUTO_CELLS;
        rounded.clamp(MIN_AUTO_CELLS, MAX_AUTO_CELLS)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Cell width.
    pub fn h(&self) -> f64 {
        self.phase.len() / self.n as f64
    }

    pub fn cell_bounds(&self, i: usize) -> (f64, f64) {
        debug_assert!(i < self.n);
        let h = self.h();
        let lo = self.phase.lo() + i as f64 * h;
        (lo, lo + h)
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        let (lo, hi) = self.cell_bounds(i);
        0.5 * (lo + hi)
    }

    /// Cell containing x (x reduced first; the right endpoint belongs to the
    /// last cell on an interval phase).
    pub fn index_of(&self, x: f64) -> usize {
        let x = self.phase.reduce(x);
        let t = (x - self.phase.lo()) / self.h();
        (t.floor() as usize).min(self.n - 1)
    }

    /// Fraction of each cell covered by the hole, in [0, 1].
    pub fn hole_overlap_fractions(&self, hole: &Hole) -> Vec<f64> {
        let h = self.h();
        (0..self.n)
            .map(|i| {
                let cell = self.cell_bounds(i);
                (hole.overlap_len(&self.phase, cell) / h).clamp(0.0, 1.0)
            })
            .collect()
    }
}

/// Piecewise-constant density (or signed function) on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    grid: Grid,
    values: Vec<f64>,
}

impl Density {
    pub fn new(grid: Grid, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len(), "value count must match the grid");
        Density { grid, values }
    }

    /// The uniform probability density.
    pub fn uniform(grid: Grid) -> Self {
        let v = 1.0 / grid.phase().len();
        Density {
            grid,
            values: vec![v; grid.len()],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Density {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Signed total mass: integral of the values.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.h()
    }

    pub fn l1_norm(&self) -> f64 {
        l1(&self.grid, &self.values)
    }

    pub fn variation(&self) -> f64 {
        variation(&self.grid, &self.values)
    }

    pub fn bv_norm(&self) -> f64 {
        bv(&self.grid, &self.values)
    }

    /// Scale so the total mass is 1. Returns false (leaving the values
    /// untouched) when the mass is too small to divide by.
    pub fn normalize(&mut self) -> bool {
        let m = self.mass();
        if m.abs() < 1e-300 {
            return false;
        }
        for v in &mut self.values {
            *v /= m;
        }
        true
    }
}

/// Integral of |v|.
pub fn l1(grid: &Grid, values: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), grid.len());
    values.iter().map(|v| v.abs()).sum::<f64>() * grid.h()
}

/// Sum of jumps between adjacent cells; on the circle the seam between the
/// last and first cell counts too.
pub fn variation(grid: &Grid, values: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), grid.len());
    let mut tv: f64 = values.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    if grid.phase().is_circle() {
        tv += (values[0] - values[values.len() - 1]).abs();
    }
    tv
}

/// Discrete bounded-variation norm: l1 + variation.
pub fn bv(grid: &Grid, values: &[f64]) -> f64 {
    l1(grid, values) + variation(grid, values)
}

/// ||a - b|| in the three norms at once: (l1, variation, bv).
pub fn distance_norms(grid: &Grid, a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    debug_assert_eq!(a.len(), b.len());
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let l = l1(grid, &diff);
    let tv = variation(grid, &diff);
    (l, tv, l + tv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle_grid(n: usize) -> Grid {
        Grid::new(n, Phase::Circle)
    }

    #[test]
    fn uniform_density_has_mass_one() {
        let d = Density::uniform(circle_grid(128));
        assert!((d.mass() - 1.0).abs() < 1e-14);
        assert!((d.l1_norm() - 1.0).abs() < 1e-14);
        assert_eq!(d.variation(), 0.0);
    }

    #[test]
    fn half_indicator_norms_on_circle() {
        // Density 2 on [0, 1/2), 0 on [1/2, 1): mass 1, two jumps of size 2.
        let g = circle_grid(64);
        let vals: Vec<f64> = (0..64).map(|i| if i < 32 { 2.0 } else { 0.0 }).collect();
        let d = Density::new(g, vals);
        assert!((d.l1_norm() - 1.0).abs() < 1e-14);
        assert!((d.variation() - 4.0).abs() < 1e-14);
        assert!((d.bv_norm() - 5.0).abs() < 1e-14);
    }

    #[test]
    fn half_indicator_norms_on_interval() {
        // Same shape on [0, 1] without wrap: only the interior jump counts.
        let g = Grid::new(64, Phase::Interval { lo: 0.0, hi: 1.0 });
        let vals: Vec<f64> = (0..64).map(|i| if i < 32 { 2.0 } else { 0.0 }).collect();
        let d = Density::new(g, vals);
        assert!((d.variation() - 2.0).abs() < 1e-14);
        assert!((d.bv_norm() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn index_and_bounds_roundtrip() {
        let g = circle_grid(100);
        for i in 0..100 {
            assert_eq!(g.index_of(g.cell_center(i)), i);
        }
        assert_eq!(g.index_of(0.9999999), 99);
        assert_eq!(g.index_of(1.0), 0); // wraps on the circle
        let gi = Grid::new(50, Phase::Interval { lo: 0.2, hi: 0.8 });
        assert_eq!(gi.index_of(0.8), 49); // right endpoint clamps
        assert_eq!(gi.index_of(0.2), 0);
    }

    #[test]
    fn hole_fractions_sum_to_hole_measure() {
        let g = circle_grid(1000);
        let hole = Hole { center: 0.0, radius: 0.0137 };
        let fr = g.hole_overlap_fractions(&hole);
        let total: f64 = fr.iter().sum::<f64>() * g.h();
        assert!((total - 2.0 * 0.0137).abs() < 1e-12);
        // Wrapping hole covers cells at both ends of the index range.
        assert!(fr[0] > 0.0 && fr[999] > 0.0);
        assert!(fr.iter().all(|&f| (0.0..=1.0).contains(&f)));
    }

    #[test]
    fn auto_size_tracks_smallest_scale() {
        assert_eq!(Grid::auto_size(0.02, 0.01, Phase::Circle), 512);
        assert_eq!(Grid::auto_size(0.001, 0.0, Phase::Circle), 4096);
        assert_eq!(Grid::auto_size(1e-5, 0.01, Phase::Circle), 65_536);
        assert_eq!(Grid::auto_size(0.0, 0.0, Phase::Circle), 4096);
        // h must end up <= scale / 4.
        let n = Grid::auto_size(0.003, 0.0, Phase::Circle);
        assert!(1.0 / n as f64 <= 0.003 / 4.0);
    }

    #[test]
    fn normalize_rescales_mass() {
        let g = circle_grid(32);
        let mut d = Density::new(g, vec![3.0; 32]);
        assert!(d.normalize());
        assert!((d.mass() - 1.0).abs() < 1e-14);
        let mut z = Density::zeros(g);
        assert!(!z.normalize());
    }
}
