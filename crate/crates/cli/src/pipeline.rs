//! Per-point computation: build the map, assemble the operators, solve for
//! every density the point supports, and collect the observables into one
//! result row. Errors never abort a sweep — they land in the row's error
//! column.

use std::time::Instant;

use holelab_core::{
    assemble_transfer, build_map, bv, difference_norm_bound, difference_norm_estimate,
    distance_norms, gap_cap, gap_time, killed_ensemble, lyapunov_exponent, qsd_eigenpair,
    reconstruct_stationary, resolvent_norm_estimate, simulate_histogram, stationary_density,
    CompositeOperator, Grid, HistogramRun, IntervalUnion, KilledRun, MapModel, NoiseModel,
    ProbeOptions, SimConfig, SpectralError, TransferOperator,
};
use rayon::prelude::*;

use crate::config::{MapKind, Plan, Point, SimSettings};

/// CSV header of a sweep, in declared order.
pub const RESULT_COLUMNS: [&str; 20] = [
    "sigma",
    "delta",
    "n",
    "seed",
    "gap_steps",
    "lambda",
    "rho_qsd_l1",
    "rho_qsd_bv",
    "u_qsd_bv",
    "tail_l1",
    "tail_bv",
    "lyapunov",
    "lyapunov_gap",
    "resolvent_norm",
    "diff_norm_lower",
    "diff_norm_upper",
    "qsd_bv",
    "runtime_ms",
    "flags",
    "error",
];

/// Subset emitted by the `lyapunov` subcommand.
pub const LYAPUNOV_COLUMNS: [&str; 8] = [
    "sigma",
    "delta",
    "n",
    "seed",
    "lyapunov",
    "lyapunov_gap",
    "flags",
    "error",
];

/// Observables at one sweep point. Absent values (not applicable, or the
/// point failed first) serialize as empty CSV fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultRow {
    pub sigma: f64,
    pub delta: f64,
    pub n: Option<usize>,
    pub seed: u64,
    pub gap_steps: Option<u32>,
    pub lambda: Option<f64>,
    pub rho_qsd_l1: Option<f64>,
    pub rho_qsd_bv: Option<f64>,
    pub u_qsd_bv: Option<f64>,
    pub tail_l1: Option<f64>,
    pub tail_bv: Option<f64>,
    pub lyapunov: Option<f64>,
    pub lyapunov_gap: Option<f64>,
    pub resolvent_norm: Option<f64>,
    pub diff_norm_lower: Option<f64>,
    pub diff_norm_upper: Option<f64>,
    pub qsd_bv: Option<f64>,
    pub runtime_ms: u128,
    pub flags: Vec<&'static str>,
    pub error: Option<String>,
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ResultRow {
    pub fn to_record(&self) -> Vec<String> {
        vec![
            self.sigma.to_string(),
            self.delta.to_string(),
            self.n.map(|n| n.to_string()).unwrap_or_default(),
            self.seed.to_string(),
            self.gap_steps.map(|k| k.to_string()).unwrap_or_default(),
            fmt_opt_f64(self.lambda),
            fmt_opt_f64(self.rho_qsd_l1),
            fmt_opt_f64(self.rho_qsd_bv),
            fmt_opt_f64(self.u_qsd_bv),
            fmt_opt_f64(self.tail_l1),
            fmt_opt_f64(self.tail_bv),
            fmt_opt_f64(self.lyapunov),
            fmt_opt_f64(self.lyapunov_gap),
            fmt_opt_f64(self.resolvent_norm),
            fmt_opt_f64(self.diff_norm_lower),
            fmt_opt_f64(self.diff_norm_upper),
            fmt_opt_f64(self.qsd_bv),
            self.runtime_ms.to_string(),
            self.flags.join(";"),
            self.error.clone().unwrap_or_default(),
        ]
    }

    pub fn to_lyapunov_record(&self) -> Vec<String> {
        vec![
            self.sigma.to_string(),
            self.delta.to_string(),
            self.n.map(|n| n.to_string()).unwrap_or_default(),
            self.seed.to_string(),
            fmt_opt_f64(self.lyapunov),
            fmt_opt_f64(self.lyapunov_gap),
            self.flags.join(";"),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

/// All rows of a plan, computed concurrently, returned in plan order.
pub fn run_plan(plan: &Plan) -> Vec<ResultRow> {
    plan.points
        .par_iter()
        .map(|pt| run_point(plan.map, *pt, &plan.solver, plan.diagnostics))
        .collect()
}

pub fn run_point(
    map: MapKind,
    point: Point,
    solver: &holelab_core::SolverOptions,
    diagnostics: bool,
) -> ResultRow {
    let started = Instant::now();
    let mut row = ResultRow {
        sigma: point.sigma,
        delta: point.delta,
        seed: point.seed,
        ..ResultRow::default()
    };
    if let Err(message) = compute_row(map, point, solver, diagnostics, &mut row) {
        row.error = Some(message);
    }
    row.runtime_ms = started.elapsed().as_millis();
    log::info!(
        "point sigma={} delta={} n={:?}: {} in {} ms",
        point.sigma,
        point.delta,
        row.n,
        if row.error.is_some() { "failed" } else { "done" },
        row.runtime_ms
    );
    row
}

fn compute_row(
    map: MapKind,
    pt: Point,
    solver: &holelab_core::SolverOptions,
    diagnostics: bool,
    row: &mut ResultRow,
) -> Result<(), String> {
    let spec = map.spec(pt.delta).map_err(|e| e.0)?;
    let noise = NoiseModel::new(pt.sigma);
    let model = build_map(&spec, &noise).map_err(|e| e.to_string())?;
    let n = pt
        .cells
        .unwrap_or_else(|| Grid::auto_size(pt.sigma, pt.delta, model.phase()));
    row.n = Some(n);
    let grid = Grid::new(n, model.phase());
    let full = assemble_transfer(&model, grid, &noise).map_err(|e| e.to_string())?;
    let stat = stationary_density(&full, solver).map_err(|e| format!("stationary: {e}"))?;

    // The conditioned operator is the full one when there is no hole.
    let mut conditioned: Option<TransferOperator> = None;
    let mut lambda = 1.0;

    match model.hole() {
        None => {
            row.gap_steps = Some(0);
            row.lambda = Some(1.0);
            row.rho_qsd_l1 = Some(0.0);
            row.rho_qsd_bv = Some(0.0);
            row.qsd_bv = Some(bv(&grid, stat.density.values()));
        }
        Some(hole) => {
            let frac = grid.hole_overlap_fractions(&hole);
            let keep: Vec<f64> = frac.iter().map(|f| 1.0 - f).collect();
            let cond = full.mask_columns(&keep);
            let qsd = qsd_eigenpair(&cond, solver).map_err(|e| format!("conditioned: {e}"))?;
            lambda = qsd.eigenvalue;
            row.lambda = Some(lambda);
            let (dl1, _, dbv) =
                distance_norms(&grid, stat.density.values(), qsd.density.values());
            row.rho_qsd_l1 = Some(dl1);
            row.rho_qsd_bv = Some(dbv);
            row.qsd_bv = Some(bv(&grid, qsd.density.values()));

            let gt = gap_time(&model, &noise).expect("hole present");
            row.gap_steps = Some(gt.steps);
            if gt.cap_hit {
                row.flags.push("cap_hit");
            }

            // When the hole traps a fixed point, the stationary-vs-quasi-
            // stationary comparison above is the whole story. Otherwise mass
            // that enters the hole re-emerges after the gap time, and the
            // composite-operator route reconstructs the stationary density.
            if !hole_has_fixed_point(&model) {
                let composite = CompositeOperator::new(&full, &cond, &frac, gt.steps);
                let fixed = stationary_density(&composite, solver)
                    .map_err(|e| format!("composite: {e}"))?;
                let rec = reconstruct_stationary(&full, &frac, &fixed.density, gt.steps);
                let (_, _, ubv) =
                    distance_norms(&grid, fixed.density.values(), qsd.density.values());
                row.u_qsd_bv = Some(ubv);
                row.tail_l1 = Some(rec.tail_l1);
                row.tail_bv = Some(rec.tail_bv);
                if rec.defect_l1 > 1e-8 {
                    row.flags.push("reconstruction_defect");
                }
                let (recl1, _, _) =
                    distance_norms(&grid, rec.density.values(), stat.density.values());
                if recl1 > 1e-6 {
                    row.flags.push("reconstruction_mismatch");
                }
            }
            conditioned = Some(cond);
        }
    }

    let ly = lyapunov_exponent(&model, &stat.density);
    if ly.diverged {
        row.flags.push("lyapunov_diverged");
    }
    row.lyapunov = Some(ly.value());
    row.lyapunov_gap = model.base_lyapunov().map(|unperturbed| ly.value() - unperturbed);

    if diagnostics {
        let probes = ProbeOptions {
            seed: ProbeOptions::default().seed ^ pt.seed,
            ..ProbeOptions::default()
        };
        match resolvent_norm_estimate(&full, &probes) {
            Ok(a1) => row.resolvent_norm = Some(a1),
            Err(SpectralError::SingularResolvent { .. }) => {
                row.flags.push("singular_resolvent");
            }
            Err(e) => return Err(format!("resolvent probe: {e}")),
        }
        let cond_ref = conditioned.as_ref().unwrap_or(&full);
        row.diff_norm_lower = Some(difference_norm_estimate(&full, cond_ref, lambda, &probes));
        if pt.sigma > 0.0 {
            row.diff_norm_upper = Some(difference_norm_bound(pt.delta, pt.sigma, lambda));
        }
    }
    Ok(())
}

const FIXED_POINT_TOL: f64 = 1e-9;

/// Does the modified map fix any point of the hole? Decides whether the
/// composite-operator pipeline applies (it models mass that leaves the hole
/// again, which a trapped fixed point never does).
pub fn hole_has_fixed_point(model: &MapModel) -> bool {
    let hole = match model.hole() {
        Some(h) => h,
        None => return false,
    };
    let circle = model.phase().is_circle();
    let displacement = move |formula: &holelab_core::Formula, x: f64| {
        let d = formula.eval(x) - x;
        if circle {
            d - d.round()
        } else {
            d
        }
    };
    let (hlo, hhi) = hole.bounds();
    for (a, b, formula) in model.pieces_overlapping(hlo, hhi) {
        let samples = 1024;
        let mut x_prev = a;
        let mut w_prev = displacement(&formula, a);
        if w_prev.abs() < FIXED_POINT_TOL {
            return true;
        }
        for i in 1..=samples {
            let x = a + (b - a) * i as f64 / samples as f64;
            let w = displacement(&formula, x);
            if w.abs() < FIXED_POINT_TOL {
                return true;
            }
            // A bracketed sign change away from the wrap seam pins a root.
            if w_prev * w < 0.0 && w_prev.abs() < 0.25 && w.abs() < 0.25 {
                let (mut lo, mut hi, mut w_lo) = (x_prev, x, w_prev);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let wm = displacement(&formula, mid);
                    if wm.abs() < FIXED_POINT_TOL {
                        return true;
                    }
                    if w_lo * wm < 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                        w_lo = wm;
                    }
                }
            }
            x_prev = x;
            w_prev = w;
        }
    }
    false
}

/// Output of the `stationary`/`qsd` subcommands: one density profile plus
/// solver metadata.
pub struct DensityRun {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub eigenvalue: f64,
    pub residual: f64,
    pub iterations: usize,
    /// row,col,value triplets of the operator that was solved, when
    /// requested.
    pub matrix: Option<Vec<(usize, usize, f64)>>,
}

pub fn run_stationary(
    map: MapKind,
    pt: Point,
    solver: &holelab_core::SolverOptions,
    export_matrix: bool,
) -> Result<DensityRun, String> {
    let (model, grid, full) = assemble_point(map, pt)?;
    let _ = model;
    let res = stationary_density(&full, solver).map_err(|e| e.to_string())?;
    Ok(DensityRun {
        grid,
        values: res.density.values().to_vec(),
        eigenvalue: res.eigenvalue,
        residual: res.residual,
        iterations: res.iterations,
        matrix: export_matrix.then(|| nonzero_entries(&full)),
    })
}

fn nonzero_entries(op: &TransferOperator) -> Vec<(usize, usize, f64)> {
    op.matrix().entries().filter(|&(_, _, v)| v != 0.0).collect()
}

pub fn run_qsd(
    map: MapKind,
    pt: Point,
    solver: &holelab_core::SolverOptions,
    export_matrix: bool,
) -> Result<DensityRun, String> {
    let (model, grid, full) = assemble_point(map, pt)?;
    let cond = match model.hole() {
        Some(hole) => {
            let keep: Vec<f64> = grid
                .hole_overlap_fractions(&hole)
                .iter()
                .map(|f| 1.0 - f)
                .collect();
            full.mask_columns(&keep)
        }
        None => full,
    };
    let res = qsd_eigenpair(&cond, solver).map_err(|e| e.to_string())?;
    Ok(DensityRun {
        grid,
        values: res.density.values().to_vec(),
        eigenvalue: res.eigenvalue,
        residual: res.residual,
        iterations: res.iterations,
        matrix: export_matrix.then(|| nonzero_entries(&cond)),
    })
}

fn assemble_point(
    map: MapKind,
    pt: Point,
) -> Result<(MapModel, Grid, TransferOperator), String> {
    let spec = map.spec(pt.delta).map_err(|e| e.0)?;
    let noise = NoiseModel::new(pt.sigma);
    let model = build_map(&spec, &noise).map_err(|e| e.to_string())?;
    let n = pt
        .cells
        .unwrap_or_else(|| Grid::auto_size(pt.sigma, pt.delta, model.phase()));
    let grid = Grid::new(n, model.phase());
    let full = assemble_transfer(&model, grid, &noise).map_err(|e| e.to_string())?;
    Ok((model, grid, full))
}

/// Output of the `gap` subcommand: the reachable set after each noisy step.
pub struct GapRun {
    pub steps: u32,
    pub cap_hit: bool,
    /// (step, interval_lo, interval_hi) for every interval of every step.
    pub intervals: Vec<(u32, f64, f64)>,
}

pub fn run_gap(map: MapKind, pt: Point) -> Result<GapRun, String> {
    let spec = map.spec(pt.delta).map_err(|e| e.0)?;
    let noise = NoiseModel::new(pt.sigma);
    let model = build_map(&spec, &noise).map_err(|e| e.to_string())?;
    let hole = model
        .hole()
        .ok_or_else(|| "gap time needs a hole (delta > 0)".to_string())?;
    let gt = gap_time(&model, &noise).expect("hole present");

    // Re-run the same set iteration to record the interval endpoints.
    let (hlo, hhi) = hole.bounds();
    let mut set = IntervalUnion::from_lifted(model.phase(), hlo, hhi);
    let mut intervals = Vec::new();
    for step in 1..=gap_cap(hole.radius) {
        set = set.step(&model, noise.half_width);
        for &(lo, hi) in set.parts() {
            intervals.push((step, lo, hi));
        }
        if set.overlap_len(hole.bounds()) > 1e-12 {
            break;
        }
    }
    Ok(GapRun {
        steps: gt.steps,
        cap_hit: gt.cap_hit,
        intervals,
    })
}

/// Output of the `simulate` subcommand.
pub enum SimRun {
    Histogram(HistogramRun),
    Killed(KilledRun),
}

pub fn run_simulate(
    map: MapKind,
    pt: Point,
    sim: SimSettings,
) -> Result<(Grid, SimRun), String> {
    let spec = map.spec(pt.delta).map_err(|e| e.0)?;
    let noise = NoiseModel::new(pt.sigma);
    let model = build_map(&spec, &noise).map_err(|e| e.to_string())?;
    let n = pt
        .cells
        .unwrap_or_else(|| Grid::auto_size(pt.sigma, pt.delta, model.phase()));
    let grid = Grid::new(n, model.phase());
    let cfg = SimConfig {
        seed: pt.seed,
        steps: sim.steps,
        burn_in: sim.burn_in,
        ensemble_size: sim.particles,
    };
    let run = if sim.kill {
        if model.hole().is_none() {
            return Err("killed simulation needs a hole (delta > 0)".to_string());
        }
        SimRun::Killed(killed_ensemble(&model, &noise, grid, &cfg).map_err(|e| e.to_string())?)
    } else {
        SimRun::Histogram(
            simulate_histogram(&model, &noise, grid, &cfg).map_err(|e| e.to_string())?,
        )
    };
    Ok((grid, run))
}

#[cfg(test)]
mod tests {
    use super::*;
    use holelab_core::build_map;

    fn model_for(kind: MapKind, sigma: f64, delta: f64) -> MapModel {
        let spec = kind.spec(delta).unwrap();
        build_map(&spec, &NoiseModel::new(sigma)).unwrap()
    }

    #[test]
    fn flat_doubling_hole_traps_its_fixed_point() {
        let model = model_for(MapKind::DoublingFlat, 0.02, 0.02);
        assert!(hole_has_fixed_point(&model));
    }

    #[test]
    fn tent_hole_at_the_peak_is_transient() {
        let model = model_for(MapKind::TentFlat, 0.02, 0.01);
        assert!(!hole_has_fixed_point(&model));
    }

    #[test]
    fn sink_at_the_origin_traps_the_fixed_point() {
        let kind = MapKind::DoublingSink { center: 0.0, order: 2.0 };
        let model = model_for(kind, 0.01, 0.01);
        assert!(hole_has_fixed_point(&model));
    }

    #[test]
    fn sink_on_a_periodic_orbit_is_transient() {
        let kind = MapKind::DoublingSink { center: 1.0 / 7.0, order: 2.0 };
        let model = model_for(kind, 0.001, 0.005);
        assert!(!hole_has_fixed_point(&model));
    }

    #[test]
    fn no_hole_means_nothing_to_trap() {
        let model = model_for(MapKind::Doubling, 0.05, 0.0);
        assert!(!hole_has_fixed_point(&model));
    }

    #[test]
    fn rows_round_trip_through_their_record_form() {
        let row = ResultRow {
            sigma: 0.02,
            delta: 0.01,
            n: Some(512),
            seed: 7,
            gap_steps: Some(4),
            lambda: Some(0.978),
            lyapunov: Some(f64::NEG_INFINITY),
            flags: vec!["cap_hit", "lyapunov_diverged"],
            ..ResultRow::default()
        };
        let record = row.to_record();
        assert_eq!(record.len(), RESULT_COLUMNS.len());
        assert_eq!(record[0], "0.02");
        assert_eq!(record[4], "4");
        assert_eq!(record[11], "-inf");
        assert_eq!(record[18], "cap_hit;lyapunov_diverged");
        assert_eq!(record[19], "");
        let lyap = row.to_lyapunov_record();
        assert_eq!(lyap.len(), LYAPUNOV_COLUMNS.len());
        assert_eq!(lyap[4], "-inf");
    }
}
