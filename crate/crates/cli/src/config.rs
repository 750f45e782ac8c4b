//! Run configuration: a TOML file plus command-line overrides expands into a
//! validated, ordered list of sweep points.
//!
//! Validation is strict and happens before any computation: every
//! (sigma, delta) pair must build a valid map, every explicit grid must
//! resolve the smallest length scale, and malformed values are rejected with
//! a message naming the offending key. A failed validation means nothing has
//! run and nothing has been written.

use std::fmt;
use std::path::PathBuf;

use holelab_core::{build_map, BaseMap, MapSpec, NoiseModel, Phase, SolverOptions, MIN_CELLS};
use serde::Deserialize;

/// Rejected before execution; the CLI maps this to exit code 2.
#[derive(Debug, Clone)]
pub struct PlanError(pub String);

impl fmt::Display for PlanError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid plan: {}", self.0)
    }
}

impl std::error::Error for PlanError {}

fn err<T>(msg: impl Into<String>) -> Result<T, PlanError> {
    Err(PlanError(msg.into()))
}

/// A scalar, an explicit list, or a generated range of parameter values.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ValueSpec {
    Scalar(f64),
    List(Vec<f64>),
    Range(RangeSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Geometric,
    Linear,
}

impl ValueSpec {
    /// Command-line forms: `0.02`, `0.04,0.02,0.01`,
    /// `geom:1e-4:1e-1:12`, `lin:0:1:5`.
    pub fn parse_cli(text: &str) -> Result<ValueSpec, PlanError> {
        let range = |spacing, rest: &str| -> Result<ValueSpec, PlanError> {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 3 {
                return err(format!(
                    "range '{text}' must look like start:stop:points after the prefix"
                ));
            }
            let start = parse_f64(parts[0])?;
            let stop = parse_f64(parts[1])?;
            let points = parts[2]
                .parse::<usize>()
                .map_err(|_| PlanError(format!("bad point count in range '{text}'")))?;
            Ok(ValueSpec::Range(RangeSpec {
                start,
                stop,
                points,
                spacing,
            }))
        };
        if let Some(rest) = text.strip_prefix("geom:") {
            return range(Spacing::Geometric, rest);
        }
        if let Some(rest) = text.strip_prefix("lin:") {
            return range(Spacing::Linear, rest);
        }
        if text.contains(',') {
            let vals = text
                .split(',')
                .map(parse_f64)
                .collect::<Result<Vec<f64>, _>>()?;
            return Ok(ValueSpec::List(vals));
        }
        Ok(ValueSpec::Scalar(parse_f64(text)?))
    }

    pub fn expand(&self, key: &str) -> Result<Vec<f64>, PlanError> {
        let values = match self {
            ValueSpec::Scalar(v) => vec![*v],
            ValueSpec::List(vs) => vs.clone(),
            ValueSpec::Range(r) => {
                if r.points == 0 {
                    return err(format!("{key}: range needs at least one point"));
                }
                if r.points == 1 {
                    vec![r.start]
                } else {
                    let m = (r.points - 1) as f64;
                    match r.spacing {
                        Spacing::Geometric => {
                            if r.start <= 0.0 || r.stop <= 0.0 {
                                return err(format!(
                                    "{key}: geometric range needs positive endpoints"
                                ));
                            }
                            let ratio = (r.stop / r.start).ln();
                            (0..r.points)
                                .map(|i| r.start * (ratio * i as f64 / m).exp())
                                .collect()
                        }
                        Spacing::Linear => (0..r.points)
                            .map(|i| r.start + (r.stop - r.start) * i as f64 / m)
                            .collect(),
                    }
                }
            }
        };
        if values.is_empty() {
            return err(format!("{key}: empty value list"));
        }
        for v in &values {
            if !v.is_finite() || *v < 0.0 {
                return err(format!("{key}: values must be finite and nonnegative"));
            }
        }
        Ok(values)
    }
}

fn parse_f64(s: &str) -> Result<f64, PlanError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| PlanError(format!("'{s}' is not a number")))
}

/// Grid resolution: automatic, one size, or a list of sizes.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Cells(u64),
    List(Vec<u64>),
    Word(String),
}

impl GridSpec {
    pub fn parse_cli(text: &str) -> Result<GridSpec, PlanError> {
        if text == "auto" {
            return Ok(GridSpec::Word("auto".into()));
        }
        if text.contains(',') {
            let vals = text
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|_| PlanError(format!("'{s}' is not a grid size")))
                })
                .collect::<Result<Vec<u64>, _>>()?;
            return Ok(GridSpec::List(vals));
        }
        text.parse::<u64>()
            .map(GridSpec::Cells)
            .map_err(|_| PlanError(format!("grid must be 'auto' or cell counts, got '{text}'")))
    }

    /// None means "choose from the point's length scales".
    fn expand(&self) -> Result<Vec<Option<usize>>, PlanError> {
        match self {
            GridSpec::Word(w) if w == "auto" => Ok(vec![None]),
            GridSpec::Word(w) => err(format!("grid must be 'auto' or cell counts, got '{w}'")),
            GridSpec::Cells(n) => Ok(vec![Some(*n as usize)]),
            GridSpec::List(ns) => {
                if ns.is_empty() {
                    return err("grid: empty list");
                }
                Ok(ns.iter().map(|n| Some(*n as usize)).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    Scalar(u64),
    List(Vec<u64>),
}

impl SeedSpec {
    pub fn parse_cli(text: &str) -> Result<SeedSpec, PlanError> {
        if text.contains(',') {
            let vals = text
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|_| PlanError(format!("'{s}' is not a seed")))
                })
                .collect::<Result<Vec<u64>, _>>()?;
            return Ok(SeedSpec::List(vals));
        }
        text.parse::<u64>()
            .map(SeedSpec::Scalar)
            .map_err(|_| PlanError(format!("'{text}' is not a seed")))
    }

    fn expand(&self) -> Result<Vec<u64>, PlanError> {
        match self {
            SeedSpec::Scalar(s) => Ok(vec![*s]),
            SeedSpec::List(ss) if ss.is_empty() => err("seed: empty list"),
            SeedSpec::List(ss) => Ok(ss.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Cartesian product, sigma outermost, then delta, grid, seed.
    #[default]
    Product,
    /// Walk all lists in lockstep (length-1 lists broadcast).
    Zip,
}

impl Pairing {
    pub fn parse_cli(text: &str) -> Result<Pairing, PlanError> {
        match text {
            "product" => Ok(Pairing::Product),
            "zip" => Ok(Pairing::Zip),
            other => err(format!("pairing must be 'product' or 'zip', got '{other}'")),
        }
    }
}

/// Map selection: a family name, or a table with sink parameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MapKey {
    Name(String),
    Table(MapTable),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapTable {
    pub family: String,
    pub center: Option<f64>,
    pub order: Option<f64>,
}

/// Resolved map family. `delta` stays a sweep parameter; everything else is
/// fixed per plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MapKind {
    /// Plain angle doubling (no hole; delta must be 0).
    Doubling,
    /// Plain symmetric tent (no hole; delta must be 0).
    Tent,
    /// Doubling with the fixed point at 0 flattened over the inner half of
    /// the hole, affine connectors on the flanks.
    DoublingFlat,
    /// Tent with the turning point at 1/2 flattened across the whole hole.
    TentFlat,
    /// Doubling with a power-profile sink of the given order at `center`.
    DoublingSink { center: f64, order: f64 },
}

impl MapKind {
    pub fn parse(
        family: &str,
        center: Option<f64>,
        order: Option<f64>,
    ) -> Result<MapKind, PlanError> {
        let kind = match family {
            "doubling" => MapKind::Doubling,
            "tent" => MapKind::Tent,
            "doubling-flat" => MapKind::DoublingFlat,
            "tent-flat" => MapKind::TentFlat,
            "doubling-sink" => {
                let order = order.unwrap_or(2.0);
                if !(order >= 1.0) {
                    return err(format!("doubling-sink order must be >= 1, got {order}"));
                }
                return Ok(MapKind::DoublingSink {
                    center: center.unwrap_or(0.0),
                    order,
                });
            }
            other => {
                return err(format!(
                    "unknown map '{other}' (expected doubling, tent, doubling-flat, \
                     tent-flat, or doubling-sink)"
                ))
            }
        };
        if center.is_some() || order.is_some() {
            return err(format!(
                "map '{family}' takes no center/order parameters"
            ));
        }
        Ok(kind)
    }

    pub fn label(&self) -> &'static str {
        match self {
            MapKind::Doubling => "doubling",
            MapKind::Tent => "tent",
            MapKind::DoublingFlat => "doubling-flat",
            MapKind::TentFlat => "tent-flat",
            MapKind::DoublingSink { .. } => "doubling-sink",
        }
    }

    /// Concrete map description at one hole radius.
    pub fn spec(&self, delta: f64) -> Result<MapSpec, PlanError> {
        let plain = |name: &str, base| MapSpec {
            name: name.to_string(),
            base,
            phase: Phase::Circle,
            hole: None,
        };
        match *self {
            MapKind::Doubling => {
                if delta != 0.0 {
                    err("map 'doubling' has no hole profile; use delta = 0 or pick \
                         doubling-flat / doubling-sink")
                } else {
                    Ok(plain("doubling", BaseMap::Doubling))
                }
            }
            MapKind::Tent => {
                if delta != 0.0 {
                    err("map 'tent' has no hole profile; use delta = 0 or pick tent-flat")
                } else {
                    Ok(plain("tent", BaseMap::Tent))
                }
            }
            MapKind::DoublingFlat => Ok(MapSpec::doubling_flat(delta)),
            MapKind::TentFlat => Ok(MapSpec::tent_flat(delta)),
            MapKind::DoublingSink { center, order } => {
                if delta == 0.0 {
                    Ok(plain("doubling", BaseMap::Doubling))
                } else {
                    Ok(MapSpec::doubling_power_sink(center, delta, order))
                }
            }
        }
    }
}

/// Everything the TOML file may set. Top-level keys only; unknown keys are
/// rejected so typos fail loudly.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub map: Option<MapKey>,
    pub sigma: Option<ValueSpec>,
    pub delta: Option<ValueSpec>,
    pub grid: Option<GridSpec>,
    pub seed: Option<SeedSpec>,
    pub pairing: Option<Pairing>,
    pub output: Option<String>,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub diagnostics: Option<bool>,
    pub steps: Option<u64>,
    pub burn_in: Option<u64>,
    pub particles: Option<usize>,
    pub kill: Option<bool>,
    pub export_matrix: Option<String>,
}

impl FileConfig {
    pub fn from_path(path: &std::path::Path) -> Result<FileConfig, PlanError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PlanError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| PlanError(format!("cannot parse config {}: {e}", path.display())))
    }
}

/// Command-line overrides; any set field wins over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub map: Option<String>,
    pub sigma: Option<String>,
    pub delta: Option<String>,
    pub grid: Option<String>,
    pub seed: Option<String>,
    pub pairing: Option<String>,
    pub output: Option<PathBuf>,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub diagnostics: bool,
    pub steps: Option<u64>,
    pub burn_in: Option<u64>,
    pub particles: Option<usize>,
    pub kill: bool,
    pub export_matrix: Option<PathBuf>,
}

/// One unit of work: a fully resolved parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub sigma: f64,
    pub delta: f64,
    /// None: auto-size from the smallest length scale.
    pub cells: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    /// Recorded steps per particle (burn-in not included).
    pub steps: u64,
    pub burn_in: u64,
    pub particles: usize,
    pub kill: bool,
}

/// A validated, fully expanded run description.
#[derive(Debug, Clone)]
pub struct Plan {
    pub map: MapKind,
    pub points: Vec<Point>,
    pub solver: SolverOptions,
    pub diagnostics: bool,
    pub output: Option<PathBuf>,
    pub sim: SimSettings,
    pub export_matrix: Option<PathBuf>,
}

impl Plan {
    /// Subcommands that write one profile need exactly one point.
    pub fn single_point(&self, what: &str) -> Result<Point, PlanError> {
        if self.points.len() != 1 {
            return err(format!(
                "{what} needs a single parameter point, but the plan expands to {} \
                 (lists/ranges belong to `sweep` and `lyapunov`)",
                self.points.len()
            ));
        }
        Ok(self.points[0])
    }
}

/// Merge, expand, and validate. Nothing runs if this fails.
pub fn build_plan(file: FileConfig, over: &Overrides) -> Result<Plan, PlanError> {
    let map = match (&over.map, &file.map) {
        (Some(name), _) => MapKind::parse(name, None, None)?,
        (None, Some(MapKey::Name(name))) => MapKind::parse(name, None, None)?,
        (None, Some(MapKey::Table(t))) => MapKind::parse(&t.family, t.center, t.order)?,
        (None, None) => return err("no map selected (set `map` in the config or pass --map)"),
    };

    let sigma_spec = match &over.sigma {
        Some(text) => ValueSpec::parse_cli(text)?,
        None => file
            .sigma
            .clone()
            .ok_or_else(|| PlanError("no sigma specified".into()))?,
    };
    let delta_spec = match &over.delta {
        Some(text) => ValueSpec::parse_cli(text)?,
        None => file.delta.clone().unwrap_or(ValueSpec::Scalar(0.0)),
    };
    let grid_spec = match &over.grid {
        Some(text) => GridSpec::parse_cli(text)?,
        None => file.grid.clone().unwrap_or(GridSpec::Word("auto".into())),
    };
    let seed_spec = match &over.seed {
        Some(text) => SeedSpec::parse_cli(text)?,
        None => file.seed.clone().unwrap_or(SeedSpec::Scalar(0)),
    };
    let pairing = match &over.pairing {
        Some(text) => Pairing::parse_cli(text)?,
        None => file.pairing.unwrap_or_default(),
    };

    let sigmas = sigma_spec.expand("sigma")?;
    let deltas = delta_spec.expand("delta")?;
    let grids = grid_spec.expand()?;
    let seeds = seed_spec.expand()?;
    let points = expand_points(pairing, &sigmas, &deltas, &grids, &seeds)?;

    let tolerance = over.tolerance.or(file.tolerance).unwrap_or(1e-12);
    if !(tolerance > 0.0) {
        return err(format!("tolerance must be positive, got {tolerance}"));
    }
    let max_iterations = over
        .max_iterations
        .or(file.max_iterations)
        .unwrap_or(1_000_000);
    if max_iterations == 0 {
        return err("max_iterations must be at least 1");
    }
    let solver = SolverOptions {
        tolerance,
        max_iterations,
    };

    let kill = over.kill || file.kill.unwrap_or(false);
    let particles = over
        .particles
        .or(file.particles)
        .unwrap_or(if kill { 1_000 } else { 64 });
    if kill && particles < 100 {
        return err(format!(
            "killed runs need at least 100 particles, got {particles}"
        ));
    }
    if kill && points.iter().any(|pt| pt.delta == 0.0) {
        return err("killed runs need a hole (delta > 0)");
    }
    if particles == 0 {
        return err("particles must be at least 1");
    }
    let steps = over.steps.or(file.steps).unwrap_or(100_000);
    if steps == 0 {
        return err("steps must be at least 1");
    }
    let sim = SimSettings {
        steps,
        burn_in: over.burn_in.or(file.burn_in).unwrap_or(1_000),
        particles,
        kill,
    };

    // Every point must build a valid map and resolve its length scales
    // before anything is allowed to run.
    for pt in &points {
        let label = format!("point sigma={} delta={}", pt.sigma, pt.delta);
        let spec = map.spec(pt.delta)?;
        let noise = NoiseModel::new(pt.sigma);
        let model =
            build_map(&spec, &noise).map_err(|e| PlanError(format!("{label}: {e}")))?;
        if let Some(cells) = pt.cells {
            if cells < MIN_CELLS {
                return err(format!("{label}: grid must have at least {MIN_CELLS} cells"));
            }
            let h = model.phase().len() / cells as f64;
            let mut scale = f64::INFINITY;
            if pt.sigma > 0.0 {
                scale = scale.min(pt.sigma);
            }
            if let Some(hole) = model.hole() {
                scale = scale.min(hole.radius);
            }
            if scale.is_finite() && h > scale / 4.0 {
                return err(format!(
                    "{label}: {cells} cells leave h = {h:.3e} > {:.3e} (a quarter of the \
                     smallest length scale); refine the grid or use 'auto'",
                    scale / 4.0
                ));
            }
        }
    }

    Ok(Plan {
        map,
        points,
        solver,
        diagnostics: over.diagnostics || file.diagnostics.unwrap_or(false),
        output: over
            .output
            .clone()
            .or_else(|| file.output.as_ref().map(PathBuf::from)),
        sim,
        export_matrix: over
            .export_matrix
            .clone()
            .or_else(|| file.export_matrix.as_ref().map(PathBuf::from)),
    })
}

fn expand_points(
    pairing: Pairing,
    sigmas: &[f64],
    deltas: &[f64],
    grids: &[Option<usize>],
    seeds: &[u64],
) -> Result<Vec<Point>, PlanError> {
    let mut points = Vec::new();
    match pairing {
        Pairing::Product => {
            for &sigma in sigmas {
                for &delta in deltas {
                    for &cells in grids {
                        for &seed in seeds {
                            points.push(Point {
                                sigma,
                                delta,
                                cells,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        Pairing::Zip => {
            let len = sigmas
                .len()
                .max(deltas.len())
                .max(grids.len())
                .max(seeds.len());
            let pick_f = |xs: &[f64], key: &str, i: usize| -> Result<f64, PlanError> {
                match xs.len() {
                    1 => Ok(xs[0]),
                    l if l == len => Ok(xs[i]),
                    l => err(format!(
                        "zip pairing: {key} has {l} values but the longest list has {len}"
                    )),
                }
            };
            for i in 0..len {
                let cells = match grids.len() {
                    1 => grids[0],
                    l if l == len => grids[i],
                    l => {
                        return err(format!(
                            "zip pairing: grid has {l} values but the longest list has {len}"
                        ))
                    }
                };
                let seed = match seeds.len() {
                    1 => seeds[0],
                    l if l == len => seeds[i],
                    l => {
                        return err(format!(
                            "zip pairing: seed has {l} values but the longest list has {len}"
                        ))
                    }
                };
                points.push(Point {
                    sigma: pick_f(sigmas, "sigma", i)?,
                    delta: pick_f(deltas, "delta", i)?,
                    cells,
                    seed,
                });
            }
        }
    }
    if points.is_empty() {
        return err("plan expands to zero points");
    }
    Ok(points)
}
