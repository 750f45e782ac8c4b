//! Numerical laboratory for piecewise expanding circle and interval maps in
//! which a small neighborhood of a marked point is replaced by a contracting
//! profile (a "hole" hosting a sink), evolving under bounded additive noise.
//!
//! The crate provides:
//!
//! - exact piecewise map models with validation ([`maps`]),
//! - Ulam discretizations of the annealed transfer operator, its conditioned
//!   (hole-avoiding) variant, and a two-regime composite ([`operators`]),
//! - stationary and quasi-stationary densities by power iteration, stationary
//!   reconstruction from the composite fixed point, and operator-norm
//!   diagnostics ([`spectral`]),
//! - set-valued reachability (hole return times), kink-avoidance checks,
//!   Lyapunov exponents and closed-form gap predictions ([`observables`]),
//! - bitwise-reproducible Monte Carlo cross-validation ([`montecarlo`]).
//!
//! Everything numerical is closed-form or linear-algebraic: no quadrature, no
//! generic eigensolvers, no hidden tolerances.

pub mod grid;
pub mod maps;
pub mod montecarlo;
pub mod observables;
pub mod operators;
pub mod phase;
pub mod spectral;

pub use grid::{bv, distance_norms, l1, variation, Density, Grid, MIN_CELLS};
pub use maps::{
    build_map, AdmissibilityReport, AffineBranch, BaseMap, Formula, HoleProfile, HoleSpec,
    MapBuildError, MapModel, MapSpec, NoiseModel, Piece, SinkInfo, SinkOrder,
};
pub use montecarlo::{
    killed_ensemble, simulate_histogram, simulate_lyapunov, HistogramRun, KilledRun,
    LyapunovSample, SimConfig, SimError,
};
pub use observables::{
    fit_power_law, gap_cap, gap_time, images_avoid_kinks, lyapunov_exponent,
    sink_gap_prediction, FitError, GapPrediction, GapStep, GapTime, IntervalUnion,
    KinkAvoidance, LyapunovEstimate, PowerLawFit,
};
pub use operators::{
    assemble_transfer, CompositeOperator, Operator, OperatorError, SparseMatrix,
    TransferOperator,
};
pub use phase::{Hole, Phase};
pub use spectral::{
    difference_norm_bound, difference_norm_estimate, qsd_eigenpair, reconstruct_stationary,
    resolvent_norm_estimate, stationary_density, variation_contraction_estimate, ProbeOptions,
    Reconstruction, SolverOptions, SpectralError, SpectralResult,
};
