//! Discrete geodesics under the pullback metric `G = J_gᵀ J_g` of a decoder.
//!
//! A curve `z_0..z_T` is bent towards a geodesic by Armijo gradient descent on
//! the discrete energy with fixed endpoints. The differential-geometric
//! quantities in [`geometry`] serve as an independent check on the result.

mod curve;
pub mod geometry;
mod solver;

pub use curve::{
    curve_length, curve_stats, decode_curve, discrete_energy, segment_lengths, speed_variation, CurveStats,
    LatentCurve,
};
pub use geometry::{christoffel_symbols, geodesic_ode_residual, metric_tensor, Christoffel, MetricEval};
pub use solver::{
    energy_and_gradient, energy_gradient, geodesic_solve, geodesic_solve_multilevel, solve_from, GeodesicReport,
    GradientMode, SolverOptions, StopReason, PLATEAU_WINDOW,
};

/// Central-difference step for metric derivatives.
pub const CHRISTOFFEL_STEP: f64 = 1e-4;

/// Default segment count for attribution paths.
pub const ATTRIBUTION_STEPS: usize = 16;

/// Default segment count for geometry validation.
pub const VALIDATION_STEPS: usize = 64;
