//! Local asymptotic minimax estimation of nondifferentiable parameters
//! `theta = f(g(beta))`, where `g` is a translation-scale equivariant map
//! and `f` is Lipschitz with finitely many kinks.
//!
//! The crate provides:
//!
//! * [`equivariant`]: the map algebra for `g` (max/min/affine trees),
//!   exact directional derivatives, and the plug-in derivative estimator;
//! * [`transform`]: piecewise-smooth outer maps `f`, the derivative
//!   envelope, the local derivative supremum, and the loss family;
//! * [`risk`]: Monte Carlo simulation of the worst-case risk curve and
//!   selection of the optimal bias adjustment;
//! * [`estimator`]: the end-to-end pipeline
//!   `theta_mx = f(g(beta~) + c_hat / sqrt(n))`;
//! * [`experiments`]: a simulation harness for worst-case risk tables,
//!   locally robustified sweeps, and risk-discontinuity curves.
//!
//! All randomness flows through counter-based streams keyed by
//! `(seed, counters...)`, so every result is reproducible bit for bit
//! regardless of the number of worker threads.

pub use nalgebra;

pub mod equivariant;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod gaussian;
pub mod risk;
pub mod stream;
pub mod transform;

pub use equivariant::{EquivariantMap, GHatEstimator, Node};
pub use error::{Error, Result};
pub use estimator::{
    estimate_from_data, estimate_from_moments, EfficientEstimate, EpsRule, EstimateReport,
};
pub use gaussian::GaussianLimit;
pub use risk::{
    oracle_b, oracle_curve, select_c_hat, simulate_b, EtaRule, GFn, RStrategy, RiskConfig,
    RiskCurve, SimulatedRisk,
};
pub use transform::{AHat, Loss, LossSpec, Piece, Transform, TransformSpec};
