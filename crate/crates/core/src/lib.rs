//! Probabilistic tubes for nonlinear stochastic systems.
//!
//! A probabilistic tube bounds, with probability at least `1 - δ`, how far a
//! stochastic trajectory strays from its noise-free companion over a whole
//! horizon. Eroding a safe set by the tube radius turns stochastic safety
//! verification into a deterministic containment check:
//!
//! ```text
//! x_t ∈ C ⊖ B(r_{δ,t}, 0)  for all t ≤ T   ⟹   P(X_t ∈ C, ∀ t ≤ T) ≥ 1 - δ
//! ```
//!
//! Module map:
//!
//! - [`model`]: system bounds, ε-constants, tube queries and curves.
//! - [`amgf`]: the averaged moment generating function and numeric checks of
//!   the inequalities the tube bounds rest on.
//! - [`tubes`]: all radius formulas, method selection and Δt tuning.
//! - [`geometry`]: safe sets, erosion, containment and margins.
//! - [`simulate`]: seeded Monte-Carlo ensembles that validate the bounds.
//! - [`verify`]: end-to-end verification with deterministic reach balls.
//! - [`cli`]: experiment configs and the `probtube` command implementations.

// Negated float comparisons throughout the crate are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amgf;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod model;
pub mod noise;
pub mod rng;
pub mod simulate;
pub mod stats;
pub mod tubes;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::{Constraint, ErodedSet, SafeSet};
pub use model::{
    CtSystemBounds, DtSystemBounds, EpsilonChoice, EpsilonConstants, SplitChoice, System,
    TubeCurve, TubeMethod, TubeQuery,
};
pub use noise::{CtNoise, DtNoise, NoiseModel};
pub use simulate::{deviation_stats, DisturbanceSignal, EnsembleConfig, Scenario, TrajectoryEnsemble};
pub use tubes::{optimize_split, select_radius, SplitObjective};
pub use verify::{verify_safety, ReachBall, SafetyProblem, Verdict, VerifyOptions};
