//! Reconfigurable-intelligent-surface phase design for source localization.
//!
//! The crate builds a three-dimensional localization scene (one RIS, one
//! agent, several anchors, electromagnetic interference reflected by the
//! surface), evaluates the Cramér-Rao bound of the agent position as a
//! function of the RIS reflection coefficients, and minimizes it over the
//! complex circle manifold with Riemannian conjugate gradients and
//! regularized nonlinear acceleration.
//!
//! * [`scene`]: geometry, channels, EMI correlation, noise power.
//! * [`fisher`]: Fisher information, Schur complement, CRB and its gradient.
//! * [`manifold`]: projection, retraction and inverse retraction.
//! * [`optimizer`]: conjugate-gradient descent and acceleration.
//! * [`harness`]: experiment runners, baselines, Monte-Carlo checks, CSV output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fisher;
pub mod harness;
pub mod linalg;
pub mod manifold;
pub mod optimizer;
pub mod scene;

pub use error::{Error, Result};
pub use fisher::{CrbProblem, FimBundle, GradientMode, NoiseModel};
pub use manifold::{PhaseProfile, TangentVec};
pub use optimizer::{accelerated_run, rgd, ExitStatus, Objective, OptimizerConfig, RunOutcome};
pub use scene::{Scene, SceneConfig};
