//! Riemannian conjugate-gradient descent on the complex circle manifold,
//! with an optional regularized nonlinear acceleration wrapper.

mod cg;
mod rna;

use std::time::Duration;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::CrbProblem;
use crate::manifold::PhaseProfile;

pub use cg::{armijo_step, cg_direction, rgd, LineSearchStep, StepLength};
pub use rna::{accelerated_run, rna_average, rna_weights, AccelWindow, RnaWeights};

/// A smooth real function of a phase profile.
pub trait Objective {
    fn value(&self, w: &PhaseProfile) -> Result<f64>;

    /// Value and Wirtinger gradient `d f / d conj(w)`.
    fn value_and_gradient(&self, w: &PhaseProfile) -> Result<(f64, DVector<Complex64>)>;
}

impl Objective for CrbProblem<'_> {
    fn value(&self, w: &PhaseProfile) -> Result<f64> {
        self.crb(w)
    }

    fn value_and_gradient(&self, w: &PhaseProfile) -> Result<(f64, DVector<Complex64>)> {
        CrbProblem::value_and_gradient(self, w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmijoConfig {
    /// First trial step. `None` means `1 / ||grad||`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_step: Option<f64>,
    pub initial_rule: InitialStep,
    pub shrink: f64,
    pub c1: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoConfig {
    fn default() -> Self {
        ArmijoConfig {
            initial_step: None,
            initial_rule: InitialStep::default(),
            shrink: 0.5,
            c1: 1e-4,
            max_backtracks: 50,
        }
    }
}

/// How the first Armijo trial step is chosen when no fixed step is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialStep {
    /// `1 / ||grad||`.
    #[default]
    InverseGradNorm,
    /// Step length of the previous iteration, doubled when it was accepted
    /// without backtracking; the first trial has unit length.
    Adaptive,
}

/// What the acceleration residuals are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSource {
    /// `-grad f(w_i)`, i.e. a gradient step with a step size common to the
    /// whole window.
    #[default]
    Gradient,
    /// `-eta_i grad f(w_i)` with the Armijo step of each iteration.
    StepScaledGradient,
    /// The CG search vectors `eta_i mu_i` actually taken.
    SearchVector,
}

/// How the stopping threshold on `||grad f||` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Tolerance {
    /// `epsilon`.
    Absolute,
    /// `epsilon * ||grad f(w_0)||` for the starting point of the run.
    #[default]
    RelativeToInitial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Stop once `||grad f||` falls below the threshold set by [`Self::tolerance`].
    pub epsilon: f64,
    pub tolerance: Tolerance,
    pub memory_depth: usize,
    pub lambda_reg: f64,
    /// Scale `lambda_reg` by the norm of the residual Gram matrix.
    pub lambda_relative: bool,
    pub armijo: ArmijoConfig,
    /// Iteration budget. Accepted acceleration points count as iterations.
    pub max_outer_iters: usize,
    pub acceleration_enabled: bool,
    pub rng_seed: u64,
    /// Floor the Polak-Ribiere coefficient at zero.
    pub pr_plus: bool,
    /// Only accept an accelerated point that does not worsen the objective.
    pub accel_safeguard: bool,
    pub residuals: ResidualSource,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            epsilon: 1e-3,
            tolerance: Tolerance::RelativeToInitial,
            memory_depth: 5,
            lambda_reg: 1e-7,
            lambda_relative: true,
            armijo: ArmijoConfig::default(),
            max_outer_iters: 500,
            acceleration_enabled: true,
            rng_seed: 1,
            pr_plus: true,
            accel_safeguard: true,
            residuals: ResidualSource::Gradient,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if self.memory_depth == 0 {
            return Err(Error::config("memory_depth must be at least 1"));
        }
        if !(self.lambda_reg >= 0.0) {
            return Err(Error::config("lambda_reg must be non-negative"));
        }
        let a = &self.armijo;
        if !(a.shrink > 0.0 && a.shrink < 1.0) {
            return Err(Error::config("armijo.shrink must lie in (0, 1)"));
        }
        if !(a.c1 > 0.0 && a.c1 < 1.0) {
            return Err(Error::config("armijo.c1 must lie in (0, 1)"));
        }
        if let Some(s) = a.initial_step {
            if !(s > 0.0) {
                return Err(Error::config("armijo.initial_step must be positive"));
            }
        }
        Ok(())
    }

    /// Gradient-norm threshold for a run whose first gradient norm is `g0`.
    pub fn threshold(&self, g0: f64) -> f64 {
        match self.tolerance {
            Tolerance::Absolute => self.epsilon,
            Tolerance::RelativeToInitial => self.epsilon * g0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Converged,
    MaxIters,
    LineSearchFailed,
    DegenerateScene,
}

impl ExitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExitStatus::Converged => "converged",
            ExitStatus::MaxIters => "max_iters",
            ExitStatus::LineSearchFailed => "line_search_failed",
            ExitStatus::DegenerateScene => "degenerate_scene",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccelFlag {
    #[default]
    None,
    /// Row is an accepted accelerated point.
    Accepted,
    /// The window ending at this row produced a point that was rejected.
    Rejected,
    /// The window ending at this row could not be averaged (guard or
    /// conditioning failure).
    Skipped,
}

impl AccelFlag {
    pub fn code(self) -> u8 {
        match self {
            AccelFlag::None => 0,
            AccelFlag::Accepted => 1,
            AccelFlag::Rejected => 2,
            AccelFlag::Skipped => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub f: f64,
    pub grad_norm: f64,
    /// Accepted step size (0 on the first row and on accelerated points).
    pub step: f64,
    pub accel: AccelFlag,
    /// Time since the start of the run. Never written to files.
    pub elapsed: Duration,
}

impl TraceRow {
    pub fn rcrb(&self) -> f64 {
        self.f.sqrt()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerTrace {
    pub rows: Vec<TraceRow>,
}

impl OptimizerTrace {
    /// Number of iterations taken (rows after the initial one).
    pub fn iterations(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    pub fn final_f(&self) -> Option<f64> {
        self.rows.last().map(|r| r.f)
    }

    /// First iteration whose objective is at or below `target`.
    pub fn iterations_to_reach(&self, target: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.f <= target).map(|r| r.iteration)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Last accepted iterate (the best one seen for monotone runs).
    pub w: PhaseProfile,
    pub f: f64,
    pub grad_norm: f64,
    pub status: ExitStatus,
    pub trace: OptimizerTrace,
}
