use std::time::Instant;

use num_complex::Complex64;

use super::{AccelFlag, ExitStatus, InitialStep, Objective, OptimizerConfig, OptimizerTrace, RunOutcome, TraceRow};
use crate::error::{Error, Result};
use crate::manifold::{inner, project, retract, riemannian_grad, PhaseProfile, TangentVec};

/// A point with its objective value and Riemannian gradient.
#[derive(Debug, Clone)]
pub(crate) struct Iterate {
    pub w: PhaseProfile,
    pub f: f64,
    pub grad: TangentVec,
}

impl Iterate {
    pub fn grad_norm(&self) -> f64 {
        self.grad.norm()
    }
}

pub(crate) fn evaluate<O: Objective + ?Sized>(obj: &O, w: PhaseProfile) -> Result<Iterate> {
    let (f, egrad) = obj.value_and_gradient(&w)?;
    let grad = riemannian_grad(&w, &egrad);
    Ok(Iterate { w, f, grad })
}

/// Polak-Ribiere direction at `w_next`.
///
/// `grad_now` lives at `w_next`; `grad_prev` and `mu_prev` are projected into
/// `T_{w_next}` before use. Without history the direction is `-grad_now`.
/// With `pr_plus` the coefficient is floored at zero; a non-descent result
/// is always replaced by `-grad_now`.
pub fn cg_direction(
    grad_now: &TangentVec,
    grad_prev: Option<&TangentVec>,
    mu_prev: Option<&TangentVec>,
    w_next: &PhaseProfile,
    pr_plus: bool,
) -> TangentVec {
    let steepest = TangentVec {
        base: w_next.clone(),
        v: -&grad_now.v,
    };
    let (Some(gp), Some(mp)) = (grad_prev, mu_prev) else {
        return steepest;
    };
    let denom = inner(&gp.v, &gp.v);
    if denom <= 0.0 {
        return steepest;
    }
    let gp_t = project(w_next, &gp.v);
    let diff = &grad_now.v - &gp_t.v;
    let mut beta = inner(&grad_now.v, &diff) / denom;
    if pr_plus {
        beta = beta.max(0.0);
    }
    if !beta.is_finite() {
        return steepest;
    }
    let mp_t = project(w_next, &mp.v);
    let v = &steepest.v + &mp_t.v * Complex64::new(beta, 0.0);
    if inner(&v, &grad_now.v) >= 0.0 {
        return steepest;
    }
    TangentVec { base: w_next.clone(), v }
}

#[derive(Debug, Clone)]
pub struct LineSearchStep {
    pub eta: f64,
    pub w_next: PhaseProfile,
    pub f_next: f64,
    pub backtracks: usize,
}

/// Length of the first trial step, carried across iterations.
#[derive(Debug, Clone, Copy)]
pub struct StepLength {
    next: f64,
}

impl Default for StepLength {
    fn default() -> Self {
        StepLength { next: 1.0 }
    }
}

impl StepLength {
    /// First trial `eta` for direction `mu`.
    pub fn first_trial(&self, grad: &TangentVec, mu: &TangentVec, cfg: &OptimizerConfig) -> f64 {
        let a = &cfg.armijo;
        if let Some(s) = a.initial_step {
            return s;
        }
        match a.initial_rule {
            InitialStep::InverseGradNorm => 1.0 / grad.norm(),
            InitialStep::Adaptive => self.next / mu.norm(),
        }
    }

    /// Doubles the length after a first-try acceptance, otherwise keeps the
    /// accepted length.
    pub fn update(&mut self, ls: &LineSearchStep, mu: &TangentVec) {
        let taken = ls.eta * mu.norm();
        self.next = if ls.backtracks == 0 { 2.0 * taken } else { taken };
    }
}

/// Armijo backtracking along `retract(w, eta mu)` starting from `eta0`.
///
/// Trial points where the objective is degenerate or the retraction fails are
/// treated as rejected and the step is shrunk.
#[allow(clippy::too_many_arguments)]
pub fn armijo_step<O: Objective + ?Sized>(
    w: &PhaseProfile,
    f: f64,
    grad: &TangentVec,
    mu: &TangentVec,
    eta0: f64,
    obj: &O,
    cfg: &OptimizerConfig,
) -> Result<LineSearchStep> {
    let slope = inner(&grad.v, &mu.v);
    if !(slope < 0.0) {
        return Err(Error::NotDescent { slope });
    }
    let a = &cfg.armijo;
    let mut eta = eta0;
    for backtracks in 0..=a.max_backtracks {
        let step = &mu.v * Complex64::new(eta, 0.0);
        let trial = match retract(w, &step) {
            Ok(p) => Some(p),
            Err(Error::ZeroDenominator { .. }) => None,
            Err(e) => return Err(e),
        };
        if let Some(w_next) = trial {
            match obj.value(&w_next) {
                Ok(f_next) if f_next <= f + a.c1 * eta * slope => {
                    return Ok(LineSearchStep {
                        eta,
                        w_next,
                        f_next,
                        backtracks,
                    });
                }
                Ok(_) | Err(Error::DegenerateGeometry { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        eta *= a.shrink;
    }
    Err(Error::LineSearchFailed {
        backtracks: a.max_backtracks,
    })
}

/// Outcome of one conjugate-gradient step.
pub(crate) enum StepResult {
    Moved { next: Iterate, eta: f64, mu: TangentVec },
    Failed(ExitStatus),
}

pub(crate) fn cg_step<O: Objective + ?Sized>(
    obj: &O,
    cur: &Iterate,
    mu: TangentVec,
    length: &mut StepLength,
    cfg: &OptimizerConfig,
) -> Result<StepResult> {
    let eta0 = length.first_trial(&cur.grad, &mu, cfg);
    let ls = match armijo_step(&cur.w, cur.f, &cur.grad, &mu, eta0, obj, cfg) {
        Ok(ls) => {
            length.update(&ls, &mu);
            ls
        }
        Err(Error::LineSearchFailed { .. }) | Err(Error::NotDescent { .. }) => {
            return Ok(StepResult::Failed(ExitStatus::LineSearchFailed))
        }
        Err(e) => return Err(e),
    };
    let next = match evaluate(obj, ls.w_next) {
        Ok(it) => it,
        Err(Error::DegenerateGeometry { .. }) => return Ok(StepResult::Failed(ExitStatus::DegenerateScene)),
        Err(e) => return Err(e),
    };
    Ok(StepResult::Moved {
        next,
        eta: ls.eta,
        mu,
    })
}

/// Conjugate-gradient state carried between steps.
#[derive(Default)]
pub(crate) struct CgMemory {
    grad_prev: Option<TangentVec>,
    mu_prev: Option<TangentVec>,
}

impl CgMemory {
    pub fn direction(&self, cur: &Iterate, pr_plus: bool) -> TangentVec {
        cg_direction(
            &cur.grad,
            self.grad_prev.as_ref(),
            self.mu_prev.as_ref(),
            &cur.w,
            pr_plus,
        )
    }

    pub fn remember(&mut self, grad: TangentVec, mu: TangentVec) {
        self.grad_prev = Some(grad);
        self.mu_prev = Some(mu);
    }
}

pub(crate) struct Recorder {
    start: Instant,
    pub trace: OptimizerTrace,
}

impl Recorder {
    pub fn new() -> Self {
        Recorder {
            start: Instant::now(),
            trace: OptimizerTrace::default(),
        }
    }

    pub fn iterations(&self) -> usize {
        self.trace.iterations()
    }

    pub fn push(&mut self, it: &Iterate, step: f64, accel: AccelFlag) {
        let iteration = self.trace.rows.len();
        self.trace.rows.push(TraceRow {
            iteration,
            f: it.f,
            grad_norm: it.grad_norm(),
            step,
            accel,
            elapsed: self.start.elapsed(),
        });
    }

    pub fn mark_last(&mut self, accel: AccelFlag) {
        if let Some(r) = self.trace.rows.last_mut() {
            r.accel = accel;
        }
    }
}

pub(crate) fn is_stationary(it: &Iterate, threshold: f64) -> bool {
    let g = it.grad_norm();
    g < threshold || g == 0.0
}

pub(crate) fn degenerate_outcome(w: PhaseProfile) -> RunOutcome {
    RunOutcome {
        w,
        f: f64::INFINITY,
        grad_norm: f64::NAN,
        status: ExitStatus::DegenerateScene,
        trace: OptimizerTrace::default(),
    }
}

pub(crate) fn finish(cur: Iterate, status: ExitStatus, rec: Recorder) -> RunOutcome {
    RunOutcome {
        f: cur.f,
        grad_norm: cur.grad_norm(),
        w: cur.w,
        status,
        trace: rec.trace,
    }
}

/// Plain Riemannian gradient descent with Polak-Ribiere directions.
pub fn rgd<O: Objective + ?Sized>(w0: &PhaseProfile, cfg: &OptimizerConfig, obj: &O) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut rec = Recorder::new();
    let mut cur = match evaluate(obj, w0.clone()) {
        Ok(it) => it,
        Err(Error::DegenerateGeometry { .. }) => return Ok(degenerate_outcome(w0.clone())),
        Err(e) => return Err(e),
    };
    rec.push(&cur, 0.0, AccelFlag::None);
    let threshold = cfg.threshold(cur.grad_norm());
    let mut memory = CgMemory::default();
    let mut length = StepLength::default();
    loop {
        if is_stationary(&cur, threshold) {
            return Ok(finish(cur, ExitStatus::Converged, rec));
        }
        if rec.iterations() >= cfg.max_outer_iters {
            return Ok(finish(cur, ExitStatus::MaxIters, rec));
        }
        let mu = memory.direction(&cur, cfg.pr_plus);
        match cg_step(obj, &cur, mu, &mut length, cfg)? {
            StepResult::Moved { next, eta, mu } => {
                rec.push(&next, eta, AccelFlag::None);
                let prev = std::mem::replace(&mut cur, next);
                memory.remember(prev.grad, mu);
            }
            StepResult::Failed(status) => return Ok(finish(cur, status, rec)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::Tolerance;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `||w - target||^2` restricted to the manifold.
    struct Toy {
        target: PhaseProfile,
    }

    impl Objective for Toy {
        fn value(&self, w: &PhaseProfile) -> Result<f64> {
            Ok((w.as_vector() - self.target.as_vector()).norm_squared())
        }

        fn value_and_gradient(&self, w: &PhaseProfile) -> Result<(f64, DVector<Complex64>)> {
            let diff = w.as_vector() - self.target.as_vector();
            Ok((diff.norm_squared(), diff))
        }
    }

    fn toy(n: usize, seed: u64) -> (Toy, PhaseProfile) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = PhaseProfile::random(n, &mut rng);
        let w0 = PhaseProfile::random(n, &mut rng);
        (Toy { target }, w0)
    }

    fn absolute(eps: f64) -> OptimizerConfig {
        OptimizerConfig {
            epsilon: eps,
            tolerance: Tolerance::Absolute,
            acceleration_enabled: false,
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn steepest_descent_without_history() {
        let (obj, w) = toy(6, 1);
        let it = evaluate(&obj, w.clone()).unwrap();
        let mu = cg_direction(&it.grad, None, None, &w, true);
        assert_eq!(mu.v, -&it.grad.v);
    }

    #[test]
    fn identical_gradients_give_zero_pr_coefficient() {
        let (obj, w) = toy(6, 2);
        let it = evaluate(&obj, w.clone()).unwrap();
        let other = project(&w, &DVector::from_element(6, Complex64::i()));
        let mu = cg_direction(&it.grad, Some(&it.grad), Some(&other), &w, false);
        assert!((&mu.v + &it.grad.v).norm() < 1e-15);
    }

    #[test]
    fn armijo_decreases_toy_cost() {
        let (obj, w) = toy(10, 3);
        let it = evaluate(&obj, w.clone()).unwrap();
        let mu = cg_direction(&it.grad, None, None, &w, true);
        let ls = armijo_step(&w, it.f, &it.grad, &mu, 1.0 / it.grad_norm(), &obj, &absolute(1e-8)).unwrap();
        assert!(ls.f_next < it.f);
        assert!(ls.w_next.modulus_error() < 1e-12);
    }

    #[test]
    fn armijo_rejects_zero_direction() {
        let (obj, w) = toy(4, 4);
        let it = evaluate(&obj, w.clone()).unwrap();
        let mu = TangentVec::zero(&w);
        let err = armijo_step(&w, it.f, &it.grad, &mu, 1.0 / it.grad_norm(), &obj, &absolute(1e-8)).unwrap_err();
        assert!(matches!(err, Error::NotDescent { .. }));
    }

    #[test]
    fn stationary_start_takes_no_iterations() {
        let (obj, _) = toy(5, 5);
        let w0 = obj.target.clone();
        let out = rgd(&w0, &absolute(1e-8), &obj).unwrap();
        assert_eq!(out.status, ExitStatus::Converged);
        assert_eq!(out.trace.iterations(), 0);
    }

    #[test]
    fn rgd_converges_on_toy_cost() {
        let (obj, w0) = toy(12, 6);
        let out = rgd(&w0, &absolute(1e-8), &obj).unwrap();
        assert_eq!(out.status, ExitStatus::Converged);
        assert!(out.grad_norm < 1e-8);
        for pair in out.trace.rows.windows(2) {
            assert!(pair[1].f < pair[0].f);
        }
    }
}
