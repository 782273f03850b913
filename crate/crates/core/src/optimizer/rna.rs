//! Regularized nonlinear acceleration on the complex circle manifold.
//!
//! Every `memory_depth` conjugate-gradient steps the iterates
//! `w_0 .. w_{Md-1}` are combined by a weighted recursive retraction average.
//! The weights minimize `||sum c_i r_i||^2 + lambda ||c||^2` subject to
//! `sum c_i = 1`, where the residuals `r_i` are negative gradients (or the
//! steps taken, see [`ResidualSource`]) projected onto `T_{w_{Md-1}}`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use super::cg::{cg_step, degenerate_outcome, evaluate, finish, is_stationary, CgMemory, Recorder, StepLength, StepResult};
use super::{rgd, AccelFlag, ExitStatus, Objective, OptimizerConfig, ResidualSource, RunOutcome};
use crate::error::{Error, Result};
use crate::linalg::MAX_CONDITION;
use crate::manifold::{inner, inverse_retract, project, retract, PhaseProfile};

/// Partial weight sums closer to zero than this abort the average.
const PARTIAL_SUM_GUARD: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct RnaWeights {
    /// Weights, summing to one.
    pub c: DVector<f64>,
    /// Lagrange multiplier of the sum constraint.
    pub dual: f64,
    /// `Re(r_i^H r_j)`.
    pub gram: DMatrix<f64>,
    /// Regularization actually applied.
    pub lambda: f64,
}

impl RnaWeights {
    /// Residual of `[2(R + lambda I) 1; 1^T 0] [c; mu] = [0; 1]`, max norm.
    pub fn kkt_residual(&self) -> f64 {
        let n = self.c.len();
        let reg = &self.gram + DMatrix::identity(n, n) * self.lambda;
        let top = (reg * &self.c) * 2.0 + DVector::from_element(n, self.dual);
        let bottom = (self.c.sum() - 1.0).abs();
        top.amax().max(bottom)
    }
}

/// Closed-form weights `(R + lambda I)^-1 1 / (1^T (R + lambda I)^-1 1)`.
///
/// With `relative` set, `lambda` is multiplied by the Frobenius norm of `R`.
pub fn rna_weights(residuals: &[DVector<Complex64>], lambda: f64, relative: bool) -> Result<RnaWeights> {
    let k = residuals.len();
    if k == 0 {
        return Err(Error::Dimension("no residuals".into()));
    }
    let gram = DMatrix::from_fn(k, k, |i, j| inner(&residuals[i], &residuals[j]));
    let lambda = if relative { lambda * gram.norm() } else { lambda };
    let reg = &gram + DMatrix::identity(k, k) * lambda;
    let eig = SymmetricEigen::new(reg.clone());
    let (min, max) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let ones = DVector::from_element(k, 1.0);
    let z = reg
        .cholesky()
        .ok_or(Error::IllConditioned { condition })?
        .solve(&ones);
    let total = z.sum();
    if !(total.abs() > 0.0 && total.is_finite()) {
        return Err(Error::IllConditioned { condition });
    }
    let mut c = &z / total;
    let head: f64 = c.iter().take(k - 1).sum();
    c[k - 1] = 1.0 - head;
    Ok(RnaWeights {
        c,
        dual: -2.0 / total,
        gram,
        lambda,
    })
}

/// Weighted recursive retraction average of `iterates` with weights `c`.
pub fn rna_average(iterates: &[PhaseProfile], c: &DVector<f64>) -> Result<PhaseProfile> {
    if iterates.is_empty() || iterates.len() != c.len() {
        return Err(Error::Dimension(format!(
            "{} iterates for {} weights",
            iterates.len(),
            c.len()
        )));
    }
    // The first step is R_{w0}(R_{w0}^-1(w0)) = w0 whatever c_0 is.
    let mut avg = iterates[0].clone();
    let mut partial = c[0];
    for (i, w) in iterates.iter().enumerate().skip(1) {
        partial += c[i];
        if partial.abs() <= PARTIAL_SUM_GUARD {
            return Err(Error::WeightSumGuard { index: i, sum: partial });
        }
        let v = inverse_retract(&avg, w)?;
        avg = retract(&avg, &(v.v * Complex64::new(c[i] / partial, 0.0)))?;
    }
    Ok(avg)
}

/// One acceleration window: iterates `w_0 .. w_{Md}` and the step data
/// between them.
#[derive(Debug, Clone)]
pub struct AccelWindow {
    pub iterates: Vec<PhaseProfile>,
    /// `-grad f(w_i)`.
    pub gradients: Vec<DVector<Complex64>>,
    /// Step sizes `eta_i`.
    pub steps: Vec<f64>,
    /// `eta_i mu_i`, the step taken from `w_i`.
    pub search_vectors: Vec<DVector<Complex64>>,
}

impl AccelWindow {
    fn new(start: &PhaseProfile) -> Self {
        AccelWindow {
            iterates: vec![start.clone()],
            gradients: Vec::new(),
            steps: Vec::new(),
            search_vectors: Vec::new(),
        }
    }

    fn steps(&self) -> usize {
        self.search_vectors.len()
    }

    /// Residuals of the first `depth` steps projected onto
    /// `T_{w_{depth-1}}`.
    pub fn residuals(&self, depth: usize, source: ResidualSource) -> Vec<DVector<Complex64>> {
        let anchor = &self.iterates[depth - 1];
        (0..depth)
            .map(|i| {
                let v = match source {
                    ResidualSource::Gradient => self.gradients[i].clone(),
                    ResidualSource::StepScaledGradient => &self.gradients[i] * Complex64::new(self.steps[i], 0.0),
                    ResidualSource::SearchVector => self.search_vectors[i].clone(),
                };
                project(anchor, &v).v
            })
            .collect()
    }

    pub fn accelerate(&self, depth: usize, cfg: &OptimizerConfig) -> Result<PhaseProfile> {
        let weights = rna_weights(&self.residuals(depth, cfg.residuals), cfg.lambda_reg, cfg.lambda_relative)?;
        rna_average(&self.iterates[..depth], &weights.c)
    }
}

/// Conjugate-gradient descent restarted every `memory_depth` steps from an
/// accelerated point. With acceleration disabled this is exactly [`rgd`].
pub fn accelerated_run<O: Objective + ?Sized>(
    w0: &PhaseProfile,
    cfg: &OptimizerConfig,
    obj: &O,
) -> Result<RunOutcome> {
    if !cfg.acceleration_enabled {
        return rgd(w0, cfg, obj);
    }
    cfg.validate()?;
    let depth = cfg.memory_depth;
    let mut rec = Recorder::new();
    let mut cur = match evaluate(obj, w0.clone()) {
        Ok(it) => it,
        Err(Error::DegenerateGeometry { .. }) => return Ok(degenerate_outcome(w0.clone())),
        Err(e) => return Err(e),
    };
    rec.push(&cur, 0.0, AccelFlag::None);
    let threshold = cfg.threshold(cur.grad_norm());
    let mut length = StepLength::default();

    loop {
        if is_stationary(&cur, threshold) {
            return Ok(finish(cur, ExitStatus::Converged, rec));
        }
        if rec.iterations() >= cfg.max_outer_iters {
            return Ok(finish(cur, ExitStatus::MaxIters, rec));
        }

        let mut window = AccelWindow::new(&cur.w);
        let mut memory = CgMemory::default();
        let mut stop = None;
        while window.steps() < depth {
            if is_stationary(&cur, threshold) || rec.iterations() >= cfg.max_outer_iters {
                break;
            }
            let mu = memory.direction(&cur, cfg.pr_plus);
            match cg_step(obj, &cur, mu, &mut length, cfg)? {
                StepResult::Moved { next, eta, mu } => {
                    rec.push(&next, eta, AccelFlag::None);
                    window.gradients.push(-&cur.grad.v);
                    window.steps.push(eta);
                    window.search_vectors.push(&mu.v * Complex64::new(eta, 0.0));
                    window.iterates.push(next.w.clone());
                    let prev = std::mem::replace(&mut cur, next);
                    memory.remember(prev.grad, mu);
                }
                StepResult::Failed(status) => {
                    stop = Some(status);
                    break;
                }
            }
        }
        if let Some(status) = stop {
            return Ok(finish(cur, status, rec));
        }
        if window.steps() < depth {
            // converged or out of budget mid-window; the outer loop decides
            continue;
        }

        // `cur` is w_{Md}, the best point of the window (monotone steps).
        match window.accelerate(depth, cfg).and_then(|w| evaluate(obj, w)) {
            Ok(candidate) => {
                if !cfg.accel_safeguard || candidate.f <= cur.f {
                    rec.push(&candidate, 0.0, AccelFlag::Accepted);
                    cur = candidate;
                } else {
                    rec.mark_last(AccelFlag::Rejected);
                }
            }
            Err(
                Error::OutsideInjectivity { .. }
                | Error::WeightSumGuard { .. }
                | Error::IllConditioned { .. }
                | Error::ZeroDenominator { .. }
                | Error::DegenerateGeometry { .. },
            ) => rec.mark_last(AccelFlag::Skipped),
            Err(e) => return Err(e),
        }
    }
}
