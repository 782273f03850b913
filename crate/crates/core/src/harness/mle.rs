//! Monte-Carlo check of a maximum-likelihood position estimator against the
//! RCRB at a designed phase profile.
//!
//! Each trial draws path gains from their prior, EMI and thermal noise, and
//! forms the per-anchor matched-filter outputs `z_m = s_m + n_m` with
//! `n ~ CN(0, (C + diag sigma2) / E)`, `C_mm' = v_m^T R conj(v_m')`. The
//! estimator minimizes the gain-concentrated negative log-likelihood over a
//! grid spanning +-6 standard deviations along the principal axes of
//! `J_f^-1`, then refines with repeated 27-point quadratic fits.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::emit::{float_cell, CsvTable, Provenance};
use super::{solve, thread_pool, ExperimentSpec};
use crate::error::Result;
use crate::fisher::{CrbProblem, NoiseModel};
use crate::manifold::PhaseProfile;
use crate::scene::Scene;

/// Half-width of the search window in standard deviations.
const WINDOW: f64 = 6.0;
const COARSE_STEP: f64 = 2.0;
const REFINE_ROUNDS: usize = 5;

#[derive(Debug, Clone)]
pub struct MleReport {
    pub trials: usize,
    pub rmse: f64,
    pub rcrb: f64,
    /// `rmse / rcrb`.
    pub ratio: f64,
    /// 95 % interval of `rmse / rcrb` from the spread of squared errors.
    pub ratio_ci: (f64, f64),
    /// Norm of the mean error.
    pub bias: f64,
    /// Trials whose estimate reached the edge of the search window.
    pub clipped: usize,
    /// Per-trial position errors `q_hat - q`.
    pub errors: Vec<Vector3<f64>>,
}

impl MleReport {
    fn from_errors(errors: Vec<Vector3<f64>>, clipped: usize, rcrb: f64) -> Self {
        let n = errors.len() as f64;
        let sq: Vec<f64> = errors.iter().map(|e| e.norm_squared()).collect();
        let mse = sq.iter().sum::<f64>() / n;
        let var = sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let half = 1.96 * (var / n).sqrt();
        let mean = errors.iter().fold(Vector3::zeros(), |acc, e| acc + e) / n;
        MleReport {
            trials: errors.len(),
            rmse: mse.sqrt(),
            rcrb,
            ratio: mse.sqrt() / rcrb,
            ratio_ci: ((mse - half).max(0.0).sqrt() / rcrb, (mse + half).sqrt() / rcrb),
            bias: mean.norm(),
            clipped,
            errors,
        }
    }

    pub fn summary_line(&self) -> String {
        format!(
            "trials {} rmse {:.4e} m rcrb {:.4e} m ratio {:.4} (95% {:.4}..{:.4}) bias {:.3e} m clipped {}",
            self.trials, self.rmse, self.rcrb, self.ratio, self.ratio_ci.0, self.ratio_ci.1, self.bias, self.clipped
        )
    }

    pub fn summary_table(&self, p: &Provenance) -> CsvTable {
        let mut t = CsvTable::new(&["trials", "rmse", "rcrb", "ratio", "ratio_lo", "ratio_hi", "bias", "clipped"])
            .with_provenance(p);
        t.push(vec![
            self.trials.to_string(),
            float_cell(self.rmse),
            float_cell(self.rcrb),
            float_cell(self.ratio),
            float_cell(self.ratio_ci.0),
            float_cell(self.ratio_ci.1),
            float_cell(self.bias),
            self.clipped.to_string(),
        ]);
        t
    }

    pub fn trials_table(&self, p: &Provenance) -> CsvTable {
        let mut t = CsvTable::new(&["trial", "err_x", "err_y", "err_z"]).with_provenance(p);
        for (i, e) in self.errors.iter().enumerate() {
            t.push(vec![i.to_string(), float_cell(e.x), float_cell(e.y), float_cell(e.z)]);
        }
        t
    }
}

/// Designs a profile for `spec` and runs `spec.mc_trials` estimation trials
/// on it, using `jobs` worker threads.
pub fn mle_check(spec: &ExperimentSpec, jobs: usize) -> Result<MleReport> {
    let design = solve(spec)?;
    let scene = Scene::new(spec.run_scene())?;
    let model = LikelihoodModel::new(&scene, &design.outcome.w)?;
    let pool = thread_pool(jobs)?;
    let seed = spec.seed();
    let trials: Vec<Trial> = pool.install(|| {
        (0..spec.mc_trials)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(16 + i as u64);
                let z = model.draw(&mut rng, true);
                estimate_position(&model, &z)
            })
            .collect()
    });
    let clipped = trials.iter().filter(|t| t.clipped).count();
    if clipped > 0 {
        eprintln!("warning: {clipped} of {} estimates clipped at the search window edge", trials.len());
    }
    let errors = trials.iter().map(|t| t.q - model.q_true).collect();
    Ok(MleReport::from_errors(errors, clipped, model.rcrb))
}

/// Everything a trial needs about the scene at a fixed profile.
pub struct LikelihoodModel {
    pub q_true: Vector3<f64>,
    pub rcrb: f64,
    k0: f64,
    centers: Vec<Vector3<f64>>,
    anchors: Vec<Vector3<f64>>,
    /// `w_n exp(-j k0 d_mn)`, one vector per anchor.
    ris_weights: Vec<DVector<Complex64>>,
    gains: Vec<(Complex64, Complex64)>,
    /// Prior variances of `alpha_m`, `beta_m`.
    gain_var: Vec<(f64, f64)>,
    /// Diagonal noise variance of `z_m`.
    noise_var: Vec<f64>,
    /// Square root of the joint noise covariance of `z`.
    noise_factor: DMatrix<Complex64>,
    kappa: f64,
    /// Principal axes of `J_f^-1` scaled by their standard deviations.
    axes: Matrix3<f64>,
}

impl LikelihoodModel {
    pub fn new(scene: &Scene, w: &PhaseProfile) -> Result<Self> {
        let problem = CrbProblem::new(scene, NoiseModel::EmiAware)?;
        let bundle = problem.fim(w)?;
        let eig = SymmetricEigen::new(bundle.j_f_inv);
        let mut axes = eig.eigenvectors;
        for k in 0..3 {
            let std = eig.eigenvalues[k].max(0.0).sqrt();
            axes.column_mut(k).scale_mut(std);
        }

        let energy = scene.config.pilot_energy();
        let k0 = scene.wavenumber();
        let kappa = scene.config.gain_prior_rel_std;
        let mm = scene.anchor_count();
        let ris_weights = (0..mm)
            .map(|m| {
                DVector::from_fn(w.len(), |n, _| {
                    w[n] * Complex64::from_polar(1.0, -k0 * scene.geometry.d[(m, n)])
                })
            })
            .collect();
        let gains: Vec<_> = scene.channels.anchors.iter().map(|c| (c.alpha, c.beta)).collect();
        let gain_var = gains
            .iter()
            .map(|(a, b)| ((kappa * a.norm()).powi(2), (kappa * b.norm()).powi(2)))
            .collect();

        let v: Vec<DVector<Complex64>> = scene.channels.anchors.iter().map(|c| c.h2.component_mul(w.as_vector())).collect();
        let r = scene.emi.r.map(|x| Complex64::new(x, 0.0));
        let mut cov = DMatrix::from_fn(mm, mm, |a, b| (v[a].transpose() * &r * v[b].conjugate())[(0, 0)]);
        for m in 0..mm {
            cov[(m, m)] += scene.config.sigma2[m];
        }
        cov /= Complex64::new(energy, 0.0);
        let noise_var = (0..mm).map(|m| cov[(m, m)].re).collect();
        let eig = SymmetricEigen::new(cov);
        let mut noise_factor = eig.eigenvectors;
        for k in 0..mm {
            let s = eig.eigenvalues[k].max(0.0).sqrt();
            noise_factor.column_mut(k).scale_mut(s);
        }

        Ok(LikelihoodModel {
            q_true: Vector3::from(scene.config.agent_position),
            rcrb: bundle.rcrb(),
            k0,
            centers: scene.grid.element_centers.iter().map(|c| Vector3::new(c[0], c[1], 0.0)).collect(),
            anchors: scene.config.anchor_positions.iter().map(|p| Vector3::from(*p)).collect(),
            ris_weights,
            gains,
            gain_var,
            noise_var,
            noise_factor,
            kappa,
            axes,
        })
    }

    /// `(g_alpha, g_beta)` per anchor, so that `s_m = alpha g_alpha + beta g_beta`.
    fn responses(&self, q: &Vector3<f64>) -> Vec<(Complex64, Complex64)> {
        let steer: Vec<Complex64> = self
            .centers
            .iter()
            .map(|c| Complex64::from_polar(1.0, -self.k0 * (q - c).norm()))
            .collect();
        self.ris_weights
            .iter()
            .zip(&self.anchors)
            .map(|(u, p)| {
                let ga: Complex64 = u.iter().zip(&steer).map(|(a, b)| a * b).sum();
                let gb = Complex64::from_polar(1.0, -self.k0 * (q - p).norm());
                (ga, gb)
            })
            .collect()
    }

    /// Matched-filter outputs for one trial; `noisy = false` gives the
    /// noiseless signal with the nominal gains.
    pub fn draw(&self, rng: &mut ChaCha8Rng, noisy: bool) -> DVector<Complex64> {
        let resp = self.responses(&self.q_true);
        let mm = resp.len();
        if !noisy {
            return DVector::from_fn(mm, |m, _| self.gains[m].0 * resp[m].0 + self.gains[m].1 * resp[m].1);
        }
        let mut cn = || {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        };
        let signal: Vec<Complex64> = (0..mm)
            .map(|m| {
                let (a, b) = self.gains[m];
                let a = a * (1.0 + self.kappa * cn());
                let b = b * (1.0 + self.kappa * cn());
                a * resp[m].0 + b * resp[m].1
            })
            .collect();
        let white = DVector::from_fn(mm, |_, _| cn());
        let noise = &self.noise_factor * white;
        DVector::from_fn(mm, |m, _| signal[m] + noise[m])
    }

    /// Negative log-likelihood with the gains concentrated out under their
    /// prior: `sum_m |z_m - s_m(q, gamma0)|^2 / (var_m + sum_j |g_j|^2 var_j)`.
    pub fn cost(&self, z: &DVector<Complex64>, q: &Vector3<f64>) -> f64 {
        self.responses(q)
            .iter()
            .enumerate()
            .map(|(m, (ga, gb))| {
                let (a, b) = self.gains[m];
                let r = z[m] - a * ga - b * gb;
                let (va, vb) = self.gain_var[m];
                let denom = self.noise_var[m] + ga.norm_sqr() * va + gb.norm_sqr() * vb;
                r.norm_sqr() / denom.max(f64::MIN_POSITIVE)
            })
            .sum()
    }

    fn point(&self, c: &Vector3<f64>) -> Vector3<f64> {
        self.q_true + self.axes * c
    }
}

pub struct Trial {
    pub q: Vector3<f64>,
    pub clipped: bool,
}

/// Grid search over the principal-axis window followed by quadratic
/// refinement; returns the estimate and whether it hit the window edge.
pub fn estimate_position(model: &LikelihoodModel, z: &DVector<Complex64>) -> Trial {
    let cost = |c: &Vector3<f64>| model.cost(z, &model.point(c));
    let ticks: Vec<f64> = {
        let k = (WINDOW / COARSE_STEP).round() as i32;
        (-k..=k).map(|i| f64::from(i) * COARSE_STEP).collect()
    };
    let mut best = (f64::INFINITY, Vector3::zeros());
    for &x in &ticks {
        for &y in &ticks {
            for &zc in &ticks {
                let c = Vector3::new(x, y, zc);
                let f = cost(&c);
                if f < best.0 {
                    best = (f, c);
                }
            }
        }
    }

    let mut center = best.1;
    let mut h = COARSE_STEP / 2.0;
    for _ in 0..REFINE_ROUNDS {
        let step = quadratic_step(&cost, &center, h);
        center += step.map(|s| s.clamp(-2.0 * h, 2.0 * h));
        center = center.map(|s| s.clamp(-WINDOW, WINDOW));
        h /= 4.0;
    }
    let clipped = center.iter().any(|s| s.abs() >= WINDOW - 1e-9);
    Trial {
        q: model.point(&center),
        clipped,
    }
}

/// Newton step of the least-squares quadratic through the 27 points
/// `center + h {-1, 0, 1}^3`; zero when the fit is not convex.
fn quadratic_step(cost: &impl Fn(&Vector3<f64>) -> f64, center: &Vector3<f64>, h: f64) -> Vector3<f64> {
    let mut design = DMatrix::zeros(27, 10);
    let mut values = DVector::zeros(27);
    let mut row = 0;
    for i in -1..=1 {
        for j in -1..=1 {
            for k in -1..=1 {
                let d = Vector3::new(f64::from(i), f64::from(j), f64::from(k));
                let feats = [1.0, d.x, d.y, d.z, d.x * d.x, d.y * d.y, d.z * d.z, d.x * d.y, d.x * d.z, d.y * d.z];
                for (col, v) in feats.iter().enumerate() {
                    design[(row, col)] = *v;
                }
                values[row] = cost(&(center + d * h));
                row += 1;
            }
        }
    }
    let Ok(coef) = design.svd(true, true).solve(&values, 1e-14) else {
        return Vector3::zeros();
    };
    let grad = Vector3::new(coef[1], coef[2], coef[3]);
    let hess = Matrix3::new(
        2.0 * coef[4], coef[7], coef[8],
        coef[7], 2.0 * coef[5], coef[9],
        coef[8], coef[9], 2.0 * coef[6],
    );
    match hess.cholesky() {
        Some(ch) => -ch.solve(&grad) * h,
        None => Vector3::zeros(),
    }
}

impl std::fmt::Debug for LikelihoodModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LikelihoodModel")
            .field("q_true", &self.q_true)
            .field("rcrb", &self.rcrb)
            .finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::validation_scene;

    #[test]
    fn noiseless_reception_recovers_the_position() {
        let scene = Scene::new(validation_scene(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = PhaseProfile::random(scene.element_count(), &mut rng);
        let model = LikelihoodModel::new(&scene, &w).unwrap();
        let z = model.draw(&mut rng, false);
        let trial = estimate_position(&model, &z);
        assert!(!trial.clipped);
        assert!((trial.q - model.q_true).norm() < 1e-3 * model.rcrb);
    }

    #[test]
    fn cost_is_smallest_at_the_truth_without_noise() {
        let scene = Scene::new(validation_scene(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = PhaseProfile::random(scene.element_count(), &mut rng);
        let model = LikelihoodModel::new(&scene, &w).unwrap();
        let z = model.draw(&mut rng, false);
        let at_truth = model.cost(&z, &model.q_true);
        assert!(at_truth < 1e-20);
        assert!(model.cost(&z, &model.point(&Vector3::new(1.0, 0.0, 0.0))) > at_truth);
    }
}
