//! Numerical self-checks run by `validate` and before every sweep.
//!
//! Each check compares a closed-form quantity of the library with an
//! independent numerical evaluation on a small random scene.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::emit::{float_cell, CsvTable, Provenance};
use crate::error::Result;
use crate::fisher::{param_count, param_index, CrbProblem, GainPart, GradientMode, NoiseModel};
use crate::manifold::{inner, inverse_retract, project, retract, PhaseProfile};
use crate::optimizer::rna_weights;
use crate::scene::{Scene, SceneConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error.is_finite() && self.error < self.tolerance
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Angle (degrees) between the exact and the `J_qq`-only Riemannian
    /// gradients on a 2 x 2 element, two-anchor scene. Reported only.
    pub gradient_mode_angle_deg: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed())
            .map(|c| format!("{} ({:e} >= {:e})", c.name, c.error, c.tolerance))
            .collect()
    }

    pub fn table(&self, p: &Provenance) -> CsvTable {
        let mut t = CsvTable::new(&["check", "error", "tolerance", "passed"]).with_provenance(p);
        t.comments
            .push(format!("gradient_mode_angle_deg: {:e}", self.gradient_mode_angle_deg));
        for c in &self.checks {
            t.push(vec![
                c.name.to_string(),
                float_cell(c.error),
                float_cell(c.tolerance),
                u8::from(c.passed()).to_string(),
            ]);
        }
        t
    }
}

fn random_complex(n: usize, rng: &mut ChaCha8Rng) -> DVector<Complex64> {
    DVector::from_fn(n, |_, _| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

/// Small random scene: 4 x 4 elements, three anchors, eight pilots and an
/// EMI level comparable to the thermal noise.
pub fn validation_scene(seed: u64) -> SceneConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = SceneConfig::reference();
    cfg.ris_rows = 4;
    cfg.ris_cols = 4;
    cfg.pilot_count = 8;
    cfg.emi_flux_dbw_per_m2 = 5.0;
    cfg.agent_position = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(5.0..20.0)];
    cfg.anchor_positions = (0..3)
        .map(|_| {
            [
                rng.random_range(-30.0..30.0),
                rng.random_range(-30.0..60.0),
                rng.random_range(20.0..50.0),
            ]
        })
        .collect();
    cfg
}

/// Runs every check on `validation_scene(seed)` (seed 1 by default).
pub fn validate(seed: Option<u64>) -> Result<ValidationReport> {
    let seed = seed.unwrap_or(1);
    let scene = Scene::new(validation_scene(seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = PhaseProfile::random(scene.element_count(), &mut rng);
    let problem = CrbProblem::new(&scene, NoiseModel::EmiAware)?;
    let checks = vec![
        Check {
            name: "geometry_fd",
            error: geometry_fd(&scene),
            tolerance: 1e-6,
        },
        Check {
            name: "jacobian_fd",
            error: jacobian_fd(&scene, &problem, &w),
            tolerance: 1e-5,
        },
        Check {
            name: "fim_brute_force",
            error: fim_brute_force(&scene, &problem, &w, &mut rng)?,
            tolerance: 1e-5,
        },
        Check {
            name: "schur_identity",
            error: schur_identity(&problem, &w)?,
            tolerance: 1e-10,
        },
        Check {
            name: "gradient_fd",
            error: gradient_fd(&problem, &w, &mut rng)?,
            tolerance: 1e-5,
        },
        Check {
            name: "manifold",
            error: manifold_checks(&mut rng)?,
            tolerance: 1e-10,
        },
        Check {
            name: "rna_kkt",
            error: rna_kkt(&mut rng)?,
            tolerance: 1e-10,
        },
    ];
    Ok(ValidationReport {
        checks,
        gradient_mode_angle_deg: gradient_mode_angle(seed)?,
    })
}

fn gradient_mode_angle(seed: u64) -> Result<f64> {
    let mut cfg = validation_scene(seed);
    cfg.ris_rows = 2;
    cfg.ris_cols = 2;
    cfg.anchor_positions.truncate(2);
    cfg.sigma2.truncate(2);
    let scene = Scene::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = PhaseProfile::random(scene.element_count(), &mut rng);
    let problem = CrbProblem::new(&scene, NoiseModel::EmiAware)?;
    let (_, exact) = problem.wirtinger_gradient(&w, GradientMode::Exact)?;
    let (_, qq_only) = problem.wirtinger_gradient(&w, GradientMode::QqOnly)?;
    let (a, b) = (project(&w, &exact).v, project(&w, &qq_only).v);
    let cos = (inner(&a, &b) / (a.norm() * b.norm())).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

fn distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a - b).norm()
}

/// Partial derivatives of the agent distances against central differences.
fn geometry_fd(scene: &Scene) -> f64 {
    let h = 1e-6;
    let q = Vector3::from(scene.config.agent_position);
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        let mut e = Vector3::zeros();
        e[i] = h;
        for (n, c) in scene.grid.element_centers.iter().enumerate() {
            let p = Vector3::new(c[0], c[1], 0.0);
            let fd = (distance(&(q + e), &p) - distance(&(q - e), &p)) / (2.0 * h);
            worst = worst.max((fd - scene.geometry.drho_dq[(n, i)]).abs());
        }
        for (m, a) in scene.config.anchor_positions.iter().enumerate() {
            let p = Vector3::from(*a);
            let fd = (distance(&(q + e), &p) - distance(&(q - e), &p)) / (2.0 * h);
            worst = worst.max((fd - scene.geometry.dr_dq[(m, i)]).abs());
        }
    }
    worst
}

/// Position coefficients of the signal Jacobian against central differences
/// of the noiseless response.
fn jacobian_fd(scene: &Scene, problem: &CrbProblem<'_>, w: &PhaseProfile) -> f64 {
    let h = 1e-7;
    let q = Vector3::from(scene.config.agent_position);
    let jac = problem.signal_jacobian(w);
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        let mut e = Vector3::zeros();
        e[i] = h;
        let plus = scene.response_at(&(q + e), w);
        let minus = scene.response_at(&(q - e), w);
        for (m, a) in jac.anchors.iter().enumerate() {
            let fd = (plus[m] - minus[m]) / (2.0 * h);
            let scale = a.dq.iter().map(|z| z.norm()).fold(0.0, f64::max);
            worst = worst.max((fd - a.dq[i]).norm() / scale);
        }
    }
    worst
}

/// Noise power `v^T R conj(v) + sigma2` summed element by element.
fn direct_noise_power(scene: &Scene, w: &PhaseProfile, m: usize) -> f64 {
    let v: Vec<Complex64> = scene.channels.anchors[m]
        .h2
        .iter()
        .zip(w.as_vector().iter())
        .map(|(h, w)| h * w)
        .collect();
    let r = &scene.emi.r;
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..v.len() {
        for j in 0..v.len() {
            acc += v[i] * r[(i, j)] * v[j].conj();
        }
    }
    acc.re + scene.config.sigma2[m]
}

/// FIM of the pilot-sequence signal model with numerically differentiated
/// signals, compared entrywise (scaled by `sqrt(J_ii J_jj)`) with the
/// scalar-form data FIM.
fn fim_brute_force(scene: &Scene, problem: &CrbProblem<'_>, w: &PhaseProfile, rng: &mut ChaCha8Rng) -> Result<f64> {
    let bundle = problem.fim(w)?;
    let brute = brute_force_fim(scene, w, rng);
    Ok(scaled_entrywise_error(&bundle.j_data, &brute))
}

/// `sum_m (2 / P_m) Re(ds_m^H ds_m)` with the T-sample signal vectors
/// differentiated by central differences in `q` and in each gain component.
pub(crate) fn brute_force_fim(scene: &Scene, w: &PhaseProfile, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mm = scene.anchor_count();
    let t = scene.config.pilot_count;
    let amp = scene.config.pilot_energy_per_sample.sqrt();
    let pilots: Vec<Complex64> = (0..t)
        .map(|_| Complex64::from_polar(amp, rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    let q0 = Vector3::from(scene.config.agent_position);
    let gains0: Vec<(Complex64, Complex64)> = scene.channels.anchors.iter().map(|c| (c.alpha, c.beta)).collect();
    let signal = |q: &Vector3<f64>, gains: &[(Complex64, Complex64)]| -> Vec<Vec<Complex64>> {
        scene
            .response_with_gains(q, w.as_vector(), gains)
            .into_iter()
            .map(|s| pilots.iter().map(|x| s * x).collect())
            .collect()
    };
    let dim = param_count(mm);
    // derivs[k][m][t]
    let mut derivs: Vec<Vec<Vec<Complex64>>> = Vec::with_capacity(dim);
    let h = 1e-6;
    for i in 0..3 {
        let mut e = Vector3::zeros();
        e[i] = h;
        let (p, n) = (signal(&(q0 + e), &gains0), signal(&(q0 - e), &gains0));
        derivs.push(diff(&p, &n, 2.0 * h));
    }
    for k in 0..4 * mm {
        let (part, m) = (k / mm, k % mm);
        let (scale, unit) = match part {
            0 => (gains0[m].0.norm(), Complex64::new(1.0, 0.0)),
            1 => (gains0[m].1.norm(), Complex64::new(1.0, 0.0)),
            2 => (gains0[m].0.norm(), Complex64::new(0.0, 1.0)),
            _ => (gains0[m].1.norm(), Complex64::new(0.0, 1.0)),
        };
        let step = 1e-3 * scale;
        let shifted = |sign: f64| {
            let mut g = gains0.clone();
            if part % 2 == 0 {
                g[m].0 += unit * (sign * step);
            } else {
                g[m].1 += unit * (sign * step);
            }
            signal(&q0, &g)
        };
        derivs.push(diff(&shifted(1.0), &shifted(-1.0), 2.0 * step));
        debug_assert_eq!(
            3 + k,
            param_index(
                mm,
                m,
                [GainPart::ReAlpha, GainPart::ReBeta, GainPart::ImAlpha, GainPart::ImBeta][part]
            )
        );
    }
    let powers: Vec<f64> = (0..mm).map(|m| direct_noise_power(scene, w, m)).collect();
    DMatrix::from_fn(dim, dim, |a, b| {
        (0..mm)
            .map(|m| {
                let s: f64 = derivs[a][m].iter().zip(&derivs[b][m]).map(|(x, y)| (x.conj() * y).re).sum();
                2.0 * s / powers[m]
            })
            .sum()
    })
}

fn diff(plus: &[Vec<Complex64>], minus: &[Vec<Complex64>], width: f64) -> Vec<Vec<Complex64>> {
    plus.iter()
        .zip(minus)
        .map(|(p, n)| p.iter().zip(n).map(|(a, b)| (a - b) / width).collect())
        .collect()
}

/// `max_ij |a_ij - b_ij| / sqrt(|b_ii b_jj|)`.
pub(crate) fn scaled_entrywise_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let scale = (b[(i, i)] * b[(j, j)]).abs().sqrt();
            worst = worst.max((a[(i, j)] - b[(i, j)]).abs() / scale);
        }
    }
    worst
}

/// `tr(J_f^-1)` against the position block of the full inverse
/// `J^-1 = D^-1 V S^-2 V^T D^-1` from the SVD of the column-equilibrated
/// square-root information `A D^-1`.
pub(crate) fn schur_identity(problem: &CrbProblem<'_>, w: &PhaseProfile) -> Result<f64> {
    let bundle = problem.fim(w)?;
    let mut a = bundle.sqrt_info.clone();
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    for (k, n) in norms.iter().enumerate() {
        a.column_mut(k).unscale_mut(*n);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let direct: f64 = (0..3)
        .map(|i| {
            (0..v_t.nrows())
                .map(|k| (v_t[(k, i)] / svd.singular_values[k] / norms[i]).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok((direct - bundle.crb).abs() / bundle.crb)
}

/// Wirtinger gradient against ambient central differences
/// `f(w + eps d) - f(w - eps d) = 2 eps Re<2 grad, d>`, step 1e-6, over 20
/// random complex directions with O(1) entries. Each direction is tilted
/// toward the gradient by its own norm so that the directional derivative
/// cannot vanish.
pub(crate) fn gradient_fd(problem: &CrbProblem<'_>, w: &PhaseProfile, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (_, grad) = problem.value_and_gradient(w)?;
    let unit = &grad / Complex64::new(grad.norm(), 0.0);
    let eps = Complex64::new(1e-6, 0.0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let r = random_complex(w.len(), rng);
        let dir = &r + &unit * Complex64::new(r.norm(), 0.0);
        let plus = problem.crb_ambient(&(w.as_vector() + &dir * eps))?;
        let minus = problem.crb_ambient(&(w.as_vector() - &dir * eps))?;
        let fd = (plus - minus) / (2.0 * eps.re);
        let analytic = 2.0 * grad.dotc(&dir).re;
        worst = worst.max((fd - analytic).abs() / analytic.abs());
    }
    Ok(worst)
}

/// Tangency of projections, modulus after retraction and the inverse
/// retraction round trip over 100 random cases.
fn manifold_checks(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..20);
        let w = PhaseProfile::random(n, rng);
        let t = project(&w, &random_complex(n, rng));
        worst = worst.max(t.tangency_error());
        let again = project(&w, &t.v);
        worst = worst.max((&again.v - &t.v).camax());
        let small = &t.v * Complex64::new(0.3 / t.v.camax().max(1e-300), 0.0);
        let next = retract(&w, &small)?;
        worst = worst.max(next.modulus_error());
        let back = inverse_retract(&w, &next)?;
        worst = worst.max((&back.v - &small).camax());
    }
    Ok(worst)
}

/// KKT residual of the acceleration weights relative to `||R||`, over
/// random windows of depth 1, 2, 5 and 8.
fn rna_kkt(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for depth in [1, 2, 5, 8] {
        let residuals: Vec<_> = (0..depth).map(|_| random_complex(12, rng)).collect();
        let weights = rna_weights(&residuals, 1e-7, true)?;
        worst = worst.max(weights.kkt_residual() / weights.gram.norm());
        worst = worst.max((weights.c.sum() - 1.0).abs());
    }
    Ok(worst)
}
