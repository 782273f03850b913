use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ris_crb::harness::initial_profile;
use ris_crb::manifold::{project, riemannian_grad, TangentVec};
use ris_crb::optimizer::{armijo_step, cg_direction, rna_average, rna_weights, AccelFlag};
use ris_crb::{
    accelerated_run, rgd, CrbProblem, Error, ExitStatus, NoiseModel, Objective, OptimizerConfig,
    PhaseProfile, Scene, SceneConfig,
};

/// `w^H A w` for a Hermitian `A`.
struct Quadratic {
    a: DMatrix<Complex64>,
}

impl Quadratic {
    fn random(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        Quadratic {
            a: &b + b.adjoint(),
        }
    }
}

impl Objective for Quadratic {
    fn value(&self, w: &PhaseProfile) -> ris_crb::Result<f64> {
        let v = w.as_vector();
        Ok(v.dotc(&(&self.a * v)).re)
    }

    fn value_and_gradient(&self, w: &PhaseProfile) -> ris_crb::Result<(f64, DVector<Complex64>)> {
        let av = &self.a * w.as_vector();
        Ok((w.as_vector().dotc(&av).re, av))
    }
}

fn toy_grad(obj: &Quadratic, w: &PhaseProfile) -> (f64, TangentVec) {
    let (f, g) = obj.value_and_gradient(w).unwrap();
    (f, riemannian_grad(w, &g))
}

fn small_scene() -> Scene {
    let mut cfg = SceneConfig::reference();
    cfg.ris_rows = 4;
    cfg.ris_cols = 4;
    Scene::new(cfg).unwrap()
}

#[test]
fn first_direction_is_steepest_descent() {
    let obj = Quadratic::random(6, 1);
    let w = initial_profile(6, 2);
    let (_, g) = toy_grad(&obj, &w);
    let mu = cg_direction(&g, None, None, &w, true);
    assert_eq!(mu.v, -&g.v);
}

#[test]
fn repeated_gradient_restarts_with_pr_plus() {
    let obj = Quadratic::random(6, 1);
    let w = initial_profile(6, 3);
    let (_, g) = toy_grad(&obj, &w);
    // identical gradients give a zero Polak-Ribiere coefficient
    let mu = cg_direction(&g, Some(&g), Some(&g), &w, true);
    assert!((&mu.v + &g.v).camax() < 1e-15);
}

#[test]
fn conjugate_direction_descends_and_is_tangent() {
    let obj = Quadratic::random(8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let w = PhaseProfile::random(8, &mut rng);
        let (_, g) = toy_grad(&obj, &w);
        let prev = PhaseProfile::random(8, &mut rng);
        let (_, gp) = toy_grad(&obj, &prev);
        let mp = project(
            &prev,
            &DVector::from_fn(8, |_, _| Complex64::new(rng.random(), rng.random())),
        );
        for pr_plus in [true, false] {
            let mu = cg_direction(&g, Some(&gp), Some(&mp), &w, pr_plus);
            assert!(mu.tangency_error() < 1e-12);
            assert!(g.v.dotc(&mu.v).re < 0.0);
        }
    }
}

#[test]
fn armijo_accepts_sufficient_decrease() {
    let obj = Quadratic::random(10, 6);
    let cfg = OptimizerConfig::default();
    let w = initial_profile(10, 7);
    let (f, g) = toy_grad(&obj, &w);
    let mu = g.scaled(-1.0);
    let ls = armijo_step(&w, f, &g, &mu, 10.0, &obj, &cfg).unwrap();
    let slope = g.v.dotc(&mu.v).re;
    assert!(ls.f_next <= f + cfg.armijo.c1 * ls.eta * slope);
    assert!(ls.w_next.modulus_error() < 1e-14);
    assert!((ls.eta - 10.0 * cfg.armijo.shrink.powi(ls.backtracks as i32)).abs() < 1e-12);
    assert_eq!(ls.f_next, obj.value(&ls.w_next).unwrap());
}

#[test]
fn armijo_rejects_ascent_direction() {
    let obj = Quadratic::random(10, 6);
    let w = initial_profile(10, 7);
    let (f, g) = toy_grad(&obj, &w);
    let err = armijo_step(&w, f, &g, &g, 1.0, &obj, &OptimizerConfig::default()).unwrap_err();
    assert!(matches!(err, Error::NotDescent { .. }));
}

#[test]
fn rgd_decreases_toy_objective_monotonically() {
    let obj = Quadratic::random(12, 8);
    let w0 = initial_profile(12, 9);
    let out = rgd(&w0, &OptimizerConfig::default(), &obj).unwrap();
    let f: Vec<f64> = out.trace.rows.iter().map(|r| r.f).collect();
    assert!(f.windows(2).all(|p| p[1] <= p[0]));
    assert!(out.w.modulus_error() < 1e-12);
    assert_eq!(out.status, ExitStatus::Converged);
    assert!(out.grad_norm <= 1e-3 * out.trace.rows[0].grad_norm);
}

#[test]
fn design_beats_random_profiles() {
    let scene = small_scene();
    let problem = CrbProblem::new(&scene, NoiseModel::EmiAware).unwrap();
    let w0 = initial_profile(16, 42);
    let out = rgd(&w0, &OptimizerConfig::default(), &problem).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let best = (0..100)
        .map(|_| problem.crb(&PhaseProfile::random(16, &mut rng)).unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!(out.f <= best, "{} > {}", out.f, best);
}

#[test]
fn disabled_acceleration_reproduces_plain_descent() {
    let scene = small_scene();
    let problem = CrbProblem::new(&scene, NoiseModel::EmiAware).unwrap();
    let w0 = initial_profile(16, 3);
    let cfg = OptimizerConfig {
        acceleration_enabled: false,
        ..OptimizerConfig::default()
    };
    let a = rgd(&w0, &cfg, &problem).unwrap();
    let b = accelerated_run(&w0, &cfg, &problem).unwrap();
    assert_eq!(a.w, b.w);
    let key = |o: &ris_crb::RunOutcome| -> Vec<(u64, u64, u64)> {
        o.trace
            .rows
            .iter()
            .map(|r| (r.f.to_bits(), r.grad_norm.to_bits(), r.step.to_bits()))
            .collect()
    };
    assert_eq!(key(&a), key(&b));
}

#[test]
fn runs_are_deterministic() {
    let scene = small_scene();
    let problem = CrbProblem::new(&scene, NoiseModel::EmiAware).unwrap();
    let w0 = initial_profile(16, 11);
    let cfg = OptimizerConfig::default();
    let a = accelerated_run(&w0, &cfg, &problem).unwrap();
    let b = accelerated_run(&w0, &cfg, &problem).unwrap();
    assert_eq!(a.w, b.w);
    let flags = |o: &ris_crb::RunOutcome| -> Vec<(u64, AccelFlag)> {
        o.trace
            .rows
            .iter()
            .map(|r| (r.f.to_bits(), r.accel))
            .collect()
    };
    assert_eq!(flags(&a), flags(&b));
}

#[test]
fn accelerated_run_keeps_unit_modulus_and_never_ends_worse() {
    let obj = Quadratic::random(20, 12);
    let w0 = initial_profile(20, 13);
    let out = accelerated_run(&w0, &OptimizerConfig::default(), &obj).unwrap();
    assert!(out.w.modulus_error() < 1e-12);
    assert!(out.f <= out.trace.rows[0].f);
    assert_eq!(out.trace.final_f(), Some(out.f));
}

#[test]
fn iteration_budget_is_respected() {
    let obj = Quadratic::random(20, 14);
    let w0 = initial_profile(20, 15);
    for accel in [false, true] {
        let cfg = OptimizerConfig {
            max_outer_iters: 7,
            epsilon: 1e-14,
            acceleration_enabled: accel,
            ..OptimizerConfig::default()
        };
        let out = accelerated_run(&w0, &cfg, &obj).unwrap();
        assert_eq!(out.status, ExitStatus::MaxIters);
        assert_eq!(out.trace.iterations(), 7);
    }
}

#[test]
fn rna_weights_sum_to_one_and_solve_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let residuals: Vec<DVector<Complex64>> = (0..5)
        .map(|_| {
            DVector::from_fn(9, |_, _| {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            })
        })
        .collect();
    for relative in [false, true] {
        let wts = rna_weights(&residuals, 1e-6, relative).unwrap();
        assert!((wts.c.sum() - 1.0).abs() < 1e-12);
        assert!(wts.kkt_residual() < 1e-10 * wts.gram.norm().max(1.0));
    }
}

#[test]
fn rna_weights_pick_the_zero_residual() {
    let mut residuals = vec![DVector::from_element(4, Complex64::new(1.0, 0.0)); 3];
    residuals[1] = DVector::zeros(4);
    let wts = rna_weights(&residuals, 1e-10, false).unwrap();
    assert!((wts.c[1] - 1.0).abs() < 1e-8);
}

#[test]
fn rna_average_respects_weights_and_guard() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let base = PhaseProfile::random(6, &mut rng);
    let iterates: Vec<PhaseProfile> = (0..4)
        .map(|_| {
            let d = DVector::from_fn(6, |_, _| Complex64::new(0.0, rng.random_range(-0.3..0.3)));
            ris_crb::manifold::retract(
                &base,
                &project(&base, &(d.component_mul(base.as_vector()))).v,
            )
            .unwrap()
        })
        .collect();
    let mut c = DVector::zeros(4);
    c[0] = 1.0;
    let avg = rna_average(&iterates, &c).unwrap();
    assert!((avg.as_vector() - iterates[0].as_vector()).camax() < 1e-15);
    c[0] = 0.0;
    c[2] = 1.0;
    assert!(matches!(
        rna_average(&iterates, &c),
        Err(Error::WeightSumGuard { index: 1, .. })
    ));
    let even = DVector::from_element(4, 0.25);
    let avg = rna_average(&iterates, &even).unwrap();
    assert!(avg.modulus_error() < 1e-14);
}
