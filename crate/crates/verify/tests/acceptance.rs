//! End-to-end acceptance criteria, one `ACn PASS|FAIL` line each. Exits
//! nonzero when any criterion fails.

use std::cell::Cell;
use std::panic::catch_unwind;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ris_crb::harness::{
    initial_profile, mle_check, run_sweep_distance, run_sweep_size, run_trace, solve, trace_table,
    validate, validation_scene, ExperimentKind, ExperimentSpec, SweepRow,
};
use ris_crb::manifold::{inverse_retract, project, retract};
use ris_crb::optimizer::rna_weights;
use ris_crb::{
    rgd, CrbProblem, NoiseModel, Objective, OptimizerConfig, PhaseProfile, Scene, SceneConfig,
};
use ris_crb_verify::spearman;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn rcrbs(rows: &[SweepRow]) -> Vec<f64> {
    rows.iter().map(|r| r.rcrb_emi_aware).collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.3e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn distance_spec() -> ExperimentSpec {
    ExperimentSpec::for_kind(ExperimentKind::SweepDistance)
}

fn distance_rows() -> &'static [SweepRow] {
    static ROWS: OnceLock<Vec<SweepRow>> = OnceLock::new();
    ROWS.get_or_init(|| run_sweep_distance(&distance_spec(), jobs()).unwrap())
}

fn size_rows() -> &'static [SweepRow] {
    static ROWS: OnceLock<Vec<SweepRow>> = OnceLock::new();
    ROWS.get_or_init(|| {
        run_sweep_size(&ExperimentSpec::for_kind(ExperimentKind::SweepSize), jobs()).unwrap()
    })
}

fn ac01_gradient_oracle() -> Outcome {
    let start = Instant::now();
    let report = validate(Some(1)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let check = report
        .checks
        .iter()
        .find(|c| c.name == "gradient_fd")
        .unwrap();
    let pass = check.error < 1e-5 && secs < 5.0;
    (
        pass,
        format!(
            "gradient max rel err {:.2e} (< 1e-5), full validation {secs:.2} s (< 5 s)",
            check.error
        ),
    )
}

fn ac02_fim_oracle() -> Outcome {
    let report = validate(Some(1)).unwrap();
    let check = report
        .checks
        .iter()
        .find(|c| c.name == "fim_brute_force")
        .unwrap();
    (
        check.error < 1e-5,
        format!(
            "scalar vs brute-force pilot-sequence FIM rel err {:.2e} (< 1e-5)",
            check.error
        ),
    )
}

/// `tr` of the position block of `J^-1`, from an SVD of the column-scaled
/// square-root information.
fn position_block_trace(sqrt_info: &DMatrix<f64>) -> f64 {
    let d = DVector::from_iterator(
        sqrt_info.ncols(),
        sqrt_info.column_iter().map(|c| 1.0 / c.norm()),
    );
    let scaled = sqrt_info * DMatrix::from_diagonal(&d);
    let svd = scaled.svd(false, true);
    let vt = svd.v_t.unwrap();
    (0..3)
        .map(|i| {
            (0..vt.nrows())
                .map(|k| (vt[(k, i)] * d[i] / svd.singular_values[k]).powi(2))
                .sum::<f64>()
        })
        .sum()
}

fn ac03_schur_identity() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let scene = Scene::new(validation_scene(seed)).unwrap();
        let w = initial_profile(scene.element_count(), seed + 1000);
        let bundle = CrbProblem::new(&scene, NoiseModel::EmiAware)
            .unwrap()
            .fim(&w)
            .unwrap();
        let reference = position_block_trace(&bundle.sqrt_info);
        worst = worst.max((bundle.crb - reference).abs() / reference);
    }
    (
        worst < 1e-10,
        format!("100 scenes, worst rel err {worst:.2e} (< 1e-10)"),
    )
}

fn ac04_manifold_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut idem, mut tangency, mut modulus, mut round_trip) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(1..64);
        let w = PhaseProfile::random(n, &mut rng);
        let scale = 10f64.powf(rng.random_range(-3.0..1.0));
        let v = DVector::from_fn(n, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale
        });
        let t = project(&w, &v);
        idem = idem.max((&project(&w, &t.v).v - &t.v).camax() / scale);
        tangency = tangency.max(t.tangency_error() / scale);
        modulus = modulus.max(retract(&w, &t.v).unwrap().modulus_error());
        let target = PhaseProfile::new(DVector::from_fn(n, |i, _| {
            w[i] * Complex64::from_polar(1.0, rng.random_range(-1.5..1.5))
        }));
        let back = retract(&w, &inverse_retract(&w, &target).unwrap().v).unwrap();
        round_trip = round_trip.max((back.as_vector() - target.as_vector()).camax());
    }
    let pass = idem < 1e-10 && tangency < 1e-10 && modulus < 1e-12 && round_trip < 1e-10;
    (pass,
        format!(
            "1000 cases: idempotence {idem:.1e}, tangency {tangency:.1e}, modulus {modulus:.1e}, inverse round trip {round_trip:.1e}"
        ),
    )
}

fn ac05_kkt_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_kkt = 0.0f64;
    let mut worst_sum = 0.0f64;
    for depth in [1usize, 2, 5, 8] {
        for _ in 0..50 {
            let n = rng.random_range(depth..depth + 40);
            let scale = 10f64.powf(rng.random_range(-12.0..2.0));
            let residuals: Vec<DVector<Complex64>> = (0..depth)
                .map(|_| {
                    DVector::from_fn(n, |_, _| {
                        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                            * scale
                    })
                })
                .collect();
            let wts = rna_weights(&residuals, 1e-7, true).unwrap();
            worst_kkt = worst_kkt.max(wts.kkt_residual() / wts.gram.norm());
            worst_sum = worst_sum.max((wts.c.sum() - 1.0).abs());
        }
    }
    let pass = worst_kkt < 1e-10 && worst_sum < 1e-12;
    (
        pass,
        format!("depths 1/2/5/8: KKT residual / |R| {worst_kkt:.1e}, |sum c - 1| {worst_sum:.1e}"),
    )
}

/// Records the worst modulus error of every profile the optimizer evaluates.
struct ModulusWatch<'a> {
    inner: CrbProblem<'a>,
    worst: Cell<f64>,
}

impl ModulusWatch<'_> {
    fn note(&self, w: &PhaseProfile) {
        self.worst.set(self.worst.get().max(w.modulus_error()));
    }
}

impl Objective for ModulusWatch<'_> {
    fn value(&self, w: &PhaseProfile) -> ris_crb::Result<f64> {
        self.note(w);
        self.inner.value(w)
    }

    fn value_and_gradient(&self, w: &PhaseProfile) -> ris_crb::Result<(f64, DVector<Complex64>)> {
        self.note(w);
        self.inner.value_and_gradient(w)
    }
}

fn ac06_monotone_descent() -> Outcome {
    let scene = Scene::new(SceneConfig::reference()).unwrap();
    let watch = ModulusWatch {
        inner: CrbProblem::new(&scene, NoiseModel::EmiAware).unwrap(),
        worst: Cell::new(0.0),
    };
    let cfg = OptimizerConfig {
        acceleration_enabled: false,
        ..OptimizerConfig::default()
    };
    let out = rgd(
        &initial_profile(scene.element_count(), cfg.rng_seed),
        &cfg,
        &watch,
    )
    .unwrap();
    let f: Vec<f64> = out.trace.rows.iter().map(|r| r.f).collect();
    let increases = f.windows(2).filter(|p| p[1] >= p[0] || p[1].is_nan()).count();
    let worst = watch.worst.get();
    let pass = increases == 0 && worst < 1e-12;
    (pass,
        format!(
            "N = 1600, {} iterations ({}), non-decreasing steps {increases}, worst modulus error {worst:.1e}",
            out.trace.iterations(),
            out.status.as_str()
        ),
    )
}

fn ac07_acceleration_speedup() -> Outcome {
    let start = Instant::now();
    let mut ratios = Vec::new();
    for seed in 0..10 {
        let mut spec = ExperimentSpec::for_kind(ExperimentKind::Trace);
        spec.optimizer.rng_seed = seed;
        let report = run_trace(&spec).unwrap();
        ratios.push(report.speedup_ratio().unwrap_or(f64::INFINITY));
    }
    let hits = ratios.iter().filter(|&&r| r <= 0.7).count();
    let secs = start.elapsed().as_secs_f64();
    let pass = hits >= 8 && secs <= 600.0;
    (pass,
        format!(
            "N = 1600, seeds 0-9, accelerated/plain iterations: {} -> {hits}/10 <= 0.7, {secs:.0} s",
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn ac08_distance_trend() -> Outcome {
    let rows = distance_rows();
    let d: Vec<f64> = rows.iter().map(|r| r.x).collect();
    let rcrb = rcrbs(rows);
    let rho = spearman(&d, &rcrb);
    let aware_wins = rows.iter().all(|r| {
        r.rcrb_emi_unaware
            .is_some_and(|u| r.rcrb_emi_aware <= u * 1.01)
    });

    // Same sweep with the agent-anchor direct path attenuated by 60 dB.
    let mut blocked = distance_spec();
    blocked.scene.direct_path_loss_db = 60.0;
    let blocked_rows = run_sweep_distance(&blocked, jobs()).unwrap();
    let blocked_rcrb = rcrbs(&blocked_rows);
    eprintln!(
        "AC8 note: direct path -60 dB: RCRB {} (Spearman {:.3})",
        fmt_list(&blocked_rcrb),
        spearman(&d, &blocked_rcrb)
    );

    (rho > 0.95 && aware_wins,
        format!(
            "d = {:?} m, RCRB {} (Spearman {rho:.3}, need > 0.95); EMI-aware <= unaware on every row: {aware_wins}",
            d,
            fmt_list(&rcrb)
        ),
    )
}

fn ac09_size_trend() -> Outcome {
    let rows = size_rows();
    let a: Vec<f64> = rows.iter().map(|r| r.x).collect();
    let rcrb = rcrbs(rows);
    let rho = spearman(&a, &rcrb);
    (
        rho < -0.95,
        format!(
            "a = {a:?} m, RCRB {} (Spearman {rho:.3}, need < -0.95)",
            fmt_list(&rcrb)
        ),
    )
}

fn ac10_beats_random() -> Outcome {
    let rows: Vec<&SweepRow> = distance_rows().iter().chain(size_rows()).collect();
    let margins: Vec<f64> = rows
        .iter()
        .map(|r| r.rcrb_random.map_or(f64::NAN, |b| r.rcrb_emi_aware / b))
        .collect();
    let pass = margins.iter().all(|&m| m <= 1.01);
    (
        pass,
        format!(
            "{} sweep rows, optimized / best-of-50-random: {}",
            rows.len(),
            margins
                .iter()
                .map(|m| format!("{m:.3}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

fn ac11_mle_sanity() -> Outcome {
    let spec = ExperimentSpec::for_kind(ExperimentKind::MleCheck);
    let report = mle_check(&spec, jobs()).unwrap();
    (
        report.trials >= 500 && report.ratio >= 0.9,
        format!(
            "{} (need ratio >= 0.9, trials >= 500)",
            report.summary_line()
        ),
    )
}

fn ac12_determinism() -> Outcome {
    let small = |kind: ExperimentKind| {
        let mut spec = ExperimentSpec::for_kind(kind);
        spec.plate_side = Some(0.2);
        spec.random_k = 10;
        spec.mc_trials = 20;
        spec.sweep = match kind {
            ExperimentKind::SweepDistance => vec![15.0, 25.0],
            ExperimentKind::SweepSize => vec![0.1, 0.2],
            _ => Vec::new(),
        };
        spec
    };
    let run = |kind: ExperimentKind| -> Vec<String> {
        let spec = small(kind);
        let p = spec.provenance();
        match kind {
            ExperimentKind::Solve => {
                let r = solve(&spec).unwrap();
                vec![
                    r.summary_table(&p).to_csv_string(),
                    trace_table(&r.outcome.trace, &p).to_csv_string(),
                    r.outcome.w.to_csv(),
                ]
            }
            ExperimentKind::Trace => {
                let r = run_trace(&spec).unwrap();
                vec![
                    trace_table(&r.plain.trace, &p).to_csv_string(),
                    trace_table(&r.accelerated.trace, &p).to_csv_string(),
                    r.summary_table(&p).to_csv_string(),
                ]
            }
            ExperimentKind::SweepDistance => {
                vec![
                    SweepRow::table(&run_sweep_distance(&spec, jobs()).unwrap(), &p)
                        .to_csv_string(),
                ]
            }
            ExperimentKind::SweepSize => {
                vec![SweepRow::table(&run_sweep_size(&spec, jobs()).unwrap(), &p).to_csv_string()]
            }
            ExperimentKind::MleCheck => {
                let r = mle_check(&spec, jobs()).unwrap();
                vec![
                    r.summary_table(&p).to_csv_string(),
                    r.trials_table(&p).to_csv_string(),
                ]
            }
            ExperimentKind::Validate => vec![validate(None).unwrap().table(&p).to_csv_string()],
        }
    };
    let kinds = [
        ExperimentKind::Solve,
        ExperimentKind::Trace,
        ExperimentKind::SweepDistance,
        ExperimentKind::SweepSize,
        ExperimentKind::MleCheck,
        ExperimentKind::Validate,
    ];
    let differing: Vec<&str> = kinds
        .iter()
        .filter(|&&k| run(k) != run(k))
        .map(|k| k.as_str())
        .collect();
    (
        differing.is_empty(),
        format!("verbs with differing CSV output on rerun: {differing:?}"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("AC1", ac01_gradient_oracle),
        ("AC2", ac02_fim_oracle),
        ("AC3", ac03_schur_identity),
        ("AC4", ac04_manifold_suite),
        ("AC5", ac05_kkt_suite),
        ("AC6", ac06_monotone_descent),
        ("AC7", ac07_acceleration_speedup),
        ("AC8", ac08_distance_trend),
        ("AC9", ac09_size_trend),
        ("AC10", ac10_beats_random),
        ("AC11", ac11_mle_sanity),
        ("AC12", ac12_determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (id, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let (pass, detail) = catch_unwind(run).unwrap_or_else(|_| (false, "panicked".into()));
        println!("{id} {} {detail}", if pass { "PASS" } else { "FAIL" });
        failed += usize::from(!pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
