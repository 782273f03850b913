use rayon::prelude::*;

use super::emit::{float_cell, opt_cell, CsvTable, Provenance};
use super::{baseline_rng, initial_profile, thread_pool, validate, ExperimentKind, ExperimentSpec, DESK_SCALE_MAX_ELEMENTS};
use crate::error::{Error, Result};
use crate::fisher::{CrbProblem, NoiseModel};
use crate::manifold::PhaseProfile;
use crate::optimizer::{accelerated_run, ExitStatus, OptimizerConfig, OptimizerTrace, RunOutcome, Tolerance};
use crate::scene::{Scene, SceneConfig};

/// Outcome of a single optimization.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub w0: PhaseProfile,
    pub outcome: RunOutcome,
    pub rcrb_initial: f64,
    /// RCRB of the final profile evaluated with the EMI-aware noise power.
    pub rcrb_under_emi: f64,
}

impl SolveReport {
    pub fn summary_table(&self, p: &Provenance) -> CsvTable {
        let mut t = CsvTable::new(&[
            "elements",
            "rcrb_initial",
            "rcrb_final",
            "rcrb_under_emi",
            "iterations",
            "grad_norm",
            "status",
        ])
        .with_provenance(p);
        t.push(vec![
            self.w0.len().to_string(),
            float_cell(self.rcrb_initial),
            float_cell(self.outcome.f.sqrt()),
            float_cell(self.rcrb_under_emi),
            self.outcome.trace.iterations().to_string(),
            float_cell(self.outcome.grad_norm),
            self.outcome.status.as_str().to_string(),
        ]);
        t
    }
}

pub fn trace_table(trace: &OptimizerTrace, p: &Provenance) -> CsvTable {
    let mut t = CsvTable::new(&["iteration", "f", "rcrb", "grad_norm", "step", "accel_flag"]).with_provenance(p);
    for r in &trace.rows {
        t.push(vec![
            r.iteration.to_string(),
            float_cell(r.f),
            float_cell(r.rcrb()),
            float_cell(r.grad_norm),
            float_cell(r.step),
            r.accel.code().to_string(),
        ]);
    }
    t
}

fn run_design(scene: &Scene, spec: &ExperimentSpec, noise: NoiseModel, w0: &PhaseProfile, cfg: &OptimizerConfig) -> Result<RunOutcome> {
    let problem = CrbProblem::new(scene, noise)?.with_gradient_mode(spec.gradient_mode);
    accelerated_run(w0, cfg, &problem)
}

/// Optimizes the scene of `spec` (with `plate_side` applied) from the
/// seeded random start under `spec.design_noise`.
pub fn solve(spec: &ExperimentSpec) -> Result<SolveReport> {
    spec.validate()?;
    let scene = Scene::new(spec.run_scene())?;
    let w0 = initial_profile(scene.element_count(), spec.seed());
    let outcome = run_design(&scene, spec, spec.design_noise, &w0, &spec.optimizer)?;
    let aware = CrbProblem::new(&scene, NoiseModel::EmiAware)?;
    Ok(SolveReport {
        rcrb_initial: aware.rcrb(&w0)?,
        rcrb_under_emi: aware.rcrb(&outcome.w)?,
        w0,
        outcome,
    })
}

/// Paired plain / accelerated runs from the same start.
#[derive(Debug, Clone)]
pub struct TraceReport {
    pub plain: RunOutcome,
    pub accelerated: RunOutcome,
    /// First accelerated iteration whose objective is at or below the plain
    /// run's final value (the accelerated run is continued within the plain
    /// iteration budget when it stops earlier).
    pub matched_iterations: Option<usize>,
}

impl TraceReport {
    pub fn plain_iterations(&self) -> usize {
        self.plain.trace.iterations()
    }

    /// `matched_iterations / plain_iterations`.
    pub fn speedup_ratio(&self) -> Option<f64> {
        let plain = self.plain_iterations();
        match self.matched_iterations {
            Some(m) if plain > 0 => Some(m as f64 / plain as f64),
            Some(_) => Some(1.0),
            None => None,
        }
    }

    pub fn summary_line(&self) -> String {
        format!(
            "plain: {} iterations ({}), rcrb {:.6e}; accelerated: {} iterations ({}), rcrb {:.6e}; accelerated reaches plain final rcrb at {}",
            self.plain_iterations(),
            self.plain.status.as_str(),
            self.plain.f.sqrt(),
            self.accelerated.trace.iterations(),
            self.accelerated.status.as_str(),
            self.accelerated.f.sqrt(),
            match (self.matched_iterations, self.speedup_ratio()) {
                (Some(m), Some(r)) => format!("{m} (ratio {r:.3})"),
                _ => "never".to_string(),
            }
        )
    }

    pub fn summary_table(&self, p: &Provenance) -> CsvTable {
        let mut t = CsvTable::new(&[
            "plain_iterations",
            "plain_rcrb",
            "plain_status",
            "accel_iterations",
            "accel_rcrb",
            "accel_status",
            "accel_iterations_to_plain_rcrb",
            "ratio",
        ])
        .with_provenance(p);
        t.push(vec![
            self.plain_iterations().to_string(),
            float_cell(self.plain.f.sqrt()),
            self.plain.status.as_str().into(),
            self.accelerated.trace.iterations().to_string(),
            float_cell(self.accelerated.f.sqrt()),
            self.accelerated.status.as_str().into(),
            self.matched_iterations.map(|m| m.to_string()).unwrap_or_default(),
            opt_cell(self.speedup_ratio()),
        ]);
        t
    }
}

/// Runs the optimizer with and without acceleration from the same start.
/// With acceleration disabled in the spec both runs are plain.
pub fn run_trace(spec: &ExperimentSpec) -> Result<TraceReport> {
    spec.validate()?;
    let scene = Scene::new(spec.run_scene())?;
    let w0 = initial_profile(scene.element_count(), spec.seed());
    let problem = CrbProblem::new(&scene, spec.design_noise)?.with_gradient_mode(spec.gradient_mode);
    let plain_cfg = OptimizerConfig {
        acceleration_enabled: false,
        ..spec.optimizer.clone()
    };
    let plain = accelerated_run(&w0, &plain_cfg, &problem)?;
    let accelerated = accelerated_run(&w0, &spec.optimizer, &problem)?;
    let mut matched = accelerated.trace.iterations_to_reach(plain.f);
    if matched.is_none() && accelerated.status == ExitStatus::Converged && plain.f.is_finite() {
        let chase = OptimizerConfig {
            tolerance: Tolerance::Absolute,
            epsilon: f64::MIN_POSITIVE,
            max_outer_iters: plain.trace.iterations(),
            ..spec.optimizer.clone()
        };
        matched = accelerated_run(&w0, &chase, &problem)?.trace.iterations_to_reach(plain.f);
    }
    Ok(TraceReport {
        plain,
        accelerated,
        matched_iterations: matched,
    })
}

/// One point of a distance or size sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Agent distance or plate side (m).
    pub x: f64,
    pub elements: usize,
    pub rcrb_initial: f64,
    /// Optimized with the EMI-aware noise power.
    pub rcrb_emi_aware: f64,
    /// Optimized assuming thermal noise only, evaluated under EMI.
    pub rcrb_emi_unaware: Option<f64>,
    /// Best of the random phase profiles.
    pub rcrb_random: Option<f64>,
    /// Optimized and evaluated without EMI.
    pub rcrb_emi_free: Option<f64>,
    pub iterations: usize,
    pub status: String,
    /// The EMI-aware design lost to a baseline by more than 1 %.
    pub local_minimum: bool,
}

const SWEEP_COLUMNS: [&str; 10] = [
    "x",
    "elements",
    "rcrb_initial",
    "rcrb_emi_aware",
    "rcrb_emi_unaware",
    "rcrb_random",
    "rcrb_emi_free",
    "iterations",
    "status",
    "local_minimum",
];

/// Relative slack when comparing the optimized design with baselines.
pub const BASELINE_SLACK: f64 = 0.01;

impl SweepRow {
    pub fn succeeded(&self) -> bool {
        self.rcrb_emi_aware.is_finite()
    }

    fn failed(x: f64, elements: usize, status: String) -> Self {
        SweepRow {
            x,
            elements,
            rcrb_initial: f64::NAN,
            rcrb_emi_aware: f64::NAN,
            rcrb_emi_unaware: None,
            rcrb_random: None,
            rcrb_emi_free: None,
            iterations: 0,
            status,
            local_minimum: false,
        }
    }

    pub fn table(rows: &[SweepRow], p: &Provenance) -> CsvTable {
        let mut t = CsvTable::new(&SWEEP_COLUMNS).with_provenance(p);
        for r in rows {
            t.push(vec![
                float_cell(r.x),
                r.elements.to_string(),
                float_cell(r.rcrb_initial),
                float_cell(r.rcrb_emi_aware),
                opt_cell(r.rcrb_emi_unaware),
                opt_cell(r.rcrb_random),
                opt_cell(r.rcrb_emi_free),
                r.iterations.to_string(),
                r.status.clone(),
                u8::from(r.local_minimum).to_string(),
            ]);
        }
        t
    }

    pub fn from_table(t: &CsvTable) -> Result<Vec<SweepRow>> {
        let cols: Vec<usize> = SWEEP_COLUMNS
            .iter()
            .map(|c| t.column(c).ok_or_else(|| Error::Dimension(format!("missing column {c}"))))
            .collect::<Result<_>>()?;
        let bad = |cell: &str| Error::Dimension(format!("bad sweep cell {cell:?}"));
        let float = |cell: &str| cell.parse::<f64>().map_err(|_| bad(cell));
        let opt = |cell: &str| if cell.is_empty() { Ok(None) } else { float(cell).map(Some) };
        let int = |cell: &str| cell.parse::<usize>().map_err(|_| bad(cell));
        t.rows
            .iter()
            .map(|r| {
                Ok(SweepRow {
                    x: float(&r[cols[0]])?,
                    elements: int(&r[cols[1]])?,
                    rcrb_initial: float(&r[cols[2]])?,
                    rcrb_emi_aware: float(&r[cols[3]])?,
                    rcrb_emi_unaware: opt(&r[cols[4]])?,
                    rcrb_random: opt(&r[cols[5]])?,
                    rcrb_emi_free: opt(&r[cols[6]])?,
                    iterations: int(&r[cols[7]])?,
                    status: r[cols[8]].clone(),
                    local_minimum: r[cols[9]] == "1",
                })
            })
            .collect()
    }
}

/// Computes one sweep row. Returns the EMI-aware optimum for warm starts.
fn sweep_row(spec: &ExperimentSpec, cfg: SceneConfig, x: f64, warm: Option<&PhaseProfile>) -> (SweepRow, Option<PhaseProfile>) {
    let elements = cfg.element_count();
    let scene = match Scene::new(cfg) {
        Ok(s) => s,
        Err(e) => return (SweepRow::failed(x, elements, format!("invalid_scene: {e}")), None),
    };
    match evaluate_row(spec, &scene, x, warm) {
        Ok(out) => out,
        Err(Error::DegenerateGeometry { .. }) => (
            SweepRow::failed(x, elements, ExitStatus::DegenerateScene.as_str().into()),
            None,
        ),
        Err(e) => (SweepRow::failed(x, elements, format!("error: {e}")), None),
    }
}

fn evaluate_row(spec: &ExperimentSpec, scene: &Scene, x: f64, warm: Option<&PhaseProfile>) -> Result<(SweepRow, Option<PhaseProfile>)> {
    let n = scene.element_count();
    let w0 = match warm {
        Some(w) if w.len() == n => w.clone(),
        _ => initial_profile(n, spec.seed()),
    };
    let aware = CrbProblem::new(scene, NoiseModel::EmiAware)?;
    let rcrb_initial = aware.rcrb(&w0)?;
    let design = run_design(scene, spec, NoiseModel::EmiAware, &w0, &spec.optimizer)?;
    if design.status == ExitStatus::DegenerateScene {
        return Ok((SweepRow::failed(x, n, design.status.as_str().into()), None));
    }
    let rcrb_emi_aware = design.f.sqrt();

    let b = &spec.baselines;
    let thermal = if b.emi_unaware || b.emi_free_reference {
        Some(run_design(scene, spec, NoiseModel::ThermalOnly, &w0, &spec.optimizer)?)
    } else {
        None
    };
    let rcrb_emi_unaware = match (&thermal, b.emi_unaware) {
        (Some(t), true) => Some(aware.rcrb(&t.w)?),
        _ => None,
    };
    let rcrb_emi_free = match (&thermal, b.emi_free_reference) {
        (Some(t), true) => Some(t.f.sqrt()),
        _ => None,
    };
    let rcrb_random = if b.random_phase && spec.random_k > 0 {
        let mut rng = baseline_rng(spec.seed());
        let mut best = f64::INFINITY;
        for _ in 0..spec.random_k {
            if let Ok(v) = aware.rcrb(&PhaseProfile::random(n, &mut rng)) {
                best = best.min(v);
            }
        }
        best.is_finite().then_some(best)
    } else {
        None
    };
    let beaten = |other: Option<f64>| other.is_some_and(|o| rcrb_emi_aware > o * (1.0 + BASELINE_SLACK));
    let row = SweepRow {
        x,
        elements: n,
        rcrb_initial,
        rcrb_emi_aware,
        rcrb_emi_unaware,
        rcrb_random,
        rcrb_emi_free,
        iterations: design.trace.iterations(),
        status: design.status.as_str().into(),
        local_minimum: beaten(rcrb_emi_unaware) || beaten(rcrb_random),
    };
    Ok((row, Some(design.w)))
}

fn run_rows(spec: &ExperimentSpec, scenes: Vec<(f64, SceneConfig)>, jobs: usize) -> Result<Vec<SweepRow>> {
    if spec.warm_start {
        let mut rows = Vec::with_capacity(scenes.len());
        let mut prev: Option<PhaseProfile> = None;
        for (x, cfg) in scenes {
            let (row, w) = sweep_row(spec, cfg, x, prev.as_ref());
            if w.is_some() {
                prev = w;
            }
            rows.push(row);
        }
        return Ok(rows);
    }
    let pool = thread_pool(jobs)?;
    Ok(pool.install(|| {
        scenes
            .into_par_iter()
            .map(|(x, cfg)| sweep_row(spec, cfg, x, None).0)
            .collect()
    }))
}

fn preflight() -> Result<()> {
    let report = validate(None)?;
    if report.passed() {
        Ok(())
    } else {
        Err(Error::config(format!(
            "pre-flight validation failed: {}",
            report.failures().join(", ")
        )))
    }
}

fn check_kind(spec: &ExperimentSpec, kind: ExperimentKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::config(format!(
            "experiment kind is {}, expected {}",
            spec.kind.as_str(),
            kind.as_str()
        )));
    }
    spec.validate()
}

/// RCRB against agent distance `d`, agent at `(q1, q2, d)`, plate side
/// `plate_side` (default 0.6 m). Rows run in a pool of `jobs` threads
/// (0 = all cores) unless warm starts are enabled.
pub fn run_sweep_distance(spec: &ExperimentSpec, jobs: usize) -> Result<Vec<SweepRow>> {
    check_kind(spec, ExperimentKind::SweepDistance)?;
    let mut base = spec.scene.clone();
    let side = spec.plate_side.unwrap_or(0.6);
    base.set_plate(side, side);
    check_size(spec, &base)?;
    preflight()?;
    let scenes = spec
        .sweep_values()
        .into_iter()
        .map(|d| {
            let mut cfg = base.clone();
            cfg.agent_position[2] = d;
            (d, cfg)
        })
        .collect();
    run_rows(spec, scenes, jobs)
}

/// RCRB against the side `a = b` of a square plate.
pub fn run_sweep_size(spec: &ExperimentSpec, jobs: usize) -> Result<Vec<SweepRow>> {
    check_kind(spec, ExperimentKind::SweepSize)?;
    if spec.warm_start {
        return Err(Error::config("warm_start needs a fixed element count; size sweeps change it"));
    }
    let mut scenes = Vec::new();
    for a in spec.sweep_values() {
        let mut cfg = spec.scene.clone();
        cfg.set_plate(a, a);
        check_size(spec, &cfg)?;
        scenes.push((a, cfg));
    }
    preflight()?;
    run_rows(spec, scenes, jobs)
}

fn check_size(spec: &ExperimentSpec, cfg: &SceneConfig) -> Result<()> {
    let n = cfg.element_count();
    if n > DESK_SCALE_MAX_ELEMENTS && !spec.allow_large_plate {
        return Err(Error::config(format!(
            "{n} elements exceed the desk-scale cap of {DESK_SCALE_MAX_ELEMENTS}; set allow_large_plate"
        )));
    }
    Ok(())
}
