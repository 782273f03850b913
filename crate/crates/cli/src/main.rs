use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ris_crb::harness::{
    gnuplot_script, mle_check, run_sweep_distance, run_sweep_size, run_trace, solve, trace_table, validate,
    write_text, ExperimentKind, ExperimentSpec, SweepRow,
};
use ris_crb::{GradientMode, NoiseModel, Scene};

/// Phase design of a reconfigurable intelligent surface for agent
/// localization: minimizes the position error bound under interference.
#[derive(Parser)]
#[command(name = "ris-crb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: `out` from the file, else `results`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Disables nonlinear acceleration.
    #[arg(long, global = true)]
    no_accel: bool,
    /// Designs assuming thermal noise only.
    #[arg(long, global = true)]
    emi_unaware: bool,
    #[arg(long, global = true, value_enum)]
    gradient_mode: Option<GradientArg>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GradientArg {
    Exact,
    /// Differentiates only the position block of the FIM.
    #[value(name = "qq-only", alias = "paper")]
    QqOnly,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one scene.
    Solve,
    /// Optimize with and without acceleration from the same start.
    Trace,
    /// RCRB against agent distance, with baselines.
    SweepDistance,
    /// RCRB against surface side length, with baselines.
    SweepSize,
    /// Monte-Carlo estimator RMSE against the RCRB.
    MleCheck,
    /// Numerical self-checks; exits nonzero on failure.
    Validate,
    /// Scene inspection.
    Scene {
        #[command(subcommand)]
        action: SceneAction,
    },
}

#[derive(Subcommand)]
enum SceneAction {
    /// Print derived geometry and the effective configuration.
    Dump,
}

impl Command {
    fn kind(&self) -> ExperimentKind {
        match self {
            Command::Solve | Command::Scene { .. } => ExperimentKind::Solve,
            Command::Trace => ExperimentKind::Trace,
            Command::SweepDistance => ExperimentKind::SweepDistance,
            Command::SweepSize => ExperimentKind::SweepSize,
            Command::MleCheck => ExperimentKind::MleCheck,
            Command::Validate => ExperimentKind::Validate,
        }
    }
}

const TRACE_GP: &str = "set datafile separator ','
set datafile commentschars '#'
set logscale y
set xlabel 'iteration'
set ylabel 'RCRB (m)'
plot 'trace_plain.csv' using 1:3 skip 1 with lines title 'plain', \\
     'trace_accel.csv' using 1:3 skip 1 with lines title 'accelerated'
";

fn load_spec(common: &Common, kind: ExperimentKind) -> ris_crb::Result<ExperimentSpec> {
    let mut spec = match &common.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    spec.kind = kind;
    if let Some(seed) = common.seed {
        spec.optimizer.rng_seed = seed;
    }
    if common.no_accel {
        spec.optimizer.acceleration_enabled = false;
    }
    if common.emi_unaware {
        spec.design_noise = NoiseModel::ThermalOnly;
    }
    match common.gradient_mode {
        Some(GradientArg::Exact) => spec.gradient_mode = GradientMode::Exact,
        Some(GradientArg::QqOnly) => spec.gradient_mode = GradientMode::QqOnly,
        None => {}
    }
    if let Some(out) = &common.out {
        spec.out = Some(out.clone());
    }
    spec.validate()?;
    Ok(spec)
}

fn out_dir(spec: &ExperimentSpec) -> PathBuf {
    spec.out.clone().unwrap_or_else(|| PathBuf::from("results"))
}

fn jobs(common: &Common) -> usize {
    common
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn written(path: &Path) {
    println!("wrote {}", path.display());
}

fn run(cli: &Cli) -> ris_crb::Result<bool> {
    let spec = load_spec(&cli.common, cli.command.kind())?;
    let dir = out_dir(&spec);
    let prov = spec.provenance();
    match &cli.command {
        Command::Solve => {
            let report = solve(&spec)?;
            report.summary_table(&prov).write(&dir.join("solve_summary.csv"))?;
            trace_table(&report.outcome.trace, &prov).write(&dir.join("solve_trace.csv"))?;
            write_text(&dir.join("solve_profile.csv"), &report.outcome.w.to_csv())?;
            println!(
                "rcrb {:.6e} m -> {:.6e} m after {} iterations ({})",
                report.rcrb_initial,
                report.outcome.f.sqrt(),
                report.outcome.trace.iterations(),
                report.outcome.status.as_str()
            );
            written(&dir);
        }
        Command::Trace => {
            let report = run_trace(&spec)?;
            trace_table(&report.plain.trace, &prov).write(&dir.join("trace_plain.csv"))?;
            trace_table(&report.accelerated.trace, &prov).write(&dir.join("trace_accel.csv"))?;
            report.summary_table(&prov).write(&dir.join("trace_summary.csv"))?;
            write_text(&dir.join("trace.gp"), TRACE_GP)?;
            println!("{}", report.summary_line());
            written(&dir);
        }
        Command::SweepDistance | Command::SweepSize => {
            let (rows, name, xlabel) = if matches!(cli.command, Command::SweepDistance) {
                (run_sweep_distance(&spec, jobs(&cli.common))?, "sweep_distance", "agent distance (m)")
            } else {
                (run_sweep_size(&spec, jobs(&cli.common))?, "sweep_size", "side length (m)")
            };
            let csv = format!("{name}.csv");
            SweepRow::table(&rows, &prov).write(&dir.join(&csv))?;
            let gp = gnuplot_script(
                &csv,
                xlabel,
                &[(4, "EMI-aware"), (5, "EMI-unaware"), (6, "random phase"), (7, "EMI-free")],
            );
            write_text(&dir.join(format!("{name}.gp")), &gp)?;
            for r in &rows {
                println!(
                    "x {:>8.3}  N {:>5}  rcrb {:.4e}  ({})",
                    r.x, r.elements, r.rcrb_emi_aware, r.status
                );
            }
            written(&dir);
        }
        Command::MleCheck => {
            let report = mle_check(&spec, jobs(&cli.common))?;
            report.summary_table(&prov).write(&dir.join("mle_summary.csv"))?;
            report.trials_table(&prov).write(&dir.join("mle_trials.csv"))?;
            println!("{}", report.summary_line());
            written(&dir);
        }
        Command::Validate => {
            let report = validate(cli.common.seed)?;
            report.table(&prov).write(&dir.join("validate.csv"))?;
            for c in &report.checks {
                println!(
                    "{:<18} {:.3e} < {:.0e}  {}",
                    c.name,
                    c.error,
                    c.tolerance,
                    if c.passed() { "ok" } else { "FAIL" }
                );
            }
            println!("exact vs J_qq-only gradient angle: {:.3} deg", report.gradient_mode_angle_deg);
            written(&dir);
            return Ok(report.passed());
        }
        Command::Scene { action: SceneAction::Dump } => {
            let scene = Scene::new(spec.run_scene())?;
            let text = format!("{}\n# effective configuration\n{}", scene.summary(), spec.to_toml());
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
