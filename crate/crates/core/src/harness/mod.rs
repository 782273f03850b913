//! Experiment harness: experiment files, the trace and sweep studies with
//! their baselines, a Monte-Carlo estimator check, self-validation and CSV
//! output.
//!
//! An experiment file is TOML:
//!
//! ```toml
//! kind = "sweep_distance"
//! sweep = [10.0, 15.0, 20.0, 25.0, 30.0]
//! plate_side = 0.6
//! random_k = 50
//!
//! [baselines]
//! emi_free_reference = true
//!
//! [scene]
//! emi_flux_dbw_per_m2 = -70.0
//!
//! [optimizer]
//! memory_depth = 5
//! ```
//!
//! Every key is optional; missing `[scene]` keys take the reference values.

mod emit;
mod mle;
mod sweep;
mod validate;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fisher::{GradientMode, NoiseModel};
use crate::manifold::PhaseProfile;
use crate::optimizer::OptimizerConfig;
use crate::scene::SceneConfig;

pub use emit::{gnuplot_script, write_text, CsvTable, Provenance};
pub use mle::{estimate_position, mle_check, LikelihoodModel, MleReport, Trial};
pub use sweep::{run_sweep_distance, run_sweep_size, run_trace, solve, trace_table, SolveReport, SweepRow, TraceReport};
pub use validate::{validate, validation_scene, Check, ValidationReport};

/// Largest element count a sweep accepts without `allow_large_plate`.
pub const DESK_SCALE_MAX_ELEMENTS: usize = 1600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Solve,
    #[default]
    Trace,
    SweepDistance,
    SweepSize,
    Validate,
    MleCheck,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Solve => "solve",
            ExperimentKind::Trace => "trace",
            ExperimentKind::SweepDistance => "sweep_distance",
            ExperimentKind::SweepSize => "sweep_size",
            ExperimentKind::Validate => "validate",
            ExperimentKind::MleCheck => "mle_check",
        }
    }

    /// Sweep values used when the file gives none.
    pub fn default_sweep(self) -> Vec<f64> {
        match self {
            ExperimentKind::SweepDistance => vec![10.0, 15.0, 20.0, 25.0, 30.0],
            ExperimentKind::SweepSize => vec![0.2, 0.4, 0.6, 0.8],
            _ => Vec::new(),
        }
    }
}

/// Comparators computed on every sweep row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Baselines {
    /// Best of `random_k` uniform random phase profiles.
    pub random_phase: bool,
    /// Design assuming thermal noise only, evaluated under EMI.
    pub emi_unaware: bool,
    /// Design and evaluation with the EMI switched off.
    pub emi_free_reference: bool,
}

impl Default for Baselines {
    fn default() -> Self {
        Baselines {
            random_phase: true,
            emi_unaware: true,
            emi_free_reference: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Agent distances (m) or plate sides (m); empty means the kind default.
    pub sweep: Vec<f64>,
    /// Square plate side (m) applied to the scene for distance sweeps
    /// (default 0.6) and, when set, for single runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plate_side: Option<f64>,
    pub baselines: Baselines,
    pub random_k: usize,
    pub mc_trials: usize,
    /// Start each sweep row from the previous row's optimum (forces
    /// sequential execution; only meaningful when N is fixed).
    pub warm_start: bool,
    pub allow_large_plate: bool,
    /// Noise model the design is optimized under.
    pub design_noise: NoiseModel,
    pub gradient_mode: GradientMode,
    /// Output directory. Not part of the configuration hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub scene: SceneConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            kind: ExperimentKind::default(),
            sweep: Vec::new(),
            plate_side: None,
            baselines: Baselines::default(),
            random_k: 50,
            mc_trials: 500,
            warm_start: false,
            allow_large_plate: false,
            design_noise: NoiseModel::EmiAware,
            gradient_mode: GradientMode::Exact,
            out: None,
            scene: SceneConfig::reference(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn for_kind(kind: ExperimentKind) -> Self {
        ExperimentSpec {
            kind,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: PathBuf::from("<string>"),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment spec serializes")
    }

    pub fn seed(&self) -> u64 {
        self.optimizer.rng_seed
    }

    /// Sweep values in effect.
    pub fn sweep_values(&self) -> Vec<f64> {
        if self.sweep.is_empty() {
            self.kind.default_sweep()
        } else {
            self.sweep.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.optimizer.validate()?;
        if self.mc_trials == 0 {
            return Err(Error::config("mc_trials must be at least 1"));
        }
        if let Some(side) = self.plate_side {
            if !(side > 0.0) {
                return Err(Error::config("plate_side must be positive"));
            }
        }
        if matches!(self.kind, ExperimentKind::SweepDistance | ExperimentKind::SweepSize) {
            let values = self.sweep_values();
            if values.is_empty() {
                return Err(Error::config("sweep list is empty"));
            }
            if values.windows(2).any(|p| !(p[1] > p[0])) {
                return Err(Error::config("sweep values must be strictly increasing"));
            }
            if values.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::config("sweep values must be positive"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form with the output path removed.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = None;
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            config_hash: self.config_hash(),
            seed: self.seed(),
        }
    }

    /// Scene for a single run, with `plate_side` applied when set.
    pub fn run_scene(&self) -> SceneConfig {
        let mut cfg = self.scene.clone();
        if let Some(side) = self.plate_side {
            cfg.set_plate(side, side);
        }
        cfg
    }
}

/// Deterministic starting point of every run with this seed.
pub fn initial_profile(n: usize, seed: u64) -> PhaseProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PhaseProfile::random(n, &mut rng)
}

/// Independent stream for the random-phase baseline.
pub(crate) fn baseline_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

pub(crate) fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let spec = ExperimentSpec::from_toml("").unwrap();
        assert_eq!(spec, ExperimentSpec::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut spec = ExperimentSpec::for_kind(ExperimentKind::SweepSize);
        spec.sweep = vec![0.2, 0.3];
        spec.baselines.emi_free_reference = true;
        spec.scene.emi_flux_dbw_per_m2 = -60.0;
        let back = ExperimentSpec::from_toml(&spec.to_toml()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentSpec::from_toml("bogus = 1").is_err());
        assert!(ExperimentSpec::from_toml("[scene]\nbogus = 1").is_err());
    }

    #[test]
    fn hash_ignores_output_path_only() {
        let a = ExperimentSpec::default();
        let mut b = a.clone();
        b.out = Some(PathBuf::from("elsewhere"));
        assert_eq!(a.config_hash(), b.config_hash());
        b.optimizer.memory_depth = 6;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn sweep_lists_must_increase() {
        let mut spec = ExperimentSpec::for_kind(ExperimentKind::SweepDistance);
        spec.sweep = vec![10.0, 10.0];
        assert!(spec.validate().is_err());
        spec.sweep = vec![10.0, 12.0];
        assert!(spec.validate().is_ok());
    }
}
