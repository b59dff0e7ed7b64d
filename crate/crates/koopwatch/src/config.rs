//! Run configuration: one JSON file drives every stage.
//!
//! Optional sections fall back to the defaults of the case studies
//! (0.25 s sampling, 100 s windows re-estimated every 25 s, D = 100
//! dictionary functions). Sub-seeds are derived from the global seed per
//! stage so runs are reproducible end to end.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::{BinarizeMode, DetectConfig};
use crate::error::{Error, Result};
use crate::feedersim::{Bess, Bus, Line, ScriptedEvent};
use crate::kernel::KernelMode;
use crate::koopman::{SolverConfig, StepRule, DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Global seed; stage seeds derive from it.
    pub seed: u64,
    pub input: InputConfig,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub kernel: KernelSettings,
    #[serde(default)]
    pub dictionary: DictionarySettings,
    #[serde(default)]
    pub window: WindowSettings,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub detect: DetectSettings,
    #[serde(default)]
    pub cluster: ClusterSettings,
    #[serde(default)]
    pub simulate: SimulateSettings,
}

/// Either a named preset or an external CSV (with optional ground-truth
/// events for scoring).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct InputConfig {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub events: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PathsConfig {
    /// Output directory; the CLI `--out` flag overrides it.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelModeSetting {
    Pointwise,
    Lagged,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelSettings {
    /// Bandwidth; omitted means the median heuristic over the
    /// calibration prefix.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Channel-index pairs; omitted means all i < j.
    #[serde(default)]
    pub pairs: Option<Vec<[usize; 2]>>,
    #[serde(default)]
    pub include_raw: bool,
    #[serde(default = "default_kernel_mode")]
    pub mode: KernelModeSetting,
    /// Trailing-subsequence length for lagged mode.
    #[serde(default = "default_lag")]
    pub lag: usize,
    /// Samples used by the median heuristic.
    #[serde(default = "default_calibration_prefix")]
    pub calibration_prefix: usize,
}

fn default_kernel_mode() -> KernelModeSetting {
    KernelModeSetting::Pointwise
}

fn default_lag() -> usize {
    4
}

fn default_calibration_prefix() -> usize {
    401
}

impl Default for KernelSettings {
    fn default() -> Self {
        KernelSettings {
            sigma: None,
            pairs: None,
            include_raw: false,
            mode: default_kernel_mode(),
            lag: default_lag(),
            calibration_prefix: default_calibration_prefix(),
        }
    }
}

impl KernelSettings {
    pub fn mode(&self) -> KernelMode {
        match self.mode {
            KernelModeSetting::Pointwise => KernelMode::Pointwise,
            KernelModeSetting::Lagged => KernelMode::Lagged { w: self.lag },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DictionarySettings {
    #[serde(default = "default_dictionary_size")]
    pub d: usize,
    /// Center perturbation scale, in units of per-channel std.
    #[serde(default = "default_dictionary_scale")]
    pub scale: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_dictionary_size() -> usize {
    100
}

fn default_dictionary_scale() -> f64 {
    60.0
}

impl Default for DictionarySettings {
    fn default() -> Self {
        DictionarySettings {
            d: default_dictionary_size(),
            scale: default_dictionary_scale(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowSettings {
    #[serde(default = "default_window_seconds")]
    pub t_seconds: f64,
    #[serde(default = "default_stride_seconds")]
    pub stride_seconds: f64,
}

fn default_window_seconds() -> f64 {
    100.0
}

fn default_stride_seconds() -> f64 {
    25.0
}

impl Default for WindowSettings {
    fn default() -> Self {
        WindowSettings {
            t_seconds: default_window_seconds(),
            stride_seconds: default_stride_seconds(),
        }
    }
}

impl WindowSettings {
    /// Convert seconds to whole sample counts; both must divide evenly.
    pub fn to_samples(&self, dt: f64) -> Result<(usize, usize)> {
        let t = whole_samples(self.t_seconds, dt, "window T")?;
        let stride = whole_samples(self.stride_seconds, dt, "stride")?;
        if t < 1 || stride < 1 {
            return Err(Error::Config("window and stride must be at least one sample".into()));
        }
        Ok((t, stride))
    }
}

fn whole_samples(seconds: f64, dt: f64, what: &str) -> Result<usize> {
    let ratio = seconds / dt;
    let rounded = ratio.round();
    if (ratio - rounded).abs() > 1e-9 * ratio.abs().max(1.0) {
        return Err(Error::Config(format!(
            "{what} of {seconds} s is not a whole number of {dt} s samples"
        )));
    }
    Ok(rounded as usize)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSettings {
    #[serde(default = "default_solver_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_solver_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_step_rule")]
    pub step_rule: StepRule,
}

fn default_solver_max_iterations() -> usize {
    DEFAULT_MAX_ITERATIONS
}

fn default_solver_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

fn default_step_rule() -> StepRule {
    StepRule::FixedLipschitz
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iterations: default_solver_max_iterations(),
            tolerance: default_solver_tolerance(),
            step_rule: default_step_rule(),
        }
    }
}

impl SolverSettings {
    pub fn to_solver_config(&self) -> SolverConfig {
        SolverConfig {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            step_rule: self.step_rule,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectSettings {
    #[serde(default = "default_binarize_threshold")]
    pub binarize_threshold: f64,
    #[serde(default = "default_binarize_mode")]
    pub binarize_mode: BinarizeMode,
    #[serde(default = "default_change_threshold")]
    pub change_threshold: f64,
}

fn default_binarize_threshold() -> f64 {
    1e-6
}

fn default_binarize_mode() -> BinarizeMode {
    BinarizeMode::Relative
}

fn default_change_threshold() -> f64 {
    0.05
}

impl Default for DetectSettings {
    fn default() -> Self {
        DetectSettings {
            binarize_threshold: default_binarize_threshold(),
            binarize_mode: default_binarize_mode(),
            change_threshold: default_change_threshold(),
        }
    }
}

impl DetectSettings {
    pub fn to_detect_config(&self) -> DetectConfig {
        DetectConfig {
            binarize_threshold: self.binarize_threshold,
            binarize_mode: self.binarize_mode,
            change_threshold: self.change_threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterSettings {
    /// Cluster count; omitted means the preset's scenario count (or the
    /// number of distinct labels for external data).
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_cluster_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Cluster raw operator entries instead of binary patterns
    /// (comparison mode only).
    #[serde(default)]
    pub use_raw_values: bool,
}

fn default_restarts() -> usize {
    10
}

fn default_cluster_iterations() -> usize {
    100
}

impl Default for ClusterSettings {
    fn default() -> Self {
        ClusterSettings {
            k: None,
            restarts: default_restarts(),
            max_iterations: default_cluster_iterations(),
            seed: None,
            use_raw_values: false,
        }
    }
}

/// Overrides (or, without a preset, a full description) of the scenario.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimulateSettings {
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub load_fluctuation: Option<f64>,
    #[serde(default)]
    pub noise_vm_rel: Option<f64>,
    #[serde(default)]
    pub noise_va_deg: Option<f64>,
    #[serde(default)]
    pub feeder: Option<FeederSpec>,
    #[serde(default)]
    pub bess: Option<Vec<Bess>>,
    #[serde(default)]
    pub events: Option<Vec<ScriptedEvent>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeederSpec {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    #[serde(default = "default_source_voltage")]
    pub source_voltage: f64,
}

fn default_source_voltage() -> f64 {
    1.0
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path_str = path.as_ref().display().to_string();
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path_str, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Json { path: path_str, message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.input.preset, &self.input.csv) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("input must name a preset or a csv, not both".into()))
            }
            (None, None) => {
                return Err(Error::Config("input needs either a preset or a csv path".into()))
            }
            _ => {}
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be >= 0".into()));
        }
        if self.dictionary.d < 2 {
            return Err(Error::Config("dictionary.d must be >= 2".into()));
        }
        self.detect.to_detect_config().validate()?;
        self.solver.to_solver_config().validate()?;
        Ok(())
    }

    /// Canonical hash of the fully resolved configuration; embedded in
    /// stage outputs so artifacts can be matched to the run that made
    /// them.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    /// Stage sub-seed derived from the global seed.
    pub fn derive_seed(&self, stage: &str) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(stage.as_bytes());
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> &'static str {
        r#"{"seed": 7, "input": {"preset": "case1"}, "alpha": 0.1, "beta": 0.4}"#
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: RunConfig = serde_json::from_str(minimal_json()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.dictionary.d, 100);
        assert_eq!(cfg.window.t_seconds, 100.0);
        assert_eq!(cfg.window.stride_seconds, 25.0);
        assert_eq!(cfg.detect.change_threshold, 0.05);
        assert_eq!(cfg.cluster.restarts, 10);
    }

    #[test]
    fn missing_required_field_names_it() {
        let err = serde_json::from_str::<RunConfig>(r#"{"seed": 7, "input": {"preset": "x"}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("alpha"), "{err}");
    }

    #[test]
    fn hash_changes_with_any_field() {
        let a: RunConfig = serde_json::from_str(minimal_json()).unwrap();
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 8;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn derive_seed_varies_by_stage_and_seed() {
        let a: RunConfig = serde_json::from_str(minimal_json()).unwrap();
        assert_ne!(a.derive_seed("simulate"), a.derive_seed("dictionary"));
        let mut b = a.clone();
        b.seed = 8;
        assert_ne!(a.derive_seed("simulate"), b.derive_seed("simulate"));
    }

    #[test]
    fn window_sample_conversion() {
        let w = WindowSettings { t_seconds: 100.0, stride_seconds: 25.0 };
        assert_eq!(w.to_samples(0.25).unwrap(), (400, 100));
        let bad = WindowSettings { t_seconds: 100.1, stride_seconds: 25.0 };
        assert!(bad.to_samples(0.25).is_err());
    }

    #[test]
    fn input_must_be_exactly_one_source() {
        let both = r#"{"seed": 1, "input": {"preset": "case1", "csv": "x.csv"},
                       "alpha": 0.1, "beta": 0.0}"#;
        let cfg: RunConfig = serde_json::from_str(both).unwrap();
        assert!(cfg.validate().is_err());
        let neither = r#"{"seed": 1, "input": {}, "alpha": 0.1, "beta": 0.0}"#;
        let cfg: RunConfig = serde_json::from_str(neither).unwrap();
        assert!(cfg.validate().is_err());
    }
}
