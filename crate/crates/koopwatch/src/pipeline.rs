//! Stage wiring: simulate -> detect -> cluster -> report, with file
//! handoff so each stage is independently re-runnable.
//!
//! Artifacts in the output directory:
//!
//! * `dataset.csv`    - measured channels (timeseries CSV format)
//! * `events.json`    - ground-truth event list
//! * `estimates.json` - operator estimates plus resolved run metadata
//! * `patterns.json`  - binarized sparsity patterns
//! * `flags.jsonl`    - one incident flag per line
//! * `clusters.json`  - clustering assignment and misclassification rates
//! * `run_meta.json`  - config hash, stage seeds, resolved defaults, and
//!   the only timestamp (excluded from reproducibility comparisons)

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cluster::{kmeans, kmeans_vectors, misclassification_rate, ClusterConfig, ClusterResult};
use crate::config::RunConfig;
use crate::detect::{binarize_all, detect_incidents, pattern_distance, IncidentFlag, SparsityPattern};
use crate::error::{Error, Result};
use crate::feedersim::{self, presets, run_scenario, ScenarioScript};
use crate::kernel::{augment, median_sigma, KernelConfig};
use crate::koopman::{estimate_sequence, generate_centers, EstimateRecord, KoopmanEstimate};
use crate::timeseries::{self, Dataset, EventLog};

pub const DATASET_FILE: &str = "dataset.csv";
pub const EVENTS_FILE: &str = "events.json";
pub const ESTIMATES_FILE: &str = "estimates.json";
pub const PATTERNS_FILE: &str = "patterns.json";
pub const FLAGS_FILE: &str = "flags.jsonl";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const RUN_META_FILE: &str = "run_meta.json";

/// Label used for windows that precede every scripted event.
pub const BASELINE_LABEL: &str = "baseline";

pub struct SimulateArtifacts {
    pub dataset: Dataset,
    pub events: EventLog,
}

pub struct DetectArtifacts {
    pub estimates: Vec<KoopmanEstimate>,
    pub patterns: Vec<SparsityPattern>,
    pub flags: Vec<IncidentFlag>,
    pub sigma: f64,
}

pub struct ClusterArtifacts {
    pub result: ClusterResult,
    pub labels: Vec<String>,
    pub transition: Vec<bool>,
    pub misclassification: f64,
    pub misclassification_excluding_transitions: f64,
}

/// Generate the scenario data and write `dataset.csv` + `events.json`.
pub fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<SimulateArtifacts> {
    let (feeder, bess, script, preset_name) = resolve_scenario(cfg)?;
    let seed = cfg.derive_seed("simulate");
    let (dataset, events) = run_scenario(&feeder, &bess, &script, seed)?;

    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    timeseries::write_csv(&dataset, out_dir.join(DATASET_FILE))?;
    events.write_json(out_dir.join(EVENTS_FILE))?;

    update_run_meta(
        cfg,
        out_dir,
        "simulate",
        json!({
            "seed": seed,
            "preset": preset_name,
            "steps": script.num_steps(),
            "dt": script.dt,
            "duration": script.duration,
            "load_fluctuation": script.load_fluctuation,
            "noise_vm_rel": script.noise_vm_rel,
            "noise_va_deg": script.noise_va_deg,
        }),
    )?;
    Ok(SimulateArtifacts { dataset, events })
}

/// Resolve the preset (with overrides) or a fully custom scenario.
fn resolve_scenario(
    cfg: &RunConfig,
) -> Result<(feedersim::FeederModel, Vec<feedersim::Bess>, ScenarioScript, String)> {
    let sim = &cfg.simulate;
    let (feeder, bess, mut script, name) = if let Some(name) = &cfg.input.preset {
        let preset = presets::preset(name)?;
        (preset.feeder, preset.bess, preset.script, name.clone())
    } else {
        let feeder_spec = sim.feeder.as_ref().ok_or_else(|| {
            Error::Config("simulate needs input.preset or a simulate.feeder description".into())
        })?;
        let feeder = feedersim::FeederModel::new(
            feeder_spec.buses.clone(),
            feeder_spec.lines.clone(),
            feeder_spec.source_voltage,
        )?;
        let bess = sim
            .bess
            .clone()
            .ok_or_else(|| Error::Config("custom scenario needs simulate.bess".into()))?;
        let script = ScenarioScript {
            duration: sim.duration.unwrap_or(600.0),
            dt: sim.dt.unwrap_or(presets::DEFAULT_DT),
            load_fluctuation: sim
                .load_fluctuation
                .unwrap_or(presets::DEFAULT_LOAD_FLUCTUATION),
            noise_vm_rel: sim.noise_vm_rel.unwrap_or(presets::DEFAULT_NOISE_VM_REL),
            noise_va_deg: sim.noise_va_deg.unwrap_or(presets::DEFAULT_NOISE_VA_DEG),
            events: sim.events.clone().unwrap_or_default(),
        };
        (feeder, bess, script, "custom".to_string())
    };

    if cfg.input.preset.is_some() {
        if let Some(d) = sim.duration {
            script.duration = d;
        }
        if let Some(dt) = sim.dt {
            script.dt = dt;
        }
        if let Some(f) = sim.load_fluctuation {
            script.load_fluctuation = f;
        }
        if let Some(n) = sim.noise_vm_rel {
            script.noise_vm_rel = n;
        }
        if let Some(n) = sim.noise_va_deg {
            script.noise_va_deg = n;
        }
        if let Some(events) = &sim.events {
            script.events = events.clone();
        }
    }
    Ok((feeder, bess, script, name))
}

fn dataset_path(cfg: &RunConfig, out_dir: &Path) -> PathBuf {
    cfg.input
        .csv
        .clone()
        .unwrap_or_else(|| out_dir.join(DATASET_FILE))
}

fn events_path(cfg: &RunConfig, out_dir: &Path) -> PathBuf {
    cfg.input
        .events
        .clone()
        .unwrap_or_else(|| out_dir.join(EVENTS_FILE))
}

/// Augment, lift, estimate, and flag; writes estimates, patterns, and
/// flags files.
pub fn cmd_detect(cfg: &RunConfig, out_dir: &Path) -> Result<DetectArtifacts> {
    let raw = timeseries::load_csv(dataset_path(cfg, out_dir))?;

    let pairs: Vec<(usize, usize)> = match &cfg.kernel.pairs {
        Some(pairs) => pairs.iter().map(|p| (p[0], p[1])).collect(),
        None => KernelConfig::all_pairs(raw.num_channels(), 1.0).pairs,
    };
    let sigma = match cfg.kernel.sigma {
        Some(s) => s,
        None => median_sigma(&raw, &pairs, cfg.kernel.calibration_prefix)?,
    };
    let kernel_cfg = KernelConfig {
        sigma,
        pairs,
        include_raw: cfg.kernel.include_raw,
        mode: cfg.kernel.mode(),
    };
    let augmented = augment(&raw, &kernel_cfg)?;

    let (window_len, stride) = cfg.window.to_samples(augmented.dt())?;
    if augmented.num_samples() < window_len + 1 {
        return Err(Error::Data(format!(
            "window exceeds data: need {} samples, have {}",
            window_len + 1,
            augmented.num_samples()
        )));
    }

    let dict_seed = cfg.dictionary.seed.unwrap_or_else(|| cfg.derive_seed("dictionary"));
    let first_window = augmented.slice_window(1, window_len + 1)?;
    let dictionary =
        generate_centers(&first_window, cfg.dictionary.d, cfg.dictionary.scale, dict_seed)?;

    let estimates = estimate_sequence(
        &augmented,
        &dictionary,
        window_len,
        stride,
        cfg.alpha,
        cfg.beta,
        &cfg.solver.to_solver_config(),
    )?;

    let detect_cfg = cfg.detect.to_detect_config();
    let patterns = binarize_all(&estimates, &detect_cfg)?;
    let flags = detect_incidents(&estimates, &detect_cfg, augmented.dt(), augmented.t0())?;

    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    write_estimates_file(cfg, out_dir, &estimates, sigma, dict_seed, window_len, stride)?;
    write_patterns_file(cfg, out_dir, &patterns, augmented.dt(), augmented.t0())?;
    write_flags_file(out_dir, &flags)?;

    update_run_meta(
        cfg,
        out_dir,
        "detect",
        json!({
            "sigma": sigma,
            "kernel_pairs": kernel_cfg.pairs.len(),
            "include_raw": kernel_cfg.include_raw,
            "dictionary_seed": dict_seed,
            "d": cfg.dictionary.d,
            "scale": cfg.dictionary.scale,
            "window_samples": window_len,
            "stride_samples": stride,
            "alpha": cfg.alpha,
            "beta": cfg.beta,
            "binarize_threshold": cfg.detect.binarize_threshold,
            "change_threshold": cfg.detect.change_threshold,
        }),
    )?;
    Ok(DetectArtifacts { estimates, patterns, flags, sigma })
}

#[derive(Serialize, Deserialize)]
struct EstimatesFile {
    config_hash: String,
    sigma: f64,
    dictionary_seed: u64,
    window_samples: usize,
    stride_samples: usize,
    estimates: Vec<EstimateRecord>,
}

fn write_estimates_file(
    cfg: &RunConfig,
    out_dir: &Path,
    estimates: &[KoopmanEstimate],
    sigma: f64,
    dictionary_seed: u64,
    window_samples: usize,
    stride_samples: usize,
) -> Result<()> {
    let file = EstimatesFile {
        config_hash: cfg.config_hash(),
        sigma,
        dictionary_seed,
        window_samples,
        stride_samples,
        estimates: estimates.iter().map(EstimateRecord::from).collect(),
    };
    write_json(out_dir.join(ESTIMATES_FILE), &file)
}

#[derive(Serialize, Deserialize)]
struct PatternsFile {
    config_hash: String,
    d: usize,
    dt: f64,
    t0: f64,
    binarize_threshold: f64,
    change_threshold: f64,
    patterns: Vec<PatternRecord>,
}

#[derive(Serialize, Deserialize)]
struct PatternRecord {
    window: [usize; 2],
    end_time: f64,
    threshold_used: f64,
    /// One string of '0'/'1' per matrix row.
    rows: Vec<String>,
}

fn write_patterns_file(
    cfg: &RunConfig,
    out_dir: &Path,
    patterns: &[SparsityPattern],
    dt: f64,
    t0: f64,
) -> Result<()> {
    let records: Vec<PatternRecord> = patterns
        .iter()
        .map(|p| {
            let (s, e) = p.source_window();
            let rows = p
                .bits()
                .rows()
                .into_iter()
                .map(|row| row.iter().map(|b| if *b == 1 { '1' } else { '0' }).collect())
                .collect();
            PatternRecord {
                window: [s, e],
                end_time: t0 + (e.saturating_sub(1)) as f64 * dt,
                threshold_used: p.threshold_used(),
                rows,
            }
        })
        .collect();
    let file = PatternsFile {
        config_hash: cfg.config_hash(),
        d: patterns.first().map(|p| p.bits().nrows()).unwrap_or(0),
        dt,
        t0,
        binarize_threshold: cfg.detect.binarize_threshold,
        change_threshold: cfg.detect.change_threshold,
        patterns: records,
    };
    write_json(out_dir.join(PATTERNS_FILE), &file)
}

fn read_patterns_file(path: &Path) -> Result<(PatternsFile, Vec<SparsityPattern>)> {
    let path_str = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(&path_str, e))?;
    let file: PatternsFile = serde_json::from_str(&text)
        .map_err(|e| Error::Json { path: path_str.clone(), message: e.to_string() })?;
    let mut patterns = Vec::with_capacity(file.patterns.len());
    for record in &file.patterns {
        let d = record.rows.len();
        let mut bits = Array2::zeros((d, d));
        for (i, row) in record.rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Json {
                    path: path_str.clone(),
                    message: format!("pattern row {i} has length {} != {d}", row.len()),
                });
            }
            for (j, ch) in row.chars().enumerate() {
                bits[[i, j]] = match ch {
                    '0' => 0u8,
                    '1' => 1u8,
                    other => {
                        return Err(Error::Json {
                            path: path_str.clone(),
                            message: format!("invalid pattern character `{other}`"),
                        })
                    }
                };
            }
        }
        patterns.push(SparsityPattern::from_bits(
            bits,
            (record.window[0], record.window[1]),
            record.threshold_used,
        )?);
    }
    Ok((file, patterns))
}

fn write_flags_file(out_dir: &Path, flags: &[IncidentFlag]) -> Result<()> {
    let path = out_dir.join(FLAGS_FILE);
    let path_str = path.display().to_string();
    let mut text = String::new();
    for flag in flags {
        let line = serde_json::to_string(flag)
            .map_err(|e| Error::Json { path: path_str.clone(), message: e.to_string() })?;
        text.push_str(&line);
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path_str, e))
}

fn read_flags_file(path: &Path) -> Result<Vec<IncidentFlag>> {
    let path_str = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(&path_str, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            serde_json::from_str(line)
                .map_err(|e| Error::Json { path: path_str.clone(), message: e.to_string() })
        })
        .collect()
}

/// Label each pattern window by the scenario active at its end, cluster,
/// and score against the ground truth.
pub fn cmd_cluster(cfg: &RunConfig, out_dir: &Path) -> Result<ClusterArtifacts> {
    let (patterns_file, patterns) = read_patterns_file(&out_dir.join(PATTERNS_FILE))?;
    let events = EventLog::read_json(events_path(cfg, out_dir))?;

    let labels: Vec<String> = patterns_file
        .patterns
        .iter()
        .map(|p| {
            events
                .label_at(p.end_time)
                .unwrap_or(BASELINE_LABEL)
                .to_string()
        })
        .collect();
    let transition: Vec<bool> = patterns_file
        .patterns
        .iter()
        .map(|p| {
            let start_time = patterns_file.t0
                + (p.window[0].saturating_sub(1)) as f64 * patterns_file.dt;
            events
                .events()
                .iter()
                .any(|e| start_time < e.time && e.time <= p.end_time)
        })
        .collect();

    let mut distinct = Vec::new();
    for l in &labels {
        if !distinct.contains(l) {
            distinct.push(l.clone());
        }
    }
    let k = cfg.cluster.k.unwrap_or(distinct.len().max(1));
    let cluster_cfg = ClusterConfig {
        k,
        restarts: cfg.cluster.restarts,
        max_iterations: cfg.cluster.max_iterations,
        seed: cfg.cluster.seed.unwrap_or_else(|| cfg.derive_seed("cluster")),
    };

    let result = if cfg.cluster.use_raw_values {
        let estimates = read_estimates_file(&out_dir.join(ESTIMATES_FILE))?;
        let vectors: Vec<Vec<f64>> = estimates.iter().map(|e| e.k.clone()).collect();
        kmeans_vectors(&vectors, &cluster_cfg)?
    } else {
        kmeans(&patterns, &cluster_cfg)?
    };

    let misclassification = misclassification_rate(&result, &labels)?;
    let kept: Vec<usize> =
        (0..labels.len()).filter(|i| !transition[*i]).collect();
    let misclassification_excluding_transitions = if kept.is_empty() {
        misclassification
    } else {
        let sub = ClusterResult {
            assignment: kept.iter().map(|&i| result.assignment[i]).collect(),
            centroids: result.centroids.clone(),
            inertia: result.inertia,
        };
        let sub_labels: Vec<String> = kept.iter().map(|&i| labels[i].clone()).collect();
        misclassification_rate(&sub, &sub_labels)?
    };

    let clusters = json!({
        "config_hash": cfg.config_hash(),
        "k": k,
        "seed": cluster_cfg.seed,
        "restarts": cluster_cfg.restarts,
        "assignment": result.assignment,
        "inertia": result.inertia,
        "labels": labels,
        "transition": transition,
        "misclassification": misclassification,
        "misclassification_excluding_transitions": misclassification_excluding_transitions,
    });
    write_json(out_dir.join(CLUSTERS_FILE), &clusters)?;

    update_run_meta(
        cfg,
        out_dir,
        "cluster",
        json!({
            "k": k,
            "seed": cluster_cfg.seed,
            "restarts": cluster_cfg.restarts,
            "use_raw_values": cfg.cluster.use_raw_values,
        }),
    )?;
    Ok(ClusterArtifacts {
        result,
        labels,
        transition,
        misclassification,
        misclassification_excluding_transitions,
    })
}

fn read_estimates_file(path: &Path) -> Result<Vec<EstimateRecord>> {
    let path_str = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(&path_str, e))?;
    let file: EstimatesFile = serde_json::from_str(&text)
        .map_err(|e| Error::Json { path: path_str, message: e.to_string() })?;
    Ok(file.estimates)
}

/// Per-window TSV summary of the run.
pub fn cmd_report(cfg: &RunConfig, out_dir: &Path) -> Result<String> {
    let (patterns_file, patterns) = read_patterns_file(&out_dir.join(PATTERNS_FILE))?;
    let events = EventLog::read_json(events_path(cfg, out_dir)).unwrap_or_default();
    let flags = read_flags_file(&out_dir.join(FLAGS_FILE)).unwrap_or_default();

    let mut out = String::from(
        "window\tt_start\tt_end\tlabel\ttransition\tnonzeros\tdistance_prev\tflagged\n",
    );
    for (i, (record, pattern)) in patterns_file.patterns.iter().zip(&patterns).enumerate() {
        let start_time =
            patterns_file.t0 + (record.window[0].saturating_sub(1)) as f64 * patterns_file.dt;
        let label = events.label_at(record.end_time).unwrap_or(BASELINE_LABEL);
        let transition = events
            .events()
            .iter()
            .any(|e| start_time < e.time && e.time <= record.end_time);
        let distance = if i == 0 {
            String::from("-")
        } else {
            format!("{:.6}", pattern_distance(&patterns[i - 1], pattern)?)
        };
        let flagged = flags.iter().any(|f| f.window_index == i);
        out.push_str(&format!(
            "{i}\t{start_time}\t{}\t{label}\t{transition}\t{}\t{distance}\t{flagged}\n",
            record.end_time,
            pattern.ones(),
        ));
    }
    Ok(out)
}

fn write_json(path: PathBuf, value: &impl Serialize) -> Result<()> {
    let path_str = path.display().to_string();
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Json { path: path_str.clone(), message: e.to_string() })?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path_str, e))
}

/// Merge one stage's resolved settings into `run_meta.json`. The file
/// carries the run's only timestamp.
fn update_run_meta(cfg: &RunConfig, out_dir: &Path, stage: &str, details: Value) -> Result<()> {
    let path = out_dir.join(RUN_META_FILE);
    let path_str = path.display().to_string();
    let mut meta: Value = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| Error::Json { path: path_str.clone(), message: e.to_string() })?,
        Err(_) => json!({}),
    };
    let obj = meta
        .as_object_mut()
        .ok_or_else(|| Error::Json { path: path_str.clone(), message: "not an object".into() })?;
    obj.insert("config_hash".into(), json!(cfg.config_hash()));
    obj.insert("seed".into(), json!(cfg.seed));
    obj.insert(
        "timestamp_unix".into(),
        json!(std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)),
    );
    let stages = obj
        .entry("stages")
        .or_insert_with(|| json!({}))
        .as_object_mut()
        .ok_or_else(|| Error::Json { path: path_str.clone(), message: "bad stages".into() })?;
    stages.insert(stage.into(), details);
    write_json(path, &meta)
}
