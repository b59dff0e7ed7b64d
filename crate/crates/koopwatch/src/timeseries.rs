//! Multichannel time-series container, CSV ingestion, windowing, and
//! measurement-noise injection.
//!
//! Sample indexing is 1-based in the windowing API so that window bounds
//! line up with the sliding-window estimator; times are seconds.

use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for sampling-interval uniformity in `load_csv`.
const DT_REL_TOL: f64 = 1e-9;

/// Immutable, validated multichannel series sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    channels: Vec<String>,
    dt: f64,
    t0: f64,
    values: Array2<f64>, // (num_samples, num_channels)
}

impl Dataset {
    /// Build a dataset, validating every invariant.
    pub fn new(channels: Vec<String>, dt: f64, t0: f64, values: Array2<f64>) -> Result<Self> {
        if values.nrows() < 1 {
            return Err(Error::Data("no samples".into()));
        }
        if channels.is_empty() || values.ncols() != channels.len() {
            return Err(Error::Data(format!(
                "channel count mismatch: {} names, {} columns",
                channels.len(),
                values.ncols()
            )));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Data(format!("dt must be positive and finite, got {dt}")));
        }
        for (i, a) in channels.iter().enumerate() {
            if a.is_empty() {
                return Err(Error::Data(format!("channel {i} has empty name")));
            }
            for b in channels.iter().skip(i + 1) {
                if a == b {
                    return Err(Error::Data(format!("duplicate channel name `{a}`")));
                }
            }
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite sample value {v}")));
        }
        Ok(Dataset { channels, dt, t0, values })
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn num_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Row view of sample `i` (0-based).
    pub fn sample(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    /// Time of sample `i` (0-based).
    pub fn time_at(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// Inclusive window `[t1, t2]` of 1-based sample indices.
    pub fn slice_window(&self, t1: usize, t2: usize) -> Result<Dataset> {
        let n = self.num_samples();
        if t1 < 1 || t2 < t1 || t2 > n {
            return Err(Error::Bounds(format!(
                "window [{t1}, {t2}] invalid for {n} samples (need 1 <= t1 <= t2 <= {n})"
            )));
        }
        let values = self.values.slice(ndarray::s![t1 - 1..t2, ..]).to_owned();
        Ok(Dataset {
            channels: self.channels.clone(),
            dt: self.dt,
            t0: self.time_at(t1 - 1),
            values,
        })
    }

    /// Add zero-mean Gaussian measurement noise, one spec per channel.
    ///
    /// Deterministic for a fixed seed: noise draws depend only on
    /// `(self, specs, seed)`.
    pub fn add_noise(&self, specs: &[NoiseSpec], seed: u64) -> Result<Dataset> {
        if specs.len() != self.num_channels() {
            return Err(Error::Argument(format!(
                "noise spec count {} != channel count {}",
                specs.len(),
                self.num_channels()
            )));
        }
        for (c, s) in specs.iter().enumerate() {
            if s.magnitude() < 0.0 || !s.magnitude().is_finite() {
                return Err(Error::Argument(format!(
                    "noise magnitude for channel {c} must be finite and >= 0, got {}",
                    s.magnitude()
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut values = self.values.clone();
        for mut row in values.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                let z: f64 = unit.sample(&mut rng);
                match specs[c] {
                    NoiseSpec::Relative(m) => *v += z * m * v.abs(),
                    NoiseSpec::Absolute(s) => *v += z * s,
                }
            }
        }
        Dataset::new(self.channels.clone(), self.dt, self.t0, values)
    }
}

/// Per-channel noise standard deviation: relative to the sample magnitude
/// (voltage-magnitude channels) or absolute in channel units (angle
/// channels, degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    Relative(f64),
    Absolute(f64),
}

impl NoiseSpec {
    fn magnitude(&self) -> f64 {
        match *self {
            NoiseSpec::Relative(m) | NoiseSpec::Absolute(m) => m,
        }
    }
}

/// Load a dataset from CSV with header `t,<ch1>,<ch2>,...`.
///
/// The sampling interval is inferred from the time column and must be
/// uniform within a relative tolerance of 1e-9.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(&path_str, std::io::Error::other(e.to_string())),
            _ => Error::Format { path: path_str.clone(), message: e.to_string() },
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Format { path: path_str.clone(), message: e.to_string() })?
        .clone();
    if headers.is_empty() || headers.len() < 2 {
        return Err(Error::Format {
            path: path_str,
            message: "header must be `t,<ch1>,...` with at least one channel".into(),
        });
    }
    let channels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let ncols = channels.len();

    let mut times = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        // header is line 1, first data row is line 2
        let line = idx + 2;
        let record = record.map_err(|e| Error::Parse {
            path: path_str.clone(),
            line,
            message: e.to_string(),
        })?;
        if record.len() != ncols + 1 {
            return Err(Error::Parse {
                path: path_str.clone(),
                line,
                message: format!("expected {} fields, got {}", ncols + 1, record.len()),
            });
        }
        let mut fields = record.iter();
        let t_field = fields.next().expect("time field");
        let t: f64 = t_field.parse().map_err(|_| Error::Parse {
            path: path_str.clone(),
            line,
            message: format!("invalid time value `{t_field}`"),
        })?;
        times.push(t);
        for field in fields {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: path_str.clone(),
                line,
                message: format!("invalid numeric value `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite value `{field}` at line {line} of {path_str}"
                )));
            }
            rows.push(v);
        }
    }

    if times.is_empty() {
        return Err(Error::Data("no samples".into()));
    }
    if times.len() == 1 {
        return Err(Error::Data("cannot infer dt from a single sample".into()));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::Format {
            path: path_str,
            message: format!("time column must be strictly increasing, first step is {dt}"),
        });
    }
    for (i, w) in times.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - dt).abs() > DT_REL_TOL * dt.abs() {
            return Err(Error::Format {
                path: path_str,
                message: format!(
                    "non-uniform sampling interval: step {} at row {} vs dt {}",
                    step,
                    i + 2,
                    dt
                ),
            });
        }
    }

    let values = Array2::from_shape_vec((times.len(), ncols), rows)
        .map_err(|e| Error::Data(e.to_string()))?;
    Dataset::new(channels, dt, times[0], values)
}

/// Write a dataset in the same CSV format `load_csv` reads.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(&path_str, e))?,
    );
    let mut header = String::from("t");
    for c in ds.channels() {
        header.push(',');
        header.push_str(c);
    }
    writeln!(out, "{header}").map_err(|e| Error::io(&path_str, e))?;
    for i in 0..ds.num_samples() {
        let mut line = format_float(ds.time_at(i));
        for v in ds.sample(i) {
            line.push(',');
            line.push_str(&format_float(*v));
        }
        writeln!(out, "{line}").map_err(|e| Error::io(&path_str, e))?;
    }
    out.flush().map_err(|e| Error::io(&path_str, e))?;
    Ok(())
}

/// Shortest decimal representation that parses back to the same f64.
fn format_float(v: f64) -> String {
    format!("{v}")
}

/// Ground-truth scenario event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub label: String,
    pub description: String,
}

/// Time-stamped scenario events, strictly increasing in time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new(events: Vec<Event>) -> Result<Self> {
        for w in events.windows(2) {
            if !(w[1].time > w[0].time) {
                return Err(Error::Data(format!(
                    "event times must be strictly increasing: {} then {}",
                    w[0].time, w[1].time
                )));
            }
        }
        if let Some(e) = events.iter().find(|e| e.label.is_empty()) {
            return Err(Error::Data(format!("event at t={} has empty label", e.time)));
        }
        Ok(EventLog { events })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Label of the scenario active at time `t`: the last event at or
    /// before `t`, if any.
    pub fn label_at(&self, t: f64) -> Option<&str> {
        self.events
            .iter()
            .rev()
            .find(|e| e.time <= t)
            .map(|e| e.label.as_str())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path_str = path.as_ref().display().to_string();
        let text = serde_json::to_string_pretty(&self.events)
            .map_err(|e| Error::Json { path: path_str.clone(), message: e.to_string() })?;
        std::fs::write(path.as_ref(), text + "\n").map_err(|e| Error::io(&path_str, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path_str = path.as_ref().display().to_string();
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path_str, e))?;
        let events: Vec<Event> = serde_json::from_str(&text)
            .map_err(|e| Error::Json { path: path_str, message: e.to_string() })?;
        EventLog::new(events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    fn four_sample_ds() -> Dataset {
        Dataset::new(
            vec!["a".into()],
            0.25,
            0.0,
            array![[1.0], [2.0], [3.0], [4.0]],
        )
        .unwrap()
    }

    #[test]
    fn load_csv_reads_back_simple_file() {
        let f = write_temp("t,v1\n0,1.0\n0.25,1.1\n0.5,1.2\n");
        let ds = load_csv(f.path()).unwrap();
        assert_eq!(ds.num_samples(), 3);
        assert_eq!(ds.num_channels(), 1);
        assert_eq!(ds.channels(), ["v1"]);
        assert!((ds.dt() - 0.25).abs() < 1e-15);
        assert_eq!(ds.values().column(0).to_vec(), vec![1.0, 1.1, 1.2]);
    }

    #[test]
    fn load_csv_rejects_non_uniform_dt() {
        let f = write_temp("t,v1\n0,1.0\n0.25,1.1\n0.55,1.2\n");
        let err = load_csv(f.path()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "got {err:?}");
    }

    #[test]
    fn load_csv_rejects_empty_body() {
        let f = write_temp("t,v1\n");
        let err = load_csv(f.path()).unwrap_err();
        assert!(err.to_string().contains("no samples"), "got {err}");
    }

    #[test]
    fn load_csv_reports_line_of_malformed_row() {
        let f = write_temp("t,v1\n0,1.0\n0.25,oops\n");
        match load_csv(f.path()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_csv_rejects_nan() {
        let f = write_temp("t,v1\n0,1.0\n0.25,NaN\n");
        let err = load_csv(f.path()).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "got {err:?}");
    }

    #[test]
    fn csv_round_trip() {
        let ds = four_sample_ds();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, f.path()).unwrap();
        let back = load_csv(f.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn slice_window_is_inclusive_on_both_ends() {
        let ds = four_sample_ds();
        let w = ds.slice_window(1, 3).unwrap();
        assert_eq!(w.num_samples(), 3);
        assert_eq!(w.values().column(0).to_vec(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn slice_window_single_sample() {
        let ds = four_sample_ds();
        let w = ds.slice_window(2, 2).unwrap();
        assert_eq!(w.num_samples(), 1);
        assert_eq!(w.values()[[0, 0]], 2.0);
        assert!((w.t0() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn slice_window_rejects_reversed_bounds() {
        let ds = four_sample_ds();
        assert!(matches!(ds.slice_window(3, 2), Err(Error::Bounds(_))));
        assert!(matches!(ds.slice_window(0, 2), Err(Error::Bounds(_))));
        assert!(matches!(ds.slice_window(1, 5), Err(Error::Bounds(_))));
    }

    #[test]
    fn slice_full_window_is_identity() {
        let ds = four_sample_ds();
        assert_eq!(ds.slice_window(1, ds.num_samples()).unwrap(), ds);
    }

    #[test]
    fn slice_composition() {
        let ds = four_sample_ds();
        let inner = ds.slice_window(2, 4).unwrap().slice_window(1, 2).unwrap();
        let direct = ds.slice_window(2, 3).unwrap();
        assert_eq!(inner, direct);
    }

    #[test]
    fn zero_noise_is_identity() {
        let ds = four_sample_ds();
        let out = ds.add_noise(&[NoiseSpec::Relative(0.0)], 7).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn noise_is_deterministic_in_seed() {
        let ds = four_sample_ds();
        let a = ds.add_noise(&[NoiseSpec::Relative(0.01)], 42).unwrap();
        let b = ds.add_noise(&[NoiseSpec::Relative(0.01)], 42).unwrap();
        let c = ds.add_noise(&[NoiseSpec::Relative(0.01)], 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_rejects_negative_magnitude() {
        let ds = four_sample_ds();
        let err = ds.add_noise(&[NoiseSpec::Relative(-0.1)], 1).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn relative_noise_std_matches_configured_sigma() {
        // Constant channel at 1.0 with relative magnitude 1e-4: sample
        // standard deviation over 1e5 draws must be within 5% of 1e-4.
        let n = 100_000;
        let ds = Dataset::new(
            vec!["c".into()],
            1.0,
            0.0,
            Array2::from_elem((n, 1), 1.0),
        )
        .unwrap();
        let noisy = ds.add_noise(&[NoiseSpec::Relative(1e-4)], 123).unwrap();
        let col = noisy.values().column(0);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        assert!(
            (std - 1e-4).abs() < 0.05 * 1e-4,
            "sample std {std} not within 5% of 1e-4"
        );
    }

    #[test]
    fn event_log_requires_increasing_times() {
        let ev = |t: f64| Event { time: t, label: "x".into(), description: String::new() };
        assert!(EventLog::new(vec![ev(1.0), ev(1.0)]).is_err());
        assert!(EventLog::new(vec![ev(1.0), ev(2.0)]).is_ok());
    }

    #[test]
    fn event_log_label_lookup() {
        let log = EventLog::new(vec![
            Event { time: 10.0, label: "a".into(), description: String::new() },
            Event { time: 20.0, label: "b".into(), description: String::new() },
        ])
        .unwrap();
        assert_eq!(log.label_at(5.0), None);
        assert_eq!(log.label_at(10.0), Some("a"));
        assert_eq!(log.label_at(19.9), Some("a"));
        assert_eq!(log.label_at(20.0), Some("b"));
    }
}
