//! Dictionary lifting, moment assembly, and windowed sparse estimation of
//! the finite-dimensional Koopman operator approximation.

mod dictionary;
mod moments;
mod solver;

pub use dictionary::{generate_centers, Dictionary};
pub use moments::{accumulate_moments, Moments};
pub use solver::{
    kkt_residual, solve_sparse, solve_sparse_traced, KoopmanEstimate, SolverConfig, StepRule,
    DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE,
};

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::Dataset;

/// Estimate a sequence of operators over sliding windows.
///
/// Window `i` covers 1-based samples `[1 + i*stride, window_len + 1 + i*stride]`,
/// i.e. `window_len` one-step pairs each. The first window is solved with
/// the L1 term alone; every later window also couples to its predecessor
/// (weight `beta`) and warm-starts from it.
pub fn estimate_sequence(
    ds: &Dataset,
    dict: &Dictionary,
    window_len: usize,
    stride: usize,
    alpha: f64,
    beta: f64,
    cfg: &SolverConfig,
) -> Result<Vec<KoopmanEstimate>> {
    if window_len < 1 {
        return Err(Error::Argument("window length must be >= 1 pair".into()));
    }
    if stride < 1 {
        return Err(Error::Argument("stride must be >= 1 sample".into()));
    }
    let n = ds.num_samples();
    if n < window_len + 1 {
        return Err(Error::Data(format!(
            "window exceeds data: need {} samples, have {n}",
            window_len + 1
        )));
    }

    let mut estimates: Vec<KoopmanEstimate> = Vec::new();
    let mut start = 1usize;
    let mut index = 0usize;
    while start + window_len <= n {
        let end = start + window_len;
        let result = (|| -> Result<KoopmanEstimate> {
            let window = ds.slice_window(start, end)?;
            let moments = accumulate_moments(dict, &window)?;
            let mut est = match estimates.last() {
                None => solve_sparse(&moments, alpha, 0.0, None, cfg)?,
                Some(prev) => solve_sparse(&moments, alpha, beta, Some(prev.k()), cfg)?,
            };
            est.set_window((start, end));
            Ok(est)
        })();
        estimates.push(result.map_err(|e| e.in_window(index))?);
        start += stride;
        index += 1;
    }
    Ok(estimates)
}

/// JSON-facing form of an estimate: the operator is stored row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub window: [usize; 2],
    pub alpha: f64,
    pub beta: f64,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub d: usize,
    pub k: Vec<f64>,
}

impl From<&KoopmanEstimate> for EstimateRecord {
    fn from(est: &KoopmanEstimate) -> Self {
        EstimateRecord {
            window: [est.window().0, est.window().1],
            alpha: est.alpha(),
            beta: est.beta(),
            objective: est.objective(),
            converged: est.converged(),
            iterations: est.iterations(),
            d: est.dim(),
            k: est.k().iter().copied().collect(),
        }
    }
}

impl EstimateRecord {
    pub fn into_estimate(self) -> Result<KoopmanEstimate> {
        if self.k.len() != self.d * self.d {
            return Err(Error::Data(format!(
                "estimate record claims d={} but holds {} values",
                self.d,
                self.k.len()
            )));
        }
        let k = Array2::from_shape_vec((self.d, self.d), self.k)
            .map_err(|e| Error::Data(e.to_string()))?;
        let mut est = KoopmanEstimate::from_parts(
            k,
            (0, 0),
            self.alpha,
            self.beta,
            self.objective,
            self.iterations,
            self.converged,
        )?;
        est.set_window((self.window[0], self.window[1]));
        Ok(est)
    }
}

const KOOPEST_MAGIC: &[u8; 8] = b"KOOPEST1";

/// Compact binary export of one operator: 8-byte magic and the row-major
/// entries as little-endian f64. The dimension is implied by the length.
pub fn write_koopest(path: impl AsRef<Path>, k: &Array2<f64>) -> Result<()> {
    let path_str = path.as_ref().display().to_string();
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path.as_ref()).map_err(|e| Error::io(&path_str, e))?,
    );
    out.write_all(KOOPEST_MAGIC).map_err(|e| Error::io(&path_str, e))?;
    for v in k.iter() {
        out.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&path_str, e))?;
    }
    out.flush().map_err(|e| Error::io(&path_str, e))?;
    Ok(())
}

/// Read a square operator written by [`write_koopest`].
pub fn read_koopest(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path_str = path.as_ref().display().to_string();
    let mut file = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(&path_str, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(&path_str, e))?;
    if bytes.len() < 8 || &bytes[..8] != KOOPEST_MAGIC {
        return Err(Error::Format { path: path_str, message: "missing KOOPEST1 header".into() });
    }
    let body = &bytes[8..];
    if body.len() % 8 != 0 {
        return Err(Error::Format {
            path: path_str,
            message: "body length is not a multiple of 8".into(),
        });
    }
    let count = body.len() / 8;
    let d = (count as f64).sqrt().round() as usize;
    if d * d != count {
        return Err(Error::Format {
            path: path_str,
            message: format!("{count} values do not form a square matrix"),
        });
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Array2::from_shape_vec((d, d), values).map_err(|e| Error::Data(e.to_string()))
}
