//! Thin-plate radial-basis dictionary.
//!
//! Each dictionary function is `psi_i(x) = r^2 ln(r)` with
//! `r = ||x - c_i||_2`, taken as 0 at `r = 0` (the limit value). Centers
//! are drawn once from an early data window and held fixed afterwards so
//! that estimates from different windows live in the same coordinates.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::timeseries::Dataset;

/// Fixed set of distinct center points in the augmented state space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    centers: Array2<f64>, // (d, dim)
}

impl Dictionary {
    /// Build from explicit centers; rejects duplicates and `d < 2`.
    pub fn new(centers: Array2<f64>) -> Result<Self> {
        let d = centers.nrows();
        if d < 2 {
            return Err(Error::Argument(format!("dictionary needs at least 2 centers, got {d}")));
        }
        if let Some(v) = centers.iter().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite center coordinate {v}")));
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if centers.row(i) == centers.row(j) {
                    return Err(Error::Argument(format!("centers {i} and {j} coincide")));
                }
            }
        }
        Ok(Dictionary { centers })
    }

    pub fn size(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn centers(&self) -> &Array2<f64> {
        &self.centers
    }

    /// Evaluate all dictionary functions at `x`.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Argument(format!(
                "state dimension {} does not match center dimension {}",
                x.len(),
                self.dim()
            )));
        }
        let mut out = vec![0.0; self.size()];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// Evaluate into a caller-provided buffer of length `size()`.
    /// Assumes dimensions were already checked.
    pub(crate) fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, center) in self.centers.rows().into_iter().enumerate() {
            out[i] = thin_plate(x, center);
        }
    }
}

/// `r^2 ln(r)` evaluated as `0.5 * r^2 * ln(r^2)` to avoid a square root.
fn thin_plate(x: &[f64], c: ArrayView1<'_, f64>) -> f64 {
    let mut r2 = 0.0;
    for (a, b) in x.iter().zip(c.iter()) {
        let d = a - b;
        r2 += d * d;
    }
    if r2 == 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

/// Draw `d` distinct centers from the rows of `sample`, each perturbed by
/// zero-mean Gaussian noise with per-channel standard deviation
/// `scale * std(channel)`.
///
/// Duplicates are rejected and redrawn; if `100 * d` draws cannot produce
/// `d` distinct centers the data is considered degenerate.
pub fn generate_centers(sample: &Dataset, d: usize, scale: f64, seed: u64) -> Result<Dictionary> {
    if d < 2 {
        return Err(Error::Argument(format!("dictionary needs at least 2 centers, got {d}")));
    }
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::Argument(format!("scale must be finite and >= 0, got {scale}")));
    }
    let n = sample.num_samples();
    let dim = sample.num_channels();
    let stds = channel_stds(sample);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(d);
    let max_draws = 100 * d;
    let mut draws = 0;
    while centers.len() < d {
        if draws >= max_draws {
            return Err(Error::DegenerateData(format!(
                "could not draw {d} distinct centers in {max_draws} attempts"
            )));
        }
        draws += 1;
        let row = rng.gen_range(0..n);
        let base = sample.sample(row);
        let mut candidate = Vec::with_capacity(dim);
        for c in 0..dim {
            let z: f64 = unit.sample(&mut rng);
            candidate.push(base[c] + z * scale * stds[c]);
        }
        if centers.iter().any(|existing| existing == &candidate) {
            continue;
        }
        centers.push(candidate);
    }

    let flat: Vec<f64> = centers.into_iter().flatten().collect();
    let arr = Array2::from_shape_vec((d, dim), flat).expect("consistent center shape");
    Dictionary::new(arr)
}

/// Per-channel sample standard deviation (ddof = 1; 0 for single-sample
/// windows).
fn channel_stds(ds: &Dataset) -> Vec<f64> {
    let n = ds.num_samples();
    let values = ds.values();
    (0..ds.num_channels())
        .map(|c| {
            if n < 2 {
                return 0.0;
            }
            let col = values.column(c);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            var.sqrt()
        })
        .collect()
}
