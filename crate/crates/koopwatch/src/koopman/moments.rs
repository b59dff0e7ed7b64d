//! One-step moment matrices of a lifted data window.
//!
//! For the lifted samples `psi_1 .. psi_{M+1}`:
//!
//! ```text
//! A = (1/M) sum_j psi_j psi_{j+1}^T      G = (1/M) sum_j psi_j psi_j^T
//! ```
//!
//! `G` is a Gram matrix (symmetric positive semidefinite); the estimator
//! fits `A ~ G K`.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::timeseries::Dataset;

use super::dictionary::Dictionary;

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    a: Array2<f64>,
    g: Array2<f64>,
    pairs: usize,
}

impl Moments {
    /// Assemble from explicit matrices (mostly useful for tests and for
    /// solving with externally produced moments).
    pub fn new(a: Array2<f64>, g: Array2<f64>, pairs: usize) -> Result<Self> {
        if a.nrows() != a.ncols() || g.nrows() != g.ncols() || a.nrows() != g.nrows() {
            return Err(Error::Argument(format!(
                "moment matrices must be square and equally sized: A {:?}, G {:?}",
                a.dim(),
                g.dim()
            )));
        }
        if a.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite moment entry".into()));
        }
        Ok(Moments { a, g, pairs })
    }

    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn g(&self) -> &Array2<f64> {
        &self.g
    }

    /// Number of one-step pairs that entered the averages.
    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Lift every sample of `window` through `dict` and average the one-step
/// outer products. Needs at least two samples (M = samples - 1).
pub fn accumulate_moments(dict: &Dictionary, window: &Dataset) -> Result<Moments> {
    if window.num_channels() != dict.dim() {
        return Err(Error::Argument(format!(
            "window has {} channels but dictionary expects dimension {}",
            window.num_channels(),
            dict.dim()
        )));
    }
    let d = dict.size();
    accumulate_moments_with(window, d, |x, out| dict.eval_into(x, out))
}

/// Generic moment assembly over an arbitrary lifting function; used by
/// `accumulate_moments` and by tests that substitute a known lifting.
pub(crate) fn accumulate_moments_with(
    window: &Dataset,
    d: usize,
    lift: impl Fn(&[f64], &mut [f64]),
) -> Result<Moments> {
    let n = window.num_samples();
    if n < 2 {
        return Err(Error::WindowTooSmall { needed: 2, got: n });
    }
    let m = n - 1;

    // Lifted sample matrix, one row per sample.
    let mut psi = Array2::zeros((n, d));
    let mut buf = vec![0.0; d];
    let mut x = vec![0.0; window.num_channels()];
    for t in 0..n {
        for (c, v) in window.sample(t).iter().enumerate() {
            x[c] = *v;
        }
        lift(&x, &mut buf);
        for (i, v) in buf.iter().enumerate() {
            psi[[t, i]] = *v;
        }
    }

    let p0 = psi.slice(ndarray::s![..m, ..]);
    let p1 = psi.slice(ndarray::s![1.., ..]);
    let scale = 1.0 / m as f64;
    let a = p0.t().dot(&p1) * scale;
    let g = p0.t().dot(&p0) * scale;
    Moments::new(a, g, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn window(values: Array2<f64>) -> Dataset {
        let names = (0..values.ncols()).map(|i| format!("c{i}")).collect();
        Dataset::new(names, 1.0, 0.0, values).unwrap()
    }

    #[test]
    fn identity_lifting_on_two_samples() {
        // Window (2, 3) with psi(x) = x: A = 2*3 = 6, G = 2*2 = 4, M = 1.
        let w = window(array![[2.0], [3.0]]);
        let m = accumulate_moments_with(&w, 1, |x, out| out[0] = x[0]).unwrap();
        assert_eq!(m.a()[[0, 0]], 6.0);
        assert_eq!(m.g()[[0, 0]], 4.0);
        assert_eq!(m.pairs(), 1);
    }

    #[test]
    fn repeated_sample_makes_a_equal_g() {
        let w = window(array![[1.5, -2.0], [1.5, -2.0]]);
        let m = accumulate_moments_with(&w, 2, |x, out| out.copy_from_slice(x)).unwrap();
        assert_eq!(m.a(), m.g());
        // G = psi psi^T for psi = (1.5, -2.0)
        assert_eq!(m.g()[[0, 0]], 2.25);
        assert_eq!(m.g()[[0, 1]], -3.0);
        assert_eq!(m.g()[[1, 1]], 4.0);
    }

    #[test]
    fn gram_matrix_is_symmetric_psd() {
        let w = window(Array2::from_shape_fn((40, 2), |(t, c)| {
            ((t * 7 + c * 3) % 11) as f64 * 0.3 - 1.0
        }));
        let dict = crate::koopman::generate_centers(&w, 6, 0.5, 3).unwrap();
        let m = accumulate_moments(&dict, &w).unwrap();
        let g = m.g();
        for i in 0..m.dim() {
            for j in 0..m.dim() {
                assert!((g[[i, j]] - g[[j, i]]).abs() < 1e-12);
            }
        }
        // PSD via random quadratic forms.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let v: Vec<f64> = (0..m.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let gv = g.dot(&ndarray::Array1::from_vec(v.clone()));
            let q: f64 = v.iter().zip(gv.iter()).map(|(a, b)| a * b).sum();
            assert!(q >= -1e-10, "negative quadratic form {q}");
        }
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let w = window(array![[1.0]]);
        let err = accumulate_moments_with(&w, 1, |x, out| out[0] = x[0]).unwrap_err();
        assert!(matches!(err, Error::WindowTooSmall { needed: 2, got: 1 }));
    }
}
