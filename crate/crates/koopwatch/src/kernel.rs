//! Gaussian-kernel data augmentation.
//!
//! Lifts N raw channels into pairwise similarity features
//! `g(x_i, x_j) = exp(-||x_i - x_j||^2 / (2 sigma))`, which is useful when
//! sensing is scarce: the relationships between streams carry more
//! information than the individual streams.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::Dataset;

/// How the two streams of a pair are compared at each output step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    /// Compare the instantaneous scalar values (length-1 vectors).
    /// Preserves the sample count.
    Pointwise,
    /// Compare trailing subsequences of length `w`; drops the first
    /// `w - 1` samples.
    Lagged { w: usize },
}

/// Resolved augmentation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    /// Kernel bandwidth adjustment parameter, > 0.
    pub sigma: f64,
    /// Channel-index pairs to compare.
    pub pairs: Vec<(usize, usize)>,
    /// Append the original channels after the similarity features.
    pub include_raw: bool,
    pub mode: KernelMode,
}

impl KernelConfig {
    /// All unordered pairs `i < j` over `num_channels`, pointwise mode.
    pub fn all_pairs(num_channels: usize, sigma: f64) -> Self {
        let mut pairs = Vec::new();
        for i in 0..num_channels {
            for j in (i + 1)..num_channels {
                pairs.push((i, j));
            }
        }
        KernelConfig { sigma, pairs, include_raw: false, mode: KernelMode::Pointwise }
    }

    pub fn validate(&self, num_channels: usize) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Argument(format!(
                "sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        for &(i, j) in &self.pairs {
            if i == j {
                return Err(Error::Config(format!("pair ({i}, {j}) compares a channel to itself")));
            }
            if i >= num_channels || j >= num_channels {
                return Err(Error::Config(format!(
                    "pair ({i}, {j}) out of range for {num_channels} channels"
                )));
            }
        }
        if self.pairs.is_empty() && !self.include_raw {
            return Err(Error::Config(
                "no pairs configured and include_raw is false: output would be empty".into(),
            ));
        }
        if let KernelMode::Lagged { w } = self.mode {
            if w < 1 {
                return Err(Error::Config("lagged mode needs w >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Similarity of two equal-length vectors, in (0, 1]; 1 iff equal.
pub fn gaussian_kernel(xi: &[f64], xj: &[f64], sigma: f64) -> Result<f64> {
    if xi.len() != xj.len() {
        return Err(Error::Argument(format!(
            "vector length mismatch: {} vs {}",
            xi.len(),
            xj.len()
        )));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Argument(format!("sigma must be positive and finite, got {sigma}")));
    }
    let d2: f64 = xi
        .iter()
        .zip(xj)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum();
    Ok((-d2 / (2.0 * sigma)).exp())
}

/// Lift raw channels into similarity features.
///
/// Each pair `(i, j)` yields one output channel `k_<i>_<j>`; the raw
/// channels are appended afterwards when `include_raw` is set.
pub fn augment(ds: &Dataset, cfg: &KernelConfig) -> Result<Dataset> {
    cfg.validate(ds.num_channels())?;

    let (start, t0) = match cfg.mode {
        KernelMode::Pointwise => (0usize, ds.t0()),
        KernelMode::Lagged { w } => {
            if ds.num_samples() < w {
                return Err(Error::Data(format!(
                    "lagged mode with w={w} needs at least {w} samples, got {}",
                    ds.num_samples()
                )));
            }
            (w - 1, ds.t0() + (w - 1) as f64 * ds.dt())
        }
    };
    let n_out = ds.num_samples() - start;
    let n_feat = cfg.pairs.len() + if cfg.include_raw { ds.num_channels() } else { 0 };

    let mut names = Vec::with_capacity(n_feat);
    for &(i, j) in &cfg.pairs {
        names.push(format!("k_{i}_{j}"));
    }
    if cfg.include_raw {
        names.extend(ds.channels().iter().cloned());
    }

    let values = ds.values();
    let mut out = Array2::zeros((n_out, n_feat));
    for row in 0..n_out {
        let t = start + row;
        for (f, &(i, j)) in cfg.pairs.iter().enumerate() {
            let g = match cfg.mode {
                KernelMode::Pointwise => {
                    gaussian_kernel(&[values[[t, i]]], &[values[[t, j]]], cfg.sigma)?
                }
                KernelMode::Lagged { w } => {
                    let xi: Vec<f64> = (t + 1 - w..=t).map(|s| values[[s, i]]).collect();
                    let xj: Vec<f64> = (t + 1 - w..=t).map(|s| values[[s, j]]).collect();
                    gaussian_kernel(&xi, &xj, cfg.sigma)?
                }
            };
            out[[row, f]] = g;
        }
        if cfg.include_raw {
            for c in 0..ds.num_channels() {
                out[[row, cfg.pairs.len() + c]] = values[[t, c]];
            }
        }
    }
    Dataset::new(names, ds.dt(), t0, out)
}

/// Median of squared pairwise channel differences over a calibration
/// prefix: the standard scale-adaptive bandwidth pick.
///
/// Falls back to 1.0 if every configured pair is identical over the
/// prefix (the median would be zero, which is not a valid bandwidth).
pub fn median_sigma(ds: &Dataset, pairs: &[(usize, usize)], prefix_len: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Argument("median_sigma needs at least one pair".into()));
    }
    for &(i, j) in pairs {
        if i >= ds.num_channels() || j >= ds.num_channels() {
            return Err(Error::Argument(format!(
                "pair ({i}, {j}) out of range for {} channels",
                ds.num_channels()
            )));
        }
    }
    let n = ds.num_samples().min(prefix_len.max(1));
    let values = ds.values();
    let mut d2: Vec<f64> = Vec::with_capacity(n * pairs.len());
    for t in 0..n {
        for &(i, j) in pairs {
            let d = values[[t, i]] - values[[t, j]];
            d2.push(d * d);
        }
    }
    d2.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mid = d2.len() / 2;
    let median = if d2.len() % 2 == 1 {
        d2[mid]
    } else {
        0.5 * (d2[mid - 1] + d2[mid])
    };
    Ok(if median > 0.0 { median } else { 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn kernel_is_one_at_zero_distance() {
        assert_eq!(gaussian_kernel(&[1.0, 2.0], &[1.0, 2.0], 0.5).unwrap(), 1.0);
    }

    #[test]
    fn kernel_at_two_sigma_squared_distance_is_inv_e() {
        // ||xi - xj||^2 = 2 sigma  ->  e^-1
        let v = gaussian_kernel(&[0.0], &[(2.0f64).sqrt()], 1.0).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn kernel_unit_vectors_sigma_one() {
        let v = gaussian_kernel(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn kernel_rejects_bad_arguments() {
        assert!(gaussian_kernel(&[1.0], &[1.0, 2.0], 1.0).is_err());
        assert!(gaussian_kernel(&[1.0], &[1.0], 0.0).is_err());
        assert!(gaussian_kernel(&[1.0], &[1.0], -1.0).is_err());
    }

    fn ds(values: Array2<f64>) -> Dataset {
        let names = (0..values.ncols()).map(|i| format!("c{i}")).collect();
        Dataset::new(names, 0.25, 0.0, values).unwrap()
    }

    use ndarray::Array2;

    #[test]
    fn identical_constant_channels_augment_to_one() {
        let d = ds(array![[2.0, 2.0], [2.0, 2.0], [2.0, 2.0]]);
        let cfg = KernelConfig::all_pairs(2, 0.3);
        let out = augment(&d, &cfg).unwrap();
        assert_eq!(out.num_channels(), 1);
        assert_eq!(out.channels(), ["k_0_1"]);
        assert!(out.values().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn six_channels_all_pairs_gives_fifteen_features() {
        let d = ds(Array2::from_shape_fn((4, 6), |(t, c)| t as f64 + 0.1 * c as f64));
        let cfg = KernelConfig::all_pairs(6, 1.0);
        let out = augment(&d, &cfg).unwrap();
        assert_eq!(out.num_channels(), 15);
        assert_eq!(out.num_samples(), 4);
    }

    #[test]
    fn hand_evaluated_pointwise_feature() {
        // v1 = 1.0, v2 = 1.1, sigma = 0.005 -> exp(-0.01/0.01) = e^-1
        let d = ds(array![[1.0, 1.1]]);
        let cfg = KernelConfig::all_pairs(2, 0.005);
        let out = augment(&d, &cfg).unwrap();
        assert!((out.values()[[0, 0]] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn include_raw_appends_original_channels() {
        let d = ds(array![[1.0, 2.0], [3.0, 4.0]]);
        let mut cfg = KernelConfig::all_pairs(2, 1.0);
        cfg.include_raw = true;
        let out = augment(&d, &cfg).unwrap();
        assert_eq!(out.num_channels(), 3);
        assert_eq!(out.channels()[1], "c0");
        assert_eq!(out.values()[[1, 1]], 3.0);
        assert_eq!(out.values()[[1, 2]], 4.0);
    }

    #[test]
    fn empty_output_configuration_is_rejected() {
        let d = ds(array![[1.0, 2.0]]);
        let cfg = KernelConfig {
            sigma: 1.0,
            pairs: vec![],
            include_raw: false,
            mode: KernelMode::Pointwise,
        };
        assert!(matches!(augment(&d, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn lagged_mode_drops_warmup_samples() {
        let d = ds(Array2::from_shape_fn((10, 2), |(t, c)| (t * 2 + c) as f64));
        let cfg = KernelConfig {
            sigma: 100.0,
            pairs: vec![(0, 1)],
            include_raw: false,
            mode: KernelMode::Lagged { w: 4 },
        };
        let out = augment(&d, &cfg).unwrap();
        assert_eq!(out.num_samples(), 7);
        assert!((out.t0() - 0.75).abs() < 1e-12);
        // constant offset of 1 per element: d^2 = 4 -> exp(-4/200)
        let expect = (-4.0 / 200.0f64).exp();
        assert!((out.values()[[0, 0]] - expect).abs() < 1e-12);
    }

    #[test]
    fn median_sigma_on_known_values() {
        // diffs^2 per step for the single pair: 1, 9, 25 -> median 9
        let d = ds(array![[0.0, 1.0], [0.0, 3.0], [0.0, 5.0]]);
        let s = median_sigma(&d, &[(0, 1)], 10).unwrap();
        assert_eq!(s, 9.0);
    }

    #[test]
    fn median_sigma_fallback_on_identical_channels() {
        let d = ds(array![[2.0, 2.0], [3.0, 3.0]]);
        assert_eq!(median_sigma(&d, &[(0, 1)], 10).unwrap(), 1.0);
    }

    proptest! {
        // Ranges keep ||xi - xj||^2 / (2 sigma) well inside exp's
        // representable domain; at extreme ratios the kernel underflows
        // to 0 in f64, which is outside the mathematical range (0, 1].
        #[test]
        fn kernel_symmetric_and_in_range(
            xi in proptest::collection::vec(-10.0f64..10.0, 1..6),
            shift in proptest::collection::vec(-10.0f64..10.0, 1..6),
            sigma in 0.5f64..1e3,
        ) {
            let n = xi.len().min(shift.len());
            let a = &xi[..n];
            let b: Vec<f64> = a.iter().zip(&shift[..n]).map(|(x, s)| x + s).collect();
            let g1 = gaussian_kernel(a, &b, sigma).unwrap();
            let g2 = gaussian_kernel(&b, a, sigma).unwrap();
            prop_assert_eq!(g1, g2);
            prop_assert!(g1 > 0.0 && g1 <= 1.0);
            let is_equal = a.iter().zip(&b).all(|(x, y)| x == y);
            prop_assert_eq!(g1 == 1.0, is_equal);
        }

        #[test]
        fn kernel_monotone_in_sigma(
            d in 1e-3f64..10.0,
            s1 in 0.1f64..1e2,
            factor in 1.01f64..10.0,
        ) {
            let g_small = gaussian_kernel(&[0.0], &[d], s1).unwrap();
            let g_large = gaussian_kernel(&[0.0], &[d], s1 * factor).unwrap();
            prop_assert!(g_large > g_small);
        }
    }
}
