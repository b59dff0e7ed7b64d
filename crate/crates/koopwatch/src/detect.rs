//! Sparsity-pattern extraction and incident flagging.
//!
//! An estimate's sparsity pattern is its 0/1 support after thresholding;
//! the pattern encodes which lifted observables feed which one step
//! ahead. Incidents are flagged when the normalized Hamming distance
//! between consecutive patterns reaches the change threshold.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::koopman::KoopmanEstimate;

/// How `binarize_threshold` is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinarizeMode {
    /// Threshold is a fraction of `max|K|` of each estimate; adapts
    /// across windows where entry magnitudes drift together.
    Relative,
    /// Threshold is an absolute entry magnitude.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    /// Binarization cut, > 0 (fraction of max|K| in relative mode).
    pub binarize_threshold: f64,
    pub binarize_mode: BinarizeMode,
    /// Normalized Hamming distance at or above which a flag is raised,
    /// in (0, 1].
    pub change_threshold: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            binarize_threshold: 1e-6,
            binarize_mode: BinarizeMode::Relative,
            change_threshold: 0.05,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.binarize_threshold > 0.0) || !self.binarize_threshold.is_finite() {
            return Err(Error::Argument(format!(
                "binarize_threshold must be positive and finite, got {}",
                self.binarize_threshold
            )));
        }
        if !(self.change_threshold > 0.0 && self.change_threshold <= 1.0) {
            return Err(Error::Argument(format!(
                "change_threshold must be in (0, 1], got {}",
                self.change_threshold
            )));
        }
        Ok(())
    }

    /// Effective absolute cut for one estimate.
    fn tau_for(&self, est: &KoopmanEstimate) -> f64 {
        match self.binarize_mode {
            BinarizeMode::Absolute => self.binarize_threshold,
            BinarizeMode::Relative => {
                let max = est.k().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if max > 0.0 {
                    self.binarize_threshold * max
                } else {
                    // All-zero operator: any positive cut keeps all bits 0.
                    f64::MIN_POSITIVE
                }
            }
        }
    }
}

/// 0/1 support of one estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityPattern {
    bits: Array2<u8>,
    source_window: (usize, usize),
    threshold_used: f64,
}

impl SparsityPattern {
    pub fn bits(&self) -> &Array2<u8> {
        &self.bits
    }

    pub fn source_window(&self) -> (usize, usize) {
        self.source_window
    }

    pub fn threshold_used(&self) -> f64 {
        self.threshold_used
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|b| **b == 1).count()
    }

    /// Row-major 0/1 values as f64, the clustering feature vector.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.bits.iter().map(|b| *b as f64).collect()
    }

    /// Rebuild from raw parts (used when loading patterns from disk).
    pub fn from_bits(
        bits: Array2<u8>,
        source_window: (usize, usize),
        threshold_used: f64,
    ) -> Result<Self> {
        if bits.iter().any(|b| *b > 1) {
            return Err(Error::Data("pattern entries must be 0 or 1".into()));
        }
        Ok(SparsityPattern { bits, source_window, threshold_used })
    }
}

/// Threshold an estimate at absolute level `tau`: bit = 1 iff |K_ij| >= tau.
pub fn binarize(est: &KoopmanEstimate, tau: f64) -> Result<SparsityPattern> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Argument(format!("tau must be positive and finite, got {tau}")));
    }
    if est.k().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in estimate".into()));
    }
    let bits = est.k().mapv(|v| u8::from(v.abs() >= tau));
    Ok(SparsityPattern {
        bits,
        source_window: est.window(),
        threshold_used: tau,
    })
}

/// Normalized Hamming distance between two equally shaped patterns,
/// in [0, 1].
pub fn pattern_distance(p: &SparsityPattern, q: &SparsityPattern) -> Result<f64> {
    if p.bits.dim() != q.bits.dim() {
        return Err(Error::Argument(format!(
            "pattern shape mismatch: {:?} vs {:?}",
            p.bits.dim(),
            q.bits.dim()
        )));
    }
    let total = p.bits.len();
    let differing = p
        .bits
        .iter()
        .zip(q.bits.iter())
        .filter(|(a, b)| a != b)
        .count();
    Ok(differing as f64 / total as f64)
}

/// One raised incident.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentFlag {
    /// Index (into the estimate sequence) of the later window of the
    /// flagged transition.
    pub window_index: usize,
    /// End time of the flagged window, seconds.
    pub time: f64,
    /// Pattern distance that triggered the flag.
    pub distance: f64,
    pub note: String,
}

/// Binarize all estimates with the configured threshold rule.
pub fn binarize_all(
    estimates: &[KoopmanEstimate],
    cfg: &DetectConfig,
) -> Result<Vec<SparsityPattern>> {
    cfg.validate()?;
    estimates.iter().map(|e| binarize(e, cfg.tau_for(e))).collect()
}

/// Flag every consecutive transition whose pattern distance reaches the
/// change threshold.
///
/// `dt` and `t0` convert the 1-based window end index into seconds. Each
/// flag's note names the stabilization window: the first later transition
/// whose distance falls back below the threshold.
pub fn detect_incidents(
    estimates: &[KoopmanEstimate],
    cfg: &DetectConfig,
    dt: f64,
    t0: f64,
) -> Result<Vec<IncidentFlag>> {
    if estimates.len() < 2 {
        return Err(Error::Argument(format!(
            "incident detection needs at least 2 estimates, got {}",
            estimates.len()
        )));
    }
    let patterns = binarize_all(estimates, cfg)?;
    let mut distances = Vec::with_capacity(patterns.len() - 1);
    for pair in patterns.windows(2) {
        distances.push(pattern_distance(&pair[0], &pair[1])?);
    }

    let end_time = |idx: usize| t0 + (estimates[idx].window().1 - 1) as f64 * dt;

    let mut flags = Vec::new();
    for (i, &dist) in distances.iter().enumerate() {
        if dist < cfg.change_threshold {
            continue;
        }
        let window_index = i + 1;
        let stabilized = distances
            .iter()
            .enumerate()
            .skip(i + 1)
            .find(|(_, d)| **d < cfg.change_threshold)
            .map(|(j, _)| j + 1);
        let note = match stabilized {
            Some(j) => format!("stabilized at window {j} (t={})", end_time(j)),
            None => "no stabilization within run".to_string(),
        };
        flags.push(IncidentFlag {
            window_index,
            time: end_time(window_index),
            distance: dist,
            note,
        });
    }
    Ok(flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::koopman::{solve_sparse, Moments, SolverConfig};
    use ndarray::array;

    fn estimate_with_k(k: Array2<f64>, window: (usize, usize)) -> KoopmanEstimate {
        // Route through the solver with moments that reproduce `k`
        // exactly: G = I, A = k, alpha = 0 -> least squares solution k.
        let d = k.nrows();
        let g = Array2::eye(d);
        let m = Moments::new(k.clone(), g, 1).unwrap();
        let cfg = SolverConfig { tolerance: 1e-14, ..Default::default() };
        let mut est = solve_sparse(&m, 0.0, 0.0, None, &cfg).unwrap();
        assert!(
            est.k()
                .iter()
                .zip(k.iter())
                .all(|(a, b)| (a - b).abs() < 1e-10),
            "fixture solve did not reproduce k"
        );
        est.set_window(window);
        est
    }

    fn pattern(bits: Array2<u8>) -> SparsityPattern {
        SparsityPattern::from_bits(bits, (0, 0), 0.5).unwrap()
    }

    #[test]
    fn binarize_zero_matrix_is_all_zero() {
        let est = estimate_with_k(Array2::zeros((2, 2)), (1, 3));
        let p = binarize(&est, 1e-6).unwrap();
        assert_eq!(p.ones(), 0);
    }

    #[test]
    fn binarize_uses_absolute_value() {
        let est = estimate_with_k(array![[0.5, 1e-12], [-0.3, 0.0]], (1, 3));
        let p = binarize(&est, 1e-6).unwrap();
        assert_eq!(p.bits(), &array![[1u8, 0u8], [1u8, 0u8]]);
    }

    #[test]
    fn binarize_threshold_dominates() {
        let est = estimate_with_k(array![[0.5, 0.2], [-0.3, 0.1]], (1, 3));
        let p = binarize(&est, 10.0).unwrap();
        assert_eq!(p.ones(), 0);
    }

    #[test]
    fn binarize_is_idempotent_on_binary_input() {
        let bits = array![[1.0, 0.0], [0.0, 1.0]];
        let est = estimate_with_k(bits.clone(), (1, 3));
        for tau in [0.5, 1.0] {
            let p = binarize(&est, tau).unwrap();
            assert_eq!(p.bits().mapv(|b| b as f64), bits);
        }
    }

    #[test]
    fn distance_identity_and_complement() {
        let p = pattern(array![[1, 0], [0, 1]]);
        let q = pattern(array![[0, 1], [1, 0]]);
        assert_eq!(pattern_distance(&p, &p).unwrap(), 0.0);
        assert_eq!(pattern_distance(&p, &q).unwrap(), 1.0);
    }

    #[test]
    fn distance_single_differing_bit() {
        let p = pattern(array![[1, 0], [0, 1]]);
        let q = pattern(array![[1, 1], [0, 1]]);
        assert_eq!(pattern_distance(&p, &q).unwrap(), 0.25);
    }

    #[test]
    fn distance_rejects_shape_mismatch() {
        let p = pattern(array![[1, 0], [0, 1]]);
        let q = pattern(array![[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
        assert!(pattern_distance(&p, &q).is_err());
    }

    #[test]
    fn identical_estimates_raise_no_flags() {
        let k = array![[1.0, 0.0], [0.5, 0.2]];
        let ests: Vec<_> = (0..5)
            .map(|i| estimate_with_k(k.clone(), (1 + i * 2, 5 + i * 2)))
            .collect();
        let flags = detect_incidents(&ests, &DetectConfig::default(), 0.25, 0.0).unwrap();
        assert!(flags.is_empty());
    }

    #[test]
    fn single_transition_raises_single_flag() {
        let before = array![[1.0, 0.0], [0.0, 1.0]];
        let after = array![[0.0, 1.0], [1.0, 0.0]];
        let ests = vec![
            estimate_with_k(before.clone(), (1, 5)),
            estimate_with_k(before.clone(), (3, 7)),
            estimate_with_k(after.clone(), (5, 9)),
            estimate_with_k(after.clone(), (7, 11)),
        ];
        let cfg = DetectConfig { change_threshold: 0.5, ..Default::default() };
        let flags = detect_incidents(&ests, &cfg, 0.25, 0.0).unwrap();
        assert_eq!(flags.len(), 1);
        assert_eq!(flags[0].window_index, 2);
        // end of window (5, 9): t0 + (9 - 1) * 0.25 = 2.0
        assert!((flags[0].time - 2.0).abs() < 1e-12);
        assert_eq!(flags[0].distance, 1.0);
        assert!(flags[0].note.contains("stabilized at window 3"), "{}", flags[0].note);
    }

    #[test]
    fn relative_mode_adapts_to_estimate_scale() {
        let cfg = DetectConfig::default();
        let small = estimate_with_k(array![[1e-9, 0.0], [0.0, 2e-9]], (1, 3));
        let patterns = binarize_all(std::slice::from_ref(&small), &cfg).unwrap();
        // 1e-6 relative cut on max 2e-9 keeps both nonzeros.
        assert_eq!(patterns[0].ones(), 2);
    }

    #[test]
    fn config_validation() {
        let mut cfg = DetectConfig::default();
        cfg.binarize_threshold = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = DetectConfig::default();
        cfg.change_threshold = 0.0;
        assert!(cfg.validate().is_err());
        cfg.change_threshold = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn metric_axioms_on_random_patterns() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let gen = |rng: &mut rand_chacha::ChaCha8Rng| {
                pattern(Array2::from_shape_fn((4, 4), |_| rng.gen_range(0..=1u8)))
            };
            let a = gen(&mut rng);
            let b = gen(&mut rng);
            let c = gen(&mut rng);
            let dab = pattern_distance(&a, &b).unwrap();
            let dba = pattern_distance(&b, &a).unwrap();
            let dac = pattern_distance(&a, &c).unwrap();
            let dcb = pattern_distance(&c, &b).unwrap();
            assert_eq!(dab, dba);
            assert_eq!(pattern_distance(&a, &a).unwrap(), 0.0);
            assert_eq!(dab == 0.0, a == b);
            assert!(dab <= dac + dcb + 1e-15);
        }
    }
}
