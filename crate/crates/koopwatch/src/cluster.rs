//! Offline validation: k-means over binarized patterns with correlation
//! distance, and misclassification scoring against scenario labels.
//!
//! Vectors are standardized once up front (centered, scaled to unit
//! norm). In that space the correlation distance equals half the squared
//! Euclidean distance, so Lloyd iterations with plain mean centroids keep
//! their convergence guarantee. Constant vectors (all-zero or all-one
//! patterns) cannot be standardized and get a deterministic tie-break:
//! distance 0 to an identical vector, 1 to anything else.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::SparsityPattern;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k: usize,
    /// Number of seeded restarts; the run with the lowest inertia wins.
    pub restarts: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { k: 2, restarts: 10, max_iterations: 100, seed: 0 }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Argument("k must be >= 1".into()));
        }
        if self.restarts < 1 {
            return Err(Error::Argument("restarts must be >= 1".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::Argument("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Cluster index per input vector.
    pub assignment: Vec<usize>,
    /// Centroids in the standardized feature space.
    pub centroids: Vec<Vec<f64>>,
    /// Sum of distances from each vector to its assigned centroid.
    pub inertia: f64,
}

/// `1 - Pearson correlation`, in [0, 2].
pub fn correlation_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Argument(format!(
            "vector length mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.len() < 2 {
        return Err(Error::Argument("correlation needs vectors of length >= 2".into()));
    }
    let su = standardize(u);
    let sv = standardize(v);
    match (su, sv) {
        (Point::Standardized(a), Point::Standardized(b)) => {
            let r: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            Ok((1.0 - r).clamp(0.0, 2.0))
        }
        _ => Err(Error::ZeroVariance),
    }
}

/// A vector in standardized space, or a constant vector that cannot be
/// standardized (kept with its constant value for the tie-break rule).
#[derive(Debug, Clone, PartialEq)]
enum Point {
    Standardized(Vec<f64>),
    Constant(f64),
}

fn standardize(v: &[f64]) -> Point {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let centered: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let norm = centered.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        Point::Constant(v[0])
    } else {
        Point::Standardized(centered.iter().map(|x| x / norm).collect())
    }
}

/// Distance used inside Lloyd iterations. Between standardized vectors
/// this is exactly the correlation distance.
fn point_distance(a: &Point, b: &Point) -> f64 {
    match (a, b) {
        (Point::Standardized(x), Point::Standardized(y)) => {
            0.5 * x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()
        }
        (Point::Constant(x), Point::Constant(y)) => {
            if x == y {
                0.0
            } else {
                1.0
            }
        }
        _ => 1.0,
    }
}

/// K-means over the row-major 0/1 vectors of the patterns.
pub fn kmeans(patterns: &[SparsityPattern], cfg: &ClusterConfig) -> Result<ClusterResult> {
    let vectors: Vec<Vec<f64>> = patterns.iter().map(|p| p.to_f64_vec()).collect();
    kmeans_vectors(&vectors, cfg)
}

/// K-means over arbitrary equal-length vectors (the raw-value comparison
/// mode clusters operator entries directly through this entry point).
pub fn kmeans_vectors(vectors: &[Vec<f64>], cfg: &ClusterConfig) -> Result<ClusterResult> {
    kmeans_vectors_traced(vectors, cfg).map(|(r, _)| r)
}

/// Like [`kmeans_vectors`] but also returns the per-iteration inertia
/// trace of every restart.
pub fn kmeans_vectors_traced(
    vectors: &[Vec<f64>],
    cfg: &ClusterConfig,
) -> Result<(ClusterResult, Vec<Vec<f64>>)> {
    cfg.validate()?;
    if vectors.len() < cfg.k {
        return Err(Error::Argument(format!(
            "need at least k={} vectors, got {}",
            cfg.k,
            vectors.len()
        )));
    }
    let len = vectors[0].len();
    if len < 2 {
        return Err(Error::Argument("vectors must have length >= 2".into()));
    }
    if vectors.iter().any(|v| v.len() != len) {
        return Err(Error::Argument("vectors must all have the same length".into()));
    }
    if vectors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite vector entry".into()));
    }

    let points: Vec<Point> = vectors.iter().map(|v| standardize(v)).collect();

    let mut best: Option<ClusterResult> = None;
    let mut traces = Vec::with_capacity(cfg.restarts);
    for restart in 0..cfg.restarts {
        let seed = cfg.seed.wrapping_add(restart as u64);
        let (result, trace) = lloyd(&points, len, cfg.k, cfg.max_iterations, seed);
        traces.push(trace);
        let better = match &best {
            None => true,
            Some(b) => result.inertia < b.inertia,
        };
        if better {
            best = Some(result);
        }
    }
    Ok((best.expect("restarts >= 1"), traces))
}

fn lloyd(
    points: &[Point],
    dim: usize,
    k: usize,
    max_iterations: usize,
    seed: u64,
) -> (ClusterResult, Vec<f64>) {
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Initialization: k distinct points sampled without replacement,
    // falling back to duplicates only when fewer distinct points exist.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for &i in &order {
        if chosen.len() == k {
            break;
        }
        if chosen.iter().all(|&j| points[j] != points[i]) {
            chosen.push(i);
        }
    }
    for &i in &order {
        if chosen.len() == k {
            break;
        }
        if !chosen.contains(&i) {
            chosen.push(i);
        }
    }
    let mut centroids: Vec<Point> = chosen.iter().map(|&i| points[i].clone()).collect();

    let mut assignment = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..max_iterations {
        // Assignment step.
        let mut next = vec![0usize; n];
        for (i, p) in points.iter().enumerate() {
            let mut best_c = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = point_distance(p, centroid);
                if d < best_d {
                    best_d = d;
                    best_c = c;
                }
            }
            next[i] = best_c;
        }

        // Reseed empty clusters from the farthest point of a cluster that
        // can spare one.
        let mut sizes = vec![0usize; k];
        for &c in &next {
            sizes[c] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let mut far_i = None;
            let mut far_d = -1.0;
            for (i, p) in points.iter().enumerate() {
                if sizes[next[i]] < 2 {
                    continue;
                }
                let d = point_distance(p, &centroids[next[i]]);
                if d > far_d {
                    far_d = d;
                    far_i = Some(i);
                }
            }
            if let Some(i) = far_i {
                sizes[next[i]] -= 1;
                next[i] = c;
                sizes[c] = 1;
                centroids[c] = points[i].clone();
            }
        }

        let inertia: f64 = points
            .iter()
            .zip(&next)
            .map(|(p, &c)| point_distance(p, &centroids[c]))
            .sum();
        trace.push(inertia);

        let settled = next == assignment;
        assignment = next;

        // Update step: plain mean of the standardized members.
        for c in 0..k {
            let members: Vec<&Point> =
                points.iter().zip(&assignment).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            centroids[c] = mean_point(&members, dim);
        }

        if settled {
            break;
        }
    }

    let inertia: f64 = points
        .iter()
        .zip(&assignment)
        .map(|(p, &c)| point_distance(p, &centroids[c]))
        .sum();
    let centroids_out: Vec<Vec<f64>> = centroids
        .iter()
        .map(|c| match c {
            Point::Standardized(v) => v.clone(),
            Point::Constant(_) => vec![0.0; dim],
        })
        .collect();
    (ClusterResult { assignment, centroids: centroids_out, inertia }, trace)
}

/// Mean of a cluster: all-identical constant members stay constant, any
/// mix averages the standardized representations (constants contribute
/// their centered form, the zero vector).
fn mean_point(members: &[&Point], dim: usize) -> Point {
    let all_same_constant = members.iter().all(|p| matches!(p, Point::Constant(_)))
        && members
            .windows(2)
            .all(|w| point_distance(w[0], w[1]) == 0.0);
    if all_same_constant {
        return members[0].clone();
    }
    let mut mean = vec![0.0; dim];
    for p in members {
        if let Point::Standardized(v) = p {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
    }
    let n = members.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    Point::Standardized(mean)
}

/// Minimum error fraction over injective maps from scenario labels to
/// cluster indices: exhaustive for k <= 8, assignment solver above.
pub fn misclassification_rate(result: &ClusterResult, labels: &[String]) -> Result<f64> {
    let n = result.assignment.len();
    if labels.len() != n {
        return Err(Error::Argument(format!(
            "label count {} does not match pattern count {n}",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::Argument("cannot score an empty clustering".into()));
    }
    let k = result.centroids.len();

    // Distinct labels in first-occurrence order.
    let mut distinct: Vec<&str> = Vec::new();
    for l in labels {
        if !distinct.contains(&l.as_str()) {
            distinct.push(l);
        }
    }
    let l_count = distinct.len();
    if l_count > k {
        return Err(Error::Argument(format!(
            "{l_count} distinct labels but only k={k} clusters"
        )));
    }

    // counts[l][c]: patterns with label l assigned to cluster c.
    let mut counts = vec![vec![0i64; k]; l_count];
    for (lab, &c) in labels.iter().zip(&result.assignment) {
        let li = distinct.iter().position(|d| *d == lab.as_str()).expect("present");
        counts[li][c] += 1;
    }

    let best_correct = if k <= 8 {
        let mut used = vec![false; k];
        best_injective(&counts, 0, &mut used)
    } else {
        // Max-weight assignment on a k x k matrix, labels padded with
        // zero rows.
        let mut cost = vec![vec![0i64; k]; k];
        for (li, row) in counts.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                cost[li][c] = -v;
            }
        }
        let assign = hungarian_min_cost(&cost);
        counts
            .iter()
            .enumerate()
            .map(|(li, row)| row[assign[li]])
            .sum()
    };

    Ok(1.0 - best_correct as f64 / n as f64)
}

fn best_injective(counts: &[Vec<i64>], label: usize, used: &mut Vec<bool>) -> i64 {
    if label == counts.len() {
        return 0;
    }
    let k = counts[0].len();
    let mut best = i64::MIN;
    for c in 0..k {
        if used[c] {
            continue;
        }
        used[c] = true;
        let v = counts[label][c] + best_injective(counts, label + 1, used);
        used[c] = false;
        best = best.max(v);
    }
    best
}

/// Minimum-cost perfect assignment on a square cost matrix; returns the
/// column matched to each row. Shortest-augmenting-path formulation with
/// potentials, O(n^3).
fn hungarian_min_cost(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut ans = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            ans[p[j] - 1] = j - 1;
        }
    }
    ans
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn pattern_from(bits: Vec<u8>, side: usize) -> SparsityPattern {
        SparsityPattern::from_bits(
            Array2::from_shape_vec((side, side), bits).unwrap(),
            (0, 0),
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn correlation_distance_basics() {
        let u = [1.0, 2.0, 4.0];
        assert_eq!(correlation_distance(&u, &u).unwrap(), 0.0);
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        assert!((correlation_distance(&u, &neg).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_distance_hand_case() {
        let u = [1.0, 0.0, 1.0, 0.0];
        let v = [0.0, 1.0, 0.0, 1.0];
        assert!((correlation_distance(&u, &v).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_distance_rejects_constant_vectors() {
        let err = correlation_distance(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::ZeroVariance));
    }

    #[test]
    fn correlation_distance_affine_invariance() {
        let u = [1.0, 5.0, 2.0, 8.0];
        let v = [0.3, -1.0, 4.0, 2.0];
        let base = correlation_distance(&u, &v).unwrap();
        let scaled: Vec<f64> = u.iter().map(|x| 3.5 * x + 11.0).collect();
        let d = correlation_distance(&scaled, &v).unwrap();
        assert!((d - base).abs() < 1e-12);
    }

    #[test]
    fn duplicated_groups_separate_perfectly() {
        let a = pattern_from(vec![1, 0, 0, 1], 2);
        let b = pattern_from(vec![0, 1, 1, 0], 2);
        let patterns = vec![a.clone(), a.clone(), a, b.clone(), b.clone(), b];
        let cfg = ClusterConfig { k: 2, ..Default::default() };
        let result = kmeans(&patterns, &cfg).unwrap();
        assert_eq!(result.inertia, 0.0);
        assert_eq!(result.assignment[0], result.assignment[1]);
        assert_eq!(result.assignment[0], result.assignment[2]);
        assert_eq!(result.assignment[3], result.assignment[4]);
        assert_eq!(result.assignment[3], result.assignment[5]);
        assert_ne!(result.assignment[0], result.assignment[3]);
    }

    #[test]
    fn k_equal_to_point_count_has_zero_inertia() {
        let patterns = vec![
            pattern_from(vec![1, 0, 0, 1], 2),
            pattern_from(vec![0, 1, 1, 0], 2),
            pattern_from(vec![1, 1, 0, 0], 2),
        ];
        let cfg = ClusterConfig { k: 3, ..Default::default() };
        let result = kmeans(&patterns, &cfg).unwrap();
        assert_eq!(result.inertia, 0.0);
    }

    #[test]
    fn kmeans_is_deterministic_in_seed() {
        let patterns: Vec<SparsityPattern> = (0..12)
            .map(|i| {
                let bits: Vec<u8> = (0..9).map(|j| ((i * 3 + j * 7) % 5 < 2) as u8).collect();
                pattern_from(bits, 3)
            })
            .collect();
        let cfg = ClusterConfig { k: 3, seed: 9, ..Default::default() };
        let a = kmeans(&patterns, &cfg).unwrap();
        let b = kmeans(&patterns, &cfg).unwrap();
        assert_eq!(a.assignment, b.assignment);
        assert_eq!(a.inertia, b.inertia);
    }

    #[test]
    fn all_zero_patterns_use_tie_break() {
        let zero = pattern_from(vec![0, 0, 0, 0], 2);
        let live = pattern_from(vec![1, 0, 0, 1], 2);
        let patterns = vec![zero.clone(), zero, live.clone(), live];
        let cfg = ClusterConfig { k: 2, ..Default::default() };
        let result = kmeans(&patterns, &cfg).unwrap();
        assert_eq!(result.assignment[0], result.assignment[1]);
        assert_eq!(result.assignment[2], result.assignment[3]);
        assert_ne!(result.assignment[0], result.assignment[2]);
        assert_eq!(result.inertia, 0.0);
    }

    #[test]
    fn inertia_non_increasing_within_restarts() {
        let vectors: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                (0..16)
                    .map(|j| (((i * 13 + j * 7) % 23) as f64 * 0.17).sin())
                    .collect()
            })
            .collect();
        let cfg = ClusterConfig { k: 4, restarts: 5, seed: 3, ..Default::default() };
        let (_, traces) = kmeans_vectors_traced(&vectors, &cfg).unwrap();
        for trace in traces {
            for w in trace.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-12,
                    "inertia increased within a restart: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn misclassification_zero_for_relabeled_perfect_assignment() {
        let result = ClusterResult {
            assignment: vec![1, 1, 0, 0],
            centroids: vec![vec![0.0], vec![0.0]],
            inertia: 0.0,
        };
        let labels: Vec<String> =
            ["a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
        assert_eq!(misclassification_rate(&result, &labels).unwrap(), 0.0);
    }

    #[test]
    fn misclassification_single_cluster_even_split() {
        let result = ClusterResult {
            assignment: vec![0; 20],
            centroids: vec![vec![0.0], vec![0.0]],
            inertia: 0.0,
        };
        let labels: Vec<String> = (0..20)
            .map(|i| if i < 10 { "a".to_string() } else { "b".to_string() })
            .collect();
        assert!((misclassification_rate(&result, &labels).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn misclassification_three_of_twenty_is_point_fifteen() {
        // 20 patterns in two clusters, 3 on the wrong side.
        let mut assignment = vec![0usize; 10];
        assignment.extend(vec![1usize; 10]);
        assignment[0] = 1;
        assignment[1] = 1;
        assignment[10] = 0;
        let result = ClusterResult {
            assignment,
            centroids: vec![vec![0.0], vec![0.0]],
            inertia: 0.0,
        };
        let labels: Vec<String> = (0..20)
            .map(|i| if i < 10 { "idle".to_string() } else { "half".to_string() })
            .collect();
        assert!((misclassification_rate(&result, &labels).unwrap() - 0.15).abs() < 1e-12);
    }

    #[test]
    fn misclassification_rejects_more_labels_than_clusters() {
        let result = ClusterResult {
            assignment: vec![0, 1],
            centroids: vec![vec![0.0], vec![0.0]],
            inertia: 0.0,
        };
        let labels: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let mut three = labels.clone();
        three[0] = "c".into();
        // 2 distinct labels, k=2: fine
        assert!(misclassification_rate(&result, &labels).is_ok());
        // now force 3 distinct labels against k=2
        let result3 = ClusterResult {
            assignment: vec![0, 1, 1],
            centroids: vec![vec![0.0], vec![0.0]],
            inertia: 0.0,
        };
        let labels3: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert!(misclassification_rate(&result3, &labels3).is_err());
    }

    #[test]
    fn misclassification_invariant_to_label_renaming() {
        let result = ClusterResult {
            assignment: vec![0, 0, 1, 1, 2, 0],
            centroids: vec![vec![0.0], vec![0.0], vec![0.0]],
            inertia: 0.0,
        };
        let l1: Vec<String> = ["x", "x", "y", "y", "z", "z"].iter().map(|s| s.to_string()).collect();
        let l2: Vec<String> = ["p", "p", "q", "q", "r", "r"].iter().map(|s| s.to_string()).collect();
        let r1 = misclassification_rate(&result, &l1).unwrap();
        let r2 = misclassification_rate(&result, &l2).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn hungarian_matches_exhaustive_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let n = rng.gen_range(2..=5);
            let cost: Vec<Vec<i64>> =
                (0..n).map(|_| (0..n).map(|_| rng.gen_range(-20..20)).collect()).collect();
            let assign = hungarian_min_cost(&cost);
            let total: i64 = assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();

            // exhaustive minimum over permutations
            let mut perm: Vec<usize> = (0..n).collect();
            let mut best = i64::MAX;
            permute(&mut perm, 0, &mut |p| {
                let t: i64 = p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
                best = best.min(t);
            });
            assert_eq!(total, best, "hungarian vs exhaustive on {cost:?}");
        }
    }

    fn permute(items: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
        if start == items.len() {
            visit(items);
            return;
        }
        for i in start..items.len() {
            items.swap(start, i);
            permute(items, start + 1, visit);
            items.swap(start, i);
        }
    }
}
