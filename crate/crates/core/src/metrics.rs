//! Unsupervised clustering evaluation: accuracy under the optimal label
//! matching and normalized mutual information.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Cross-tabulation of predicted against true labels.
#[derive(Debug, Clone)]
pub struct ContingencyTable {
    /// k_pred x k_true counts.
    pub counts: Vec<Vec<u64>>,
    pub n: usize,
}

impl ContingencyTable {
    /// Builds the table from two labelings of the same samples. Labels are
    /// arbitrary integers; they are densified in sorted order.
    pub fn from_labels(pred: &[i64], truth: &[i64]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} predictions vs {} true labels",
                pred.len(),
                truth.len()
            )));
        }
        if pred.is_empty() {
            return Err(Error::InvalidParam("empty labelings".into()));
        }
        let pred_ids = densify(pred);
        let truth_ids = densify(truth);
        let mut counts = vec![vec![0u64; truth_ids.len()]; pred_ids.len()];
        for (p, t) in pred.iter().zip(truth) {
            counts[pred_ids[p]][truth_ids[t]] += 1;
        }
        Ok(Self {
            counts,
            n: pred.len(),
        })
    }
}

// Dense ids assigned in sorted label order.
fn densify(labels: &[i64]) -> BTreeMap<i64, usize> {
    let unique: std::collections::BTreeSet<i64> = labels.iter().copied().collect();
    unique.into_iter().enumerate().map(|(i, l)| (l, i)).collect()
}

/// Clustering accuracy: the matched fraction under the best bijection
/// between predicted and true labels, solved exactly by optimal assignment
/// on the contingency table.
pub fn accuracy(pred: &[i64], truth: &[i64]) -> Result<f64> {
    let table = ContingencyTable::from_labels(pred, truth)?;
    let kp = table.counts.len();
    let kt = table.counts[0].len();
    let size = kp.max(kt);
    // Pad square with zero rows/columns, then minimize (n - count) which is
    // equivalent to maximizing the matched count.
    let n = table.n as i64;
    let mut cost = vec![vec![n; size]; size];
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            cost[i][j] = n - c as i64;
        }
    }
    let assignment = hungarian_min(&cost);
    let matched: u64 = assignment
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < kp && j < kt)
        .map(|(i, &j)| table.counts[i][j])
        .sum();
    Ok(matched as f64 / table.n as f64)
}

/// Normalized mutual information with geometric-mean normalization and
/// natural logarithms. Two single-cluster partitions score 1; a
/// single-cluster partition against anything else scores 0.
pub fn nmi(pred: &[i64], truth: &[i64]) -> Result<f64> {
    let table = ContingencyTable::from_labels(pred, truth)?;
    let n = table.n as f64;
    let row_sums: Vec<u64> = table.counts.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..table.counts[0].len())
        .map(|j| table.counts.iter().map(|r| r[j]).sum())
        .collect();

    let entropy = |sums: &[u64]| -> f64 {
        sums.iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_pred = entropy(&row_sums);
    let h_truth = entropy(&col_sums);
    if h_pred == 0.0 && h_truth == 0.0 {
        return Ok(1.0);
    }
    if h_pred == 0.0 || h_truth == 0.0 {
        return Ok(0.0);
    }

    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let p = c as f64 / n;
                mi += p * ((n * c as f64) / (row_sums[i] as f64 * col_sums[j] as f64)).ln();
            }
        }
    }
    Ok((mi / (h_pred * h_truth).sqrt()).clamp(0.0, 1.0))
}

/// Hungarian algorithm (potentials formulation) minimizing total cost over
/// a square matrix. Returns the column assigned to each row.
fn hungarian_min(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based potentials with a virtual zeroth column.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut matched_col_to_row = vec![0usize; n + 1];

    for i in 1..=n {
        matched_col_to_row[0] = i;
        let mut j0 = 0usize;
        let mut min_cost = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_col_to_row[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < min_cost[j] {
                        min_cost[j] = cur;
                        way[j] = j0;
                    }
                    if min_cost[j] < delta {
                        delta = min_cost[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_col_to_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_cost[j] -= delta;
                }
            }
            j0 = j1;
            if matched_col_to_row[j0] == 0 {
                break;
            }
        }
        // Augment along the alternating path.
        loop {
            let j1 = way[j0];
            matched_col_to_row[j0] = matched_col_to_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if matched_col_to_row[j] > 0 {
            row_to_col[matched_col_to_row[j] - 1] = j - 1;
        }
    }
    row_to_col
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn accuracy_identity_and_relabeling() {
        let truth = vec![0, 0, 1, 1, 2, 2];
        assert_abs_diff_eq!(accuracy(&truth, &truth).unwrap(), 1.0, epsilon = 0.0);
        // Bijective relabeling 0->2, 1->0, 2->1.
        let pred = vec![2, 2, 0, 0, 1, 1];
        assert_abs_diff_eq!(accuracy(&pred, &truth).unwrap(), 1.0, epsilon = 0.0);
    }

    #[test]
    fn accuracy_hand_example() {
        let truth = vec![0, 0, 1, 1];
        let pred = vec![0, 1, 1, 1];
        assert_abs_diff_eq!(accuracy(&pred, &truth).unwrap(), 0.75, epsilon = 0.0);
    }

    #[test]
    fn accuracy_rejects_length_mismatch() {
        assert!(accuracy(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn nmi_identical_partitions() {
        let labels = vec![0, 0, 1, 1, 2, 2];
        assert_abs_diff_eq!(nmi(&labels, &labels).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn nmi_constant_prediction_is_zero() {
        let pred = vec![0, 0, 0, 0];
        let truth = vec![0, 0, 1, 1];
        assert_abs_diff_eq!(nmi(&pred, &truth).unwrap(), 0.0, epsilon = 0.0);
    }

    #[test]
    fn nmi_both_single_cluster_is_one() {
        let labels = vec![3, 3, 3];
        assert_abs_diff_eq!(nmi(&labels, &labels).unwrap(), 1.0, epsilon = 0.0);
    }

    #[test]
    fn nmi_independent_partition_is_zero() {
        let truth = vec![0, 0, 1, 1];
        let pred = vec![0, 1, 0, 1];
        assert_abs_diff_eq!(nmi(&pred, &truth).unwrap(), 0.0, epsilon = 1e-12);
    }

    // Exhaustive maximization over the k! label bijections.
    fn brute_force_accuracy(pred: &[i64], truth: &[i64]) -> f64 {
        let table = ContingencyTable::from_labels(pred, truth).unwrap();
        let kp = table.counts.len();
        let kt = table.counts[0].len();
        let size = kp.max(kt);
        let mut perm: Vec<usize> = (0..size).collect();
        let mut best = 0u64;
        permute(&mut perm, 0, &mut |p| {
            let score: u64 = (0..kp)
                .map(|i| if p[i] < kt { table.counts[i][p[i]] } else { 0 })
                .sum();
            if score > best {
                best = score;
            }
        });
        best as f64 / table.n as f64
    }

    fn permute(perm: &mut Vec<usize>, at: usize, visit: &mut impl FnMut(&[usize])) {
        if at == perm.len() {
            visit(perm);
            return;
        }
        for i in at..perm.len() {
            perm.swap(at, i);
            permute(perm, at + 1, visit);
            perm.swap(at, i);
        }
    }

    #[test]
    fn accuracy_matches_brute_force_small_k() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let k = rng.random_range(2..=6);
            let n = rng.random_range(5..40);
            let pred: Vec<i64> = (0..n).map(|_| rng.random_range(0..k) as i64).collect();
            let truth: Vec<i64> = (0..n).map(|_| rng.random_range(0..k) as i64).collect();
            let fast = accuracy(&pred, &truth).unwrap();
            let slow = brute_force_accuracy(&pred, &truth);
            assert_abs_diff_eq!(fast, slow, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn metrics_invariant_under_relabeling(seed in 0u64..300) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let k = rng.random_range(2usize..5);
            let n = rng.random_range(4usize..50);
            let pred: Vec<i64> = (0..n).map(|_| rng.random_range(0..k) as i64).collect();
            let truth: Vec<i64> = (0..n).map(|_| rng.random_range(0..k) as i64).collect();
            // Shift-and-scale relabeling is a bijection on the used ids.
            let relabeled: Vec<i64> = pred.iter().map(|&p| 100 - 7 * p).collect();
            prop_assert!((accuracy(&pred, &truth).unwrap() - accuracy(&relabeled, &truth).unwrap()).abs() < 1e-12);
            prop_assert!((nmi(&pred, &truth).unwrap() - nmi(&relabeled, &truth).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn nmi_is_symmetric(seed in 0u64..300) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(4usize..60);
            let a: Vec<i64> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let b: Vec<i64> = (0..n).map(|_| rng.random_range(0..3)).collect();
            prop_assert!((nmi(&a, &b).unwrap() - nmi(&b, &a).unwrap()).abs() <= 1e-12);
        }
    }
}
