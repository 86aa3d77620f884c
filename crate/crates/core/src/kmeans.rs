//! Seeded k-means++ initialization with Lloyd refinement, used to place the
//! initial centroids in the embedding space.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::stability::{CentroidSet, EmbeddingBatch};
use crate::trainer::AssignmentLabels;

const LLOYD_MAX_ROUNDS: usize = 300;

/// Runs k-means++ seeding followed by Lloyd iterations until the assignment
/// reaches a fixpoint or 300 rounds elapse. An emptied cluster is re-seeded
/// to the point farthest from its stale centroid.
#[allow(clippy::needless_range_loop)]
pub fn kmeans_init(
    z: &EmbeddingBatch,
    k: usize,
    seed: u64,
) -> Result<(CentroidSet, AssignmentLabels)> {
    let n = z.len();
    let d = z.dim();
    if k == 0 {
        return Err(Error::InvalidParam("k must be >= 1".into()));
    }
    if n < k {
        return Err(Error::InvalidParam(format!(
            "need at least k = {k} samples, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = z.data();

    // k-means++ seeding: first centroid uniform, the rest drawn with
    // probability proportional to the squared distance to the nearest
    // already-chosen centroid.
    let mut centroids = Array2::<f64>::zeros((k, d));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut min_dist2: Vec<f64> = (0..n)
        .map(|i| squared_distance(data.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = min_dist2.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in min_dist2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // All remaining mass at distance zero; fall back to uniform.
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&data.row(chosen));
        for (i, slot) in min_dist2.iter_mut().enumerate() {
            let dist = squared_distance(data.row(i), centroids.row(c));
            if dist < *slot {
                *slot = dist;
            }
        }
    }

    // Lloyd refinement.
    let mut labels = vec![0usize; n];
    let mut prev_labels: Option<Vec<usize>> = None;
    for _ in 0..LLOYD_MAX_ROUNDS {
        for (i, label) in labels.iter_mut().enumerate() {
            let mut best = 0usize;
            let mut best_dist = f64::INFINITY;
            for c in 0..k {
                let dist = squared_distance(data.row(i), centroids.row(c));
                if dist < best_dist {
                    best_dist = dist;
                    best = c;
                }
            }
            *label = best;
        }
        let mut counts = vec![0usize; k];
        let mut sums = Array2::<f64>::zeros((k, d));
        for (i, &label) in labels.iter().enumerate() {
            counts[label] += 1;
            let mut row = sums.row_mut(label);
            row += &data.row(i);
        }
        let mut reseeded = Vec::new();
        for c in 0..k {
            if counts[c] == 0 {
                // Farthest point from this cluster's stale centroid, skipping
                // points already used to refill another empty cluster this
                // round.
                let far = (0..n)
                    .filter(|i| !reseeded.contains(i))
                    .max_by(|&a, &b| {
                        squared_distance(data.row(a), centroids.row(c))
                            .partial_cmp(&squared_distance(data.row(b), centroids.row(c)))
                            .unwrap()
                    })
                    .expect("non-empty batch");
                centroids.row_mut(c).assign(&data.row(far));
                reseeded.push(far);
            } else {
                let inv = 1.0 / counts[c] as f64;
                let mut row = centroids.row_mut(c);
                row.assign(&sums.row(c));
                row *= inv;
            }
        }
        if prev_labels.as_deref() == Some(&labels[..]) && reseeded.is_empty() {
            break;
        }
        prev_labels = Some(labels.clone());
    }

    Ok((CentroidSet::new(centroids)?, AssignmentLabels::new(labels, k)?))
}

fn squared_distance(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}
