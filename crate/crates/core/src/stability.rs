//! Forward computation of the sample-stability objective: soft assignments
//! under a Student's-t kernel, determinacy, per-sample stability, the
//! clustering loss, and the adaptive determinacy threshold.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Number of histogram bins used by the adaptive threshold.
pub const OTSU_BINS: usize = 256;
/// The adaptive threshold is clamped to this range so that the gradient
/// branch denominators t^2 and (1-t)^2 stay bounded away from zero.
pub const THRESHOLD_CLAMP: (f64, f64) = (0.05, 0.95);

/// A batch of latent vectors, one row per sample.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    data: Array2<f64>,
}

impl EmbeddingBatch {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "embedding batch must be non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("embedding batch".into()));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// Sample count.
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    /// Latent dimension.
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

/// Cluster centers, one row per centroid.
#[derive(Debug, Clone)]
pub struct CentroidSet {
    data: Array2<f64>,
}

impl CentroidSet {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "centroid set must be non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("centroid set".into()));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    /// Cluster count.
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

/// Row-stochastic soft assignment matrix q, one row per sample.
#[derive(Debug, Clone)]
pub struct AssignmentMatrix {
    data: Array2<f64>,
}

impl AssignmentMatrix {
    /// Validates row-stochasticity: entries in (0, 1], rows summing to 1
    /// within 1e-9.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        for (i, row) in data.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParam(format!(
                    "assignment row {i} sums to {sum}, expected 1"
                )));
            }
            if !row.iter().all(|&v| v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidParam(format!(
                    "assignment row {i} has entries outside (0, 1]"
                )));
            }
        }
        Ok(Self { data })
    }

    pub(crate) fn from_normalized(data: Array2<f64>) -> Self {
        Self { data }
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_clusters(&self) -> usize {
        self.data.ncols()
    }
}

/// Per-sample, per-centroid determinacy values fq in [0, 1].
#[derive(Debug, Clone)]
pub struct DeterminacyMatrix {
    data: Array2<f64>,
}

impl DeterminacyMatrix {
    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }
}

/// Per-sample stability values sq, each at most 1.
#[derive(Debug, Clone)]
pub struct StabilityVector {
    data: Array1<f64>,
}

impl StabilityVector {
    pub fn data(&self) -> &Array1<f64> {
        &self.data
    }

    pub fn mean(&self) -> f64 {
        self.data.mean().unwrap_or(0.0)
    }
}

/// Parameters of the stability objective.
#[derive(Debug, Clone, Copy)]
pub struct StabilityParams {
    /// Degrees of freedom of the Student's-t kernel.
    pub alpha: f64,
    /// Weight of the determinacy-variance penalty.
    pub lambda: f64,
    /// Determinacy threshold, the assignment probability of lowest
    /// determinacy.
    pub t: f64,
}

impl StabilityParams {
    pub fn new(alpha: f64, lambda: f64, t: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParam(format!("alpha must be > 0, got {alpha}")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidParam(format!("t must be in (0, 1), got {t}")));
        }
        Ok(Self { alpha, lambda, t })
    }
}

/// Computes the Student's-t co-association probabilities between every
/// sample embedding and every centroid.
///
/// Row i is `(1 + ||z_i - m_j||^2 / alpha)^(-(alpha+1)/2)` normalized over j.
pub fn co_association(
    z: &EmbeddingBatch,
    m: &CentroidSet,
    alpha: f64,
) -> Result<AssignmentMatrix> {
    Ok(co_association_with_dist2(z, m, alpha)?.0)
}

/// Same as [`co_association`] but also returns the squared distances
/// ||z_i - m_j||^2, which the gradient chain reuses.
pub(crate) fn co_association_with_dist2(
    z: &EmbeddingBatch,
    m: &CentroidSet,
    alpha: f64,
) -> Result<(AssignmentMatrix, Array2<f64>)> {
    if z.dim() != m.dim() {
        return Err(Error::ShapeMismatch(format!(
            "embedding dim {} != centroid dim {}",
            z.dim(),
            m.dim()
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParam(format!("alpha must be > 0, got {alpha}")));
    }
    let (n, k) = (z.len(), m.len());
    let exponent = -(alpha + 1.0) / 2.0;
    let mut dist2 = Array2::<f64>::zeros((n, k));
    let mut q = Array2::<f64>::zeros((n, k));
    for i in 0..n {
        let zi = z.data().row(i);
        let mut row_sum = 0.0;
        for j in 0..k {
            let mj = m.data().row(j);
            let d2: f64 = zi
                .iter()
                .zip(mj.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dist2[[i, j]] = d2;
            let w = (1.0 + d2 / alpha).powf(exponent);
            q[[i, j]] = w;
            row_sum += w;
        }
        for j in 0..k {
            q[[i, j]] /= row_sum;
        }
    }
    if !q.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("co-association probabilities".into()));
    }
    Ok((AssignmentMatrix::from_normalized(q), dist2))
}

/// Result of the adaptive threshold selection.
#[derive(Debug, Clone, Copy)]
pub struct OtsuThreshold {
    /// Selected threshold, a histogram bin edge clamped to
    /// [`THRESHOLD_CLAMP`].
    pub value: f64,
    /// True when no separating threshold exists (all values fall into a
    /// single bin); `value` is then the midpoint 0.5.
    pub degenerate: bool,
}

/// Selects the determinacy threshold by Otsu's method over the flattened
/// assignment matrix.
pub fn otsu_threshold(q: &AssignmentMatrix) -> OtsuThreshold {
    otsu_threshold_values(q.data().iter().copied())
}

/// Otsu's method on an arbitrary population of probabilities in [0, 1]:
/// histogram the values into 256 uniform bins and pick the bin edge
/// maximizing the between-class variance. Ties resolve to the lowest edge.
pub fn otsu_threshold_values(values: impl IntoIterator<Item = f64>) -> OtsuThreshold {
    let mut hist = [0u64; OTSU_BINS];
    let mut total = 0u64;
    for v in values {
        let bin = ((v * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1);
        hist[bin] += 1;
        total += 1;
    }
    if total == 0 {
        return OtsuThreshold {
            value: 0.5,
            degenerate: true,
        };
    }

    // Between-class variance with bin indices as values, via running sums.
    let total_f = total as f64;
    let total_moment: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &h)| i as f64 * h as f64)
        .sum();
    let mut best: Option<(f64, usize)> = None;
    let mut w0 = 0.0;
    let mut m0 = 0.0;
    for split in 1..OTSU_BINS {
        w0 += hist[split - 1] as f64;
        m0 += (split - 1) as f64 * hist[split - 1] as f64;
        let w1 = total_f - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mean0 = m0 / w0;
        let mean1 = (total_moment - m0) / w1;
        let var_between = w0 * w1 * (mean0 - mean1) * (mean0 - mean1);
        if best.is_none_or(|(v, _)| var_between > v) {
            best = Some((var_between, split));
        }
    }
    match best {
        Some((_, split)) => OtsuThreshold {
            value: (split as f64 / OTSU_BINS as f64).clamp(THRESHOLD_CLAMP.0, THRESHOLD_CLAMP.1),
            degenerate: false,
        },
        // Every value landed in one bin; no split separates two classes.
        None => OtsuThreshold {
            value: 0.5,
            degenerate: true,
        },
    }
}

/// Scalar determinacy mapping: 0 at q = t, 1 at q = 0 and q = 1.
#[inline]
pub fn determinacy_scalar(q: f64, t: f64) -> f64 {
    let offset = q - t;
    if q < t {
        offset * offset / (t * t)
    } else {
        offset * offset / ((1.0 - t) * (1.0 - t))
    }
}

/// Applies the determinacy mapping entrywise to an assignment matrix.
pub fn determinacy(q: &AssignmentMatrix, t: f64) -> Result<DeterminacyMatrix> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidParam(format!("t must be in (0, 1), got {t}")));
    }
    Ok(DeterminacyMatrix {
        data: q.data().mapv(|v| determinacy_scalar(v, t)),
    })
}

/// Per-sample stability: row mean of determinacies minus `lambda` times
/// their population variance.
pub fn sample_stability(fq: &DeterminacyMatrix, lambda: f64) -> Result<StabilityVector> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let k = fq.data().ncols() as f64;
    let data = fq
        .data()
        .rows()
        .into_iter()
        .map(|row| {
            let mean = row.sum() / k;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / k;
            mean - lambda * var
        })
        .collect::<Array1<f64>>();
    Ok(StabilityVector { data })
}

/// Clustering loss: mean instability, `1 - mean(sq)`.
pub fn clustering_loss(sq: &StabilityVector) -> f64 {
    1.0 - sq.mean()
}

/// Runs the whole forward pipeline for given embeddings, centroids, and
/// parameters, returning the loss.
pub fn forward_loss(z: &EmbeddingBatch, m: &CentroidSet, params: &StabilityParams) -> Result<f64> {
    let q = co_association(z, m, params.alpha)?;
    let fq = determinacy(&q, params.t)?;
    let sq = sample_stability(&fq, params.lambda)?;
    Ok(clustering_loss(&sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn emb(rows: Vec<Vec<f64>>) -> EmbeddingBatch {
        let d = rows[0].len();
        let n = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        EmbeddingBatch::new(Array2::from_shape_vec((n, d), flat).unwrap()).unwrap()
    }

    fn cents(rows: Vec<Vec<f64>>) -> CentroidSet {
        let d = rows[0].len();
        let k = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        CentroidSet::new(Array2::from_shape_vec((k, d), flat).unwrap()).unwrap()
    }

    #[test]
    fn co_association_single_cluster_is_one() {
        let z = emb(vec![vec![3.5, -2.0], vec![0.0, 0.0]]);
        let m = cents(vec![vec![10.0, 10.0]]);
        let q = co_association(&z, &m, 1.0).unwrap();
        for &v in q.data() {
            assert_abs_diff_eq!(v, 1.0, epsilon = 0.0);
        }
    }

    #[test]
    fn co_association_equidistant_splits_evenly() {
        let z = emb(vec![vec![0.0, 0.0]]);
        let m = cents(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let q = co_association(&z, &m, 1.0).unwrap();
        assert_abs_diff_eq!(q.data()[[0, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(q.data()[[0, 1]], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn co_association_hand_value() {
        // d=1, alpha=1, z=0, m=[0, 2]: unnormalized weights [1, 0.2].
        let z = emb(vec![vec![0.0]]);
        let m = cents(vec![vec![0.0], vec![2.0]]);
        let q = co_association(&z, &m, 1.0).unwrap();
        assert_abs_diff_eq!(q.data()[[0, 0]], 5.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.data()[[0, 1]], 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn co_association_rejects_dim_mismatch() {
        let z = emb(vec![vec![0.0, 1.0]]);
        let m = cents(vec![vec![0.0]]);
        assert!(co_association(&z, &m, 1.0).is_err());
    }

    #[test]
    fn co_association_rejects_bad_alpha() {
        let z = emb(vec![vec![0.0]]);
        let m = cents(vec![vec![1.0]]);
        assert!(co_association(&z, &m, 0.0).is_err());
        assert!(co_association(&z, &m, -1.0).is_err());
    }

    #[test]
    fn embedding_batch_rejects_non_finite() {
        assert!(EmbeddingBatch::new(array![[f64::NAN]]).is_err());
        assert!(EmbeddingBatch::new(array![[f64::INFINITY, 0.0]]).is_err());
    }

    #[test]
    fn determinacy_known_values() {
        let q = AssignmentMatrix::from_normalized(array![[0.5, 0.25, 0.25]]);
        let fq = determinacy(&q, 0.5).unwrap();
        assert_abs_diff_eq!(fq.data()[[0, 0]], 0.0, epsilon = 0.0);
        assert_abs_diff_eq!(fq.data()[[0, 1]], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn determinacy_boundary_values_are_one() {
        for t in [0.1, 0.5, 0.9] {
            assert_abs_diff_eq!(determinacy_scalar(0.0, t), 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(determinacy_scalar(1.0, t), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn determinacy_rejects_bad_threshold() {
        let q = AssignmentMatrix::from_normalized(array![[1.0]]);
        assert!(determinacy(&q, 0.0).is_err());
        assert!(determinacy(&q, 1.0).is_err());
    }

    #[test]
    fn stability_known_rows() {
        let fq = DeterminacyMatrix {
            data: array![[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]],
        };
        let sq = sample_stability(&fq, 0.8).unwrap();
        assert_abs_diff_eq!(sq.data()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sq.data()[1], 0.0, epsilon = 1e-15);

        let fq = DeterminacyMatrix {
            data: array![[1.0, 0.0]],
        };
        let sq = sample_stability(&fq, 0.8).unwrap();
        assert_abs_diff_eq!(sq.data()[0], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn loss_known_values() {
        let sq = StabilityVector {
            data: array![1.0, 1.0, 1.0],
        };
        assert_abs_diff_eq!(clustering_loss(&sq), 0.0, epsilon = 0.0);
        let sq = StabilityVector {
            data: array![0.5, 0.7],
        };
        assert_abs_diff_eq!(clustering_loss(&sq), 0.4, epsilon = 1e-15);
        let sq = StabilityVector {
            data: array![0.0, 0.0],
        };
        assert_abs_diff_eq!(clustering_loss(&sq), 1.0, epsilon = 0.0);
    }

    #[test]
    fn otsu_degenerate_population() {
        let q = AssignmentMatrix::from_normalized(array![[0.25, 0.25, 0.25, 0.25]]);
        let t = otsu_threshold(&q);
        assert!(t.degenerate);
        assert_abs_diff_eq!(t.value, 0.5, epsilon = 0.0);
    }

    #[test]
    fn otsu_bimodal_lands_between_modes() {
        let vals: Vec<f64> = std::iter::repeat(0.1)
            .take(500)
            .chain(std::iter::repeat(0.9).take(500))
            .collect();
        let t = otsu_threshold_values(vals);
        assert!(!t.degenerate);
        assert!(t.value > 0.1 && t.value < 0.9, "t = {}", t.value);
    }

    // Brute-force oracle: recompute the between-class variance for every
    // split from scratch (no running sums) and scan exhaustively.
    fn otsu_oracle(values: &[f64]) -> OtsuThreshold {
        let mut hist = [0u64; OTSU_BINS];
        for &v in values {
            hist[((v * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1)] += 1;
        }
        let mut best: Option<(f64, usize)> = None;
        for split in 1..OTSU_BINS {
            let w0: f64 = hist[..split].iter().map(|&h| h as f64).sum();
            let w1: f64 = hist[split..].iter().map(|&h| h as f64).sum();
            if w0 == 0.0 || w1 == 0.0 {
                continue;
            }
            let m0: f64 = hist[..split]
                .iter()
                .enumerate()
                .map(|(i, &h)| i as f64 * h as f64)
                .sum::<f64>()
                / w0;
            let m1: f64 = hist[split..]
                .iter()
                .enumerate()
                .map(|(i, &h)| (split + i) as f64 * h as f64)
                .sum::<f64>()
                / w1;
            let v = w0 * w1 * (m0 - m1) * (m0 - m1);
            if best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, split));
            }
        }
        match best {
            Some((_, s)) => OtsuThreshold {
                value: (s as f64 / OTSU_BINS as f64)
                    .clamp(THRESHOLD_CLAMP.0, THRESHOLD_CLAMP.1),
                degenerate: false,
            },
            None => OtsuThreshold {
                value: 0.5,
                degenerate: true,
            },
        }
    }

    #[test]
    fn otsu_matches_oracle_on_fixtures() {
        let half_half: Vec<f64> = std::iter::repeat(0.1)
            .take(500)
            .chain(std::iter::repeat(0.9).take(500))
            .collect();
        let got = otsu_threshold_values(half_half.clone());
        let want = otsu_oracle(&half_half);
        assert_eq!(got.value, want.value);
        // First tied split right after the 0.1 bin: bin 25, edge 26/256.
        assert_abs_diff_eq!(got.value, 26.0 / 256.0, epsilon = 0.0);

        let skewed: Vec<f64> = std::iter::repeat(0.05)
            .take(900)
            .chain(std::iter::repeat(0.95).take(100))
            .collect();
        let got = otsu_threshold_values(skewed.clone());
        let want = otsu_oracle(&skewed);
        assert_eq!(got.value, want.value);
        assert_abs_diff_eq!(got.value, 13.0 / 256.0, epsilon = 0.0);
        assert!(got.value > 0.05 && got.value < 0.95);
    }

    proptest! {
        #[test]
        fn rows_are_stochastic_and_positive(
            seed in 0u64..500,
            n in 1usize..12,
            k in 1usize..8,
            d in 1usize..6,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let z = EmbeddingBatch::new(Array2::from_shape_fn((n, d), |_| rng.random_range(-5.0..5.0))).unwrap();
            let m = CentroidSet::new(Array2::from_shape_fn((k, d), |_| rng.random_range(-5.0..5.0))).unwrap();
            let q = co_association(&z, &m, 1.0).unwrap();
            for row in q.data().rows() {
                let sum: f64 = row.sum();
                prop_assert!((sum - 1.0).abs() <= 1e-9);
                prop_assert!(row.iter().all(|&v| v > 0.0));
            }
        }

        #[test]
        fn translation_invariance(
            seed in 0u64..500,
            shift in -10.0f64..10.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (n, k, d) = (5, 4, 3);
            let z0 = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
            let m0 = Array2::from_shape_fn((k, d), |_| rng.random_range(-2.0..2.0));
            let q0 = co_association(
                &EmbeddingBatch::new(z0.clone()).unwrap(),
                &CentroidSet::new(m0.clone()).unwrap(),
                1.0,
            ).unwrap();
            let q1 = co_association(
                &EmbeddingBatch::new(z0 + shift).unwrap(),
                &CentroidSet::new(m0 + shift).unwrap(),
                1.0,
            ).unwrap();
            for (a, b) in q0.data().iter().zip(q1.data().iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn centroid_permutation_equivariance(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (n, k, d) = (4, 5, 3);
            let z = EmbeddingBatch::new(Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0))).unwrap();
            let m = Array2::from_shape_fn((k, d), |_| rng.random_range(-2.0..2.0));
            // Reverse rows as a representative permutation.
            let mut m_rev = Array2::zeros((k, d));
            for j in 0..k {
                m_rev.row_mut(j).assign(&m.row(k - 1 - j));
            }
            let q = co_association(&z, &CentroidSet::new(m).unwrap(), 1.0).unwrap();
            let q_rev = co_association(&z, &CentroidSet::new(m_rev).unwrap(), 1.0).unwrap();
            for i in 0..n {
                for j in 0..k {
                    // The permuted row sums in a different order, so the
                    // normalization can differ by a rounding ulp.
                    let a = q.data()[[i, j]];
                    let b = q_rev.data()[[i, k - 1 - j]];
                    prop_assert!((a - b).abs() <= 1e-14, "{} vs {}", a, b);
                }
            }
        }

        #[test]
        fn determinacy_in_unit_range_and_stability_bounded(
            q in 0.0f64..=1.0,
            t in 0.01f64..0.99,
            lambda in 0.0f64..3.0,
        ) {
            let fq = determinacy_scalar(q, t);
            prop_assert!((0.0..=1.0).contains(&fq));
            // Continuity at the branch split: both sides vanish at q = t.
            let below = determinacy_scalar(t - 1e-9, t);
            let above = determinacy_scalar(t + 1e-9, t);
            prop_assert!(below < 1e-12 && above < 1e-12);
            let m = DeterminacyMatrix { data: array![[fq, fq / 2.0, fq / 3.0]] };
            let sq = sample_stability(&m, lambda).unwrap();
            prop_assert!(sq.data()[0] <= 1.0);
        }

        #[test]
        fn otsu_equals_exhaustive_oracle(seed in 0u64..300) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2usize..400);
            let vals: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let got = otsu_threshold_values(vals.clone());
            let want = otsu_oracle(&vals);
            prop_assert_eq!(got.value, want.value);
            prop_assert_eq!(got.degenerate, want.degenerate);
        }
    }
}
