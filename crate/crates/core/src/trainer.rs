//! Joint optimization of the encoder and the cluster centroids under the
//! stability loss: k-means initialization, per-epoch threshold selection,
//! SGD-with-momentum updates, stopping, and snapshotting.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autoencoder::{augment, AugmentSpec, Mlp};
use crate::error::{Error, Result};
use crate::grad::{clustering_backward, lipschitz_bound};
use crate::kmeans::kmeans_init;
use crate::optim::{MatrixMomentum, SgdMomentum};
use crate::stability::{
    clustering_loss, co_association, determinacy, otsu_threshold, sample_stability,
    AssignmentMatrix, CentroidSet, EmbeddingBatch, StabilityParams,
};

/// Hyperparameters of the clustering stage.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub k: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub max_iter: usize,
    pub sgd_lr: f64,
    pub sgd_momentum: f64,
    /// Stop when the fraction of labels changed between consecutive epochs
    /// falls below this; 0 disables the criterion.
    pub label_change_tol: f64,
    pub seed: u64,
    /// Emit a snapshot every this many iterations (plus the initial state);
    /// 0 disables snapshots.
    pub snapshot_every: usize,
    /// Add the reconstruction loss to the clustering objective and keep
    /// updating the decoder.
    pub include_reconstruction_in_clustering: bool,
    /// Random transformation applied to clustering-stage inputs; None feeds
    /// the encoder clean inputs.
    pub augment: Option<AugmentSpec>,
    /// Skip encoder updates and optimize the centroids alone.
    pub freeze_encoder: bool,
}

impl TrainConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            alpha: 1.0,
            lambda: 0.8,
            batch_size: 256,
            max_iter: 10_000,
            sgd_lr: 0.01,
            sgd_momentum: 0.9,
            label_change_tol: 0.001,
            seed,
            snapshot_every: 0,
            include_reconstruction_in_clustering: false,
            augment: None,
            freeze_encoder: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParam("k must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch_size must be >= 1".into()));
        }
        if !self.sgd_lr.is_finite() || self.sgd_lr <= 0.0 {
            return Err(Error::InvalidParam("sgd_lr must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            return Err(Error::InvalidParam("momentum must be in [0, 1)".into()));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 || self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::InvalidParam("alpha > 0 and lambda >= 0 required".into()));
        }
        Ok(())
    }
}

/// Per-sample cluster indices in [0, k).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentLabels {
    labels: Vec<usize>,
    k: usize,
}

impl AssignmentLabels {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidParam(format!(
                "label {bad} out of range for k = {k}"
            )));
        }
        Ok(Self { labels, k })
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn to_i64(&self) -> Vec<i64> {
        self.labels.iter().map(|&l| l as i64).collect()
    }
}

/// Hard assignment: per-sample argmax over the soft assignments, ties
/// resolved to the lowest index.
pub fn assign_clusters(q: &AssignmentMatrix) -> AssignmentLabels {
    let labels = q
        .data()
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            let mut best_val = row[0];
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > best_val {
                    best_val = v;
                    best = j;
                }
            }
            best
        })
        .collect();
    AssignmentLabels {
        labels,
        k: q.n_clusters(),
    }
}

/// One history row per training iteration.
#[derive(Debug, Clone, Copy)]
pub struct HistoryRecord {
    pub iter: usize,
    /// Batch clustering loss.
    pub loss: f64,
    /// Otsu threshold in force for the iteration's epoch.
    pub threshold: f64,
    /// Largest per-centroid gradient norm of the batch.
    pub grad_norm: f64,
    /// Closed-form bound on the per-centroid gradient norm, evaluated on
    /// the same batch state.
    pub bound: f64,
}

/// Full record of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
    pub epochs: usize,
    /// Forward-invariant violations observed across all epoch checks.
    pub invariant_violations: usize,
    pub stopped_by_label_tol: bool,
    pub final_threshold: f64,
    pub final_mean_stability: f64,
}

impl TrainHistory {
    /// CSV with one row per iteration: iter, L_c, t, grad_norm, bound_M.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "iter,L_c,t,grad_norm,bound_M")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.iter, r.loss, r.threshold, r.grad_norm, r.bound
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

/// State handed to the snapshot callback.
pub struct SnapshotState<'a> {
    pub iter: usize,
    pub embeddings: &'a Array2<f64>,
    pub labels: &'a [usize],
    pub centroids: &'a Array2<f64>,
}

/// Snapshot callback type; returning an error aborts training.
pub type SnapshotHook<'a> = &'a mut dyn FnMut(&SnapshotState<'_>) -> Result<()>;

/// Result of [`train`].
pub struct TrainOutcome {
    pub centroids: CentroidSet,
    pub labels: AssignmentLabels,
    pub history: TrainHistory,
}

/// Runs the clustering stage on a pretrained encoder: k-means
/// initialization, then `max_iter` mini-batch updates of the encoder
/// parameters and centroids under the stability loss, recomputing the
/// threshold every epoch.
pub fn train(
    x: &Array2<f64>,
    enc: &mut Mlp,
    mut dec: Option<&mut Mlp>,
    config: &TrainConfig,
    mut snapshot: Option<SnapshotHook<'_>>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.include_reconstruction_in_clustering && dec.is_none() {
        return Err(Error::InvalidParam(
            "reconstruction in clustering requires a decoder".into(),
        ));
    }
    let n = x.nrows();
    let z0 = EmbeddingBatch::new(enc.forward(x)?)?;
    let (mut centroids, kmeans_labels) = kmeans_init(&z0, config.k, config.seed)?;

    let mut history = TrainHistory::default();
    let emit_snapshot = |iter: usize,
                             enc: &Mlp,
                             centroids: &CentroidSet,
                             snapshot: &mut Option<SnapshotHook<'_>>|
     -> Result<()> {
        if let Some(hook) = snapshot.as_mut() {
            let z = enc.forward(x)?;
            let q = co_association(&EmbeddingBatch::new(z.clone())?, centroids, config.alpha)?;
            let labels = assign_clusters(&q);
            hook(&SnapshotState {
                iter,
                embeddings: &z,
                labels: labels.as_slice(),
                centroids: centroids.data(),
            })?;
        }
        Ok(())
    };

    if config.snapshot_every > 0 {
        emit_snapshot(0, enc, &centroids, &mut snapshot)?;
    }
    if config.max_iter == 0 {
        history.final_threshold = f64::NAN;
        history.final_mean_stability = f64::NAN;
        return Ok(TrainOutcome {
            centroids,
            labels: kmeans_labels,
            history,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut enc_opt = SgdMomentum::new(config.sgd_lr, config.sgd_momentum, enc.layers());
    let mut dec_opt = dec
        .as_ref()
        .map(|d| SgdMomentum::new(config.sgd_lr, config.sgd_momentum, d.layers()));
    let mut centroid_opt = MatrixMomentum::new(
        config.sgd_lr,
        config.sgd_momentum,
        centroids.data().dim(),
    );

    let mut order: Vec<usize> = (0..n).collect();
    let mut prev_labels = kmeans_labels.as_slice().to_vec();
    let mut iter = 0usize;
    let mut threshold = 0.5;

    while iter < config.max_iter {
        // Epoch preamble: fresh embeddings, adaptive threshold, invariant
        // audit, label-change stopping.
        let z_all = EmbeddingBatch::new(enc.forward(x)?)?;
        let q_all = co_association(&z_all, &centroids, config.alpha)?;
        threshold = otsu_threshold(&q_all).value;
        history.invariant_violations +=
            audit_forward_invariants(&q_all, threshold, config.lambda)?;

        let labels_now = assign_clusters(&q_all);
        if history.epochs > 0 && config.label_change_tol > 0.0 {
            let changed = labels_now
                .as_slice()
                .iter()
                .zip(&prev_labels)
                .filter(|(a, b)| a != b)
                .count();
            if (changed as f64) / (n as f64) < config.label_change_tol {
                history.stopped_by_label_tol = true;
                break;
            }
        }
        prev_labels.copy_from_slice(labels_now.as_slice());

        let params = StabilityParams::new(config.alpha, config.lambda, threshold)?;
        crate::autoencoder::shuffle(&mut order, &mut rng);

        for chunk in order.chunks(config.batch_size) {
            if iter >= config.max_iter {
                break;
            }
            let mut batch = Array2::zeros((chunk.len(), x.ncols()));
            for (bi, &si) in chunk.iter().enumerate() {
                batch.row_mut(bi).assign(&x.row(si));
            }
            let batch = match &config.augment {
                Some(spec) => {
                    let mut per_batch = *spec;
                    per_batch.seed = rng.next_u64();
                    augment(&batch, &per_batch)?
                }
                None => batch,
            };

            let (zb_arr, enc_cache) = enc.forward_cached(&batch)?;
            let zb = EmbeddingBatch::new(zb_arr).map_err(|_| {
                Error::Diverged(format!("non-finite embeddings at iteration {iter}"))
            })?;
            let (batch_loss, grads) = clustering_backward(&zb, &centroids, &params)?;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "clustering loss became non-finite at iteration {iter}"
                )));
            }
            let grad_norm = grads.max_centroid_norm();
            let bound = lipschitz_bound(&zb, &centroids, &params)?;

            let mut d_z = grads.d_loss_d_z;
            if config.include_reconstruction_in_clustering {
                let dec_ref = dec.as_mut().expect("validated above");
                let (x_rec, dec_cache) = dec_ref.forward_cached(zb.data())?;
                let recon = crate::autoencoder::reconstruction_loss(&batch, &x_rec)?;
                if !recon.is_finite() {
                    return Err(Error::Diverged(format!(
                        "reconstruction loss became non-finite at iteration {iter}"
                    )));
                }
                let d_rec = (&x_rec - &batch) * (2.0 / batch.nrows() as f64);
                let (dec_grads, d_z_rec) = dec_ref.backward(&dec_cache, &d_rec);
                d_z += &d_z_rec;
                dec_opt
                    .as_mut()
                    .expect("created alongside decoder")
                    .step(dec_ref.layers_mut(), &dec_grads);
            }
            if !config.freeze_encoder {
                let (enc_grads, _) = enc.backward(&enc_cache, &d_z);
                enc_opt.step(enc.layers_mut(), &enc_grads);
            }
            centroid_opt.step(centroids.data_mut(), &grads.d_loss_d_m);

            history.records.push(HistoryRecord {
                iter,
                loss: batch_loss,
                threshold,
                grad_norm,
                bound,
            });
            iter += 1;
            if config.snapshot_every > 0 && iter.is_multiple_of(config.snapshot_every) {
                emit_snapshot(iter, enc, &centroids, &mut snapshot)?;
            }
        }
        history.epochs += 1;
    }

    // Final state: labels from the trained embeddings, stability from a
    // threshold refreshed on the final assignment distribution.
    let z_final = EmbeddingBatch::new(enc.forward(x)?)?;
    let q_final = co_association(&z_final, &centroids, config.alpha)?;
    let labels = assign_clusters(&q_final);
    let t_final = otsu_threshold(&q_final).value;
    let fq = determinacy(&q_final, t_final)?;
    let sq = sample_stability(&fq, config.lambda)?;
    history.final_threshold = if history.epochs > 0 { threshold } else { t_final };
    history.final_mean_stability = sq.mean();
    let _ = clustering_loss(&sq);

    Ok(TrainOutcome {
        centroids,
        labels,
        history,
    })
}

/// Checks the forward invariants on a full-dataset assignment matrix and
/// returns the number of violations. Closed bounds carry a 1e-12 slack for
/// float rounding in the reductions.
fn audit_forward_invariants(
    q: &AssignmentMatrix,
    t: f64,
    lambda: f64,
) -> Result<usize> {
    const EPS: f64 = 1e-12;
    let mut violations = 0usize;
    for row in q.data().rows() {
        if (row.sum() - 1.0).abs() > 1e-9 {
            violations += 1;
        }
    }
    let fq = determinacy(q, t)?;
    for &v in fq.data() {
        if !(-EPS..=1.0 + EPS).contains(&v) {
            violations += 1;
        }
    }
    let sq = sample_stability(&fq, lambda)?;
    for &v in sq.data() {
        if v > 1.0 + EPS {
            violations += 1;
        }
    }
    if clustering_loss(&sq) < -EPS {
        violations += 1;
    }
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::Autoencoder;
    use crate::data::{gen_blobs, min_max_normalize, BlobSpec};
    use crate::stability::AssignmentMatrix;
    use ndarray::array;

    fn blob_features() -> (Array2<f64>, Vec<i64>) {
        let ds = gen_blobs(&BlobSpec {
            k: 3,
            per_cluster: 60,
            dim: 4,
            center_box: 5.0,
            sigma: 0.3,
            seed: 50,
        })
        .unwrap();
        let mut features = ds.features;
        min_max_normalize(&mut features);
        (features, ds.truth.unwrap())
    }

    #[test]
    fn assign_clusters_argmax_and_ties() {
        let q = AssignmentMatrix::new(array![[0.9, 0.1], [0.5, 0.5], [0.25, 0.75]]).unwrap();
        let labels = assign_clusters(&q);
        assert_eq!(labels.as_slice(), &[0, 0, 1]);
    }

    #[test]
    fn assign_clusters_column_permutation_permutes_labels() {
        let q = AssignmentMatrix::new(array![[0.7, 0.2, 0.1], [0.1, 0.2, 0.7]]).unwrap();
        let swapped = AssignmentMatrix::new(array![[0.1, 0.2, 0.7], [0.7, 0.2, 0.1]]).unwrap();
        let a = assign_clusters(&q);
        let b = assign_clusters(&swapped);
        assert_eq!(a.as_slice(), &[0, 2]);
        assert_eq!(b.as_slice(), &[2, 0]);
    }

    #[test]
    fn zero_iterations_returns_kmeans_state() {
        let (x, _) = blob_features();
        let mut ae = Autoencoder::init(&[4, 3, 2], 8).unwrap();
        let weights_before = ae.encoder.layers()[0].weights.clone();

        let mut config = TrainConfig::new(3, 4242);
        config.max_iter = 0;
        let out = train(&x, &mut ae.encoder, None, &config, None).unwrap();

        assert_eq!(ae.encoder.layers()[0].weights, weights_before);
        let z = EmbeddingBatch::new(ae.encoder.forward(&x).unwrap()).unwrap();
        let (cents, labels) = kmeans_init(&z, 3, 4242).unwrap();
        assert_eq!(out.centroids.data(), cents.data());
        assert_eq!(out.labels.as_slice(), labels.as_slice());
        assert!(out.history.records.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let (x, _) = blob_features();
        let mut config = TrainConfig::new(3, 99);
        config.max_iter = 30;
        config.batch_size = 64;
        config.sgd_lr = 0.05;
        config.label_change_tol = 0.0;

        let run = |cfg: &TrainConfig| {
            let mut ae = Autoencoder::init(&[4, 3, 2], 8).unwrap();
            let out = train(&x, &mut ae.encoder, None, cfg, None).unwrap();
            (
                out.labels.as_slice().to_vec(),
                out.centroids.data().clone(),
                out.history.records.iter().map(|r| r.loss).collect::<Vec<_>>(),
            )
        };
        let (l1, c1, h1) = run(&config);
        let (l2, c2, h2) = run(&config);
        assert_eq!(l1, l2);
        assert_eq!(c1, c2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn label_tolerance_stops_early_on_stable_blobs() {
        let (x, _) = blob_features();
        let mut ae = Autoencoder::init(&[4, 3, 2], 8).unwrap();
        let mut config = TrainConfig::new(3, 7);
        config.max_iter = 10_000;
        config.sgd_lr = 0.01;
        // Well-separated blobs keep their labels from the first epoch on.
        let out = train(&x, &mut ae.encoder, None, &config, None).unwrap();
        assert!(out.history.stopped_by_label_tol);
        assert!(out.history.records.len() < 100);
    }

    #[test]
    fn snapshot_count_contract() {
        let (x, _) = blob_features();
        let mut ae = Autoencoder::init(&[4, 3, 2], 8).unwrap();
        let mut config = TrainConfig::new(3, 7);
        config.max_iter = 20;
        config.snapshot_every = 5;
        config.label_change_tol = 0.0;
        let mut count = 0usize;
        let mut hook = |_: &SnapshotState<'_>| {
            count += 1;
            Ok(())
        };
        train(&x, &mut ae.encoder, None, &config, Some(&mut hook)).unwrap();
        // Initial state plus one per 5 iterations.
        assert_eq!(count, 20 / 5 + 1);
    }

    #[test]
    fn invariants_hold_on_short_run() {
        let (x, _) = blob_features();
        let mut ae = Autoencoder::init(&[4, 3, 2], 8).unwrap();
        let mut config = TrainConfig::new(3, 7);
        config.max_iter = 50;
        config.sgd_lr = 0.05;
        config.label_change_tol = 0.0;
        let out = train(&x, &mut ae.encoder, None, &config, None).unwrap();
        assert_eq!(out.history.invariant_violations, 0);
        assert_eq!(out.history.records.len(), 50);
    }

    #[test]
    fn reconstruction_flag_requires_decoder() {
        let (x, _) = blob_features();
        let mut ae = Autoencoder::init(&[4, 3, 2], 8).unwrap();
        let mut config = TrainConfig::new(3, 7);
        config.include_reconstruction_in_clustering = true;
        assert!(train(&x, &mut ae.encoder, None, &config, None).is_err());
    }

    #[test]
    fn history_csv_shape() {
        let (x, _) = blob_features();
        let mut ae = Autoencoder::init(&[4, 3, 2], 8).unwrap();
        let mut config = TrainConfig::new(3, 7);
        config.max_iter = 8;
        config.label_change_tol = 0.0;
        let out = train(&x, &mut ae.encoder, None, &config, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        out.history.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,L_c,t,grad_norm,bound_M");
        assert_eq!(lines.len(), 9);
    }
}
