//! Analytic gradients of the clustering loss with respect to embeddings and
//! centroids, the Lipschitz-style bound on the per-centroid gradient norm,
//! and a finite-difference verification oracle.

use ndarray::{Array1, Array2, Array3, ArrayView1};

use crate::error::{Error, Result};
use crate::stability::{
    clustering_loss, co_association_with_dist2, determinacy, forward_loss, sample_stability,
    CentroidSet, EmbeddingBatch, StabilityParams,
};

/// Gradients of the clustering loss for one batch.
#[derive(Debug, Clone)]
pub struct ClusteringGradients {
    /// n x d matrix of dL/dz_i rows.
    pub d_loss_d_z: Array2<f64>,
    /// k x d matrix of dL/dm_j rows.
    pub d_loss_d_m: Array2<f64>,
}

impl ClusteringGradients {
    /// Largest L2 norm over the per-centroid gradient rows.
    pub fn max_centroid_norm(&self) -> f64 {
        self.d_loss_d_m
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Gradient of the loss with respect to the per-sample stabilities: a
/// constant vector with every entry -1/n.
pub fn grad_loss_wrt_stability(n: usize) -> Result<Array1<f64>> {
    if n == 0 {
        return Err(Error::InvalidParam("sample count must be >= 1".into()));
    }
    Ok(Array1::from_elem(n, -1.0 / n as f64))
}

/// Gradient of one sample's stability with respect to its determinacy row:
/// `1/k - (2*lambda/k) * (fq_j - mean(fq))` per component.
pub fn grad_stability_wrt_determinacy(fq_row: ArrayView1<f64>, lambda: f64) -> Array1<f64> {
    let k = fq_row.len() as f64;
    let mean = fq_row.sum() / k;
    fq_row.mapv(|v| 1.0 / k - (2.0 * lambda / k) * (v - mean))
}

/// Derivative of the determinacy mapping at a single probability.
#[inline]
pub fn grad_determinacy_scalar(q: f64, t: f64) -> f64 {
    if q < t {
        2.0 * (q - t) / (t * t)
    } else {
        2.0 * (q - t) / ((1.0 - t) * (1.0 - t))
    }
}

/// Entrywise derivative of the determinacy mapping over an assignment row.
pub fn grad_determinacy_wrt_assignment(q_row: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidParam(format!("t must be in (0, 1), got {t}")));
    }
    Ok(q_row.mapv(|q| grad_determinacy_scalar(q, t)))
}

/// Per-sample kernel terms shared by the assignment Jacobians:
/// `q_j` and `g_j = (alpha+1)/alpha * (z - m_j) / (1 + ||z - m_j||^2/alpha)`.
fn assignment_kernel(
    z_i: ArrayView1<f64>,
    m: &CentroidSet,
    alpha: f64,
) -> Result<(Array1<f64>, Array2<f64>)> {
    if z_i.len() != m.dim() {
        return Err(Error::ShapeMismatch(format!(
            "embedding dim {} != centroid dim {}",
            z_i.len(),
            m.dim()
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParam(format!("alpha must be > 0, got {alpha}")));
    }
    let k = m.len();
    let d = m.dim();
    let exponent = -(alpha + 1.0) / 2.0;
    let scale = (alpha + 1.0) / alpha;
    let mut w = Array1::<f64>::zeros(k);
    let mut g = Array2::<f64>::zeros((k, d));
    for j in 0..k {
        let mj = m.data().row(j);
        let d2: f64 = z_i
            .iter()
            .zip(mj.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let denom = 1.0 + d2 / alpha;
        w[j] = denom.powf(exponent);
        for c in 0..d {
            g[[j, c]] = scale * (z_i[c] - mj[c]) / denom;
        }
    }
    let sum = w.sum();
    let q = w.mapv(|v| v / sum);
    Ok((q, g))
}

/// Jacobian dq_i/dz_i of the normalized assignment row, shape k x d.
///
/// Row j is `-q_j * (g_j - sum_l q_l g_l)`; the normalization makes the rows
/// sum to zero.
pub fn grad_assignment_wrt_embedding(
    z_i: ArrayView1<f64>,
    m: &CentroidSet,
    alpha: f64,
) -> Result<Array2<f64>> {
    let (q, g) = assignment_kernel(z_i, m, alpha)?;
    let k = m.len();
    let d = m.dim();
    let mut gbar = Array1::<f64>::zeros(d);
    for j in 0..k {
        for c in 0..d {
            gbar[c] += q[j] * g[[j, c]];
        }
    }
    let mut jac = Array2::<f64>::zeros((k, d));
    for j in 0..k {
        for c in 0..d {
            jac[[j, c]] = -q[j] * (g[[j, c]] - gbar[c]);
        }
    }
    Ok(jac)
}

/// Full coupled Jacobian dq_ij/dm_l, shape k x k x d (assignment index j,
/// centroid index l, coordinate).
///
/// The shared normalization couples every centroid: the diagonal block is
/// `q_j (1 - q_j) g_j` and the cross blocks are `-q_j q_l g_l`.
pub fn grad_assignment_wrt_centroids(
    z_i: ArrayView1<f64>,
    m: &CentroidSet,
    alpha: f64,
) -> Result<Array3<f64>> {
    let (q, g) = assignment_kernel(z_i, m, alpha)?;
    let k = m.len();
    let d = m.dim();
    let mut jac = Array3::<f64>::zeros((k, k, d));
    for j in 0..k {
        for l in 0..k {
            let delta = if j == l { 1.0 } else { 0.0 };
            for c in 0..d {
                jac[[j, l, c]] = q[j] * (delta - q[l]) * g[[l, c]];
            }
        }
    }
    Ok(jac)
}

/// Computes the clustering loss and its gradients with respect to the batch
/// embeddings and the centroids.
///
/// The loss is produced by the same forward pipeline as the stability module
/// and is bit-identical to it. Gradients accumulate per sample in index
/// order, so results are independent of batch partitioning.
pub fn clustering_backward(
    z: &EmbeddingBatch,
    m: &CentroidSet,
    params: &StabilityParams,
) -> Result<(f64, ClusteringGradients)> {
    let (q, dist2) = co_association_with_dist2(z, m, params.alpha)?;
    let fq = determinacy(&q, params.t)?;
    let sq = sample_stability(&fq, params.lambda)?;
    let loss = clustering_loss(&sq);

    let n = z.len();
    let k = m.len();
    let d = z.dim();
    let kf = k as f64;
    let scale = (params.alpha + 1.0) / params.alpha;
    let d_loss_d_sq = -1.0 / n as f64;

    let mut d_z = Array2::<f64>::zeros((n, d));
    let mut d_m = Array2::<f64>::zeros((k, d));
    let mut u = vec![0.0; k];
    let mut g = vec![0.0; k * d];

    for i in 0..n {
        let fq_row = fq.data().row(i);
        let mean_fq = fq_row.sum() / kf;
        let q_row = q.data().row(i);
        let zi = z.data().row(i);

        // u_j = dL/dq_ij via the stability and determinacy chain.
        for j in 0..k {
            let ds_dfq = 1.0 / kf - (2.0 * params.lambda / kf) * (fq_row[j] - mean_fq);
            u[j] = d_loss_d_sq * ds_dfq * grad_determinacy_scalar(q_row[j], params.t);
        }

        // Kernel directions g_j and the q-weighted moments.
        let mut uq = 0.0;
        for j in 0..k {
            let denom = 1.0 + dist2[[i, j]] / params.alpha;
            let mj = m.data().row(j);
            for c in 0..d {
                g[j * d + c] = scale * (zi[c] - mj[c]) / denom;
            }
            uq += u[j] * q_row[j];
        }
        // dL/dz_i = -sum_j (u_j - uq) q_j g_j, the normalization cross-term
        // folded into the uq offset.
        for j in 0..k {
            let w = (u[j] - uq) * q_row[j];
            for c in 0..d {
                d_z[[i, c]] -= w * g[j * d + c];
            }
        }
        // dL/dm_l += q_l (u_l - uq) g_l
        for l in 0..k {
            let w = q_row[l] * (u[l] - uq);
            for c in 0..d {
                d_m[[l, c]] += w * g[l * d + c];
            }
        }
    }

    Ok((
        loss,
        ClusteringGradients {
            d_loss_d_z: d_z,
            d_loss_d_m: d_m,
        },
    ))
}

/// Upper bound on the per-centroid gradient norm:
/// `M = [2(1+2*lambda)(alpha+1) / (4*n*k*t^2*alpha)] * max_{i,j} ||z_i - m_j||`.
pub fn lipschitz_bound(
    z: &EmbeddingBatch,
    m: &CentroidSet,
    params: &StabilityParams,
) -> Result<f64> {
    if z.dim() != m.dim() {
        return Err(Error::ShapeMismatch(format!(
            "embedding dim {} != centroid dim {}",
            z.dim(),
            m.dim()
        )));
    }
    let mut max_dist = 0.0f64;
    for zi in z.data().rows() {
        for mj in m.data().rows() {
            let d2: f64 = zi
                .iter()
                .zip(mj.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            max_dist = max_dist.max(d2.sqrt());
        }
    }
    let n = z.len() as f64;
    let k = m.len() as f64;
    let t = params.t;
    let coeff = 2.0 * (1.0 + 2.0 * params.lambda) * (params.alpha + 1.0)
        / (4.0 * n * k * t * t * params.alpha);
    Ok(coeff * max_dist)
}

/// Configuration of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub params: StabilityParams,
    /// Central-difference step.
    pub step: f64,
    /// Coordinates whose assignment probabilities lie within this band of t
    /// are excluded (branch-split kink) and counted separately.
    pub kink_band: f64,
    /// Absolute-error criterion used where both values underflow relative
    /// comparison.
    pub abs_tol: f64,
}

impl GradCheckConfig {
    pub fn new(seed: u64, n: usize, d: usize, k: usize, params: StabilityParams) -> Self {
        Self {
            seed,
            n,
            d,
            k,
            params,
            step: 1e-6,
            kink_band: 1e-4,
            abs_tol: 1e-8,
        }
    }
}

/// Outcome of a finite-difference check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error among coordinates that did not satisfy the
    /// absolute criterion.
    pub max_rel_err: f64,
    /// Largest absolute difference over all checked coordinates.
    pub max_abs_err: f64,
    /// Per-coordinate relative errors, one entry per checked coordinate.
    pub per_parameter_errors: Vec<(String, f64)>,
    /// Coordinates skipped because an assignment probability sat within the
    /// kink band of t.
    pub excluded_near_kink: usize,
    pub tolerance: f64,
    pub pass: bool,
    /// Per-block summary lines: (path, analytic norm, numeric norm, max rel err).
    blocks: Vec<(String, f64, f64, f64)>,
}

impl GradCheckReport {
    /// Plain-text rendering, one line per parameter block.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for (path, analytic, numeric, rel) in &self.blocks {
            out.push_str(&format!(
                "{path} analytic_norm={analytic:.12e} numeric_norm={numeric:.12e} max_rel_err={rel:.3e}\n"
            ));
        }
        out.push_str(&format!(
            "max_rel_err={:.3e} max_abs_err={:.3e} excluded_near_kink={} tolerance={:.1e} pass={}\n",
            self.max_rel_err, self.max_abs_err, self.excluded_near_kink, self.tolerance, self.pass
        ));
        out
    }
}

/// Checks the analytic clustering gradients against central finite
/// differences of the forward loss on a seeded random configuration.
pub fn finite_difference_check(config: &GradCheckConfig, tolerance: f64) -> Result<GradCheckReport> {
    finite_difference_check_against(config, tolerance, clustering_backward)
}

/// Same check against an arbitrary backward implementation; used to verify
/// that injected faults are caught.
pub fn finite_difference_check_against<F>(
    config: &GradCheckConfig,
    tolerance: f64,
    backward: F,
) -> Result<GradCheckReport>
where
    F: Fn(&EmbeddingBatch, &CentroidSet, &StabilityParams) -> Result<(f64, ClusteringGradients)>,
{
    use rand::{Rng, SeedableRng};
    if tolerance <= 0.0 {
        return Err(Error::InvalidParam("tolerance must be > 0".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let mut normal = move || {
        // Box-Muller on uniform draws keeps the dependency surface small.
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let z0 = Array2::from_shape_fn((config.n, config.d), |_| normal());
    let m0 = Array2::from_shape_fn((config.k, config.d), |_| normal());
    let z = EmbeddingBatch::new(z0)?;
    let m = CentroidSet::new(m0)?;

    let (_, grads) = backward(&z, &m, &config.params)?;
    let (q, _) = co_association_with_dist2(&z, &m, config.params.alpha)?;
    let near_kink_row: Vec<bool> = (0..config.n)
        .map(|i| {
            q.data()
                .row(i)
                .iter()
                .any(|&v| (v - config.params.t).abs() < config.kink_band)
        })
        .collect();
    let any_near_kink = near_kink_row.iter().any(|&b| b);

    let mut acc = CheckAccumulator::default();
    let z_data = z.data().clone();
    let m_data = m.data().clone();
    let skip_z: Vec<bool> = near_kink_row.clone();
    let skip_m = vec![any_near_kink; config.k];

    check_block(
        "z", &z_data, &m_data, true, &grads.d_loss_d_z, &skip_z, config, &mut acc,
    )?;
    check_block(
        "m", &z_data, &m_data, false, &grads.d_loss_d_m, &skip_m, config, &mut acc,
    )?;

    let pass = acc.max_rel <= tolerance;
    Ok(GradCheckReport {
        max_rel_err: acc.max_rel,
        max_abs_err: acc.max_abs,
        per_parameter_errors: acc.per_param,
        excluded_near_kink: acc.excluded,
        tolerance,
        pass,
        blocks: acc.blocks,
    })
}

#[derive(Default)]
struct CheckAccumulator {
    max_rel: f64,
    max_abs: f64,
    excluded: usize,
    per_param: Vec<(String, f64)>,
    blocks: Vec<(String, f64, f64, f64)>,
}

#[allow(clippy::too_many_arguments)]
fn check_block(
    name: &str,
    z_base: &Array2<f64>,
    m_base: &Array2<f64>,
    perturb_z: bool,
    analytic: &Array2<f64>,
    // Per-row exclusion flags: a z coordinate only influences its own
    // assignment row, while an m coordinate influences every row through
    // the shared normalization.
    skip_row: &[bool],
    config: &GradCheckConfig,
    acc: &mut CheckAccumulator,
) -> Result<()> {
    let mut data = if perturb_z {
        z_base.clone()
    } else {
        m_base.clone()
    };
    let eval = |data: &Array2<f64>| -> Result<f64> {
        let (z_arr, m_arr) = if perturb_z {
            (data.clone(), m_base.clone())
        } else {
            (z_base.clone(), data.clone())
        };
        forward_loss(
            &EmbeddingBatch::new(z_arr)?,
            &CentroidSet::new(m_arr)?,
            &config.params,
        )
    };

    let mut block_rel: f64 = 0.0;
    let mut numeric_sq = 0.0;
    let (rows, cols) = (data.nrows(), data.ncols());
    for r in 0..rows {
        for c in 0..cols {
            if skip_row[r] {
                acc.excluded += 1;
                continue;
            }
            let orig = data[[r, c]];
            data[[r, c]] = orig + config.step;
            let loss_plus = eval(&data)?;
            data[[r, c]] = orig - config.step;
            let loss_minus = eval(&data)?;
            data[[r, c]] = orig;
            let numeric = (loss_plus - loss_minus) / (2.0 * config.step);
            numeric_sq += numeric * numeric;
            let a = analytic[[r, c]];
            let abs_diff = (a - numeric).abs();
            acc.max_abs = acc.max_abs.max(abs_diff);
            let rel = if abs_diff <= config.abs_tol {
                // Stationary or near-zero coordinate: the absolute criterion
                // applies and the relative one is waived.
                0.0
            } else {
                abs_diff / a.abs().max(numeric.abs())
            };
            acc.max_rel = acc.max_rel.max(rel);
            block_rel = block_rel.max(rel);
            acc.per_param.push((format!("{name}[{r}][{c}]"), rel));
        }
    }
    let analytic_norm = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    acc.blocks
        .push((name.to_string(), analytic_norm, numeric_sq.sqrt(), block_rel));
    Ok(())
}
