//! Dense encoder/decoder with manual forward and backward passes,
//! reconstruction-loss pretraining, and seeded input augmentation.

use ndarray::{Array1, Array2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::stability::EmbeddingBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// One fully connected layer: `a = act(x W^T + b)`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// out x in weight matrix.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Per-layer parameter gradients.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weights: Array2<f64>,
    pub d_bias: Array1<f64>,
}

/// A stack of dense layers; used for both the encoder and the decoder.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParam("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer output {} does not chain into next input {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        for layer in &layers {
            if !layer.weights.iter().chain(layer.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite("layer parameters".into()));
            }
        }
        Ok(Self { layers })
    }

    /// Seeded initialization: weights uniform in +-1/sqrt(fan_in), zero
    /// biases, ReLU on hidden layers and identity on the final one.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidParam(
                "need at least input and output dims".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (li, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            if fan_in == 0 || fan_out == 0 {
                return Err(Error::InvalidParam("zero layer width".into()));
            }
            let scale = 1.0 / (fan_in as f64).sqrt();
            let weights =
                Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-scale..scale));
            let activation = if li == dims.len() - 2 {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(DenseLayer {
                weights,
                bias: Array1::zeros(fan_out),
                activation,
            });
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Forward pass over a batch (rows are samples).
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Forward pass keeping every layer activation for backpropagation.
    /// The cache holds the input followed by each layer's output.
    pub fn forward_cached(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input dim {} != network input {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let mut cache = Vec::with_capacity(self.layers.len() + 1);
        cache.push(x.clone());
        let mut a = x.clone();
        for layer in &self.layers {
            let mut pre = a.dot(&layer.weights.t());
            for mut row in pre.rows_mut() {
                row += &layer.bias;
            }
            a = match layer.activation {
                Activation::Relu => pre.mapv(|v| v.max(0.0)),
                Activation::Identity => pre,
            };
            if !a.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("layer activations".into()));
            }
            cache.push(a.clone());
        }
        Ok((a, cache))
    }

    /// Backpropagates an output gradient through the network, returning the
    /// parameter gradients (input-to-output layer order) and the gradient
    /// with respect to the network input.
    pub fn backward(&self, cache: &[Array2<f64>], d_out: &Array2<f64>) -> (Vec<LayerGrads>, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out.clone();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                // ReLU derivative from the cached post-activation values:
                // dead units pass no gradient.
                delta
                    .iter_mut()
                    .zip(cache[li + 1].iter())
                    .for_each(|(d, &a)| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
            }
            let d_weights = delta.t().dot(&cache[li]);
            let d_bias = delta.sum_axis(ndarray::Axis(0));
            delta = delta.dot(&layer.weights);
            grads.push(LayerGrads { d_weights, d_bias });
        }
        grads.reverse();
        (grads, delta)
    }
}

/// Encoder/decoder pair with mirrored widths.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl Autoencoder {
    /// Builds both networks from the encoder widths; the decoder mirrors
    /// them reversed. `dims` runs from the input dimension to the latent
    /// dimension.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        let encoder = Mlp::init(dims, seed)?;
        let rev: Vec<usize> = dims.iter().rev().copied().collect();
        let decoder = Mlp::init(&rev, seed.wrapping_add(1))?;
        Ok(Self { encoder, decoder })
    }

    pub fn new(encoder: Mlp, decoder: Mlp) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim()
            || encoder.input_dim() != decoder.output_dim()
        {
            return Err(Error::ShapeMismatch(
                "decoder must mirror encoder dimensions".into(),
            ));
        }
        Ok(Self { encoder, decoder })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }
}

/// Maps a batch of inputs into the latent space.
pub fn encode(x: &Array2<f64>, enc: &Mlp) -> Result<EmbeddingBatch> {
    EmbeddingBatch::new(enc.forward(x)?)
}

/// Reconstructs inputs from latent vectors.
pub fn decode(z: &EmbeddingBatch, dec: &Mlp) -> Result<Array2<f64>> {
    dec.forward(z.data())
}

/// Mean over samples of the squared reconstruction residual norm.
pub fn reconstruction_loss(x_aug: &Array2<f64>, x_rec: &Array2<f64>) -> Result<f64> {
    if x_aug.dim() != x_rec.dim() {
        return Err(Error::ShapeMismatch(format!(
            "target {:?} vs reconstruction {:?}",
            x_aug.dim(),
            x_rec.dim()
        )));
    }
    let n = x_aug.nrows() as f64;
    let sum: f64 = x_aug
        .iter()
        .zip(x_rec.iter())
        .map(|(a, r)| (r - a) * (r - a))
        .sum();
    Ok(sum / n)
}

/// Gradients of the reconstruction loss for every parameter of both
/// networks.
#[derive(Debug, Clone)]
pub struct AeGradients {
    pub encoder: Vec<LayerGrads>,
    pub decoder: Vec<LayerGrads>,
}

/// Forward and backward pass of the reconstruction objective on a batch.
pub fn ae_backward(x_aug: &Array2<f64>, enc: &Mlp, dec: &Mlp) -> Result<(f64, AeGradients)> {
    let (z, enc_cache) = enc.forward_cached(x_aug)?;
    let (x_rec, dec_cache) = dec.forward_cached(&z)?;
    let loss = reconstruction_loss(x_aug, &x_rec)?;
    let n = x_aug.nrows() as f64;
    let d_rec = (&x_rec - x_aug) * (2.0 / n);
    let (dec_grads, d_z) = dec.backward(&dec_cache, &d_rec);
    let (enc_grads, _) = enc.backward(&enc_cache, &d_z);
    Ok((
        loss,
        AeGradients {
            encoder: enc_grads,
            decoder: dec_grads,
        },
    ))
}

/// How inputs are perturbed before reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentMode {
    /// Rows are H x W images: integer shifts and nearest-neighbor rotation
    /// apply, then Gaussian noise.
    Image { height: usize, width: usize },
    /// Rows are plain vectors: Gaussian noise only.
    Vector,
}

/// Seeded random-transformation settings.
#[derive(Debug, Clone, Copy)]
pub struct AugmentSpec {
    pub mode: AugmentMode,
    pub max_shift_px: usize,
    pub max_rotate_deg: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl AugmentSpec {
    pub fn image(height: usize, width: usize, seed: u64) -> Self {
        Self {
            mode: AugmentMode::Image { height, width },
            max_shift_px: 2,
            max_rotate_deg: 10.0,
            noise_sigma: 0.01,
            seed,
        }
    }

    pub fn vector(seed: u64) -> Self {
        Self {
            mode: AugmentMode::Vector,
            max_shift_px: 0,
            max_rotate_deg: 0.0,
            noise_sigma: 0.01,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_rotate_deg < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::InvalidParam(
                "augmentation magnitudes must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Applies a seeded random transformation per sample. Identical spec and
/// input always produce the identical augmented batch.
pub fn augment(x: &Array2<f64>, spec: &AugmentSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = x.clone();
    if let AugmentMode::Image { height, width } = spec.mode {
        if height * width != x.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{} does not match feature dim {}",
                height,
                width,
                x.ncols()
            )));
        }
        let mut rotated = vec![0.0f64; height * width];
        for mut row in out.rows_mut() {
            let angle = if spec.max_rotate_deg > 0.0 {
                rng.random_range(-spec.max_rotate_deg..=spec.max_rotate_deg)
            } else {
                0.0
            };
            let (sx, sy) = if spec.max_shift_px > 0 {
                let s = spec.max_shift_px as i64;
                (rng.random_range(-s..=s), rng.random_range(-s..=s))
            } else {
                (0, 0)
            };
            if angle != 0.0 {
                let rad = angle.to_radians();
                let (sin, cos) = rad.sin_cos();
                let cy = (height as f64 - 1.0) / 2.0;
                let cx = (width as f64 - 1.0) / 2.0;
                for r in 0..height {
                    for c in 0..width {
                        // Inverse-map the destination pixel and pick the
                        // nearest source.
                        let dy = r as f64 - cy;
                        let dx = c as f64 - cx;
                        let src_r = (cos * dy + sin * dx + cy).round();
                        let src_c = (-sin * dy + cos * dx + cx).round();
                        rotated[r * width + c] = if src_r >= 0.0
                            && src_r < height as f64
                            && src_c >= 0.0
                            && src_c < width as f64
                        {
                            row[src_r as usize * width + src_c as usize]
                        } else {
                            0.0
                        };
                    }
                }
                for (dst, &v) in row.iter_mut().zip(rotated.iter()) {
                    *dst = v;
                }
            }
            if sx != 0 || sy != 0 {
                let mut shifted = vec![0.0f64; height * width];
                for r in 0..height {
                    for c in 0..width {
                        let src_r = r as i64 - sy;
                        let src_c = c as i64 - sx;
                        if src_r >= 0
                            && src_r < height as i64
                            && src_c >= 0
                            && src_c < width as i64
                        {
                            shifted[r * width + c] =
                                row[src_r as usize * width + src_c as usize];
                        }
                    }
                }
                for (dst, &v) in row.iter_mut().zip(shifted.iter()) {
                    *dst = v;
                }
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        for v in out.iter_mut() {
            *v += spec.noise_sigma * sample_standard_normal(&mut rng);
        }
    }
    Ok(out)
}

/// Box-Muller standard normal draw.
pub(crate) fn sample_standard_normal(rng: &mut impl RngCore) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Reconstruction pretraining settings.
#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Adam step size; betas and epsilon are the usual defaults.
    pub learning_rate: f64,
    pub seed: u64,
    /// Random transformation applied to each mini-batch; the loss compares
    /// the reconstruction against the augmented input itself.
    pub augment: Option<AugmentSpec>,
}

impl PretrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: 256,
            learning_rate: 1e-3,
            seed,
            augment: None,
        }
    }
}

/// Trains the autoencoder on the reconstruction objective with Adam,
/// returning the per-epoch mean batch loss.
pub fn pretrain(x: &Array2<f64>, ae: &mut Autoencoder, config: &PretrainConfig) -> Result<Vec<f64>> {
    if config.batch_size == 0 {
        return Err(Error::InvalidParam("batch_size must be >= 1".into()));
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidParam("empty training set".into()));
    }
    let n = x.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam_enc = Adam::new(config.learning_rate, ae.encoder.layers());
    let mut adam_dec = Adam::new(config.learning_rate, ae.decoder.layers());
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        shuffle(&mut order, &mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut batch = Array2::zeros((chunk.len(), x.ncols()));
            for (bi, &si) in chunk.iter().enumerate() {
                batch.row_mut(bi).assign(&x.row(si));
            }
            let batch = match &config.augment {
                Some(spec) => {
                    // Fresh transform per batch, derived from the master
                    // stream so the whole run stays reproducible.
                    let mut per_batch = *spec;
                    per_batch.seed = rng.next_u64();
                    augment(&batch, &per_batch)?
                }
                None => batch,
            };
            let (loss, grads) = ae_backward(&batch, &ae.encoder, &ae.decoder)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "reconstruction loss became non-finite at epoch {epoch}"
                )));
            }
            adam_enc.step(ae.encoder.layers_mut(), &grads.encoder);
            adam_dec.step(ae.decoder.layers_mut(), &grads.decoder);
            epoch_loss += loss;
            batches += 1;
        }
        trace.push(epoch_loss / batches as f64);
    }
    Ok(trace)
}

/// Fisher-Yates shuffle driven by the given stream.
pub(crate) fn shuffle(order: &mut [usize], rng: &mut impl RngCore) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}
