//! Parameter-update rules for the two training stages: Adam for
//! reconstruction pretraining and SGD with momentum for the joint
//! clustering stage.

use ndarray::{Array1, Array2};

use crate::autoencoder::{DenseLayer, LayerGrads};

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    slots: Vec<AdamSlot>,
}

#[derive(Debug, Clone)]
struct AdamSlot {
    m_w: Array2<f64>,
    v_w: Array2<f64>,
    m_b: Array1<f64>,
    v_b: Array1<f64>,
}

impl Adam {
    pub fn new(lr: f64, layers: &[DenseLayer]) -> Self {
        let slots = layers
            .iter()
            .map(|l| AdamSlot {
                m_w: Array2::zeros(l.weights.raw_dim()),
                v_w: Array2::zeros(l.weights.raw_dim()),
                m_b: Array1::zeros(l.bias.raw_dim()),
                v_b: Array1::zeros(l.bias.raw_dim()),
            })
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            slots,
        }
    }

    pub fn step(&mut self, layers: &mut [DenseLayer], grads: &[LayerGrads]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((layer, grad), slot) in layers.iter_mut().zip(grads).zip(&mut self.slots) {
            update_adam(
                layer.weights.iter_mut(),
                grad.d_weights.iter(),
                slot.m_w.iter_mut(),
                slot.v_w.iter_mut(),
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
            update_adam(
                layer.bias.iter_mut(),
                grad.d_bias.iter(),
                slot.m_b.iter_mut(),
                slot.v_b.iter_mut(),
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_adam<'a>(
    params: impl Iterator<Item = &'a mut f64>,
    grads: impl Iterator<Item = &'a f64>,
    ms: impl Iterator<Item = &'a mut f64>,
    vs: impl Iterator<Item = &'a mut f64>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for (((p, &g), m), v) in params.zip(grads).zip(ms).zip(vs) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Classical momentum: `v = momentum * v - lr * g; p += v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    lr: f64,
    momentum: f64,
    vel: Vec<(Array2<f64>, Array1<f64>)>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64, layers: &[DenseLayer]) -> Self {
        let vel = layers
            .iter()
            .map(|l| {
                (
                    Array2::zeros(l.weights.raw_dim()),
                    Array1::zeros(l.bias.raw_dim()),
                )
            })
            .collect();
        Self { lr, momentum, vel }
    }

    pub fn step(&mut self, layers: &mut [DenseLayer], grads: &[LayerGrads]) {
        for ((layer, grad), (vel_w, vel_b)) in layers.iter_mut().zip(grads).zip(&mut self.vel) {
            vel_w.zip_mut_with(&grad.d_weights, |v, &g| *v = self.momentum * *v - self.lr * g);
            layer.weights += &*vel_w;
            vel_b.zip_mut_with(&grad.d_bias, |v, &g| *v = self.momentum * *v - self.lr * g);
            layer.bias += &*vel_b;
        }
    }
}

/// Momentum buffer for a single free matrix (the centroids share the same
/// rule as the network parameters).
#[derive(Debug, Clone)]
pub struct MatrixMomentum {
    lr: f64,
    momentum: f64,
    vel: Array2<f64>,
}

impl MatrixMomentum {
    pub fn new(lr: f64, momentum: f64, shape: (usize, usize)) -> Self {
        Self {
            lr,
            momentum,
            vel: Array2::zeros(shape),
        }
    }

    pub fn step(&mut self, param: &mut Array2<f64>, grad: &Array2<f64>) {
        self.vel
            .zip_mut_with(grad, |v, &g| *v = self.momentum * *v - self.lr * g);
        *param += &self.vel;
    }
}
