//! Adam with bias correction.

use log::warn;

use crate::autodiff::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<S> {
    pub m: Tensor<S>,
    pub v: Tensor<S>,
    /// Number of updates applied to this parameter.
    pub step: u64,
}

impl<S: Scalar> Moments<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
        }
    }
}

/// Outcome of one [`Adam::step`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepReport {
    /// Indices of parameters whose gradient was non-finite and left untouched.
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub config: AdamConfig,
    moments: Vec<Moments<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig) -> Self {
        assert!(config.lr > 0.0, "learning rate must be positive");
        Self {
            config,
            moments: Vec::new(),
        }
    }

    pub fn moments(&self) -> &[Moments<S>] {
        &self.moments
    }

    /// One bias-corrected update of `params` in place.
    ///
    /// `params` and `grads` pair up by position and must keep the same order
    /// across calls.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor<S>>,
        grads: &[Tensor<S>],
    ) -> StepReport {
        let mut report = StepReport::default();
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if self.moments.len() <= i {
                self.moments.push(Moments::zeros(p.shape()));
            }
            assert_eq!(p.shape(), g.shape(), "gradient shape for parameter {i}");
            if !g.is_finite() {
                warn!("adam: non-finite gradient for parameter {i}; update skipped");
                report.skipped.push(i);
                continue;
            }
            adam_update(p, g, &mut self.moments[i], &self.config);
        }
        report
    }
}

/// Single-tensor Adam update.
pub fn adam_update<S: Scalar>(
    param: &mut Tensor<S>,
    grad: &Tensor<S>,
    moments: &mut Moments<S>,
    config: &AdamConfig,
) {
    moments.step += 1;
    let b1 = S::lit(config.beta1);
    let b2 = S::lit(config.beta2);
    let lr = S::lit(config.lr);
    let eps = S::lit(config.eps);
    let t = moments.step as i32;
    let c1 = S::one() - b1.powi(t);
    let c2 = S::one() - b2.powi(t);
    let one = S::one();
    for (((p, &g), m), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(moments.m.data_mut())
        .zip(moments.v.data_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
