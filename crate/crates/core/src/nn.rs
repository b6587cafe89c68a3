//! Dense layers built from tape primitives.

use rand::Rng;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::param::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply<S: Scalar>(self, tape: &mut Tape<S>, x: Var) -> Result<Var, AutodiffError> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = Tensor::from_fn(&[inputs, outputs], |_| {
            S::lit(rng.random_range(-limit..limit))
        });
        let w = store.add(format!("{name}.w"), w);
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[1, outputs]));
        Self {
            w,
            b,
            inputs,
            outputs,
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        x: Var,
    ) -> Result<Var, AutodiffError> {
        tape.affine(x, p[self.w], p[self.b])
    }
}

/// Stack of [`Linear`] layers with a shared hidden activation and no
/// activation after the last layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `sizes` lists the input width followed by each layer's output width.
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        sizes: &[usize],
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers, activation }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        x: Var,
    ) -> Result<Var, AutodiffError> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, p, h)?;
            if i < last {
                h = self.activation.apply(tape, h)?;
            }
        }
        Ok(h)
    }
}
