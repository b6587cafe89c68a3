#![allow(dead_code)]

use hwm_core::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Central finite differences of a scalar function of several tensors.
pub fn numeric_grads(
    f: &dyn Fn(&[Tensor<f64>]) -> f64,
    inputs: &[Tensor<f64>],
    step: f64,
) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[i].len());
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += step;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= step;
            g.push((f(&plus) - f(&minus)) / (2.0 * step));
        }
        out.push(g);
    }
    out
}

/// Relative error with a small absolute floor so tiny gradients are not
/// judged on rounding noise alone.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Runs `build` on a fresh tape with every input tracked, and compares the
/// reverse-mode gradients with central differences. Returns the worst
/// relative error.
pub fn grad_check(build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var, inputs: &[Tensor<f64>]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = build(&mut tape, &vars);
    let grads = tape.backward(root).expect("backward");

    let eval = |xs: &[Tensor<f64>]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let r = build(&mut t, &vs);
        t.item(r)
    };
    let numeric = numeric_grads(&eval, inputs, 1e-5);
    let mut worst: f64 = 0.0;
    for (v, num) in vars.iter().zip(&numeric) {
        for (&a, &n) in grads.wrt(*v).data().iter().zip(num) {
            worst = worst.max(rel_err(a, n));
        }
    }
    worst
}
