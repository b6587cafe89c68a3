// Index loops mirror the subscripts of the formulas they check.
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

mod common;

use common::{grad_check, random_tensor, rng};
use hwm_core::{AutodiffError, OpKind, Tape, Tensor, Var};
use proptest::prelude::*;

const TOL: f64 = 1e-4;

/// Reduces an arbitrary-shaped node to a scalar through a fixed random
/// weighting so every output element contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let shape = tape.shape(x).to_vec();
    let mut r = rng(seed);
    let w = tape.constant(random_tensor(&mut r, &shape, -1.0, 1.0));
    let p = tape.mul(x, w).unwrap();
    tape.sum(p).unwrap()
}

#[test]
fn add_of_vectors() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
    let b = tape.constant(Tensor::from_f64(&[2], &[3.0, 4.0]).unwrap());
    let c = tape.add(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    assert!(
        !tape.is_tracked(c),
        "constant-only inputs produce a constant"
    );
}

#[test]
fn stop_gradient_is_identity_forward() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap());
    let y = tape.stop_gradient(x).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
    assert!(!tape.is_tracked(y));
}

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(7);
    let a = random_tensor(&mut r, &[2, 3], -1.0, 1.0);
    let b = random_tensor(&mut r, &[3, 2], -1.0, 1.0);
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let c = tape.matmul(va, vb).unwrap();
    assert_eq!(tape.shape(c), &[2, 2]);
    for i in 0..2 {
        for j in 0..2 {
            let mut want = 0.0;
            for k in 0..3 {
                want += a.data()[i * 3 + k] * b.data()[k * 2 + j];
            }
            assert!((tape.value(c).data()[i * 2 + j] - want).abs() < 1e-15);
        }
    }
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[4, 2]));
    let err = tape.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        AutodiffError::ShapeMismatch {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![4, 2]
        }
    );
    let msg = tape.add(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
}

#[test]
fn backward_of_sum_of_squares() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
    let sq = tape.square(x).unwrap();
    let root = tape.sum(sq).unwrap();
    let g = tape.backward(root).unwrap();
    assert_eq!(g.wrt(x).data(), &[2.0, 4.0]);
}

#[test]
fn gradient_through_stop_gradient_is_zero() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
    let w = tape.leaf(Tensor::from_f64(&[2], &[0.5, 0.5]).unwrap());
    let sx = tape.stop_gradient(x).unwrap();
    let e = tape.exp(sx).unwrap();
    let p = tape.mul(e, w).unwrap();
    let root = tape.sum(p).unwrap();
    let g = tape.backward(root).unwrap();
    assert_eq!(g.wrt(x).data(), &[0.0, 0.0]);
    assert!(g.wrt(w).data().iter().all(|&v| v > 0.0));
}

#[test]
fn unreached_leaf_gets_zero() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
    let unused = tape.leaf(Tensor::zeros(&[3, 1]));
    let root = tape.sum(x).unwrap();
    let late = tape.leaf(Tensor::zeros(&[1]));
    let g = tape.backward(root).unwrap();
    assert_eq!(g.wrt(unused), &Tensor::zeros(&[3, 1]));
    assert_eq!(g.wrt(late), &Tensor::zeros(&[1]));
}

#[test]
fn non_scalar_root_rejected() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[2]));
    let y = tape.exp(x).unwrap();
    assert_eq!(
        tape.backward(y).unwrap_err(),
        AutodiffError::NonScalarRoot(vec![2])
    );
}

#[test]
fn tanh_network_matches_finite_differences() {
    let mut r = rng(11);
    let inputs = vec![
        random_tensor(&mut r, &[4, 3], -1.0, 1.0),
        random_tensor(&mut r, &[3, 5], -1.0, 1.0),
        random_tensor(&mut r, &[1, 5], -0.5, 0.5),
        random_tensor(&mut r, &[5, 1], -1.0, 1.0),
        random_tensor(&mut r, &[1, 1], -0.5, 0.5),
    ];
    let err = grad_check(
        &|t, v| {
            let h = t.affine(v[0], v[1], v[2]).unwrap();
            let h = t.tanh(h).unwrap();
            let o = t.affine(h, v[3], v[4]).unwrap();
            let o = t.tanh(o).unwrap();
            t.sum(o).unwrap()
        },
        &inputs,
    );
    assert!(err < TOL, "relative error {err}");
}

/// Per-primitive gradient checks, each on inputs drawn from the op's domain.
#[test]
fn every_primitive_matches_finite_differences() {
    type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;
    let cases: Vec<(&str, Vec<(Vec<usize>, f64, f64)>, Build)> = vec![
        (
            "add",
            vec![(vec![3, 4], -1.0, 1.0), (vec![3, 4], -1.0, 1.0)],
            Box::new(|t, v| {
                let y = t.add(v[0], v[1]).unwrap();
                weighted_sum(t, y, 1)
            }),
        ),
        (
            "add_row_broadcast",
            vec![(vec![3, 4], -1.0, 1.0), (vec![1, 4], -1.0, 1.0)],
            Box::new(|t, v| {
                let y = t.add(v[0], v[1]).unwrap();
                weighted_sum(t, y, 2)
            }),
        ),
        (
            "sub_col_broadcast",
            vec![(vec![3, 4], -1.0, 1.0), (vec![3, 1], -1.0, 1.0)],
            Box::new(|t, v| {
                let y = t.sub(v[0], v[1]).unwrap();
                weighted_sum(t, y, 3)
            }),
        ),
        (
            "mul",
            vec![(vec![3, 4], -1.0, 1.0), (vec![3, 4], -1.0, 1.0)],
            Box::new(|t, v| {
                let y = t.mul(v[0], v[1]).unwrap();
                weighted_sum(t, y, 4)
            }),
        ),
        (
            "mul_scalar_broadcast",
            vec![(vec![3, 4], -1.0, 1.0), (vec![], -1.0, 1.0)],
            Box::new(|t, v| {
                let y = t.mul(v[0], v[1]).unwrap();
                weighted_sum(t, y, 5)
            }),
        ),
        (
            "div",
            vec![(vec![3, 4], -1.0, 1.0), (vec![3, 4], 0.5, 2.0)],
            Box::new(|t, v| {
                let y = t.div(v[0], v[1]).unwrap();
                weighted_sum(t, y, 6)
            }),
        ),
        (
            "matmul",
            vec![(vec![3, 4], -1.0, 1.0), (vec![4, 2], -1.0, 1.0)],
            Box::new(|t, v| {
                let y = t.matmul(v[0], v[1]).unwrap();
                weighted_sum(t, y, 7)
            }),
        ),
        (
            "sum",
            vec![(vec![3, 4], -1.0, 1.0)],
            Box::new(|t, v| {
                let y = t.square(v[0]).unwrap();
                t.sum(y).unwrap()
            }),
        ),
        (
            "mean",
            vec![(vec![3, 4], -1.0, 1.0)],
            Box::new(|t, v| {
                let y = t.square(v[0]).unwrap();
                t.mean(y).unwrap()
            }),
        ),
        (
            "sum_last",
            vec![(vec![3, 4], -1.0, 1.0)],
            Box::new(|t, v| {
                let y = t.sum_last(v[0]).unwrap();
                weighted_sum(t, y, 8)
            }),
        ),
        (
            "exp",
            vec![(vec![3, 4], -1.0, 1.0)],
            Box::new(|t, v| {
                let y = t.exp(v[0]).unwrap();
                weighted_sum(t, y, 9)
            }),
        ),
        (
            "log",
            vec![(vec![3, 4], 0.2, 3.0)],
            Box::new(|t, v| {
                let y = t.log(v[0]).unwrap();
                weighted_sum(t, y, 10)
            }),
        ),
        (
            "tanh",
            vec![(vec![3, 4], -2.0, 2.0)],
            Box::new(|t, v| {
                let y = t.tanh(v[0]).unwrap();
                weighted_sum(t, y, 11)
            }),
        ),
        (
            "relu",
            vec![(vec![3, 4], 0.1, 1.0)],
            Box::new(|t, v| {
                let n = t.neg(v[0]).unwrap();
                let c = t.concat(&[v[0], n], 1).unwrap();
                let y = t.relu(c).unwrap();
                weighted_sum(t, y, 12)
            }),
        ),
        (
            "softplus",
            vec![(vec![3, 4], -3.0, 3.0)],
            Box::new(|t, v| {
                let y = t.softplus(v[0]).unwrap();
                weighted_sum(t, y, 13)
            }),
        ),
        (
            "sigmoid",
            vec![(vec![3, 4], -3.0, 3.0)],
            Box::new(|t, v| {
                let y = t.sigmoid(v[0]).unwrap();
                weighted_sum(t, y, 14)
            }),
        ),
        (
            "square",
            vec![(vec![3, 4], -1.0, 1.0)],
            Box::new(|t, v| {
                let y = t.square(v[0]).unwrap();
                weighted_sum(t, y, 15)
            }),
        ),
        (
            "neg_scale_shift",
            vec![(vec![3, 4], -1.0, 1.0)],
            Box::new(|t, v| {
                let y = t.neg(v[0]).unwrap();
                let y = t.scale(y, 2.5).unwrap();
                let y = t.shift(y, 0.3).unwrap();
                let y = t.square(y).unwrap();
                weighted_sum(t, y, 16)
            }),
        ),
        (
            "clamp_min",
            vec![(vec![3, 4], 0.5, 1.5)],
            Box::new(|t, v| {
                let y = t.shift(v[0], -1.0).unwrap();
                let y = t.clamp_min(y, 0.0).unwrap();
                weighted_sum(t, y, 17)
            }),
        ),
        (
            "broadcast",
            vec![(vec![1, 4], -1.0, 1.0)],
            Box::new(|t, v| {
                let y = t.broadcast(v[0], &[3, 4]).unwrap();
                weighted_sum(t, y, 18)
            }),
        ),
        (
            "concat_axis0",
            vec![(vec![2, 3], -1.0, 1.0), (vec![1, 3], -1.0, 1.0)],
            Box::new(|t, v| {
                let y = t.concat(&[v[0], v[1]], 0).unwrap();
                weighted_sum(t, y, 19)
            }),
        ),
        (
            "concat_axis1",
            vec![(vec![2, 3], -1.0, 1.0), (vec![2, 2], -1.0, 1.0)],
            Box::new(|t, v| {
                let y = t.concat(&[v[0], v[1], v[0]], 1).unwrap();
                weighted_sum(t, y, 20)
            }),
        ),
        (
            "slice",
            vec![(vec![3, 5], -1.0, 1.0)],
            Box::new(|t, v| {
                let y = t.slice(v[0], 1, 1, 4).unwrap();
                let z = t.slice(v[0], 0, 2, 3).unwrap();
                let a = weighted_sum(t, y, 21);
                let b = weighted_sum(t, z, 22);
                t.add(a, b).unwrap()
            }),
        ),
        (
            "stop_gradient",
            vec![(vec![3, 4], -1.0, 1.0)],
            Box::new(|t, v| {
                let s = t.stop_gradient(v[0]).unwrap();
                let y = t.mul(s, v[0]).unwrap();
                weighted_sum(t, y, 23)
            }),
        ),
    ];
    let mut r = rng(2024);
    for (name, specs, build) in cases {
        let inputs: Vec<Tensor<f64>> = specs
            .iter()
            .map(|(shape, lo, hi)| random_tensor(&mut r, shape, *lo, *hi))
            .collect();
        if name == "stop_gradient" {
            // d/dx [sg(x)·x] = sg(x): differs from finite differences by design.
            let mut tape = Tape::new();
            let x = tape.leaf(inputs[0].clone());
            let root = build(&mut tape, &[x]);
            let g = tape.backward(root).unwrap();
            let mut r2 = rng(23);
            let w = random_tensor(&mut r2, &[3, 4], -1.0, 1.0);
            for ((&gi, &xi), &wi) in g.wrt(x).data().iter().zip(inputs[0].data()).zip(w.data()) {
                assert!((gi - xi * wi).abs() < 1e-14);
            }
            continue;
        }
        let err = grad_check(build.as_ref(), &inputs);
        assert!(err < TOL, "{name}: relative error {err}");
    }
}

#[test]
fn forward_op_rejects_wrong_arity() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[2]));
    assert!(matches!(
        tape.forward_op(OpKind::Add, &[x]),
        Err(AutodiffError::Arity { op: "add", .. })
    ));
}

#[test]
fn forward_and_backward_are_bitwise_deterministic() {
    let run = || {
        let mut r = rng(99);
        let a = random_tensor(&mut r, &[8, 6], -1.0, 1.0);
        let b = random_tensor(&mut r, &[6, 3], -1.0, 1.0);
        let mut tape = Tape::new();
        let (va, vb) = (tape.leaf(a), tape.leaf(b));
        let m = tape.matmul(va, vb).unwrap();
        let s = tape.softplus(m).unwrap();
        let root = tape.mean(s).unwrap();
        let g = tape.backward(root).unwrap();
        (
            tape.item(root).to_bits(),
            g.wrt(va).clone(),
            g.wrt(vb).clone(),
        )
    };
    let (r1, a1, b1) = run();
    let (r2, a2, b2) = run();
    assert_eq!(r1, r2);
    let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a1), bits(&a2));
    assert_eq!(bits(&b1), bits(&b2));
}

#[test]
fn f32_instantiation_differentiates() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::from_f64(&[2], &[1.0, 3.0]).unwrap());
    let sq = tape.square(x).unwrap();
    let root = tape.sum(sq).unwrap();
    assert_eq!(tape.backward(root).unwrap().wrt(x).data(), &[2.0f32, 6.0]);
}

/// Smooth unary ops used for random composition; all are defined on ℝ.
fn apply_smooth(t: &mut Tape<f64>, x: Var, which: u8) -> Var {
    match which % 5 {
        0 => t.tanh(x).unwrap(),
        1 => t.softplus(x).unwrap(),
        2 => t.sigmoid(x).unwrap(),
        3 => {
            let s = t.scale(x, 0.5).unwrap();
            t.exp(s).unwrap()
        }
        _ => {
            let sq = t.square(x).unwrap();
            t.shift(sq, 0.1).unwrap()
        }
    }
}

fn apply_binary(t: &mut Tape<f64>, a: Var, b: Var, which: u8) -> Var {
    match which % 4 {
        0 => t.add(a, b).unwrap(),
        1 => t.sub(a, b).unwrap(),
        2 => t.mul(a, b).unwrap(),
        _ => {
            // keep the denominator away from zero
            let d = t.square(b).unwrap();
            let d = t.shift(d, 1.0).unwrap();
            t.div(a, d).unwrap()
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_graphs_match_finite_differences(
        ops in proptest::collection::vec((0u8..2, 0u8..8, 0u8..8), 1..=6),
        seed in 0u64..1_000_000,
    ) {
        let mut r = rng(seed);
        let inputs = vec![
            random_tensor(&mut r, &[3, 4], -1.0, 1.0),
            random_tensor(&mut r, &[4, 4], -0.7, 0.7),
            random_tensor(&mut r, &[1, 4], -1.0, 1.0),
        ];
        let ops2 = ops.clone();
        let build = move |t: &mut Tape<f64>, v: &[Var]| {
            let mut cur = v[0];
            for &(kind, a, b) in &ops2 {
                cur = if kind == 0 {
                    apply_smooth(t, cur, a)
                } else if b % 3 == 0 {
                    let m = t.matmul(cur, v[1]).unwrap();
                    apply_smooth(t, m, a)
                } else {
                    let other = if b % 3 == 1 { v[2] } else { v[0] };
                    apply_binary(t, cur, other, a)
                };
            }
            let w = t.constant(Tensor::from_fn(&[3, 4], |i| 0.1 * (i as f64) - 0.5));
            let p = t.mul(cur, w).unwrap();
            t.sum(p).unwrap()
        };
        let err = grad_check(&build, &inputs);
        prop_assert!(err < TOL, "ops {:?}: relative error {}", ops, err);
    }
}
