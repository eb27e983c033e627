use proptest::prelude::*;
use sdgl::numerics::{
    grad_check, grad_check_inputs, GradCheckOptions, RngState, Tape, Tensor, Var,
};
use sdgl::Error;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

/// Random tensor whose entries sit at least `margin` away from zero so that
/// ReLU/abs kinks are never straddled by the finite-difference stencil.
fn away_from_zero(shape: &[usize], margin: f64, rng: &mut RngState) -> Tensor {
    let mut t = Tensor::randn(shape, 1.0, rng);
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin } else { margin } * 10.0;
        }
    }
    t
}

fn weights(shape: &[usize], rng: &mut RngState) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

fn check_many<F>(name: &str, inputs: impl Fn(&mut RngState) -> Vec<Tensor>, f: F)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> sdgl::Result<Var<'t>>,
{
    for seed in 0..SEEDS {
        let mut rng = RngState::new(1000 + seed);
        let xs = inputs(&mut rng);
        let r = grad_check_inputs(
            &f,
            &xs,
            &GradCheckOptions {
                step: H,
                tol: TOL,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.passed, "{name} seed {seed}: {r:?}");
    }
}

/// Weighted sum so every output coordinate carries a distinct gradient.
fn project<'t>(tape: &'t Tape, y: Var<'t>, seed: u64) -> sdgl::Result<Var<'t>> {
    let mut rng = RngState::with_stream(seed, 99);
    let w = tape.constant(Tensor::randn(&y.shape(), 1.0, &mut rng));
    y.mul(w)?.sum()
}

// ── spec examples ───────────────────────────────────────────────────────

#[test]
fn matmul_identity() {
    let tape = Tape::new();
    let mut rng = RngState::new(1);
    let m = Tensor::randn(&[3, 5], 1.0, &mut rng);
    let i = tape.constant(Tensor::eye(3));
    let out = i.matmul(tape.constant(m.clone())).unwrap().value();
    assert_eq!(out, m);
}

#[test]
fn softmax_uniform_over_equal_logits() {
    let tape = Tape::new();
    let y = tape
        .constant(Tensor::zeros(&[1, 3]))
        .softmax()
        .unwrap()
        .value();
    for v in y.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn relu_definition() {
    let tape = Tape::new();
    let y = tape
        .constant(Tensor::from_rows(&[&[-2.0, 5.0]]))
        .relu()
        .unwrap()
        .value();
    assert_eq!(y.data(), &[0.0, 5.0]);
}

#[test]
fn backward_of_sum_of_squares() {
    let tape = Tape::new();
    let x = tape.param(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    let loss = x.mul(x).unwrap().sum().unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn backward_of_matmul_sum_is_ones_times_b_transpose() {
    let mut rng = RngState::new(5);
    let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let b = Tensor::randn(&[4, 2], 1.0, &mut rng);
    let tape = Tape::new();
    let av = tape.param(a.clone());
    let bv = tape.constant(b.clone());
    tape.backward(av.matmul(bv).unwrap().sum().unwrap())
        .unwrap();
    let g = av.grad().unwrap();
    // ones(3×2)·Bᵀ: every row equals the row sums of B.
    for i in 0..3 {
        for k in 0..4 {
            let expect: f64 = (0..2).map(|j| b.get(&[k, j])).sum();
            assert!((g.get(&[i, k]) - expect).abs() < 1e-12);
        }
    }
    let r = grad_check(
        |tape, x| x.matmul(tape.constant(b.clone()))?.sum(),
        &a,
        H,
        TOL,
    )
    .unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn backward_errors() {
    let tape = Tape::new();
    let x = tape.param(Tensor::ones(&[2]));
    let y = x.scale(2.0).unwrap();
    assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    let s = y.sum().unwrap();
    tape.backward(s).unwrap();
    assert!(tape.is_consumed());
    assert!(matches!(tape.backward(s), Err(Error::State(_))));
}

#[test]
fn unreached_params_get_zero_grads() {
    let tape = Tape::new();
    let x = tape.param(Tensor::ones(&[2]));
    let unused = tape.param(Tensor::ones(&[3]));
    tape.backward(x.sum().unwrap()).unwrap();
    assert_eq!(unused.grad().unwrap(), Tensor::zeros(&[3]));
}

#[test]
fn shape_errors_name_the_primitive() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::ones(&[2, 3]));
    let b = tape.constant(Tensor::ones(&[2, 3]));
    let err = a.matmul(b).unwrap_err();
    assert!(err.to_string().contains("matmul"), "{err}");
    assert!(err.to_string().contains("[2, 3]"), "{err}");
    let c = tape.constant(Tensor::ones(&[4]));
    assert!(matches!(a.add(c), Err(Error::Shape { op: "add", .. })));
}

#[test]
fn debug_checks_reject_non_finite_inputs() {
    let tape = Tape::with_debug_checks();
    let x = tape.constant(Tensor::new(&[2], vec![1.0, f64::NAN]).unwrap());
    assert!(matches!(x.relu(), Err(Error::NonFinite { .. })));
    let quiet = Tape::new();
    let y = quiet.constant(Tensor::new(&[1], vec![f64::NAN]).unwrap());
    assert!(y.relu().is_ok());
}

// ── finite-difference oracle, every primitive, 20 seeds ─────────────────

#[test]
fn grad_elementwise_binary_with_broadcast() {
    check_many(
        "add/sub/mul/div",
        |rng| {
            vec![
                weights(&[2, 3, 4], rng),
                weights(&[3, 1], rng),
                away_from_zero(&[4], 0.5, rng),
            ]
        },
        |tape, xs| {
            let y = xs[0].add(xs[1])?.mul(xs[2])?.sub(xs[1])?.div(xs[2])?;
            project(tape, y, 1)
        },
    );
}

#[test]
fn grad_scale_affine_and_matmul_variants() {
    check_many(
        "matmul",
        |rng| {
            vec![
                weights(&[2, 3, 4], rng),
                weights(&[4, 5], rng),
                weights(&[2, 5, 3], rng),
                weights(&[3, 4], rng),
            ]
        },
        |tape, xs| {
            let ab = xs[0].matmul(xs[1])?.scale(0.7)?.add_scalar(0.3)?; // 2×3×5
            let abc = ab.matmul(xs[2])?; // 2×3×3
            let d = xs[3].matmul(xs[3].transpose()?)?; // 3×3
            let e = d.matmul(abc)?; // rank-2 × rank-3
            project(tape, e, 2)
        },
    );
}

#[test]
fn grad_activations() {
    check_many(
        "relu/tanh/sigmoid/abs",
        |rng| vec![away_from_zero(&[4, 4], 1e-2, rng)],
        |tape, xs| {
            let x = xs[0];
            let y = x.relu()?.add(x.tanh()?)?.add(x.sigmoid()?)?.add(x.abs()?)?;
            project(tape, y, 3)
        },
    );
}

#[test]
fn grad_softmax_and_layer_norm() {
    check_many(
        "softmax/layer_norm",
        |rng| vec![weights(&[2, 3, 5], rng)],
        |tape, xs| {
            let y = xs[0].softmax()?.add(xs[0].layer_norm(1e-5)?)?;
            project(tape, y, 4)
        },
    );
}

#[test]
fn grad_layer_norm_then_sum_spec_example() {
    for seed in 0..SEEDS {
        let mut rng = RngState::new(seed);
        let x = weights(&[3, 6], &mut rng);
        let r = grad_check(
            |tape, x| {
                let y = x.layer_norm(1e-5)?;
                project(tape, y, seed)
            },
            &x,
            H,
            TOL,
        )
        .unwrap();
        assert!(r.passed, "seed {seed}: {r:?}");
    }
}

#[test]
fn grad_sigmoid_sum_spec_example() {
    for seed in 0..SEEDS {
        let mut rng = RngState::new(seed);
        let x = weights(&[4, 4], &mut rng);
        let r = grad_check(|_, x| x.sigmoid()?.sum(), &x, H, TOL).unwrap();
        assert!(r.passed && r.max_rel_error < 1e-4, "seed {seed}: {r:?}");
    }
}

#[test]
fn grad_linear_is_exact() {
    let mut rng = RngState::new(9);
    let x = weights(&[5, 3], &mut rng);
    let r = grad_check(|_, x| x.sum(), &x, H, 1e-10).unwrap();
    assert!(r.max_rel_error <= 1e-10);
}

#[test]
fn grad_dropout_with_fixed_mask() {
    check_many(
        "dropout",
        |rng| vec![weights(&[3, 4], rng)],
        |tape, xs| {
            // Same substream each evaluation, so the mask is identical across
            // the perturbed forward passes.
            let mut r = RngState::with_stream(77, 1);
            let y = xs[0].dropout(0.7, Some(&mut r))?;
            project(tape, y, 5)
        },
    );
}

#[test]
fn grad_structural_ops() {
    check_many(
        "concat/narrow/reshape/sum_axis/mean",
        |rng| vec![weights(&[2, 3, 4], rng), weights(&[2, 2, 4], rng)],
        |tape, xs| {
            let c = tape.concat(&[xs[0], xs[1]], 1)?; // 2×5×4
            let n = c.narrow(2, 1, 2)?; // 2×5×2
            let r = n.reshape(&[5, 4])?;
            let s = r.sum_axis(1)?; // 5×1
            let m = r.div(s.add_scalar(10.0)?)?;
            let last = c.keep_last(1, 3)?.mean()?;
            project(tape, m, 6)?.add(last)
        },
    );
}

#[test]
fn grad_conv_time() {
    check_many(
        "conv_time",
        |rng| vec![weights(&[2, 3, 2, 9], rng), weights(&[4, 3, 3], rng)],
        |tape, xs| {
            let y = xs[0].conv_time(xs[1], 2)?;
            assert_eq!(y.shape(), vec![2, 4, 2, 5]);
            project(tape, y, 7)
        },
    );
}

#[test]
fn grad_channel_map_and_propagate() {
    check_many(
        "channel_map/propagate",
        |rng| {
            vec![
                weights(&[2, 3, 4, 5], rng),
                weights(&[2, 3], rng),
                weights(&[4, 4], rng),
                weights(&[2, 4, 4], rng),
            ]
        },
        |tape, xs| {
            let y = xs[0].channel_map(xs[1])?; // 2×2×4×5
            let a = y.propagate(xs[2])?;
            let b = y.propagate(xs[3])?;
            project(tape, a.add(b)?, 8)
        },
    );
}

#[test]
fn grad_pairwise_sq_dist() {
    check_many(
        "pairwise_sq_dist",
        |rng| vec![weights(&[2, 4, 3], rng)],
        |tape, xs| project(tape, xs[0].pairwise_sq_dist()?, 9),
    );
}

// ── invariants ──────────────────────────────────────────────────────────

#[test]
fn dropout_identity_cases() {
    let tape = Tape::new();
    let mut rng = RngState::new(3);
    let x = tape.constant(Tensor::randn(&[4, 4], 1.0, &mut rng));
    let kept = x.dropout(1.0, Some(&mut rng)).unwrap();
    assert_eq!(kept.value(), x.value());
    let eval = x.dropout(0.3, None).unwrap();
    assert_eq!(eval.value(), x.value());
    assert!(x.dropout(0.0, None).is_err());
    assert!(x.dropout(1.5, None).is_err());
}

#[test]
fn dropout_is_reproducible_from_seed() {
    let run = || {
        let tape = Tape::new();
        let mut rng = RngState::new(21);
        tape.constant(Tensor::ones(&[50]))
            .dropout(0.5, Some(&mut rng))
            .unwrap()
            .value()
    };
    let a = run();
    assert_eq!(a, run());
    // Inverted scaling: kept entries are 1/keep.
    assert!(a.data().iter().all(|&v| v == 0.0 || v == 2.0));
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5, cols in 1usize..7, seed in any::<u64>(), scale in 0.1f64..30.0
    ) {
        let mut rng = RngState::new(seed);
        let tape = Tape::new();
        let y = tape
            .constant(Tensor::randn(&[rows, cols], scale, &mut rng))
            .softmax()
            .unwrap()
            .value();
        for r in 0..rows {
            let row = y.row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized(
        rows in 1usize..5, cols in 2usize..9, seed in any::<u64>(), scale in 0.01f64..100.0,
    ) {
        let mut rng = RngState::new(seed);
        let tape = Tape::new();
        let x = Tensor::randn(&[rows, cols], scale, &mut rng);
        // eps = 0: the normalization itself, before any regularizing epsilon
        // or affine rescale.
        let y = tape.constant(x.clone()).layer_norm(0.0).unwrap().value();
        for r in 0..rows {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            prop_assert!(mean.abs() <= 1e-10);
            prop_assert!((var - 1.0).abs() <= 1e-8);
        }
        // With the model's eps the variance shrinks by exactly var/(var+eps).
        let y = tape.constant(x.clone()).layer_norm(1e-5).unwrap().value();
        for r in 0..rows {
            let xr = x.row(r);
            let m = xr.iter().sum::<f64>() / cols as f64;
            let v = xr.iter().map(|a| (a - m).powi(2)).sum::<f64>() / cols as f64;
            let row = y.row(r);
            let var = row.iter().map(|a| a * a).sum::<f64>() / cols as f64;
            prop_assert!((var - v / (v + 1e-5)).abs() <= 1e-10);
        }
    }
}

#[test]
fn layer_norm_of_zero_row_is_zero() {
    let tape = Tape::new();
    let y = tape
        .constant(Tensor::zeros(&[2, 4]))
        .layer_norm(1e-5)
        .unwrap()
        .value();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_time_hand_examples() {
    let tape = Tape::new();
    // All-ones input, all-ones 1×2 kernel, dilation 1: each output is 2.
    let x = tape.constant(Tensor::ones(&[1, 1, 1, 6]));
    let w = tape.constant(Tensor::ones(&[1, 1, 2]));
    let y = x.conv_time(w, 1).unwrap().value();
    assert_eq!(y.shape(), &[1, 1, 1, 5]);
    assert!(y.data().iter().all(|&v| v == 2.0));

    // Too-short window names the minimum length.
    let short = tape.constant(Tensor::ones(&[1, 1, 1, 12]));
    let w7 = tape.constant(Tensor::ones(&[1, 1, 7]));
    let err = short.conv_time(w7, 2).unwrap_err().to_string();
    assert!(err.contains("at least 13"), "{err}");
}
