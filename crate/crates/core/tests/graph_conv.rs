mod common;

use common::oracle::mixhop_oracle;

use sdgl::graph_conv::{fuse_branches, transition_matrix, MixHopLayer};
use sdgl::graph_static::build_static_graph;
use sdgl::numerics::{GradCheckOptions, ParamStore, RngState, Tape, Tensor};

fn layer(channels: usize, depth: usize, seed: u64) -> (ParamStore, MixHopLayer) {
    let mut params = ParamStore::new();
    let mut rng = RngState::new(seed);
    let l = MixHopLayer::new(&mut params, "gcn", channels, depth, &mut rng).unwrap();
    (params, l)
}

fn apply(params: &ParamStore, l: &MixHopLayer, x: &Tensor, a: &Tensor) -> Tensor {
    let tape = Tape::new();
    let p = params.bind_frozen(&tape);
    let pm = transition_matrix(tape.constant(a.clone())).unwrap();
    l.forward(&p, tape.constant(x.clone()), pm).unwrap().value()
}

fn select_last_block(params: &mut ParamStore, channels: usize, depth: usize) {
    let mut w = Tensor::zeros(&[channels, channels * (depth + 1)]);
    for c in 0..channels {
        w.set(&[c, channels * depth + c], 1.0);
    }
    params.set("gcn.select.weight", w).unwrap();
    params
        .set("gcn.select.bias", Tensor::zeros(&[channels, 1, 1]))
        .unwrap();
}

#[test]
fn stochastic_input_is_unchanged() {
    let mut rng = RngState::new(3);
    let a = Tensor::uniform(&[5, 5], 1.0, &mut rng).map(|v| v.abs() + 0.1);
    let tape = Tape::new();
    let p = transition_matrix(tape.constant(a)).unwrap().value();
    for row in p.data().chunks(5) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let again = transition_matrix(tape.constant(p.clone())).unwrap().value();
    assert!(again.max_abs_diff(&p) < 1e-15);
}

#[test]
fn identity_graph_with_self_selection_returns_input() {
    let (mut params, l) = layer(3, 2, 0);
    select_last_block(&mut params, 3, 2);
    let mut rng = RngState::new(1);
    let x = Tensor::randn(&[2, 3, 4, 5], 1.0, &mut rng);
    assert_eq!(apply(&params, &l, &x, &Tensor::eye(4)), x);
}

#[test]
fn uniform_graph_fixes_node_constant_signal() {
    let (params, l) = layer(2, 1, 4);
    let mut x = Tensor::zeros(&[1, 2, 4, 3]);
    for c in 0..2 {
        for i in 0..4 {
            for t in 0..3 {
                x.set(&[0, c, i, t], (c * 10 + t) as f64);
            }
        }
    }
    let tape = Tape::new();
    let p = tape.constant(Tensor::full(&[4, 4], 0.25));
    let xv = tape.constant(x.clone());
    assert!(xv.propagate(p).unwrap().value().max_abs_diff(&x) < 1e-15);
    let y = apply(&params, &l, &x, &Tensor::full(&[4, 4], 0.25));
    let bound = params.bind_frozen(&tape);
    let doubled = tape.concat(&[xv, xv], 1).unwrap();
    let want = l.select.forward(&bound, doubled).unwrap().value();
    assert!(y.max_abs_diff(&want) < 1e-14);
}

#[test]
fn matches_explicit_matrix_powers() {
    for seed in 0..10 {
        let (params, l) = layer(2, 3, seed);
        let mut rng = RngState::new(100 + seed);
        let a = Tensor::uniform(&[4, 4], 1.0, &mut rng).map(|v| v.abs() + 0.05);
        let x = Tensor::randn(&[2, 2, 4, 3], 1.0, &mut rng);
        let want = mixhop_oracle(&params, "gcn", &x, &a, 3);
        assert!(
            apply(&params, &l, &x, &a).max_abs_diff(&want) < 1e-10,
            "seed {seed}"
        );
    }
}

#[test]
fn powers_preserve_node_constant_signal() {
    let mut rng = RngState::new(9);
    let a = Tensor::uniform(&[6, 6], 1.0, &mut rng).map(|v| v.abs() + 0.01);
    let tape = Tape::new();
    let p = transition_matrix(tape.constant(a)).unwrap();
    let mut x = Tensor::zeros(&[1, 2, 6, 4]);
    for c in 0..2 {
        for i in 0..6 {
            for t in 0..4 {
                x.set(&[0, c, i, t], (c as f64 - 0.5) * (t as f64 + 1.0));
            }
        }
    }
    let mut h = tape.constant(x.clone());
    for _ in 0..8 {
        h = h.propagate(p).unwrap();
        assert!(h.value().max_abs_diff(&x) < 1e-10);
    }
}

#[test]
fn batched_graphs_follow_their_samples() {
    let (params, l) = layer(2, 2, 5);
    let mut rng = RngState::new(6);
    let x = Tensor::randn(&[3, 2, 4, 3], 1.0, &mut rng);
    let a = Tensor::uniform(&[3, 4, 4], 1.0, &mut rng).map(|v| v.abs() + 0.05);
    let run = |x: &Tensor, a: &Tensor| {
        let tape = Tape::new();
        let p = params.bind_frozen(&tape);
        let pm = transition_matrix(tape.constant(a.clone())).unwrap();
        l.forward(&p, tape.constant(x.clone()), pm).unwrap().value()
    };
    let y = run(&x, &a);
    let perm = [2, 0, 1];
    let pick = |t: &Tensor| Tensor::stack(&perm.map(|k| t.index_first(k))).unwrap();
    assert_eq!(run(&pick(&x), &pick(&a)), pick(&y));
}

#[test]
fn branch_fusion_examples() {
    let mut rng = RngState::new(2);
    let zs = Tensor::randn(&[1, 2, 3, 4], 1.0, &mut rng);
    let zd = Tensor::randn(&[1, 2, 3, 4], 1.0, &mut rng);
    let tape = Tape::new();
    let (s, d) = (tape.constant(zs.clone()), tape.constant(zd.clone()));
    let zero = tape.constant(Tensor::zeros(&[1, 2, 3, 4]));
    assert_eq!(fuse_branches(s, Some(zero)).unwrap().value(), zs);
    let neg = tape.constant(zs.map(|v| -v));
    assert!(fuse_branches(s, Some(neg))
        .unwrap()
        .value()
        .data()
        .iter()
        .all(|&v| v == 0.0));
    let sum = fuse_branches(s, Some(d)).unwrap().value();
    for k in 0..sum.numel() {
        assert_eq!(sum.data()[k], zs.data()[k] + zd.data()[k]);
    }
}

#[test]
fn propagation_gradients() {
    let opts = GradCheckOptions {
        kink_tol: Some(1e-3),
        ..Default::default()
    };
    for seed in 0..5 {
        let (params, l) = layer(2, 2, seed);
        let mut rng = RngState::new(40 + seed);
        let x = Tensor::randn(&[2, 2, 4, 3], 1.0, &mut rng);
        let ms = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let r = common::check_with_params(&params, &[x, ms], &opts, |p, v| {
            let a = transition_matrix(build_static_graph(v[1])?)?;
            common::project(l.forward(p, v[0], a)?, seed)
        });
        assert!(r.passed, "seed {seed}: {r:?}");
    }
}
