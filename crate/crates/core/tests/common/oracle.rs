//! Loop-based reference implementations used as independent oracles.

use sdgl::numerics::{ParamStore, RngState, Tape, Tensor, LAYER_NORM_EPS};
use sdgl::temporal_conv::{receptive_field, TcnStack};

pub fn double_loop_loss(x: &Tensor, a: &Tensor, gamma: f64) -> f64 {
    let (b, n, h) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut smooth = 0.0;
    for s in 0..b {
        for i in 0..n {
            for j in 0..n {
                let mut d = 0.0;
                for t in 0..h {
                    let diff = x.get(&[s, i, t]) - x.get(&[s, j, t]);
                    d += diff * diff;
                }
                smooth += d * a.get(&[i, j]);
            }
        }
    }
    let mut frob = 0.0;
    for i in 0..n {
        for j in 0..n {
            frob += a.get(&[i, j]) * a.get(&[i, j]);
        }
    }
    smooth / b as f64 + gamma * frob
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `a: R×K` times `b: K×C`, by loops.
pub fn mm(a: &Tensor, b: &Tensor) -> Tensor {
    let (r, k, c) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = Tensor::zeros(&[r, c]);
    for i in 0..r {
        for j in 0..c {
            out.set(
                &[i, j],
                (0..k).map(|m| a.get(&[i, m]) * b.get(&[m, j])).sum(),
            );
        }
    }
    out
}

pub fn add_row(a: &Tensor, row: &Tensor) -> Tensor {
    let c = a.shape()[1];
    let mut out = a.clone();
    for (k, v) in out.data_mut().iter_mut().enumerate() {
        *v += row.data()[k % c];
    }
    out
}

pub fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| f(*x, *y))
            .collect(),
    )
    .unwrap()
}

pub fn transpose(a: &Tensor) -> Tensor {
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let mut out = Tensor::zeros(&[c, r]);
    for i in 0..r {
        for j in 0..c {
            out.set(&[j, i], a.get(&[i, j]));
        }
    }
    out
}

pub fn layer_norm_rows(a: &Tensor) -> Tensor {
    let c = a.shape()[a.rank() - 1];
    let mut out = a.clone();
    for row in out.data_mut().chunks_mut(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let sd = (var + LAYER_NORM_EPS).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
    out
}

pub fn softmax_rows(a: &Tensor) -> Tensor {
    let c = a.shape()[a.rank() - 1];
    let mut out = a.clone();
    for row in out.data_mut().chunks_mut(c) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - m).exp());
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Gated fusion written out with loops over the named weights.
pub fn fuse_oracle(params: &ParamStore, x: &Tensor, ms: &Tensor) -> Tensor {
    let w = |name: &str| params.by_name(&format!("fusion.{name}")).unwrap().clone();
    let xt = add_row(&mm(x, &w("input.weight")), &w("input.bias"));
    let gate = |wn: &str, un: &str, bn: &str| {
        add_row(
            &zip(&mm(ms, &w(wn)), &mm(&xt, &w(un)), |a, b| a + b),
            &w(bn),
        )
        .map(sigmoid)
    };
    let r = gate("w_r", "u_r", "b_r");
    let z = gate("w_z", "u_z", "b_z");
    let cand = add_row(
        &zip(
            &mm(&xt, &w("w_h")),
            &zip(&r, &mm(ms, &w("u_h")), |a, b| a * b),
            |a, b| a + b,
        ),
        &w("b_h"),
    )
    .map(f64::tanh);
    let keep = zip(&z.map(|v| 1.0 - v), ms, |a, b| a * b);
    zip(&keep, &zip(&z, &cand, |a, b| a * b), |a, b| a + b)
}

pub fn refine_oracle(params: &ParamStore, r: &Tensor, hs: &Tensor) -> Tensor {
    let w = |n: &str| params.by_name(&format!("heads.{n}")).unwrap().clone();
    let e = mm(hs, &w("w_res"));
    let s = zip(
        &layer_norm_rows(r),
        &layer_norm_rows(&mm(&e, &transpose(&e))),
        |a, b| a + b,
    );
    let hidden = add_row(&mm(&s, &w("mlp_in.weight")), &w("mlp_in.bias")).map(|v| v.max(0.0));
    add_row(&mm(&hidden, &w("mlp_out.weight")), &w("mlp_out.bias"))
}

/// `M·X` along the node axis of `x: B×C×N×T`.
pub fn along_nodes(m: &Tensor, x: &Tensor) -> Tensor {
    let s = x.shape();
    let mut out = Tensor::zeros(s);
    for b in 0..s[0] {
        for c in 0..s[1] {
            for i in 0..s[2] {
                for t in 0..s[3] {
                    let v = (0..s[2])
                        .map(|j| m.get(&[i, j]) * x.get(&[b, c, j, t]))
                        .sum();
                    out.set(&[b, c, i, t], v);
                }
            }
        }
    }
    out
}

pub fn loop_metrics(p: &Tensor, y: &Tensor) -> [f64; 5] {
    let (n, t) = (y.shape()[0], y.shape()[1]);
    let count = (n * t) as f64;
    let (mut abs, mut sq, mut pct, mut nz, mut total) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for k in 0..t {
            let e = p.get(&[i, k]) - y.get(&[i, k]);
            abs += e.abs();
            sq += e * e;
            total += y.get(&[i, k]);
            if y.get(&[i, k]) != 0.0 {
                pct += e.abs() / y.get(&[i, k]).abs();
                nz += 1.0;
            }
        }
    }
    let mean = total / count;
    let mut spread = 0.0;
    for i in 0..n {
        for k in 0..t {
            spread += (y.get(&[i, k]) - mean).powi(2);
        }
    }
    let mut corr = 0.0;
    for i in 0..n {
        let (mut mp, mut my) = (0.0, 0.0);
        for k in 0..t {
            mp += p.get(&[i, k]) / t as f64;
            my += y.get(&[i, k]) / t as f64;
        }
        let (mut c, mut vp, mut vy) = (0.0, 0.0, 0.0);
        for k in 0..t {
            let (a, b) = (p.get(&[i, k]) - mp, y.get(&[i, k]) - my);
            c += a * b;
            vp += a * a;
            vy += b * b;
        }
        corr += c / (vp.sqrt() * vy.sqrt()) / n as f64;
    }
    [
        abs / count,
        (sq / count).sqrt(),
        pct / nz,
        sq.sqrt() / spread.sqrt(),
        corr,
    ]
}

/// `1 +` the largest lag whose perturbation moves the last output step.
pub fn empirical_receptive_field(layers: usize, seed: u64) -> (usize, bool) {
    let rf = receptive_field(7, 2.0, layers).unwrap();
    let mut params = ParamStore::new();
    let mut rng = RngState::new(seed);
    let stack = TcnStack::new(&mut params, "tcn", 4, 2.0, layers, &mut rng).unwrap();
    let t = rf + 10;
    let x = Tensor::randn(&[1, 4, 1, t], 1.0, &mut rng);
    let last = |x: &Tensor| {
        let tape = Tape::new();
        let p = params.bind_frozen(&tape);
        let y = stack.forward(&p, tape.constant(x.clone())).unwrap().value();
        let steps = y.shape()[3];
        (0..4)
            .map(|c| y.get(&[0, c, 0, steps - 1]))
            .collect::<Vec<_>>()
    };
    let base = last(&x);
    let mut widest = 0;
    let mut beyond_untouched = true;
    for lag in 0..t {
        let mut xp = x.clone();
        for c in 0..4 {
            let v = xp.get(&[0, c, 0, t - 1 - lag]);
            xp.set(&[0, c, 0, t - 1 - lag], v + 0.5);
        }
        let moved = last(&xp) != base;
        if moved {
            widest = lag + 1;
        }
        if lag >= rf && moved {
            beyond_untouched = false;
        }
    }
    (widest, beyond_untouched)
}

/// Row-normalizes `a` by loops.
pub fn row_normalize(a: &Tensor) -> Tensor {
    let n = a.shape()[0];
    let mut out = a.clone();
    for i in 0..n {
        let s: f64 = (0..n).map(|j| a.get(&[i, j])).sum();
        for j in 0..n {
            out.set(&[i, j], a.get(&[i, j]) / s);
        }
    }
    out
}

/// Mix-hop propagation from explicit powers of the row-normalized `a`,
/// followed by the channel selection written out as loops.
/// `x: B×C×N×T`, `a: N×N`.
pub fn mixhop_oracle(
    params: &ParamStore,
    prefix: &str,
    x: &Tensor,
    a: &Tensor,
    depth: usize,
) -> Tensor {
    let s = x.shape().to_vec();
    let p = row_normalize(a);
    let mut blocks = Vec::new();
    let mut power = p.clone();
    for _ in 0..depth {
        blocks.push(along_nodes(&power, x));
        power = mm(&power, &p);
    }
    blocks.push(x.clone());
    let w = params.by_name(&format!("{prefix}.select.weight")).unwrap();
    let bias = params.by_name(&format!("{prefix}.select.bias")).unwrap();
    let mut out = Tensor::zeros(&s);
    for b in 0..s[0] {
        for c in 0..s[1] {
            for i in 0..s[2] {
                for t in 0..s[3] {
                    let mut v = bias.data()[c];
                    for (k, blk) in blocks.iter().enumerate() {
                        for c2 in 0..s[1] {
                            v += w.get(&[c, k * s[1] + c2]) * blk.get(&[b, c2, i, t]);
                        }
                    }
                    out.set(&[b, c, i, t], v);
                }
            }
        }
    }
    out
}

/// Dynamic adjacency for one window `x: N×h`, composed from the loop
/// primitives above. Parameter names are read without the `dynamic.` prefix.
pub fn dynamic_graph_oracle(
    params: &ParamStore,
    x: &Tensor,
    ms: &Tensor,
    md: &Tensor,
    heads: usize,
    head_dim: usize,
) -> Tensor {
    let renamed = {
        let mut p = ParamStore::new();
        for (n, t) in params.iter() {
            p.add(n.replace("dynamic.", ""), t.clone());
        }
        p
    };
    let n = x.shape()[0];
    let h = fuse_oracle(&renamed, x, ms);
    let hn = layer_norm_rows(&h);
    let w = |name: &str| renamed.by_name(&format!("heads.{name}")).unwrap().clone();
    let (q, k) = (mm(&hn, &w("w_q")), mm(&hn, &w("w_k")));
    let mut r = Tensor::zeros(&[n, n]);
    for head in 0..heads {
        let cols = |t: &Tensor| {
            let mut o = Tensor::zeros(&[n, head_dim]);
            for i in 0..n {
                for c in 0..head_dim {
                    o.set(&[i, c], t.get(&[i, head * head_dim + c]));
                }
            }
            o
        };
        let scores = mm(&cols(&q), &transpose(&cols(&k)));
        let m = w("head_mix").data()[head] / (head_dim as f64).sqrt();
        r = zip(&r, &scores, |a, b| a + m * b);
    }
    let s_hat = refine_oracle(&renamed, &r, &h);
    let bias = layer_norm_rows(&mm(md, &transpose(md)));
    softmax_rows(&zip(&s_hat, &bias, |a, b| (a + b).max(0.0)))
}
