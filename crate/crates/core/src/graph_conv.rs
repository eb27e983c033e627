//! Mix-hop propagation over a learned adjacency and the fusion of the static
//! and dynamic branches.

use crate::error::{Error, Result};
use crate::numerics::layers::ChannelLinear;
use crate::numerics::{Bound, ParamStore, RngState, Var};

/// `P = A / rowsum(A)` for `A: N×N` or a batch `B×N×N`.
pub fn transition_matrix<'t>(a: Var<'t>) -> Result<Var<'t>> {
    let s = a.shape();
    let r = s.len();
    if !(r == 2 || r == 3) || s[r - 1] != s[r - 2] {
        return Err(Error::shape(
            "transition_matrix",
            format!("{s:?} is not square"),
        ));
    }
    let sums = a.sum_axis(r - 1)?;
    if let Some(row) = sums.value().data().iter().position(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateGraph { row });
    }
    a.div(sums)
}

/// `W_s · [P¹X, …, PˢX, X]` with the concatenation along channels.
#[derive(Clone, Debug)]
pub struct MixHopLayer {
    pub depth: usize,
    pub channels: usize,
    pub select: ChannelLinear,
}

impl MixHopLayer {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        channels: usize,
        depth: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::config("depth", "must be ≥ 1"));
        }
        let select = ChannelLinear::new(
            params,
            &format!("{name}.select"),
            channels * (depth + 1),
            channels,
            rng,
        );
        Ok(MixHopLayer {
            depth,
            channels,
            select,
        })
    }

    /// `x: B×C×N×T`, `p`: row-stochastic `N×N` or per-sample `B×N×N`.
    pub fn forward<'t>(&self, params: &Bound<'t>, x: Var<'t>, p: Var<'t>) -> Result<Var<'t>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::shape(
                "mix_hop_propagate",
                format!("input {s:?}, expected B×{}×N×T", self.channels),
            ));
        }
        let mut hops = Vec::with_capacity(self.depth + 1);
        let mut h = x;
        for _ in 0..self.depth {
            h = h.propagate(p)?;
            hops.push(h);
        }
        hops.push(x);
        let stacked = x.tape().concat(&hops, 1)?;
        self.select.forward(params, stacked)
    }
}

/// `Z_static + Z_dynamic`, or `Z_static` alone when the dynamic branch is off.
pub fn fuse_branches<'t>(z_static: Var<'t>, z_dynamic: Option<Var<'t>>) -> Result<Var<'t>> {
    match z_dynamic {
        None => Ok(z_static),
        Some(zd) => {
            if zd.shape() != z_static.shape() {
                return Err(Error::shape(
                    "fuse_branches",
                    format!("{:?} vs {:?}", z_static.shape(), zd.shape()),
                ));
            }
            z_static.add(zd)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Tape, Tensor};

    #[test]
    fn row_normalization_example() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[&[1.0, 1.0], &[0.0, 2.0]]));
        let p = transition_matrix(a).unwrap().value();
        assert_eq!(p.data(), &[0.5, 0.5, 0.0, 1.0]);
    }

    #[test]
    fn zero_row_is_degenerate() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[&[1.0, 1.0], &[0.0, 0.0]]));
        assert!(matches!(
            transition_matrix(a),
            Err(Error::DegenerateGraph { row: 1 })
        ));
    }

    #[test]
    fn fuse_requires_equal_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[1, 2, 3, 4]));
        let b = tape.constant(Tensor::zeros(&[1, 2, 3, 5]));
        assert!(fuse_branches(a, Some(b)).is_err());
        assert_eq!(fuse_branches(a, None).unwrap().shape(), vec![1, 2, 3, 4]);
    }
}
