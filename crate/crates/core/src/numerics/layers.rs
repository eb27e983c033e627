//! Parameterized building blocks shared by the graph and temporal layers.

use crate::error::Result;

use super::{init_weight, Bound, ParamId, ParamStore, RngState, Tensor, Var, LAYER_NORM_EPS};

/// `y = x·W + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut RngState,
    ) -> Self {
        let weight = params.add(
            format!("{name}.weight"),
            init_weight(&[d_in, d_out], d_in, rng),
        );
        let bias =
            bias.then(|| params.add(format!("{name}.bias"), init_weight(&[d_out], d_in, rng)));
        Linear { weight, bias }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let y = x.matmul(p.get(self.weight))?;
        match self.bias {
            Some(b) => y.add(p.get(b)),
            None => Ok(y),
        }
    }
}

/// Layer normalization over the last axis with per-feature scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(params: &mut ParamStore, name: &str, features: usize) -> Self {
        LayerNorm {
            scale: params.add(format!("{name}.scale"), Tensor::ones(&[features])),
            shift: params.add(format!("{name}.shift"), Tensor::zeros(&[features])),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(LAYER_NORM_EPS)?
            .mul(p.get(self.scale))?
            .add(p.get(self.shift))
    }
}

/// 1×1 convolution over channels: `W: C_out×C_in`, bias broadcast over
/// nodes and time.
#[derive(Clone, Debug)]
pub struct ChannelLinear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ChannelLinear {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut RngState,
    ) -> Self {
        ChannelLinear {
            weight: params.add(
                format!("{name}.weight"),
                init_weight(&[c_out, c_in], c_in, rng),
            ),
            bias: params.add(
                format!("{name}.bias"),
                init_weight(&[c_out, 1, 1], c_in, rng),
            ),
        }
    }

    /// `x: B×C_in×N×T → B×C_out×N×T`.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.channel_map(p.get(self.weight))?.add(p.get(self.bias))
    }
}
