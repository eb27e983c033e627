//! Per-window dynamic adjacency: fuse the input window with the static
//! embeddings, score node pairs with multi-head attention, refine the scores,
//! and bias them toward the momentum embeddings.
//!
//! Batched layouts: windows `B×N×h`, fused states `B×N×d`, adjacency `B×N×N`.

use crate::error::{Error, Result};
use crate::numerics::layers::Linear;
use crate::numerics::{
    init_weight, Bound, ParamId, ParamStore, RngState, Tensor, Var, LAYER_NORM_EPS,
};

/// How the window and the static embeddings are combined before attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FusionMode {
    /// Gated recurrent-style fusion.
    #[default]
    Gated,
    /// The projected window alone.
    Bypass,
    /// Projected window plus static embeddings, no gate.
    Sum,
}

#[derive(Clone, Debug)]
pub struct FusionGate {
    pub input: Linear,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
}

impl FusionGate {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        window: usize,
        dim: usize,
        rng: &mut RngState,
    ) -> Self {
        let input = Linear::new(params, &format!("{name}.input"), window, dim, true, rng);
        let mut mat = |suffix: &str, rng: &mut RngState| {
            params.add(
                format!("{name}.{suffix}"),
                init_weight(&[dim, dim], dim, rng),
            )
        };
        let (w_r, u_r) = (mat("w_r", rng), mat("u_r", rng));
        let (w_z, u_z) = (mat("w_z", rng), mat("u_z", rng));
        let (w_h, u_h) = (mat("w_h", rng), mat("u_h", rng));
        let mut bias = |suffix: &str| params.add(format!("{name}.{suffix}"), Tensor::zeros(&[dim]));
        FusionGate {
            input,
            w_r,
            u_r,
            b_r: bias("b_r"),
            w_z,
            u_z,
            b_z: bias("b_z"),
            w_h,
            u_h,
            b_h: bias("b_h"),
        }
    }

    /// Projects each node's window `x: B×N×h` to `X_T: B×N×d`.
    pub fn project<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        self.input.forward(p, x)
    }

    /// `x: B×N×h`, `ms: N×d` → `h_T: B×N×d`.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        x: Var<'t>,
        ms: Var<'t>,
        mode: FusionMode,
    ) -> Result<Var<'t>> {
        let (xs, m) = (x.shape(), ms.shape());
        if xs.len() != 3 || m.len() != 2 || xs[1] != m[0] {
            return Err(Error::shape(
                "fuse_information",
                format!("window {xs:?} vs embeddings {m:?}"),
            ));
        }
        let xt = self.project(p, x)?;
        match mode {
            FusionMode::Bypass => return Ok(xt),
            FusionMode::Sum => return xt.add(ms),
            FusionMode::Gated => {}
        }
        let gate = |w: ParamId, u: ParamId, b: ParamId| -> Result<Var<'t>> {
            ms.matmul(p.get(w))?
                .add(xt.matmul(p.get(u))?)?
                .add(p.get(b))?
                .sigmoid()
        };
        let r = gate(self.w_r, self.u_r, self.b_r)?;
        let z = gate(self.w_z, self.u_z, self.b_z)?;
        let candidate = xt
            .matmul(p.get(self.w_h))?
            .add(r.mul(ms.matmul(p.get(self.u_h))?)?)?
            .add(p.get(self.b_h))?
            .tanh()?;
        z.one_minus()?.mul(ms)?.add(z.mul(candidate)?)
    }
}

/// Multi-head pair scoring plus the residual/MLP refinement.
#[derive(Clone, Debug)]
pub struct AdjacencyHeads {
    pub heads: usize,
    pub head_dim: usize,
    /// `d × (heads·head_dim)`, head `i` owns columns `i·head_dim..`.
    pub w_q: ParamId,
    pub w_k: ParamId,
    /// One scalar weight per head.
    pub head_mix: ParamId,
    /// `d × head_dim` residual projection.
    pub w_res: ParamId,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
    pub keep_prob: f64,
}

impl AdjacencyHeads {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        nodes: usize,
        dim: usize,
        heads: usize,
        head_dim: usize,
        mlp_hidden: usize,
        keep_prob: f64,
        rng: &mut RngState,
    ) -> Result<Self> {
        if heads == 0 {
            return Err(Error::config("heads", "must be ≥ 1"));
        }
        if head_dim == 0 {
            return Err(Error::config("head_dim", "must be ≥ 1"));
        }
        if mlp_hidden == 0 {
            return Err(Error::config("mlp_hidden", "must be ≥ 1"));
        }
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::config(
                "keep_prob",
                format!("{keep_prob} not in (0, 1]"),
            ));
        }
        let w_q = params.add(
            format!("{name}.w_q"),
            init_weight(&[dim, heads * head_dim], dim, rng),
        );
        let w_k = params.add(
            format!("{name}.w_k"),
            init_weight(&[dim, heads * head_dim], dim, rng),
        );
        let head_mix = params.add(
            format!("{name}.head_mix"),
            Tensor::full(&[heads], 1.0 / heads as f64),
        );
        let w_res = params.add(
            format!("{name}.w_res"),
            init_weight(&[dim, head_dim], dim, rng),
        );
        let mlp_in = Linear::new(
            params,
            &format!("{name}.mlp_in"),
            nodes,
            mlp_hidden,
            true,
            rng,
        );
        let mlp_out = Linear::new(
            params,
            &format!("{name}.mlp_out"),
            mlp_hidden,
            nodes,
            true,
            rng,
        );
        Ok(AdjacencyHeads {
            heads,
            head_dim,
            w_q,
            w_k,
            head_mix,
            w_res,
            mlp_in,
            mlp_out,
            keep_prob,
        })
    }

    /// `R_T = Σ_i w_i · dropout(Q_i K_iᵀ / √d_k)` on layer-normalized `h_T`.
    pub fn multi_head_adjacency<'t>(
        &self,
        p: &Bound<'t>,
        h: Var<'t>,
        rng: Option<&mut RngState>,
    ) -> Result<Var<'t>> {
        if !h.value().is_finite() {
            return Err(Error::NonFinite {
                context: "fused node states".into(),
            });
        }
        self.head_sum(p, h.layer_norm(LAYER_NORM_EPS)?, rng)
    }

    /// The head sum on already-normalized states.
    pub fn head_sum<'t>(
        &self,
        p: &Bound<'t>,
        h_norm: Var<'t>,
        mut rng: Option<&mut RngState>,
    ) -> Result<Var<'t>> {
        let last = h_norm.shape().len() - 1;
        let q = h_norm.matmul(p.get(self.w_q))?;
        let k = h_norm.matmul(p.get(self.w_k))?;
        let mix = p.get(self.head_mix);
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut total: Option<Var<'t>> = None;
        for i in 0..self.heads {
            let start = i * self.head_dim;
            let qi = q.narrow(last, start, self.head_dim)?;
            let ki = k.narrow(last, start, self.head_dim)?;
            let scores = qi
                .matmul(ki.transpose()?)?
                .scale(scale)?
                .dropout(self.keep_prob, rng.as_deref_mut())?;
            let head = scores.mul(mix.narrow(0, i, 1)?)?;
            total = Some(match total {
                Some(t) => t.add(head)?,
                None => head,
            });
        }
        Ok(total.expect("at least one head"))
    }

    /// `Ŝ_T = MLP(LN(R_T) + LN(E_r E_rᵀ))` with `E_r = h_T W_res`, row-wise.
    pub fn refine_adjacency<'t>(&self, p: &Bound<'t>, r: Var<'t>, h: Var<'t>) -> Result<Var<'t>> {
        let e = h.matmul(p.get(self.w_res))?;
        let s = r
            .layer_norm(LAYER_NORM_EPS)?
            .add(e.matmul(e.transpose()?)?.layer_norm(LAYER_NORM_EPS)?)?;
        let hidden = self.mlp_in.forward(p, s)?.relu()?;
        self.mlp_out.forward(p, hidden)
    }
}

/// `softmax(relu(LN(M_d M_dᵀ) + Ŝ_T))` row-wise. `md` should be a constant
/// leaf; it never receives gradient.
pub fn apply_inductive_bias<'t>(s_hat: Var<'t>, md: Var<'t>) -> Result<Var<'t>> {
    let bias = md.matmul(md.transpose()?)?.layer_norm(LAYER_NORM_EPS)?;
    s_hat.add(bias)?.relu()?.softmax()
}

/// Fusion gate and adjacency heads composed into one per-window graph.
#[derive(Clone, Debug)]
pub struct DynamicGraphLearner {
    pub gate: FusionGate,
    pub heads: AdjacencyHeads,
    pub mode: FusionMode,
}

impl DynamicGraphLearner {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamStore,
        nodes: usize,
        window: usize,
        dim: usize,
        heads: usize,
        head_dim: usize,
        mlp_hidden: usize,
        keep_prob: f64,
        mode: FusionMode,
        rng: &mut RngState,
    ) -> Result<Self> {
        let gate = FusionGate::new(params, "dynamic.fusion", window, dim, rng);
        let heads = AdjacencyHeads::new(
            params,
            "dynamic.heads",
            nodes,
            dim,
            heads,
            head_dim,
            mlp_hidden,
            keep_prob,
            rng,
        )?;
        Ok(DynamicGraphLearner { gate, heads, mode })
    }

    /// `x: B×N×h` → one row-stochastic `N×N` matrix per window, `B×N×N`.
    /// Dropout is active only when `rng` is given.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        x: Var<'t>,
        ms: Var<'t>,
        md: &Tensor,
        rng: Option<&mut RngState>,
    ) -> Result<Var<'t>> {
        if md.shape() != ms.shape().as_slice() {
            return Err(Error::shape(
                "dynamic_graph",
                format!("momentum embeddings {:?} vs {:?}", md.shape(), ms.shape()),
            ));
        }
        let h = self.gate.forward(p, x, ms, self.mode)?;
        let r = self.heads.multi_head_adjacency(p, h, rng)?;
        let s_hat = self.heads.refine_adjacency(p, r, h)?;
        apply_inductive_bias(s_hat, x.tape().constant(md.clone()))
    }
}
