use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::graph_conv::{fuse_branches, transition_matrix, MixHopLayer};
use crate::graph_dynamic::DynamicGraphLearner;
use crate::graph_static::{build_static_graph, graph_regularization_loss, NodeEmbeddings};
use crate::numerics::layers::ChannelLinear;
use crate::numerics::{Bound, ParamStore, RngState, Tape, Tensor, Var};
use crate::temporal_conv::{dilations, GatedTcnLayer};

use super::{AdamState, ModelConfig};

/// One round of temporal then graph convolution.
#[derive(Clone, Debug)]
pub struct Block {
    pub tcn: GatedTcnLayer,
    pub gcn_static: MixHopLayer,
    pub gcn_dynamic: MixHopLayer,
}

/// Results of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput<'t> {
    /// `B×N×L`, in normalized units.
    pub prediction: Var<'t>,
    /// `N×N`.
    pub static_adj: Var<'t>,
    /// `B×N×N`, absent when the dynamic branch is ablated.
    pub dynamic_adj: Option<Var<'t>>,
    /// Graph regularizer on this batch.
    pub graph_loss: Var<'t>,
}

/// The full forecaster: parameters, momentum embeddings, and the training
/// state that a checkpoint must carry.
#[derive(Clone, Debug)]
pub struct Sdgl {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub embeddings: NodeEmbeddings,
    pub start: ChannelLinear,
    pub blocks: Vec<Block>,
    pub dynamic: DynamicGraphLearner,
    pub end_hidden: ChannelLinear,
    pub end_out: ChannelLinear,
    pub scaler: Option<Scaler>,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Drives batch shuffling and dropout.
    pub rng: RngState,
    /// Moment estimates when training with Adam.
    pub adam: Option<AdamState>,
}

/// Stream of the seed used for parameter initialization.
const INIT_STREAM: u64 = 0;
/// Stream of the seed used for shuffling and dropout.
const TRAIN_STREAM: u64 = 1;

impl Sdgl {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = RngState::with_stream(c.seed, INIT_STREAM);
        let mut params = ParamStore::new();
        let embeddings =
            NodeEmbeddings::new(&mut params, c.nodes, c.embed_dim, c.momentum, &mut rng)?;
        let dynamic = DynamicGraphLearner::new(
            &mut params,
            c.nodes,
            c.window,
            c.embed_dim,
            c.heads,
            c.head_dim(),
            c.mlp_hidden(),
            c.keep_prob,
            c.ablation.fusion_mode(),
            &mut rng,
        )?;
        let start = ChannelLinear::new(&mut params, "start", 1, c.channels, &mut rng);
        let blocks = dilations(c.dilation_growth, c.layers)?
            .into_iter()
            .enumerate()
            .map(|(j, d)| {
                Ok(Block {
                    tcn: GatedTcnLayer::new(
                        &mut params,
                        &format!("block{j}.tcn"),
                        c.channels,
                        c.channels,
                        d,
                        &mut rng,
                    )?,
                    gcn_static: MixHopLayer::new(
                        &mut params,
                        &format!("block{j}.gcn_static"),
                        c.channels,
                        c.depth,
                        &mut rng,
                    )?,
                    gcn_dynamic: MixHopLayer::new(
                        &mut params,
                        &format!("block{j}.gcn_dynamic"),
                        c.channels,
                        c.depth,
                        &mut rng,
                    )?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let end_hidden = ChannelLinear::new(
            &mut params,
            "end_hidden",
            c.channels,
            c.out_channels,
            &mut rng,
        );
        let end_out =
            ChannelLinear::new(&mut params, "end_out", c.out_channels, c.horizon, &mut rng);
        Ok(Sdgl {
            rng: RngState::with_stream(c.seed, TRAIN_STREAM),
            config,
            params,
            embeddings,
            start,
            blocks,
            dynamic,
            end_hidden,
            end_out,
            scaler: None,
            step: 0,
            adam: None,
        })
    }

    /// Time steps left after the temporal stack: `h − receptive_field + 1`.
    pub fn output_steps(&self) -> usize {
        let rf = self.config.receptive_field().expect("validated config");
        self.config.window + 1 - rf
    }

    /// Names of the parameters owned by the dynamic graph branch.
    pub fn dynamic_param_names(&self) -> Vec<String> {
        self.params
            .iter()
            .map(|(n, _)| n)
            .filter(|n| n.starts_with("dynamic.") || n.contains(".gcn_dynamic."))
            .map(str::to_owned)
            .collect()
    }

    /// `x: B×N×h` normalized windows. Dropout is active only when `rng` is
    /// given.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        x: Var<'t>,
        mut rng: Option<&mut RngState>,
    ) -> Result<ForwardOutput<'t>> {
        let c = &self.config;
        let s = x.shape();
        if s.len() != 3 || s[1] != c.nodes || s[2] != c.window {
            return Err(Error::shape(
                "forward",
                format!("input {s:?}, expected B×{}×{}", c.nodes, c.window),
            ));
        }
        let batch = s[0];
        let ms = p.get(self.embeddings.static_id());

        let tape = x.tape();
        tape.enter_layer("static graph");
        let static_adj = build_static_graph(ms)?.ensure_finite("static graph")?;
        let graph_loss = graph_regularization_loss(x, static_adj, c.gamma)?;
        let dynamic_adj = if c.ablation.no_dyadj {
            None
        } else {
            tape.enter_layer("dynamic graph");
            Some(
                self.dynamic
                    .forward(p, x, ms, self.embeddings.dynamic(), rng.as_deref_mut())?
                    .ensure_finite("dynamic graph")?,
            )
        };
        let p_static = transition_matrix(static_adj)?;
        let p_dynamic = dynamic_adj.map(transition_matrix).transpose()?;

        let t_final = self.output_steps();
        tape.enter_layer("input projection");
        let mut h = self
            .start
            .forward(p, x.reshape(&[batch, 1, c.nodes, c.window])?)?;
        let mut skip: Option<Var<'t>> = None;
        for (j, block) in self.blocks.iter().enumerate() {
            tape.enter_layer(&format!("temporal convolution {j}"));
            let t = block
                .tcn
                .forward(p, h)?
                .ensure_finite(&format!("temporal convolution {j}"))?;
            let tap = t.keep_last(3, t_final)?;
            skip = Some(match skip {
                Some(acc) => acc.add(tap)?,
                None => tap,
            });
            tape.enter_layer(&format!("graph convolution {j}"));
            let zs = block.gcn_static.forward(p, t, p_static)?;
            let zd = p_dynamic
                .map(|pd| block.gcn_dynamic.forward(p, t, pd))
                .transpose()?;
            let z = fuse_branches(zs, zd)?.ensure_finite(&format!("graph convolution {j}"))?;
            let steps = z.shape()[3];
            h = z.add(h.keep_last(3, steps)?)?;
        }
        tape.enter_layer("output module");
        let features = skip
            .expect("at least one block")
            .add(h.keep_last(3, t_final)?)?
            .keep_last(3, 1)?;
        let out = self
            .end_out
            .forward(p, self.end_hidden.forward(p, features)?.relu()?)?
            .ensure_finite("output module")?;
        let prediction = out.reshape(&[batch, c.horizon, c.nodes])?.transpose()?;
        Ok(ForwardOutput {
            prediction,
            static_adj,
            dynamic_adj,
            graph_loss,
        })
    }

    /// Evaluation-mode forecast of normalized windows `x: B×N×h` → `B×N×L`.
    pub fn forecast_normalized(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        Ok(self
            .forward(&p, tape.constant(x.clone()), None)?
            .prediction
            .value())
    }

    /// Static `N×N` and per-window dynamic `B×N×N` graphs for normalized
    /// windows, in evaluation mode.
    pub fn graphs(&self, x: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        let out = self.forward(&p, tape.constant(x.clone()), None)?;
        Ok((out.static_adj.value(), out.dynamic_adj.map(|a| a.value())))
    }

    /// Learned static graph alone.
    pub fn static_graph(&self) -> Result<Tensor> {
        let tape = Tape::new();
        let ms = tape.constant(self.params.get(self.embeddings.static_id()).clone());
        Ok(build_static_graph(ms)?.value())
    }

    /// Forecast for one raw window `x: N×h` in original units → `N×L`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        if x.shape() != [c.nodes, c.window] {
            return Err(Error::shape(
                "predict",
                format!(
                    "window {:?}, model expects {}×{}",
                    x.shape(),
                    c.nodes,
                    c.window
                ),
            ));
        }
        let scaler = self
            .scaler
            .as_ref()
            .ok_or_else(|| Error::State("model has no fitted scaler".into()))?;
        let z = scaler.transform(x, 0)?.reshape(&[1, c.nodes, c.window])?;
        let y = self
            .forecast_normalized(&z)?
            .reshape(&[c.nodes, c.horizon])?;
        scaler.inverse(&y, 0)
    }
}

/// `mean|Ŷ − Y| + λ·L_GL`. The regularizer is left out entirely when `λ = 0`.
pub fn hybrid_loss<'t>(
    prediction: Var<'t>,
    target: Var<'t>,
    graph_loss: Var<'t>,
    lambda: f64,
) -> Result<Var<'t>> {
    if prediction.shape() != target.shape() {
        return Err(Error::shape(
            "hybrid_loss",
            format!("{:?} vs {:?}", prediction.shape(), target.shape()),
        ));
    }
    let mae = prediction.sub(target)?.abs()?.mean()?;
    if lambda == 0.0 {
        Ok(mae)
    } else {
        mae.add(graph_loss.scale(lambda)?)
    }
}
