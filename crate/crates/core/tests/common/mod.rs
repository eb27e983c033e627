#![allow(dead_code)]

pub mod oracle;

use sdgl::numerics::{
    grad_check_inputs, Bound, GradCheckOptions, GradCheckReport, ParamStore, RngState, Tape,
    Tensor, Var,
};

/// Weighted sum with fixed random weights, so every output coordinate
/// carries a distinct gradient.
pub fn project<'t>(y: Var<'t>, seed: u64) -> sdgl::Result<Var<'t>> {
    let mut rng = RngState::with_stream(seed, 99);
    let w = y.tape().constant(Tensor::randn(&y.shape(), 1.0, &mut rng));
    y.mul(w)?.sum()
}

/// Gradient check over `inputs` followed by every tensor of `params`.
pub fn check_with_params<F>(
    params: &ParamStore,
    inputs: &[Tensor],
    opts: &GradCheckOptions,
    f: F,
) -> GradCheckReport
where
    F: for<'t> Fn(&Bound<'t>, &[Var<'t>]) -> sdgl::Result<Var<'t>>,
{
    let k = inputs.len();
    let mut all = inputs.to_vec();
    all.extend(params.tensors().iter().cloned());
    grad_check_inputs(
        |_: &Tape, vars| {
            let bound = params.bind_vars(vars[k..].to_vec());
            f(&bound, &vars[..k])
        },
        &all,
        opts,
    )
    .unwrap()
}

/// Planted-graph series with 8 nodes and 512 steps, seed 1.
pub fn smoke_dataset() -> sdgl::data::SeriesDataset {
    let spec = sdgl::data::PlantedGraphSpec::default();
    sdgl::data::synth_generate(&spec, 512, 1).unwrap().dataset
}
