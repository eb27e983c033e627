//! Gated dilated-inception convolutions along the time axis.
//!
//! Features are laid out `B×C×N×T`. Every convolution is causal in the sense
//! that output step `t` sees input steps `t, t−d, …`; outputs keep only the
//! steps for which the widest kernel has full support.

use crate::error::{Error, Result};
use crate::numerics::{init_weight, Bound, ParamId, ParamStore, RngState, Var};

pub const KERNEL_SIZES: [usize; 4] = [2, 3, 6, 7];
pub const MAX_KERNEL: usize = 7;

/// Dilation of each of `layers` stacked layers: `⌊q^(j−1)⌋`, at least 1.
pub fn dilations(q: f64, layers: usize) -> Result<Vec<usize>> {
    if !(q > 1.0) || !q.is_finite() {
        return Err(Error::config("dilation_growth", format!("{q} must be > 1")));
    }
    if layers == 0 {
        return Err(Error::config("layers", "must be ≥ 1"));
    }
    Ok((0..layers)
        .map(|j| (q.powi(j as i32).floor() as usize).max(1))
        .collect())
}

/// Receptive field of `k` stacked layers with widest kernel `c` and dilation
/// growth `q`, using the realized integer dilations. Equals
/// `1 + (c−1)(q^k − 1)/(q − 1)` whenever `q` is an integer.
pub fn receptive_field(c: usize, q: f64, k: usize) -> Result<usize> {
    if c < 2 {
        return Err(Error::config("kernel", format!("{c} must be ≥ 2")));
    }
    Ok(1 + (c - 1) * dilations(q, k)?.iter().sum::<usize>())
}

/// The closed form `1 + (c−1)(q^k − 1)/(q − 1)` as a real number.
pub fn receptive_field_closed_form(c: usize, q: f64, k: usize) -> f64 {
    1.0 + (c as f64 - 1.0) * (q.powi(k as i32) - 1.0) / (q - 1.0)
}

/// Four parallel dilated convolutions (kernels 2, 3, 6, 7), each producing a
/// quarter of the output channels, aligned to the 7-wide branch and
/// concatenated along channels.
#[derive(Clone, Debug)]
pub struct InceptionLayer {
    /// Per kernel: weight `C_out/4 × C_in × k` and bias `C_out/4 × 1 × 1`.
    pub banks: Vec<(ParamId, ParamId)>,
    pub dilation: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl InceptionLayer {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        dilation: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        if c_out == 0 || c_out % KERNEL_SIZES.len() != 0 {
            return Err(Error::config(
                "channels",
                format!("{c_out} must be a positive multiple of 4"),
            ));
        }
        if dilation == 0 {
            return Err(Error::config("dilation", "must be ≥ 1"));
        }
        let part = c_out / KERNEL_SIZES.len();
        let banks = KERNEL_SIZES
            .iter()
            .map(|&k| {
                let w = params.add(
                    format!("{name}.k{k}.weight"),
                    init_weight(&[part, c_in, k], c_in * k, rng),
                );
                let b = params.add(
                    format!("{name}.k{k}.bias"),
                    init_weight(&[part, 1, 1], c_in * k, rng),
                );
                (w, b)
            })
            .collect();
        Ok(InceptionLayer {
            banks,
            dilation,
            c_in,
            c_out,
        })
    }

    pub fn output_len(&self, t: usize) -> Option<usize> {
        t.checked_sub(self.dilation * (MAX_KERNEL - 1))
            .filter(|&n| n > 0)
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.c_in {
            return Err(Error::shape(
                "dilated_inception",
                format!("input {s:?}, expected B×{}×N×T", self.c_in),
            ));
        }
        let t_out = self.output_len(s[3]).ok_or_else(|| {
            Error::shape(
                "dilated_inception",
                format!(
                    "time length {} too short; dilation {} needs at least {}",
                    s[3],
                    self.dilation,
                    self.dilation * (MAX_KERNEL - 1) + 1
                ),
            )
        })?;
        let mut parts = Vec::with_capacity(self.banks.len());
        for &(w, b) in &self.banks {
            let y = x.conv_time(p.get(w), self.dilation)?.add(p.get(b))?;
            parts.push(y.keep_last(3, t_out)?);
        }
        x.tape().concat(&parts, 1)
    }
}

/// `tanh(inception_a(H)) ∘ σ(inception_b(H))`.
#[derive(Clone, Debug)]
pub struct GatedTcnLayer {
    pub filter: InceptionLayer,
    pub gate: InceptionLayer,
}

impl GatedTcnLayer {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        dilation: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        Ok(GatedTcnLayer {
            filter: InceptionLayer::new(
                params,
                &format!("{name}.filter"),
                c_in,
                c_out,
                dilation,
                rng,
            )?,
            gate: InceptionLayer::new(params, &format!("{name}.gate"), c_in, c_out, dilation, rng)?,
        })
    }

    pub fn dilation(&self) -> usize {
        self.filter.dilation
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let f = self.filter.forward(p, x)?.tanh()?;
        let g = self.gate.forward(p, x)?.sigmoid()?;
        f.mul(g)
    }
}

/// `K` gated layers with dilations `⌊q^(j−1)⌋`, applied back to back.
#[derive(Clone, Debug)]
pub struct TcnStack {
    pub layers: Vec<GatedTcnLayer>,
}

impl TcnStack {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        channels: usize,
        q: f64,
        layers: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        let layers = dilations(q, layers)?
            .into_iter()
            .enumerate()
            .map(|(j, d)| {
                GatedTcnLayer::new(params, &format!("{name}.{j}"), channels, channels, d, rng)
            })
            .collect::<Result<_>>()?;
        Ok(TcnStack { layers })
    }

    pub fn receptive_field(&self) -> usize {
        1 + (MAX_KERNEL - 1)
            * self
                .layers
                .iter()
                .map(GatedTcnLayer::dilation)
                .sum::<usize>()
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, mut x: Var<'t>) -> Result<Var<'t>> {
        for layer in &self.layers {
            x = layer.forward(p, x)?;
        }
        Ok(x)
    }
}
