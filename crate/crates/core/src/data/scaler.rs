use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const STD_FLOOR: f64 = 1e-8;

/// Per-node z-score normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Fits on the first `rows` rows of `values: T×N` (population std,
    /// floored at [`STD_FLOOR`]).
    pub fn fit(values: &Tensor, rows: usize) -> Result<Self> {
        if values.rank() != 2 || rows == 0 || rows > values.shape()[0] {
            return Err(Error::shape(
                "scaler",
                format!("cannot fit {rows} rows of {:?}", values.shape()),
            ));
        }
        let n = values.shape()[1];
        let fitted = &values.data()[..rows * n];
        let mut mean = vec![0.0; n];
        for row in fitted.chunks(n) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; n];
        for row in fitted.chunks(n) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| (s / rows as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Scaler { mean, std })
    }

    pub fn nodes(&self) -> usize {
        self.mean.len()
    }

    /// `(x − μ_n)/σ_n` where `n` is each element's index along `node_axis`.
    pub fn transform(&self, x: &Tensor, node_axis: usize) -> Result<Tensor> {
        self.apply(x, node_axis, |v, m, s| (v - m) / s)
    }

    pub fn inverse(&self, x: &Tensor, node_axis: usize) -> Result<Tensor> {
        self.apply(x, node_axis, |v, m, s| v * s + m)
    }

    fn apply(
        &self,
        x: &Tensor,
        node_axis: usize,
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Result<Tensor> {
        let s = x.shape();
        if node_axis >= s.len() || s[node_axis] != self.nodes() {
            return Err(Error::shape(
                "scaler",
                format!("{s:?} axis {node_axis} vs {} nodes", self.nodes()),
            ));
        }
        let inner: usize = s[node_axis + 1..].iter().product();
        let n = self.nodes();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let node = (i / inner) % n;
            *v = f(*v, self.mean[node], self.std[node]);
        }
        Ok(out)
    }
}
