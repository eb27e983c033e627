use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Forecast error summary. `None` marks a metric that is undefined for the
/// given targets (all-zero targets for MAPE, constant targets for RSE, no
/// node with variance for CORR).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub mape: Option<f64>,
    pub rse: Option<f64>,
    pub corr: Option<f64>,
}

impl Metrics {
    /// Compares equal-shaped tensors. CORR treats each index along
    /// `node_axis` as one node and correlates all of its elements.
    pub fn compute(pred: &Tensor, truth: &Tensor, node_axis: usize) -> Result<Metrics> {
        if pred.shape() != truth.shape() {
            return Err(Error::shape(
                "metrics",
                format!("{:?} vs {:?}", pred.shape(), truth.shape()),
            ));
        }
        if pred.numel() == 0 || node_axis >= pred.rank() {
            return Err(Error::shape(
                "metrics",
                format!("{:?} with node axis {node_axis}", pred.shape()),
            ));
        }
        let (p, y) = (pred.data(), truth.data());
        let count = p.len() as f64;

        let mut abs = 0.0;
        let mut sq = 0.0;
        let mut pct = 0.0;
        let mut nonzero = 0usize;
        for (&a, &b) in p.iter().zip(y) {
            let e = a - b;
            abs += e.abs();
            sq += e * e;
            if b != 0.0 {
                pct += e.abs() / b.abs();
                nonzero += 1;
            }
        }
        let y_mean = y.iter().sum::<f64>() / count;
        let spread: f64 = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum();

        Ok(Metrics {
            mae: abs / count,
            rmse: (sq / count).sqrt(),
            mape: (nonzero > 0).then(|| pct / nonzero as f64),
            rse: (spread > 0.0).then(|| sq.sqrt() / spread.sqrt()),
            corr: mean_node_correlation(pred, truth, node_axis),
        })
    }
}

fn mean_node_correlation(pred: &Tensor, truth: &Tensor, node_axis: usize) -> Option<f64> {
    let s = pred.shape();
    let n = s[node_axis];
    let inner: usize = s[node_axis + 1..].iter().product();
    let mut groups: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n];
    for (i, (&a, &b)) in pred.data().iter().zip(truth.data()).enumerate() {
        let g = &mut groups[(i / inner) % n];
        g.0.push(a);
        g.1.push(b);
    }
    let corrs: Vec<f64> = groups.iter().filter_map(|(a, b)| pearson(a, b)).collect();
    (!corrs.is_empty()).then(|| corrs.iter().sum::<f64>() / corrs.len() as f64)
}

/// Pearson correlation; `None` if either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    (va > 0.0 && vb > 0.0).then(|| cov / (va.sqrt() * vb.sqrt()))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_owned(), |x| x.to_string())
}

/// `key: value` per line.
impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mae: {}", self.mae)?;
        writeln!(f, "rmse: {}", self.rmse)?;
        writeln!(f, "mape: {}", opt(self.mape))?;
        writeln!(f, "rse: {}", opt(self.rse))?;
        write!(f, "corr: {}", opt(self.corr))
    }
}
