use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Inputs `B×N×h`, targets `B×N×L`, and each window's first row in the
/// full series.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub starts: Vec<usize>,
}

/// Stride-1 sliding windows over a contiguous block of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    /// `T×N` rows of this split.
    values: Tensor,
    window: usize,
    horizon: usize,
    /// Row of `values[0]` in the full series.
    offset: usize,
}

impl WindowSet {
    pub fn new(values: Tensor, window: usize, horizon: usize, offset: usize) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::shape(
                "windows",
                format!("{:?} must be T×N", values.shape()),
            ));
        }
        if window == 0 {
            return Err(Error::config("window", "must be ≥ 1"));
        }
        if horizon == 0 {
            return Err(Error::config("horizon", "must be ≥ 1"));
        }
        Ok(WindowSet {
            values,
            window,
            horizon,
            offset,
        })
    }

    /// `T − h − L + 1`, or zero when the block is too short.
    pub fn len(&self) -> usize {
        (self.values.shape()[0] + 1).saturating_sub(self.window + self.horizon)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nodes(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// Window `i` covers rows `i..i+h` as input and `i+h..i+h+L` as target.
    pub fn batch(&self, indices: &[usize]) -> Result<WindowBatch> {
        let (n, h, l) = (self.nodes(), self.window, self.horizon);
        let count = self.len();
        let v = self.values.data();
        let mut inputs = Vec::with_capacity(indices.len() * n * h);
        let mut targets = Vec::with_capacity(indices.len() * n * l);
        for &i in indices {
            if i >= count {
                return Err(Error::Contract(format!(
                    "window {i} out of range, {count} windows"
                )));
            }
            for node in 0..n {
                inputs.extend((i..i + h).map(|t| v[t * n + node]));
                targets.extend((i + h..i + h + l).map(|t| v[t * n + node]));
            }
        }
        let b = indices.len();
        Ok(WindowBatch {
            inputs: Tensor::new(&[b, n, h], inputs)?,
            targets: Tensor::new(&[b, n, l], targets)?,
            starts: indices.iter().map(|&i| i + self.offset).collect(),
        })
    }

    /// All windows in order, in batches of at most `size`.
    pub fn batches(&self, size: usize) -> impl Iterator<Item = Result<WindowBatch>> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        let size = size.max(1);
        (0..idx.len().div_ceil(size)).map(move |k| {
            let end = ((k + 1) * size).min(idx.len());
            self.batch(&idx[k * size..end])
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

/// Row counts of a chronological split: `⌊T·r_train⌋`, `⌊T·r_val⌋`, and the
/// remainder for test.
pub fn split_lengths(total: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "split",
            format!("ratios {ratios:?} must be non-negative and sum to 1"),
        ));
    }
    let train = (total as f64 * ratios[0]).floor() as usize;
    let val = ((total as f64 * ratios[1]).floor() as usize).min(total - train);
    Ok([train, val, total - train - val])
}

/// Splits `values: T×N` chronologically, then windows each part. A part with
/// a positive ratio must fit at least one window; zero-ratio parts are empty.
pub fn window_split(
    values: &Tensor,
    window: usize,
    horizon: usize,
    ratios: [f64; 3],
) -> Result<Splits> {
    if values.rank() != 2 {
        return Err(Error::shape(
            "window_split",
            format!("{:?} must be T×N", values.shape()),
        ));
    }
    let (total, n) = (values.shape()[0], values.shape()[1]);
    let lens = split_lengths(total, ratios)?;
    let mut sets = Vec::with_capacity(3);
    let mut start = 0;
    for k in 0..3 {
        let len = lens[k];
        if ratios[k] > 0.0 && len < window + horizon {
            return Err(Error::InsufficientLength {
                split: SPLIT_NAMES[k],
                len,
                needed: window + horizon,
            });
        }
        let rows = Tensor::new(
            &[len, n],
            values.data()[start * n..(start + len) * n].to_vec(),
        )?;
        sets.push(WindowSet::new(rows, window, horizon, start)?);
        start += len;
    }
    let test = sets.pop().expect("three splits");
    let val = sets.pop().expect("three splits");
    let train = sets.pop().expect("three splits");
    Ok(Splits { train, val, test })
}
