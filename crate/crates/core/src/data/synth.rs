use std::f64::consts::TAU;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SeriesDataset;
use crate::error::{Error, Result};
use crate::numerics::{RngState, Tensor};

/// Half-open range of time steps `[start, end)` during which the secondary
/// edge set drives the dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchInterval {
    pub start: usize,
    pub end: usize,
}

impl SwitchInterval {
    pub fn contains(&self, t: usize) -> bool {
        (self.start..self.end).contains(&t)
    }
}

/// Linear vector autoregression on a random directed graph:
///
/// `x⁽ᵗ⁺¹⁾ = α·P(t)·x⁽ᵗ⁾ + a·sin(2π(t+1)/period) + ε`, `ε ~ N(0, σ²)`
///
/// with `P(t)` the row-normalized `A(t)` (rows without parents stay zero).
/// `A[i][j] = 1` means node `j` drives node `i`. `A(t)` is the primary edge set except inside a switch
/// interval, where a fraction of the primary edges is replaced by the same
/// number of fresh edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedGraphSpec {
    pub nodes: usize,
    pub edge_prob: f64,
    pub alpha: f64,
    pub period: f64,
    pub seasonal_amplitude: f64,
    pub noise_std: f64,
    /// Fraction of primary edges swapped out during a switch.
    pub switch_fraction: f64,
    pub switches: Vec<SwitchInterval>,
}

impl Default for PlantedGraphSpec {
    fn default() -> Self {
        PlantedGraphSpec {
            nodes: 8,
            edge_prob: 0.2,
            alpha: 0.7,
            period: 24.0,
            seasonal_amplitude: 0.5,
            noise_std: 0.02,
            switch_fraction: 0.5,
            switches: Vec::new(),
        }
    }
}

impl PlantedGraphSpec {
    /// Switch intervals of length `duration` starting every `every` steps,
    /// the first one at `every`.
    pub fn periodic_switches(steps: usize, every: usize, duration: usize) -> Vec<SwitchInterval> {
        if every == 0 || duration == 0 {
            return Vec::new();
        }
        (1..)
            .map(|k| k * every)
            .take_while(|&s| s < steps)
            .map(|start| SwitchInterval {
                start,
                end: (start + duration).min(steps),
            })
            .collect()
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::config(
                "nodes",
                format!("{} must be ≥ 2", self.nodes),
            ));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(Error::config(
                "edge_prob",
                format!("{} not in [0, 1]", self.edge_prob),
            ));
        }
        if !self.alpha.is_finite() {
            return Err(Error::config("alpha", "must be finite"));
        }
        if !(self.period > 0.0) {
            return Err(Error::config(
                "period",
                format!("{} must be > 0", self.period),
            ));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config(
                "noise_std",
                format!("{} must be ≥ 0", self.noise_std),
            ));
        }
        if !self.seasonal_amplitude.is_finite() {
            return Err(Error::config("seasonal_amplitude", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.switch_fraction) {
            return Err(Error::config(
                "switch_fraction",
                format!("{} not in [0, 1]", self.switch_fraction),
            ));
        }
        if steps < 2 {
            return Err(Error::config("steps", format!("{steps} must be ≥ 2")));
        }
        if let Some(s) = self
            .switches
            .iter()
            .find(|s| s.start >= s.end || s.end > steps)
        {
            return Err(Error::config(
                "switches",
                format!(
                    "interval [{}, {}) invalid for {steps} steps",
                    s.start, s.end
                ),
            ));
        }
        Ok(())
    }

    /// Upper bound on the spectral radius of `α·P`: every row of `P` sums
    /// to 1 or 0, so `ρ(P) ≤ ‖P‖_∞ ≤ 1`.
    pub fn spectral_radius(&self) -> f64 {
        self.alpha.abs()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub dataset: SeriesDataset,
    /// Binary `N×N`, zero diagonal.
    pub primary: Tensor,
    /// Binary `N×N` edge set active inside switch intervals.
    pub secondary: Tensor,
    pub schedule: Vec<SwitchInterval>,
}

impl SynthOutput {
    /// Whether the secondary edge set drives step `t → t+1`.
    pub fn switched(&self, t: usize) -> bool {
        self.schedule.iter().any(|s| s.contains(t))
    }
}

/// Each row of `edges` divided by its sum; empty rows stay zero.
pub fn transition_from_edges(edges: &Tensor) -> Tensor {
    let n = edges.shape()[0];
    let mut p = edges.clone();
    for row in p.data_mut().chunks_mut(n) {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    p
}

pub fn synth_generate(spec: &PlantedGraphSpec, steps: usize, seed: u64) -> Result<SynthOutput> {
    spec.validate(steps)?;
    let radius = spec.spectral_radius();
    if radius >= 1.0 {
        return Err(Error::Unstable { radius });
    }
    let n = spec.nodes;
    let mut graph_rng = RngState::with_stream(seed, 1);
    let mut series_rng = RngState::with_stream(seed, 2);

    let mut primary = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i != j && graph_rng.random_bool(spec.edge_prob) {
                primary.set(&[i, j], 1.0);
            }
        }
    }
    let secondary = swap_edges(&primary, spec.switch_fraction, &mut graph_rng);
    let p1 = transition_from_edges(&primary);
    let p2 = transition_from_edges(&secondary);

    let noise = Normal::new(0.0, spec.noise_std.max(0.0))
        .map_err(|e| Error::config("noise_std", e.to_string()))?;
    let mut values = Vec::with_capacity(steps * n);
    let mut x: Vec<f64> = (0..n)
        .map(|_| {
            Normal::new(0.0, 1.0)
                .expect("unit normal")
                .sample(&mut series_rng)
        })
        .collect();
    values.extend_from_slice(&x);
    for t in 0..steps - 1 {
        let p = if spec.switches.iter().any(|s| s.contains(t)) {
            &p2
        } else {
            &p1
        };
        let seasonal = spec.seasonal_amplitude * (TAU * (t + 1) as f64 / spec.period).sin();
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let drive: f64 = (0..n).map(|j| p.data()[i * n + j] * x[j]).sum();
                let eps = if spec.noise_std > 0.0 {
                    noise.sample(&mut series_rng)
                } else {
                    0.0
                };
                spec.alpha * drive + seasonal + eps
            })
            .collect();
        x = next;
        values.extend_from_slice(&x);
    }
    let dataset = SeriesDataset::from_values(
        format!("synth-n{n}-seed{seed}"),
        Tensor::new(&[steps, n], values)?,
    )?;
    if !dataset.values().is_finite() {
        return Err(Error::NonFinite {
            context: "synthetic trajectory".into(),
        });
    }
    Ok(SynthOutput {
        dataset,
        primary,
        secondary,
        schedule: spec.switches.clone(),
    })
}

/// Removes `round(fraction·|E|)` random edges and adds as many random
/// off-diagonal non-edges (fewer if the graph is nearly complete).
fn swap_edges(edges: &Tensor, fraction: f64, rng: &mut RngState) -> Tensor {
    let n = edges.shape()[0];
    let mut present = Vec::new();
    let mut absent = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                if edges.get(&[i, j]) > 0.0 {
                    present.push((i, j));
                } else {
                    absent.push((i, j));
                }
            }
        }
    }
    let k = ((present.len() as f64 * fraction).round() as usize).min(absent.len());
    let mut out = edges.clone();
    for idx in sample(rng, present.len(), k) {
        let (i, j) = present[idx];
        out.set(&[i, j], 0.0);
    }
    for idx in sample(rng, absent.len(), k) {
        let (i, j) = absent[idx];
        out.set(&[i, j], 1.0);
    }
    out
}
