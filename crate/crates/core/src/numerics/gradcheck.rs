//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;

use crate::error::{Error, Result};

use super::{RngState, Tape, Tensor, Var};

/// Denominator floor for relative errors.
pub const REL_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tol: f64,
    /// Check at most this many coordinates per input, drawn without
    /// replacement; `None` checks every coordinate.
    pub sample_per_input: Option<usize>,
    pub sample_seed: u64,
    /// Skip coordinates whose one-sided differences disagree by more than
    /// this relative amount, which flags a ReLU/abs kink inside `[x−h, x+h]`.
    pub kink_tol: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tol: 1e-4,
            sample_per_input: None,
            sample_seed: 0,
            kink_tol: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    relative_error_floored(a, b, REL_EPS)
}

fn relative_error_floored(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Gradient magnitude below which rounding in `f(x ± h)` alone can push a
/// central difference past `tol`: roughly `ε·|f| / h` of absolute noise.
pub fn roundoff_floor(f0: f64, step: f64, tol: f64) -> f64 {
    (f64::EPSILON * f0.abs() / (step * tol)).max(REL_EPS)
}

/// Checks `f` at a single input with step `h` and relative tolerance `tol`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let opts = GradCheckOptions {
        step: h,
        tol,
        ..Default::default()
    };
    grad_check_inputs(|tape, xs| f(tape, xs[0]), std::slice::from_ref(x), &opts)
}

/// Checks the gradient of a scalar function of several inputs against central
/// differences `(f(x+h) − f(x−h)) / 2h`, coordinate by coordinate.
pub fn grad_check_inputs<F>(
    f: F,
    inputs: &[Tensor],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        if loss.shape().iter().product::<usize>() != 1 {
            return Err(Error::Contract("grad_check needs a scalar function".into()));
        }
        tape.backward(loss)?;
        vars.iter()
            .map(|v| v.grad().expect("leaf gradient"))
            .collect::<Vec<_>>()
    };

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };
    let f0 = eval(inputs)?;
    let floor = roundoff_floor(f0, opts.step, opts.tol);

    let mut rng = RngState::with_stream(opts.sample_seed, 0x6772_6164);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
        skipped_kinks: 0,
        tol: opts.tol,
        passed: true,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match opts.sample_per_input {
            Some(m) if m < n => {
                let mut v = sample(&mut rng, n, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for idx in coords {
            let x0 = input.data()[idx];
            work[which].data_mut()[idx] = x0 + opts.step;
            let fp = eval(&work)?;
            work[which].data_mut()[idx] = x0 - opts.step;
            let fm = eval(&work)?;
            work[which].data_mut()[idx] = x0;

            if let Some(kt) = opts.kink_tol {
                let fwd = (fp - f0) / opts.step;
                let bwd = (f0 - fm) / opts.step;
                if relative_error_floored(fwd, bwd, floor) > kt {
                    report.skipped_kinks += 1;
                    continue;
                }
            }
            let numeric = (fp - fm) / (2.0 * opts.step);
            let a = analytic[which].data()[idx];
            let err = relative_error_floored(a, numeric, floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((which, idx));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    report.passed = report.max_rel_error <= opts.tol;
    Ok(report)
}
