//! Central finite-difference checks for the gradient tape.

use crate::error::{contract_err, Result};
use crate::tensor::Tensor;

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const DEFAULT_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Element with the largest relative error.
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of the scalar `f(inputs)` against central
/// differences with step `h`, for every element of every input.
pub fn check_gradients<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let selection: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    check_gradients_at(f, inputs, &selection, h, DEFAULT_FLOOR)
}

/// As [`check_gradients`], restricted to `(input, element)` pairs.
pub fn check_gradients_at<F>(
    f: F,
    inputs: &[Tensor<f64>],
    selection: &[(usize, usize)],
    h: f64,
    floor: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(Tensor::with_requires_grad).collect();
    let loss = f(&leaves)?;
    if loss.numel() != 1 {
        return contract_err("gradcheck", "function must return a scalar");
    }
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |input: usize, index: usize, delta: f64| -> Result<f64> {
        let shifted: Vec<Tensor<f64>> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i != input {
                    return Ok(t.detach());
                }
                let mut data = t.to_vec();
                data[index] += delta;
                Tensor::from_vec(t.shape(), data)
            })
            .collect::<Result<_>>()?;
        f(&shifted)?.item()
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for &(input, index) in selection {
        let numeric = (eval(input, index, h)? - eval(input, index, -h)?) / (2.0 * h);
        let a = analytic[input][index];
        let rel = relative_error(a, numeric, floor);
        report.checked += 1;
        if report.worst.is_none() || rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some(Mismatch {
                input,
                index,
                analytic: a,
                numeric,
                rel_err: rel,
            });
        }
    }
    Ok(report)
}
