//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the function on constant (non
//! tracking) tensors, so it shares no code path with the backward rules it
//! is checking.

use crate::error::Result;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central difference step.
    pub step: f64,
    /// Check at most this many coordinates per input (chosen at random); `None` checks all.
    pub samples_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            samples_per_input: None,
            seed: 0,
        }
    }
}

/// Norm floor below which gradients are compared in absolute terms.
pub const NORM_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct InputCheck {
    pub index: usize,
    pub coordinates: usize,
    pub analytic_norm: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub inputs: Vec<InputCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// differences. Per input the error is `|a - n| / max(|a|, |n|, NORM_FLOOR)`
/// over the checked coordinates (Euclidean norms).
pub fn check_gradients<F>(
    f: F,
    inputs: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach().requires_grad()).collect();
    f(&leaves)?.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();

    let consts: Vec<Tensor<f64>> = inputs.iter().map(Tensor::detach).collect();
    let mut stream = rng::stream(opts.seed);
    let mut report = Vec::with_capacity(inputs.len());
    for (i, input) in consts.iter().enumerate() {
        let coords: Vec<usize> = match opts.samples_per_input {
            Some(k) if k < input.numel() => {
                let mut all = rng::permutation(&mut stream, input.numel());
                all.truncate(k);
                all
            }
            _ => (0..input.numel()).collect(),
        };
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for &c in &coords {
            let eval = |delta: f64| -> Result<f64> {
                let mut data = input.data().to_vec();
                data[c] += delta;
                let mut args = consts.clone();
                args[i] = Tensor::new(data, input.shape())?;
                Ok(f(&args)?.item())
            };
            let numeric = (eval(opts.step)? - eval(-opts.step)?) / (2.0 * opts.step);
            let a = analytic[i][c];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let denom = a2.sqrt().max(n2.sqrt()).max(NORM_FLOOR);
        report.push(InputCheck {
            index: i,
            coordinates: coords.len(),
            analytic_norm: a2.sqrt(),
            rel_error: diff2.sqrt() / denom,
        });
    }
    Ok(GradCheckReport { inputs: report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // f = sum(x^2) evaluated through a path whose "gradient" is right,
        // versus a hand-broken function where value and derivative disagree.
        let x = Tensor::<f64>::from_f64(&[0.3, -0.7, 1.1], &[3]).unwrap();
        let good = check_gradients(
            |a| Ok(a[0].mul(&a[0])?.sum_all()),
            std::slice::from_ref(&x),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(good.max_rel_error() < 1e-8);

        // detach() hides the dependence from the backward pass
        let bad = check_gradients(
            |a| Ok(a[0].mul(&a[0].detach())?.sum_all()),
            std::slice::from_ref(&x),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(bad.max_rel_error() > 0.1);
    }
}
