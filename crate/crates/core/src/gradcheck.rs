//! Central finite-difference gradient checking.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Perturbation for `(f(x+h) - f(x-h)) / 2h`.
    pub step: f64,
    /// Elements whose gradient magnitude is below this fraction of the
    /// tensor's largest numeric gradient are compared against that floor
    /// instead of their own size.
    pub floor_ratio: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-6,
            floor_ratio: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradReport {
    /// Worst relative error per input tensor.
    pub per_input: Vec<f64>,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }
}

/// Relative error between two gradient tensors (see [`GradCheck::floor_ratio`]).
pub fn relative_error(analytic: &Tensor, numeric: &Tensor, floor_ratio: f64) -> f64 {
    let scale = numeric
        .data()
        .iter()
        .chain(analytic.data())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (scale * floor_ratio).max(f64::MIN_POSITIVE);
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

impl GradCheck {
    /// Compares tape gradients of the scalar `f(inputs)` against central
    /// differences for every element of every input.
    pub fn run<F>(&self, inputs: &[Tensor], f: F) -> Result<GradReport>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let eval = |xs: &[Tensor]| -> Result<f64> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), false)).collect();
            let out = f(&mut tape, &vars)?;
            Ok(tape.value(out).data()[0])
        };

        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
        let loss = f(&mut tape, &vars)?;
        tape.backward(loss)?;
        let analytic: Vec<Tensor> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, x)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
            .collect();

        let mut numeric = Vec::with_capacity(inputs.len());
        let mut work: Vec<Tensor> = inputs.to_vec();
        for k in 0..inputs.len() {
            let mut g = Tensor::zeros(inputs[k].shape());
            for e in 0..inputs[k].numel() {
                let orig = work[k].data()[e];
                work[k].data_mut()[e] = orig + self.step;
                let plus = eval(&work)?;
                work[k].data_mut()[e] = orig - self.step;
                let minus = eval(&work)?;
                work[k].data_mut()[e] = orig;
                g.data_mut()[e] = (plus - minus) / (2.0 * self.step);
            }
            numeric.push(g);
        }
        let per_input = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| relative_error(a, n, self.floor_ratio))
            .collect();
        Ok(GradReport {
            per_input,
            analytic,
            numeric,
        })
    }
}
