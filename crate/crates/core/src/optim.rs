//! Adam and SGD with a step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// `lr(k) = base * gamma^floor(k / period)`; constant when `period` is `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub gamma: f64,
    pub period: Option<u64>,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        LrSchedule {
            base,
            gamma: 1.0,
            period: None,
        }
    }

    pub fn step_decay(base: f64, gamma: f64, period: u64) -> Self {
        LrSchedule {
            base,
            gamma,
            period: Some(period.max(1)),
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        match self.period {
            None => self.base,
            Some(p) => self.base * self.gamma.powi((step / p) as i32),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub schedule: LrSchedule,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, schedule: LrSchedule) -> Self {
        OptimizerState {
            kind,
            schedule,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn adam(schedule: LrSchedule) -> Self {
        Self::new(OptimizerKind::default(), schedule)
    }

    pub fn sgd(schedule: LrSchedule) -> Self {
        Self::new(OptimizerKind::Sgd, schedule)
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Learning rate the next step will use.
    pub fn current_lr(&self) -> f64 {
        self.schedule.lr(self.step)
    }

    /// Updates `params` in place from `grads` (same order and shapes).
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&Tensor>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim("gradient list", params.len(), grads.len()));
        }
        for (index, (p, g)) in params.iter().zip(grads).enumerate() {
            match g {
                None => return Err(Error::MissingGrad { index }),
                Some(g) if g.shape() != p.shape() => {
                    return Err(Error::Shape(format!(
                        "gradient {index} has shape {:?}, parameter has {:?}",
                        g.shape(),
                        p.shape()
                    )))
                }
                _ => {}
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::InvalidArgument(
                "parameter set changed between optimizer steps".into(),
            ));
        }

        let lr = self.current_lr();
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    let g = g.expect("checked above");
                    for (v, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *v -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, g), (m, s)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first.iter_mut().zip(self.second.iter_mut()))
                {
                    let g = g.expect("checked above");
                    for (((v, &gv), mv), sv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(s.data_mut())
                    {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *sv = beta2 * *sv + (1.0 - beta2) * gv * gv;
                        let mhat = *mv / c1;
                        let shat = *sv / c2;
                        *v -= lr * mhat / (shat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
