//! First-order optimizers over [`ModelParams`].
//!
//! Network tensors are updated densely every step. Worker preference rows
//! are updated only when the worker occurs in the batch, and each row keeps
//! its own step count for bias correction.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// Heavy-ball momentum: `v = mu v + g; p -= lr v`.
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
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

impl OptimizerKind {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..1.0).contains(&x);
        let ok = match *self {
            OptimizerKind::SgdMomentum { momentum } => unit(momentum),
            OptimizerKind::Adam { beta1, beta2, eps } => unit(beta1) && unit(beta2) && eps > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::SgdMomentum { .. } => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        })
    }
}

/// Parses `adam` or `sgd` with default hyperparameters.
impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::default()),
            "sgd" => Ok(OptimizerKind::SgdMomentum { momentum: 0.9 }),
            other => Err(Error::Argument(format!(
                "unknown optimizer {other:?}, expected adam or sgd"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Slot {
    fn zeros(n: usize) -> Self {
        Self {
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    steps: u64,
    network: Vec<Slot>,
    worker_steps: Vec<u64>,
    workers: Slot,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ModelParams) -> Result<Self> {
        kind.validate()?;
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        Ok(Self {
            kind,
            lr,
            steps: 0,
            network: params.network_tensors().iter().map(|t| Slot::zeros(t.len())).collect(),
            worker_steps: vec![0; params.workers.len()],
            workers: Slot::zeros(params.workers.weights().len()),
        })
    }

    /// Applies one update. `active_workers` lists the preference rows that
    /// received gradient in this batch; other rows are left alone.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, active_workers: &[usize]) {
        self.steps += 1;
        let t = self.steps;
        let grad_tensors = grads.network_tensors();
        for ((p, g), slot) in params
            .network_tensors_mut()
            .into_iter()
            .zip(grad_tensors)
            .zip(&mut self.network)
        {
            update(self.kind, self.lr, t, p, g, &mut slot.first, &mut slot.second);
        }
        let views = params.workers.num_views();
        let gw = grads.workers.weights();
        let pw = params.workers.weights_mut();
        for &m in active_workers {
            self.worker_steps[m] += 1;
            let range = m * views..(m + 1) * views;
            let p = pw.as_slice_mut().expect("standard layout");
            let g = gw.as_slice().expect("standard layout");
            update(
                self.kind,
                self.lr,
                self.worker_steps[m],
                &mut p[range.clone()],
                &g[range.clone()],
                &mut self.workers.first[range.clone()],
                &mut self.workers.second[range],
            );
        }
    }
}

fn update(
    kind: OptimizerKind,
    lr: f64,
    t: u64,
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
) {
    match kind {
        OptimizerKind::SgdMomentum { momentum } => {
            for i in 0..p.len() {
                m[i] = momentum * m[i] + g[i];
                p[i] -= lr * m[i];
            }
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            let c1 = 1.0 - beta1.powi(t as i32);
            let c2 = 1.0 - beta2.powi(t as i32);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        // After one step the bias-corrected ratio is g/|g| (up to eps).
        let mut p = [1.0, -2.0, 0.5];
        let g = [0.3, -4.0, 1e-3];
        let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
        update(OptimizerKind::default(), 0.01, 1, &mut p, &g, &mut m, &mut v);
        let want = [0.99, -1.99, 0.49];
        for i in 0..3 {
            assert!((p[i] - want[i]).abs() < 1e-7, "{p:?}");
        }
    }

    #[test]
    fn adam_matches_hand_iteration() {
        let kind = OptimizerKind::default();
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut p = [0.7];
        let (mut m, mut v) = ([0.0], [0.0]);
        let (mut hp, mut hm, mut hv) = (0.7f64, 0.0f64, 0.0f64);
        for t in 1..=5u64 {
            let g = 2.0 * p[0] - 1.0;
            update(kind, 0.1, t, &mut p, &[g], &mut m, &mut v);
            hm = b1 * hm + (1.0 - b1) * g;
            hv = b2 * hv + (1.0 - b2) * g * g;
            let step = (hm / (1.0 - b1.powi(t as i32))) / ((hv / (1.0 - b2.powi(t as i32))).sqrt() + eps);
            hp -= 0.1 * step;
            assert!((p[0] - hp).abs() < 1e-14);
        }
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = [0.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        let kind = OptimizerKind::SgdMomentum { momentum: 0.5 };
        update(kind, 1.0, 1, &mut p, &[1.0], &mut m, &mut v);
        update(kind, 1.0, 2, &mut p, &[1.0], &mut m, &mut v);
        assert_eq!(p[0], -2.5);
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(OptimizerKind::Adam { beta1: 1.0, beta2: 0.9, eps: 1e-8 }.validate().is_err());
        assert!(OptimizerKind::SgdMomentum { momentum: -0.1 }.validate().is_err());
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }
}
