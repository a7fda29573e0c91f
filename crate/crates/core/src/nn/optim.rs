//! Adam, reduce-on-plateau learning-rate schedule and early stopping.

use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Minimum decrease of the monitored loss that counts as an improvement.
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [&mut Tensor2], grads: &[Tensor2]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Tensor2::zeros(g.rows(), g.cols())).collect();
            self.v = self.m.clone();
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || m.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Multiply the learning rate by `factor` after `patience` consecutive
/// non-improving observations of a loss, never going below `min_lr`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: Option<f64>,
    wait: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, min_lr: f64) -> Self {
        PlateauScheduler {
            lr,
            factor: 0.1,
            patience,
            min_lr,
            best: None,
            wait: 0,
        }
    }

    pub fn step(&mut self, metric: f64) -> f64 {
        match self.best {
            Some(best) if metric > best - IMPROVEMENT_THRESHOLD => {
                self.wait += 1;
                if self.wait >= self.patience {
                    self.lr = (self.lr * self.factor).max(self.min_lr);
                    self.wait = 0;
                }
            }
            _ => {
                self.best = Some(metric);
                self.wait = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// New best; the caller should snapshot parameters.
    Improved,
    Continue,
    Stop,
}

/// One early-stopping decision. Returns the decision and the new wait count.
pub fn early_stop(best_so_far: f64, current: f64, wait: usize, patience: usize) -> (StopDecision, usize) {
    if current < best_so_far - IMPROVEMENT_THRESHOLD {
        (StopDecision::Improved, 0)
    } else if wait + 1 >= patience {
        (StopDecision::Stop, wait + 1)
    } else {
        (StopDecision::Continue, wait + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn step(&mut self, current: f64) -> StopDecision {
        let (decision, wait) = early_stop(self.best, current, self.wait, self.patience);
        self.wait = wait;
        if decision == StopDecision::Improved {
            self.best = current;
        }
        decision
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor2 {
        Tensor2::from_vec(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor2::from_vec(1, 3, vec![1.0, -2.0, 3.0]).unwrap();
        let before = p.clone();
        let mut adam = Adam::new(0.1);
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[Tensor2::zeros(1, 3)]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        for g in [0.37, -5.0, 1e-3] {
            let mut p = scalar(0.0);
            let mut adam = Adam::new(0.01);
            adam.step(&mut [&mut p], &[scalar(g)]).unwrap();
            // m̂ = g, v̂ = g², Δ = -lr g / (|g| + ε)
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((p.data()[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn two_steps_follow_scalar_recurrence() {
        let (lr, g) = (0.05, 0.8);
        let mut p = scalar(1.0);
        let mut adam = Adam::new(lr);
        adam.step(&mut [&mut p], &[scalar(g)]).unwrap();
        adam.step(&mut [&mut p], &[scalar(g)]).unwrap();

        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut x = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((p.data()[0] - x).abs() < 1e-15);
    }

    #[test]
    fn adam_shape_checks() {
        let mut p = scalar(0.0);
        let mut adam = Adam::new(0.1);
        assert!(adam.step(&mut [&mut p], &[Tensor2::zeros(1, 2)]).is_err());
        assert!(adam.step(&mut [&mut p], &[]).is_err());
    }

    #[test]
    fn plateau_improving_keeps_lr() {
        let mut s = PlateauScheduler::new(0.1, 2, 1e-6);
        for i in 0..10 {
            assert_eq!(s.step(1.0 - i as f64 * 0.01), 0.1);
        }
    }

    #[test]
    fn plateau_flat_reduces_on_third_call() {
        let mut s = PlateauScheduler::new(0.1, 2, 1e-6);
        assert_eq!(s.step(1.0), 0.1);
        assert_eq!(s.step(1.0), 0.1);
        assert!((s.step(1.0) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn plateau_respects_min_lr() {
        let mut s = PlateauScheduler::new(1e-6, 1, 1e-6);
        for _ in 0..5 {
            assert_eq!(s.step(1.0), 1e-6);
        }
        let mut s = PlateauScheduler::new(1e-5, 1, 3e-6);
        s.step(1.0);
        assert_eq!(s.step(1.0), 3e-6);
    }

    #[test]
    fn early_stopping_rules() {
        let mut es = EarlyStopping::new(5);
        for i in 0..20 {
            assert_eq!(es.step(10.0 - i as f64), StopDecision::Improved);
        }

        let mut es = EarlyStopping::new(5);
        assert_eq!(es.step(1.0), StopDecision::Improved);
        for _ in 0..4 {
            assert_eq!(es.step(1.0), StopDecision::Continue);
        }
        assert_eq!(es.step(1.0), StopDecision::Stop);

        let mut es = EarlyStopping::new(5);
        es.step(1.0);
        for _ in 0..3 {
            assert_eq!(es.step(1.5), StopDecision::Continue);
        }
        assert_eq!(es.step(0.5), StopDecision::Improved);
        for _ in 0..4 {
            assert_eq!(es.step(0.9), StopDecision::Continue);
        }
        assert_eq!(es.step(0.9), StopDecision::Stop);
    }
}
