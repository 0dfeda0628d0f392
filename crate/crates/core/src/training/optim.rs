use std::collections::BTreeMap;

use crate::autodiff::Tensor;
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One Adam update on a flat slice. `t` is the 1-based step count. With
/// `decoupled` the decay is applied to the parameter directly instead of
/// being added to the gradient.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Scalar>(
    theta: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    weight_decay: f64,
    decoupled: bool,
) {
    assert!(t >= 1, "adam step count starts at 1");
    let b1 = T::from_f64_lossy(BETA1);
    let b2 = T::from_f64_lossy(BETA2);
    let one = T::one();
    let c1 = T::from_f64_lossy(1.0 - BETA1.powi(t as i32));
    let c2 = T::from_f64_lossy(1.0 - BETA2.powi(t as i32));
    let lr_t = T::from_f64_lossy(lr);
    let wd = T::from_f64_lossy(weight_decay);
    let eps = T::from_f64_lossy(ADAM_EPS);
    for i in 0..theta.len() {
        let mut g = grad[i];
        if !decoupled {
            g += wd * theta[i];
        }
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        if decoupled {
            theta[i] -= lr_t * wd * theta[i];
        }
        theta[i] -= lr_t * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam state over a set of named tensors.
#[derive(Debug, Clone, Default)]
pub struct Adam<T> {
    m: BTreeMap<String, Vec<T>>,
    v: BTreeMap<String, Vec<T>>,
    t: u64,
    pub decoupled: bool,
}

impl<T: Scalar> Adam<T> {
    pub fn new(decoupled: bool) -> Self {
        Self {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
            decoupled,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates every parameter; a missing gradient counts as zero.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor<T>>,
        grads: &BTreeMap<String, Tensor<T>>,
        lr: f64,
        weight_decay: f64,
    ) {
        self.t += 1;
        for (name, p) in params.iter_mut() {
            let n = p.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
            let zeros;
            let g = match grads.get(name) {
                Some(g) => g.data(),
                None => {
                    zeros = vec![T::zero(); n];
                    &zeros
                }
            };
            adam_step(p.data_mut(), g, m, v, self.t, lr, weight_decay, self.decoupled);
        }
    }
}

/// Multiplies the learning rate by `factor` once the monitored loss has
/// failed to improve for more than `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            lr,
            factor,
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records one epoch's loss; returns true when the rate was reduced.
    pub fn step(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.lr *= self.factor;
            self.bad_epochs = 0;
            return true;
        }
        false
    }

    pub fn bad_epochs(&self) -> usize {
        self.bad_epochs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

/// Stops after `patience` consecutive epochs without a new best loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    bad_epochs: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            bad_epochs: 0,
        }
    }

    pub fn step(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
            return StopDecision {
                improved: true,
                stop: false,
            };
        }
        self.bad_epochs += 1;
        StopDecision {
            improved: false,
            stop: self.bad_epochs >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let (mut th, mut m, mut v) = ([1.0f64], [0.0], [0.0]);
        adam_step(&mut th, &[1.0], &mut m, &mut v, 1, 1e-3, 0.0, false);
        assert!((th[0] - 0.999).abs() < 1e-9);
        let (mut th, mut m, mut v) = ([1.0f64], [0.0], [0.0]);
        adam_step(&mut th, &[-4.0], &mut m, &mut v, 1, 1e-3, 0.0, false);
        assert!((th[0] - 1.001).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let (mut th, mut m, mut v) = ([0.7f32, -2.0], [0.0; 2], [0.0; 2]);
        for t in 1..=5 {
            adam_step(&mut th, &[0.0, 0.0], &mut m, &mut v, t, 1e-3, 0.0, false);
        }
        assert_eq!(th, [0.7, -2.0]);
    }

    #[test]
    fn weight_decay_shrinks_positive_weights() {
        for decoupled in [false, true] {
            let (mut th, mut m, mut v) = ([0.5f64], [0.0], [0.0]);
            adam_step(&mut th, &[0.0], &mut m, &mut v, 1, 1e-3, 1e-2, decoupled);
            assert!(th[0] < 0.5);
        }
    }

    #[test]
    fn adam_matches_closed_form_second_step() {
        let (mut th, mut m, mut v) = ([0.0f64], [0.0], [0.0]);
        adam_step(&mut th, &[2.0], &mut m, &mut v, 1, 0.1, 0.0, false);
        adam_step(&mut th, &[1.0], &mut m, &mut v, 2, 0.1, 0.0, false);
        let m2 = 0.9 * 0.2 + 0.1;
        let v2 = 0.999 * 0.004 + 0.001;
        let step2 = 0.1 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        let expected = -0.1 * 1.0 / (1.0 + 1e-8 / 2.0) - step2;
        assert!((th[0] - expected).abs() < 1e-9);
    }

    #[test]
    fn scheduler_trace_halves_after_fourth_epoch() {
        let mut s = PlateauScheduler::new(1e-3, 0.5, 1);
        let reduced: Vec<bool> = [1.00, 0.90, 0.95, 0.97].iter().map(|&l| s.step(l)).collect();
        assert_eq!(reduced, [false, false, false, true]);
        assert_eq!(s.lr, 5e-4);
    }

    #[test]
    fn scheduler_counter_resets_after_reduction() {
        let mut s = PlateauScheduler::new(1.0, 0.5, 1);
        let lrs: Vec<f64> = [1.0, 2.0, 2.0, 2.0, 2.0, 0.5, 0.6]
            .iter()
            .map(|&l| {
                s.step(l);
                s.lr
            })
            .collect();
        assert_eq!(lrs, [1.0, 1.0, 0.5, 0.5, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn stopper_trace() {
        let mut e = EarlyStopper::new(3);
        let stops: Vec<bool> = [1.00, 0.90, 0.92, 0.93, 0.94]
            .iter()
            .enumerate()
            .map(|(i, &l)| e.step(i + 1, l).stop)
            .collect();
        assert_eq!(stops, [false, false, false, false, true]);
        assert_eq!(e.best_epoch(), Some(2));
    }

    #[test]
    fn equal_loss_is_not_improvement() {
        let mut e = EarlyStopper::new(1);
        assert!(e.step(1, 0.5).improved);
        assert!(e.step(2, 0.5).stop);
    }
}
