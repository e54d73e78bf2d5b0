//! One-cycle learning-rate/momentum schedule driving an Adam update.

use crate::error::{NumericsError, Result};
use crate::tensor::Tensor;

/// Piecewise-linear one-cycle schedule.
///
/// The learning rate climbs from `lr_max / div_factor` to `lr_max` at the
/// peak step (`pct_start` of the run), then descends to
/// `lr_max / final_div_factor` at the last step. Momentum (Adam β1) mirrors
/// it, moving from `momentum_max` down to `momentum_base` and back.
#[derive(Clone, Debug, PartialEq)]
pub struct OneCycleSchedule {
    pub total_steps: usize,
    pub lr_max: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub pct_start: f64,
    pub momentum_base: f64,
    pub momentum_max: f64,
}

impl OneCycleSchedule {
    pub fn new(total_steps: usize, lr_max: f64) -> Self {
        OneCycleSchedule {
            total_steps,
            lr_max,
            div_factor: 25.0,
            final_div_factor: 1e4,
            pct_start: 0.4,
            momentum_base: 0.85,
            momentum_max: 0.95,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.total_steps > 0
            && self.lr_max > 0.0
            && self.div_factor >= 1.0
            && self.final_div_factor >= 1.0
            && (0.0..=1.0).contains(&self.pct_start)
            && 0.0 <= self.momentum_base
            && self.momentum_base <= self.momentum_max
            && self.momentum_max < 1.0;
        if ok {
            Ok(())
        } else {
            Err(NumericsError::Config { op: "one_cycle", msg: format!("invalid schedule {self:?}") })
        }
    }

    pub fn peak_step(&self) -> usize {
        let last = self.total_steps.saturating_sub(1);
        ((self.pct_start * self.total_steps as f64).round() as usize).min(last)
    }

    /// Position within the current phase: `(warming_up, fraction in [0, 1])`.
    fn phase(&self, step: usize) -> (bool, f64) {
        let peak = self.peak_step();
        let last = self.total_steps.saturating_sub(1);
        let step = step.min(last);
        if step <= peak {
            let frac = if peak == 0 { 1.0 } else { step as f64 / peak as f64 };
            (true, frac)
        } else {
            (false, (step - peak) as f64 / (last - peak) as f64)
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        let start = self.lr_max / self.div_factor;
        let end = self.lr_max / self.final_div_factor;
        match self.phase(step) {
            (true, f) => start + (self.lr_max - start) * f,
            (false, f) => self.lr_max + (end - self.lr_max) * f,
        }
    }

    pub fn momentum(&self, step: usize) -> f64 {
        let span = self.momentum_max - self.momentum_base;
        match self.phase(step) {
            (true, f) => self.momentum_max - span * f,
            (false, f) => self.momentum_base + span * f,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: Vec<f32>,
    pub second: Vec<f32>,
}

/// Adam with β1 and learning rate taken from a [`OneCycleSchedule`].
#[derive(Clone, Debug, PartialEq)]
pub struct OneCycleAdam {
    pub schedule: OneCycleSchedule,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: usize,
    /// Per-parameter moment buffers, allocated on first non-empty gradient.
    pub moments: Vec<Option<Moments>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub lr: f64,
    pub momentum: f64,
}

impl OneCycleAdam {
    pub fn new(schedule: OneCycleSchedule, num_params: usize) -> Self {
        OneCycleAdam { schedule, beta2: 0.999, epsilon: 1e-8, step: 0, moments: vec![None; num_params] }
    }

    /// Applies one update. Parameters with a `None` gradient are left untouched.
    pub fn step(&mut self, params: &mut [Tensor<f32>], grads: &[Option<Tensor<f32>>]) -> Result<StepInfo> {
        if self.step >= self.schedule.total_steps {
            return Err(NumericsError::Usage(format!(
                "optimizer already ran all {} scheduled steps",
                self.schedule.total_steps
            )));
        }
        if params.len() != grads.len() || params.len() != self.moments.len() {
            return Err(NumericsError::Usage(format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.moments.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(NumericsError::ShapeMismatch {
                        op: "one_cycle_adam_step",
                        lhs: p.shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
            }
        }
        let lr = self.schedule.lr(self.step);
        let beta1 = self.schedule.momentum(self.step);
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), slot) in params.iter_mut().zip(grads).zip(self.moments.iter_mut()) {
            let Some(g) = g else { continue };
            let m = slot.get_or_insert_with(|| Moments {
                first: vec![0.0; g.numel()],
                second: vec![0.0; g.numel()],
            });
            for (((w, &gv), m1), m2) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.first.iter_mut()).zip(m.second.iter_mut())
            {
                let gv = gv as f64;
                let new_m = beta1 * *m1 as f64 + (1.0 - beta1) * gv;
                let new_v = self.beta2 * *m2 as f64 + (1.0 - self.beta2) * gv * gv;
                *m1 = new_m as f32;
                *m2 = new_v as f32;
                let mhat = new_m / bc1;
                let vhat = new_v / bc2;
                *w = (*w as f64 - lr * mhat / (vhat.sqrt() + self.epsilon)) as f32;
            }
        }
        self.step += 1;
        Ok(StepInfo { lr, momentum: beta1 })
    }
}
