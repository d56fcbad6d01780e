use super::mlp::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant,
    /// Cosine warm-up from `peak/25` to the peak at `peak_fraction` of the run,
    /// then cosine decay to `peak/25/1e4` at the final step.
    OneCycle {
        total_steps: usize,
        peak_fraction: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// SGD momentum, or Adam's first-moment decay.
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
}

const ONECYCLE_DIV: f64 = 25.0;
const ONECYCLE_FINAL_DIV: f64 = 1e4;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptimizerConfig {
    /// SGD+momentum, lr 0.25, weight decay 1e-4, one-cycle schedule.
    pub fn sgd_onecycle(total_steps: usize) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            learning_rate: 0.25,
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: Schedule::OneCycle {
                total_steps,
                peak_fraction: 0.3,
            },
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            momentum: 0.9,
            weight_decay: 0.0,
            schedule: Schedule::Constant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if let Schedule::OneCycle {
            total_steps,
            peak_fraction,
        } = self.schedule
        {
            if total_steps == 0 {
                return Err(Error::Config("one-cycle schedule needs total_steps > 0".into()));
            }
            if !(0.0..=1.0).contains(&peak_fraction) {
                return Err(Error::Config(format!(
                    "one-cycle peak fraction must lie in [0, 1], got {peak_fraction}"
                )));
            }
        }
        Ok(())
    }

    /// Learning rate used for the update at `step` (0-based).
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::OneCycle {
                total_steps,
                peak_fraction,
            } => {
                let peak = self.learning_rate;
                let initial = peak / ONECYCLE_DIV;
                let last = total_steps.saturating_sub(1);
                let fin = initial / ONECYCLE_FINAL_DIV;
                if last == 0 {
                    return peak;
                }
                let peak_step = (peak_fraction * last as f64).round() as usize;
                let t = step.min(last);
                if t <= peak_step {
                    if peak_step == 0 {
                        return peak;
                    }
                    cosine_anneal(initial, peak, t as f64 / peak_step as f64)
                } else {
                    let span = (last - peak_step) as f64;
                    cosine_anneal(peak, fin, (t - peak_step) as f64 / span)
                }
            }
        }
    }
}

fn cosine_anneal(start: f64, end: f64, progress: f64) -> f64 {
    end + (start - end) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Optimizer state; buffers are shaped lazily on the first step and then fixed.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: usize,
    velocity: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            velocity: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn current_learning_rate(&self) -> f64 {
        self.config.learning_rate_at(self.step)
    }

    pub fn step<P, G>(&mut self, params: &mut P, grads: &G) -> Result<()>
    where
        P: Parameters + ?Sized,
        G: Parameters + ?Sized,
    {
        let grad_slices = grads.slices();
        let mut param_slices = params.slices_mut();
        if grad_slices.len() != param_slices.len() {
            return Err(Error::shape(
                "gradient tensor count",
                param_slices.len(),
                grad_slices.len(),
            ));
        }
        for (i, (p, g)) in param_slices.iter().zip(&grad_slices).enumerate() {
            if p.len() != g.len() {
                return Err(Error::shape(format!("gradient tensor {i}"), p.len(), g.len()));
            }
        }
        if self.velocity.is_empty() {
            self.velocity = param_slices.iter().map(|p| vec![0.0; p.len()]).collect();
            if self.config.kind == OptimizerKind::Adam {
                self.second_moment = self.velocity.clone();
            }
        } else if self.velocity.len() != param_slices.len()
            || self
                .velocity
                .iter()
                .zip(&param_slices)
                .any(|(v, p)| v.len() != p.len())
        {
            return Err(Error::shape(
                "optimizer buffers",
                "shapes from the first step",
                "different parameter shapes",
            ));
        }

        let lr = self.config.learning_rate_at(self.step);
        let wd = self.config.weight_decay;
        let mu = self.config.momentum;
        match self.config.kind {
            OptimizerKind::SgdMomentum => {
                for ((p, g), v) in param_slices
                    .iter_mut()
                    .zip(&grad_slices)
                    .zip(self.velocity.iter_mut())
                {
                    for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                        let d = gi + wd * *pi;
                        *vi = mu * *vi + d;
                        *pi -= lr * *vi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = (self.step + 1) as i32;
                let c1 = 1.0 - mu.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((p, g), m), s) in param_slices
                    .iter_mut()
                    .zip(&grad_slices)
                    .zip(self.velocity.iter_mut())
                    .zip(self.second_moment.iter_mut())
                {
                    for (((pi, gi), mi), si) in
                        p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(s.iter_mut())
                    {
                        let d = gi + wd * *pi;
                        *mi = mu * *mi + (1.0 - mu) * d;
                        *si = ADAM_BETA2 * *si + (1.0 - ADAM_BETA2) * d * d;
                        *pi -= lr * (*mi / c1) / ((*si / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        self.step += 1;
        Ok(())
    }
}
