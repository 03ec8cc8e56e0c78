//! SGD with Nesterov momentum, total-norm gradient clipping and learning
//! rate schedules.

use serde::{Deserialize, Serialize};

use crate::nn::Model;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OptimError {
    #[error("tensor {index}: parameter shape {param:?} vs gradient shape {grad:?}")]
    Shape {
        index: usize,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("{0} parameter tensors but {1} gradients")]
    Count(usize, usize),
    #[error("invalid optimizer setting: {0}")]
    Invalid(String),
}

/// Global L2 norm over every gradient tensor.
pub fn total_norm<T: Real>(grads: &[Tensor<T>]) -> f64 {
    grads.iter().map(|g| g.l2_norm_sq()).sum::<f64>().sqrt()
}

/// Rescale all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_total_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = total_norm(grads);
    if norm > max_norm {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct Nesterov<T: Real> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Real> Nesterov<T> {
    pub fn new(shapes: &[&[usize]], lr: f64, momentum: f64) -> Result<Self, OptimError> {
        if !(lr > 0.0) {
            return Err(OptimError::Invalid(format!("lr must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(OptimError::Invalid(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Nesterov {
            lr,
            momentum,
            velocity: shapes.iter().map(|s| Tensor::zeros(s.to_vec())).collect(),
        })
    }

    pub fn for_model(model: &Model<T>, lr: f64, momentum: f64) -> Result<Self, OptimError> {
        let shapes: Vec<&[usize]> = model.params().iter().map(|p| p.value.shape()).collect();
        Self::new(&shapes, lr, momentum)
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    /// `v ← μv − lr·g`, then `θ ← θ + μv − lr·g`.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor<T>>,
        grads: &[Tensor<T>],
    ) -> Result<(), OptimError> {
        let params: Vec<&mut Tensor<T>> = params.into_iter().collect();
        if params.len() != grads.len() || grads.len() != self.velocity.len() {
            return Err(OptimError::Count(params.len(), grads.len()));
        }
        let (mu, lr) = (T::lit(self.momentum), T::lit(self.lr));
        for (index, ((p, g), v)) in params.into_iter().zip(grads).zip(&mut self.velocity).enumerate() {
            if p.shape() != g.shape() || v.shape() != g.shape() {
                return Err(OptimError::Shape {
                    index,
                    param: p.shape().to_vec(),
                    grad: g.shape().to_vec(),
                });
            }
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = mu * *vv - lr * gv;
                *pv += mu * *vv - lr * gv;
            }
        }
        Ok(())
    }

    /// Update every model parameter, then project the pooling units.
    pub fn step_model(&mut self, model: &mut Model<T>, grads: &[Tensor<T>], wg_eps: f64) -> Result<(), OptimError> {
        self.step(model.params_mut().iter_mut().map(|p| &mut p.value), grads)?;
        model.project_pool_constraints(wg_eps);
        Ok(())
    }
}

/// Whether a larger or a smaller validation metric is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricMode {
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Multiply by `factor` at each iteration in `milestones`.
    Step { milestones: Vec<u64>, factor: f64 },
    /// Multiply by `factor` once `patience` validation rounds pass without a
    /// strictly better metric; never below `min_lr`.
    Plateau {
        #[serde(default = "default_patience")]
        patience: u32,
        factor: f64,
        #[serde(default = "default_min_lr")]
        min_lr: f64,
        #[serde(default = "default_mode")]
        mode: MetricMode,
    },
}

fn default_patience() -> u32 {
    1
}

fn default_min_lr() -> f64 {
    1e-6
}

fn default_mode() -> MetricMode {
    MetricMode::Max
}

impl LrSchedule {
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad_factor = |f: f64| !(f > 0.0 && f < 1.0);
        match self {
            LrSchedule::Constant => Ok(()),
            LrSchedule::Step { milestones, factor } => {
                if bad_factor(*factor) {
                    return Err(OptimError::Invalid(format!("factor {factor} outside (0, 1)")));
                }
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(OptimError::Invalid(format!(
                        "milestones {milestones:?} are not strictly increasing"
                    )));
                }
                Ok(())
            }
            LrSchedule::Plateau { factor, patience, .. } => {
                if bad_factor(*factor) {
                    return Err(OptimError::Invalid(format!("factor {factor} outside (0, 1)")));
                }
                if *patience == 0 {
                    return Err(OptimError::Invalid("patience must be at least 1".into()));
                }
                Ok(())
            }
        }
    }
}

/// Tracks the current learning rate under an [`LrSchedule`].
#[derive(Debug, Clone)]
pub struct Scheduler {
    schedule: LrSchedule,
    lr0: f64,
    lr: f64,
    best: Option<f64>,
    stale: u32,
}

impl Scheduler {
    pub fn new(schedule: LrSchedule, lr0: f64) -> Result<Self, OptimError> {
        schedule.validate()?;
        if !(lr0 > 0.0) {
            return Err(OptimError::Invalid(format!("lr must be positive, got {lr0}")));
        }
        Ok(Scheduler {
            schedule,
            lr0,
            lr: lr0,
            best: None,
            stale: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Learning rate to use for iteration `iter` (0-based count of completed
    /// iterations). Only step schedules react.
    pub fn on_iteration(&mut self, iter: u64) -> f64 {
        if let LrSchedule::Step { milestones, factor } = &self.schedule {
            let passed = milestones.iter().filter(|&&m| iter >= m).count();
            self.lr = self.lr0 * factor.powi(passed as i32);
        }
        self.lr
    }

    /// Report a validation metric. Only plateau schedules react.
    pub fn on_validation(&mut self, metric: f64) -> f64 {
        if let LrSchedule::Plateau {
            patience,
            factor,
            min_lr,
            mode,
        } = &self.schedule
        {
            let improved = match (self.best, mode) {
                (None, _) => true,
                (Some(b), MetricMode::Max) => metric > b,
                (Some(b), MetricMode::Min) => metric < b,
            };
            if improved {
                self.best = Some(metric);
                self.stale = 0;
            } else {
                self.stale += 1;
                if self.stale >= *patience {
                    self.lr = (self.lr * factor).max(*min_lr);
                    self.stale = 0;
                }
            }
        }
        self.lr
    }
}
