use std::f64::consts::PI;

use super::{Optimizer, OptimizerKind, Problem, StepReport};
use crate::autodiff::Parameter;
use crate::error::{Error, Result};

/// Moment accumulators of Adam.
///
/// Buffers are created as zeros on the first call to [`adam_direction`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    k: u64,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: Vec::new(),
            v: Vec::new(),
            k: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.k
    }

    /// Raw second-moment accumulator, one buffer per parameter.
    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.v
    }

    fn ensure_buffers(&mut self, params: &[Parameter]) -> Result<()> {
        if self.v.is_empty() {
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.m = self.v.clone();
            return Ok(());
        }
        let same = self.v.len() == params.len()
            && self.v.iter().zip(params).all(|(v, p)| v.len() == p.len());
        if !same {
            return Err(Error::state(
                "Adam state was built for a different parameter layout",
            ));
        }
        Ok(())
    }
}

/// Direction and bias-corrected second moment of one Adam update.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamDirection {
    pub d: Vec<Vec<f64>>,
    pub v_hat: Vec<Vec<f64>>,
}

/// Advances the step count, updates the moments once and returns
/// `d = -m_hat / (sqrt(v_hat) + eps)`.
///
/// With `use_momentum == false` the first moment is left alone and `m_hat` is
/// the raw gradient, as if `beta1` were zero.
pub fn adam_direction(
    state: &mut AdamState,
    params: &[Parameter],
    use_momentum: bool,
) -> Result<AdamDirection> {
    state.ensure_buffers(params)?;
    state.k += 1;
    let k = state.k as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(k);
    let c2 = 1.0 - b2.powi(k);

    let mut d = Vec::with_capacity(params.len());
    let mut v_hat = Vec::with_capacity(params.len());
    for (i, p) in params.iter().enumerate() {
        let g = p.require_grad()?;
        let v = &mut state.v[i];
        let m = &mut state.m[i];
        let mut di = Vec::with_capacity(g.len());
        let mut vh = Vec::with_capacity(g.len());
        for j in 0..g.len() {
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let v_corr = v[j] / c2;
            let m_corr = if use_momentum {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                m[j] / c1
            } else {
                g[j]
            };
            di.push(-m_corr / (v_corr.sqrt() + eps));
            vh.push(v_corr);
        }
        d.push(di);
        v_hat.push(vh);
    }
    Ok(AdamDirection { d, v_hat })
}

/// Linear warmup to `peak_lr`, then cosine decay to zero at `total_steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub const DEFAULT_PEAK: f64 = 2e-5;
    pub const DEFAULT_WARMUP: f64 = 0.1;

    pub fn new(total_steps: usize) -> Self {
        Self {
            peak_lr: Self::DEFAULT_PEAK,
            warmup_fraction: Self::DEFAULT_WARMUP,
            total_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::contract(format!(
                "peak lr must be positive, got {}",
                self.peak_lr
            )));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::contract(format!(
                "warmup fraction must lie in [0,1], got {}",
                self.warmup_fraction
            )));
        }
        if self.total_steps == 0 {
            return Err(Error::contract("schedule needs at least one step"));
        }
        Ok(())
    }

    pub fn lr(&self, t: usize) -> f64 {
        let total = self.total_steps as f64;
        let warm = self.warmup_fraction * total;
        let t = t as f64;
        if t >= total {
            return 0.0;
        }
        if t < warm {
            return self.peak_lr * t / warm;
        }
        let progress = (t - warm) / (total - warm);
        self.peak_lr * 0.5 * (1.0 + (PI * progress).cos())
    }
}

/// Adam with momentum on a warmup and cosine schedule.
#[derive(Clone, Debug)]
pub struct AdamBaseline {
    pub state: AdamState,
    pub schedule: LrSchedule,
    t: usize,
}

impl AdamBaseline {
    pub fn new(schedule: LrSchedule) -> Result<Self> {
        schedule.validate()?;
        Ok(Self {
            state: AdamState::default(),
            schedule,
            t: 0,
        })
    }
}

impl Optimizer for AdamBaseline {
    fn kind(&self) -> OptimizerKind {
        OptimizerKind::Adam
    }

    fn step(&mut self, problem: &mut dyn Problem) -> Result<StepReport> {
        let loss = problem.loss_and_grad()?;
        let dir = adam_direction(&mut self.state, problem.params(), true)?;
        let lr = self.schedule.lr(self.t);
        self.t += 1;
        for (p, d) in problem.params_mut().iter_mut().zip(&dir.d) {
            for (w, di) in p.values_mut().iter_mut().zip(d) {
                *w += lr * di;
            }
        }
        Ok(StepReport {
            loss,
            lr,
            non_finite: !loss.is_finite(),
            ..StepReport::default()
        })
    }
}
