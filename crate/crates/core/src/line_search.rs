//! Armijo backtracking along a fixed direction and the step-size reset rule.
//!
//! A candidate step `eta` is accepted when
//!
//! ```text
//! f(w + eta * d) <= f(w) - c * eta * decrease
//! ```
//!
//! where `decrease` is `||g||^2` for the negative-gradient direction and
//! `sum_i g_i^2 / (sqrt(v_hat_i) + eps)` for the Adam direction with no
//! momentum. Both equal `-<g, d>`, the directional derivative along `d`.

use crate::autodiff::{grad_sq_norm, Parameter};
use crate::error::{Error, Result};

/// Trial step used when no previous accepted step exists.
pub const INITIAL_STEP: f64 = 0.1;

/// Constants of the backtracking search and the reset rule.
///
/// The shrink factor, backtrack cap and step ceiling are choices of this
/// crate, not fixed by the method; `reset_m` defaults to the training-set
/// size in the harness so the trial step doubles once per epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct LineSearchConfig {
    /// Sufficient-decrease constant, in (0, 1).
    pub c: f64,
    /// Backtrack shrink factor, in (0, 1).
    pub delta: f64,
    /// Ceiling applied by [`reset_step`].
    pub eta_max: f64,
    pub max_backtracks: usize,
    /// Mini-batch size `b` of the reset exponent `b / m`.
    pub batch_size: usize,
    /// Reset constant `m`; must be at least `batch_size`.
    pub reset_m: usize,
}

impl Default for LineSearchConfig {
    /// Full-batch setting (`b == m`): the trial step doubles every step.
    fn default() -> Self {
        Self {
            c: 0.1,
            delta: 0.9,
            eta_max: 10.0,
            max_backtracks: 100,
            batch_size: 1,
            reset_m: 1,
        }
    }
}

impl LineSearchConfig {
    pub fn with_reset(batch_size: usize, reset_m: usize) -> Self {
        Self {
            batch_size,
            reset_m,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::contract(format!(
                "c must lie in (0,1), got {}",
                self.c
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::contract(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if !(self.eta_max > 0.0 && self.eta_max.is_finite()) {
            return Err(Error::contract(format!(
                "eta_max must be positive, got {}",
                self.eta_max
            )));
        }
        if self.max_backtracks == 0 {
            return Err(Error::contract("max_backtracks must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be at least 1"));
        }
        if self.reset_m < self.batch_size {
            return Err(Error::contract(format!(
                "reset constant m={} is smaller than the batch size {}",
                self.reset_m, self.batch_size
            )));
        }
        Ok(())
    }

    /// Growth factor `2^(b/m)` applied by [`reset_step`].
    pub fn growth(&self) -> f64 {
        2f64.powf(self.batch_size as f64 / self.reset_m as f64)
    }
}

/// Result of one backtracking search.
#[derive(Clone, Debug, PartialEq)]
pub struct LineSearchOutcome {
    /// Accepted step, or the last one tried when the search ran out.
    pub eta: f64,
    pub backtracks: usize,
    /// False iff `max_backtracks` shrinks were exhausted.
    pub accepted: bool,
    /// Loss at `eta`.
    pub f_new: f64,
    /// Set when the search ran out and the last candidate loss was NaN/Inf.
    pub non_finite: bool,
}

/// Next trial step: `min(eta_prev * 2^(b/m), eta_max)`.
pub fn reset_step(eta_prev: f64, cfg: &LineSearchConfig) -> Result<f64> {
    if !(eta_prev > 0.0) {
        return Err(Error::contract(format!(
            "previous step size must be positive, got {eta_prev}"
        )));
    }
    Ok((eta_prev * cfg.growth()).min(cfg.eta_max))
}

/// Decrease term for the negative-gradient direction: `||g||^2`.
pub fn sufficient_decrease_sgd(params: &[Parameter]) -> Result<f64> {
    grad_sq_norm(params)
}

/// Decrease term for the Adam direction without momentum:
/// `sum_i g_i^2 / (sqrt(v_hat_i) + eps)`.
pub fn sufficient_decrease_adam(params: &[Parameter], v_hat: &[Vec<f64>], eps: f64) -> Result<f64> {
    if params.len() != v_hat.len() {
        return Err(Error::contract(format!(
            "{} parameters but {} second-moment buffers",
            params.len(),
            v_hat.len()
        )));
    }
    let mut acc = 0.0;
    for (p, v) in params.iter().zip(v_hat) {
        let g = p.require_grad()?;
        if g.len() != v.len() {
            return Err(Error::contract(format!(
                "gradient of `{}` has {} entries, second moment has {}",
                p.name,
                g.len(),
                v.len()
            )));
        }
        for (gi, vi) in g.iter().zip(v) {
            acc += gi * gi / (vi.sqrt() + eps);
        }
    }
    Ok(acc)
}

/// The Armijo inequality. NaN on either side counts as a failure.
pub fn armijo_holds(f_new: f64, f_old: f64, eta: f64, decrease: f64, c: f64) -> bool {
    f_new.is_finite() && f_new <= f_old - c * eta * decrease
}

/// Shrinks `eta_init` by `delta` until the Armijo inequality holds.
///
/// `loss_at(eta)` must evaluate the loss at `w + eta * d` without leaving any
/// trace on `w`. A zero `decrease` (stationary point) accepts `eta_init`
/// after a single evaluation.
pub fn backtrack<F>(
    mut loss_at: F,
    f_old: f64,
    eta_init: f64,
    decrease: f64,
    cfg: &LineSearchConfig,
) -> Result<LineSearchOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(eta_init > 0.0) {
        return Err(Error::contract(format!(
            "initial step must be positive, got {eta_init}"
        )));
    }
    if !(decrease >= 0.0) {
        return Err(Error::contract(format!(
            "decrease term must be non-negative, got {decrease}"
        )));
    }

    if decrease == 0.0 {
        let f_new = loss_at(eta_init)?;
        return Ok(LineSearchOutcome {
            eta: eta_init,
            backtracks: 0,
            accepted: true,
            f_new,
            non_finite: !f_new.is_finite(),
        });
    }

    let mut backtracks = 0;
    loop {
        let eta = eta_init * cfg.delta.powi(backtracks as i32);
        let f_new = loss_at(eta)?;
        if armijo_holds(f_new, f_old, eta, decrease, cfg.c) {
            return Ok(LineSearchOutcome {
                eta,
                backtracks,
                accepted: true,
                f_new,
                non_finite: false,
            });
        }
        if backtracks == cfg.max_backtracks {
            return Ok(LineSearchOutcome {
                eta,
                backtracks,
                accepted: false,
                f_new,
                non_finite: !f_new.is_finite(),
            });
        }
        backtracks += 1;
    }
}
