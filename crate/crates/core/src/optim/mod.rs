//! Training algorithms: the scheduled Adam baseline, SGD and Adam with an
//! Armijo line search, and the per-layer line search over parameter units.

mod adam;
mod partition;
mod plasls;
mod sls;

pub use adam::{adam_direction, AdamBaseline, AdamDirection, AdamState, LrSchedule};
pub use partition::{partition_model, Partition, Unit};
pub use plasls::{merge_units, MergeEvent, MergeOutcome, Plasls, UnitSearch, MERGE_THRESHOLD};
pub use sls::{AdamSls, SgdSls};

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Parameter;
use crate::error::{Error, Result};

/// A differentiable objective over a fixed set of parameters.
///
/// `loss` is a forward pass only; `loss_and_grad` also stores the gradient
/// of every parameter.
pub trait Problem {
    fn params(&self) -> &[Parameter];
    fn params_mut(&mut self) -> &mut [Parameter];
    fn loss(&mut self) -> Result<f64>;
    fn loss_and_grad(&mut self) -> Result<f64>;
}

impl<P: Problem + ?Sized> Problem for &mut P {
    fn params(&self) -> &[Parameter] {
        (**self).params()
    }

    fn params_mut(&mut self) -> &mut [Parameter] {
        (**self).params_mut()
    }

    fn loss(&mut self) -> Result<f64> {
        (**self).loss()
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        (**self).loss_and_grad()
    }
}

/// Forward and backward pass counts, as seen by a [`Counting`] wrapper.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PassCounts {
    /// Calls to `loss`.
    pub forward: usize,
    /// Calls to `loss_and_grad`.
    pub backward: usize,
}

/// Wraps a problem and counts the passes made through it.
pub struct Counting<P> {
    pub inner: P,
    pub counts: PassCounts,
}

impl<P> Counting<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            counts: PassCounts::default(),
        }
    }
}

impl<P: Problem> Problem for Counting<P> {
    fn params(&self) -> &[Parameter] {
        self.inner.params()
    }

    fn params_mut(&mut self) -> &mut [Parameter] {
        self.inner.params_mut()
    }

    fn loss(&mut self) -> Result<f64> {
        self.counts.forward += 1;
        self.inner.loss()
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        self.counts.backward += 1;
        self.inner.loss_and_grad()
    }
}

/// What happened during one optimizer step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    /// Mini-batch loss at the weights the step started from.
    pub loss: f64,
    /// Step size used: the scheduled rate, the accepted global step, or the
    /// accepted step of the searched unit.
    pub lr: f64,
    pub backtracks: usize,
    /// The line search ran out of backtracks and took its last candidate.
    pub exhausted: bool,
    /// The loss at the taken candidate was NaN or infinite.
    pub non_finite: bool,
    /// Unit searched this step; `None` for global searches and the baseline.
    pub searched_unit: Option<String>,
    /// `(unit name, step size)` after the step, in unit order.
    pub unit_etas: Vec<(String, f64)>,
    pub merge: Option<MergeEvent>,
    /// A lone unit fell below the merge threshold and could not be merged.
    pub merge_warning: bool,
}

/// One training algorithm bound to one run.
pub trait Optimizer: Send {
    fn kind(&self) -> OptimizerKind;
    fn step(&mut self, problem: &mut dyn Problem) -> Result<StepReport>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Adam,
    SgdSls,
    AdamSls,
    Plasls,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Adam,
        OptimizerKind::SgdSls,
        OptimizerKind::AdamSls,
        OptimizerKind::Plasls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SgdSls => "sgdsls",
            OptimizerKind::AdamSls => "adamsls",
            OptimizerKind::Plasls => "plasls",
        }
    }

    pub fn uses_line_search(self) -> bool {
        self != OptimizerKind::Adam
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown optimizer `{s}` (expected adam, sgdsls, adamsls or plasls)"
                ))
            })
    }
}

/// Copies of the current values of the listed parameters.
fn snapshot(params: &[Parameter], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&p| params[p].values().to_vec()).collect()
}

/// Sets `w = saved + eta * dir` on the listed parameters.
fn place(params: &mut [Parameter], idx: &[usize], saved: &[Vec<f64>], dir: &[Vec<f64>], eta: f64) {
    for (&p, base) in idx.iter().zip(saved) {
        let d = &dir[p];
        for ((w, &w0), &di) in params[p].values_mut().iter_mut().zip(base).zip(d) {
            *w = w0 + eta * di;
        }
    }
}

fn restore(params: &mut [Parameter], idx: &[usize], saved: &[Vec<f64>]) {
    for (&p, base) in idx.iter().zip(saved) {
        params[p].values_mut().copy_from_slice(base);
    }
}

/// Backtracks along `dir` moving only the parameters in `idx`, then leaves
/// them at `saved + eta * dir` for the taken step. Every rejected candidate is
/// undone from the saved copy, so the weights it saw are restored bit-exactly.
fn search_and_move(
    problem: &mut dyn Problem,
    idx: &[usize],
    dir: &[Vec<f64>],
    f_old: f64,
    eta_init: f64,
    decrease: f64,
    cfg: &crate::line_search::LineSearchConfig,
) -> Result<crate::line_search::LineSearchOutcome> {
    let saved = snapshot(problem.params(), idx);
    let outcome = crate::line_search::backtrack(
        |eta| {
            place(problem.params_mut(), idx, &saved, dir, eta);
            let f = problem.loss();
            restore(problem.params_mut(), idx, &saved);
            f
        },
        f_old,
        eta_init,
        decrease,
        cfg,
    )?;
    place(problem.params_mut(), idx, &saved, dir, outcome.eta);
    Ok(outcome)
}

fn negative_gradient(params: &[Parameter]) -> Result<Vec<Vec<f64>>> {
    params
        .iter()
        .map(|p| Ok(p.require_grad()?.iter().map(|g| -g).collect()))
        .collect()
}
