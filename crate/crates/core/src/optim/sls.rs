use super::adam::{adam_direction, AdamState};
use super::{negative_gradient, search_and_move, Optimizer, OptimizerKind, Problem, StepReport};
use crate::error::Result;
use crate::line_search::{
    reset_step, sufficient_decrease_adam, sufficient_decrease_sgd, LineSearchConfig, INITIAL_STEP,
};

/// Trial step for the next search: the initial step before any search, the
/// reset of the last accepted step afterwards.
fn trial_step(last: Option<f64>, cfg: &LineSearchConfig) -> Result<f64> {
    match last {
        None => Ok(INITIAL_STEP),
        Some(eta) => reset_step(eta, cfg),
    }
}

/// Armijo line search along the negative mini-batch gradient.
#[derive(Clone, Debug)]
pub struct SgdSls {
    pub cfg: LineSearchConfig,
    last_eta: Option<f64>,
}

impl SgdSls {
    pub fn new(cfg: LineSearchConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            last_eta: None,
        })
    }

    /// Step the next search will start from.
    pub fn next_trial_step(&self) -> Result<f64> {
        trial_step(self.last_eta, &self.cfg)
    }
}

impl Optimizer for SgdSls {
    fn kind(&self) -> OptimizerKind {
        OptimizerKind::SgdSls
    }

    fn step(&mut self, problem: &mut dyn Problem) -> Result<StepReport> {
        let f0 = problem.loss_and_grad()?;
        let dir = negative_gradient(problem.params())?;
        let decrease = sufficient_decrease_sgd(problem.params())?;
        let eta_init = self.next_trial_step()?;
        let all: Vec<usize> = (0..dir.len()).collect();
        let out = search_and_move(problem, &all, &dir, f0, eta_init, decrease, &self.cfg)?;
        self.last_eta = Some(out.eta);
        Ok(StepReport {
            loss: f0,
            lr: out.eta,
            backtracks: out.backtracks,
            exhausted: !out.accepted,
            non_finite: out.non_finite || !f0.is_finite(),
            unit_etas: vec![("all".to_string(), out.eta)],
            ..StepReport::default()
        })
    }
}

/// Armijo line search along the Adam direction with no momentum, using the
/// preconditioned gradient norm as the decrease term.
#[derive(Clone, Debug)]
pub struct AdamSls {
    pub cfg: LineSearchConfig,
    pub state: AdamState,
    last_eta: Option<f64>,
}

impl AdamSls {
    pub fn new(cfg: LineSearchConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: AdamState::default(),
            last_eta: None,
        })
    }

    pub fn next_trial_step(&self) -> Result<f64> {
        trial_step(self.last_eta, &self.cfg)
    }
}

impl Optimizer for AdamSls {
    fn kind(&self) -> OptimizerKind {
        OptimizerKind::AdamSls
    }

    fn step(&mut self, problem: &mut dyn Problem) -> Result<StepReport> {
        let f0 = problem.loss_and_grad()?;
        let dir = adam_direction(&mut self.state, problem.params(), false)?;
        let decrease = sufficient_decrease_adam(problem.params(), &dir.v_hat, self.state.eps)?;
        let eta_init = self.next_trial_step()?;
        let all: Vec<usize> = (0..dir.d.len()).collect();
        let out = search_and_move(problem, &all, &dir.d, f0, eta_init, decrease, &self.cfg)?;
        self.last_eta = Some(out.eta);
        Ok(StepReport {
            loss: f0,
            lr: out.eta,
            backtracks: out.backtracks,
            exhausted: !out.accepted,
            non_finite: out.non_finite || !f0.is_finite(),
            unit_etas: vec![("all".to_string(), out.eta)],
            ..StepReport::default()
        })
    }
}
