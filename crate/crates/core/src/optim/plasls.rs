use std::fmt;
use std::str::FromStr;

use super::adam::{adam_direction, AdamState};
use super::partition::Partition;
use super::{negative_gradient, search_and_move, Optimizer, OptimizerKind, Problem, StepReport};
use crate::autodiff::Parameter;
use crate::error::{Error, Result};
use crate::line_search::{reset_step, LineSearchConfig, LineSearchOutcome, INITIAL_STEP};

/// Default step size below which a unit is merged with another.
pub const MERGE_THRESHOLD: f64 = 1e-12;

/// Direction and decrease term used by the per-unit search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UnitSearch {
    /// Adam direction without momentum, decrease `sum g^2 / (sqrt(v_hat) + eps)`
    /// over the unit.
    #[default]
    AdamScaled,
    /// Negative gradient, decrease `||g_unit||^2`. Adam state is not used.
    RawGradient,
}

impl fmt::Display for UnitSearch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnitSearch::AdamScaled => "adam_scaled",
            UnitSearch::RawGradient => "raw_gradient",
        })
    }
}

impl FromStr for UnitSearch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "adam_scaled" => Ok(UnitSearch::AdamScaled),
            "raw_gradient" => Ok(UnitSearch::RawGradient),
            other => Err(Error::Config(format!(
                "unknown unit search `{other}` (expected adam_scaled or raw_gradient)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeEvent {
    /// Names of the two fused units, smallest step first.
    pub merged: (String, String),
    /// Name of the resulting unit.
    pub into: String,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MergeOutcome {
    Unchanged,
    Merged(MergeEvent),
    /// The only remaining unit is below the threshold.
    LoneUnitBelowThreshold,
}

/// Fuses the unit with the smallest step with the unit with the next smallest
/// step when the former is at or below `threshold`. At most one fusion per
/// call. The fused unit takes the mean of both steps and the lower position;
/// `cursor` is shifted so it keeps pointing at the same upcoming unit.
pub fn merge_units(
    partition: &mut Partition,
    etas: &mut Vec<f64>,
    cursor: &mut usize,
    threshold: f64,
) -> Result<MergeOutcome> {
    if etas.len() != partition.len() || etas.is_empty() {
        return Err(Error::contract(format!(
            "{} step sizes for {} units",
            etas.len(),
            partition.len()
        )));
    }
    let argmin = |skip: Option<usize>| {
        (0..etas.len())
            .filter(|&i| Some(i) != skip)
            .min_by(|&a, &b| etas[a].total_cmp(&etas[b]))
    };
    let s = argmin(None).expect("non-empty");
    if etas[s] > threshold {
        return Ok(MergeOutcome::Unchanged);
    }
    let Some(s2) = argmin(Some(s)) else {
        return Ok(MergeOutcome::LoneUnitBelowThreshold);
    };
    let names = (
        partition.units()[s].name.clone(),
        partition.units()[s2].name.clone(),
    );
    let eta = (etas[s] + etas[s2]) / 2.0;
    let (lo, hi) = (s.min(s2), s.max(s2));
    partition.fuse(lo, hi)?;
    etas[lo] = eta;
    etas.remove(hi);
    if *cursor > hi {
        *cursor -= 1;
    }
    if *cursor >= etas.len() {
        *cursor = 0;
    }
    Ok(MergeOutcome::Merged(MergeEvent {
        merged: names,
        into: partition.units()[lo].name.clone(),
        eta,
    }))
}

type PerParam = Vec<Vec<f64>>;

/// Per-layer Adam line search: one unit is searched per step, in round-robin
/// order, and every unit moves by its own stored step.
#[derive(Clone, Debug)]
pub struct Plasls {
    pub cfg: LineSearchConfig,
    pub state: AdamState,
    pub merge_threshold: f64,
    pub unit_search: UnitSearch,
    partition: Partition,
    unit_etas: Vec<f64>,
    cursor: usize,
    initialized: bool,
}

impl Plasls {
    pub fn new(
        partition: Partition,
        cfg: LineSearchConfig,
        unit_search: UnitSearch,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = partition.len();
        Ok(Self {
            cfg,
            state: AdamState::default(),
            merge_threshold: MERGE_THRESHOLD,
            unit_search,
            partition,
            unit_etas: vec![INITIAL_STEP; n],
            cursor: 0,
            initialized: false,
        })
    }

    /// Starts from the given unit steps and skips the global first step.
    pub fn with_unit_etas(mut self, etas: Vec<f64>) -> Result<Self> {
        if etas.len() != self.partition.len() {
            return Err(Error::contract(format!(
                "{} step sizes for {} units",
                etas.len(),
                self.partition.len()
            )));
        }
        if let Some(bad) = etas.iter().find(|&&e| !(e > 0.0)) {
            return Err(Error::contract(format!(
                "unit step sizes must be positive, got {bad}"
            )));
        }
        self.unit_etas = etas;
        self.initialized = true;
        Ok(self)
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn unit_etas(&self) -> &[f64] {
        &self.unit_etas
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Search direction for every parameter, plus `v_hat` when the decrease
    /// term is preconditioned.
    fn direction(&mut self, params: &[Parameter]) -> Result<(PerParam, Option<PerParam>)> {
        match self.unit_search {
            UnitSearch::AdamScaled => {
                let dir = adam_direction(&mut self.state, params, false)?;
                Ok((dir.d, Some(dir.v_hat)))
            }
            UnitSearch::RawGradient => Ok((negative_gradient(params)?, None)),
        }
    }

    fn decrease(
        &self,
        params: &[Parameter],
        v_hat: Option<&[Vec<f64>]>,
        idx: &[usize],
    ) -> Result<f64> {
        let mut acc = 0.0;
        for &p in idx {
            let g = params[p].require_grad()?;
            match v_hat {
                Some(v) => {
                    for (gi, vi) in g.iter().zip(&v[p]) {
                        acc += gi * gi / (vi.sqrt() + self.state.eps);
                    }
                }
                None => {
                    for gi in g {
                        acc += gi * gi;
                    }
                }
            }
        }
        Ok(acc)
    }

    fn report(&self, loss: f64, out: &LineSearchOutcome, unit: Option<String>) -> StepReport {
        StepReport {
            loss,
            lr: out.eta,
            backtracks: out.backtracks,
            exhausted: !out.accepted,
            non_finite: out.non_finite || !loss.is_finite(),
            searched_unit: unit,
            unit_etas: self.snapshot_etas(),
            merge: None,
            merge_warning: false,
        }
    }

    fn snapshot_etas(&self) -> Vec<(String, f64)> {
        self.partition
            .units()
            .iter()
            .zip(&self.unit_etas)
            .map(|(u, &e)| (u.name.clone(), e))
            .collect()
    }
}

impl Optimizer for Plasls {
    fn kind(&self) -> OptimizerKind {
        OptimizerKind::Plasls
    }

    fn step(&mut self, problem: &mut dyn Problem) -> Result<StepReport> {
        if problem.params().len() != self.partition.n_params() {
            return Err(Error::contract(format!(
                "partition covers {} parameters, problem has {}",
                self.partition.n_params(),
                problem.params().len()
            )));
        }
        let f0 = problem.loss_and_grad()?;
        let (dir, v_hat) = self.direction(problem.params())?;

        let mut report = if !self.initialized {
            let all: Vec<usize> = (0..dir.len()).collect();
            let decrease = self.decrease(problem.params(), v_hat.as_deref(), &all)?;
            let out = search_and_move(problem, &all, &dir, f0, INITIAL_STEP, decrease, &self.cfg)?;
            self.unit_etas.iter_mut().for_each(|e| *e = out.eta);
            self.initialized = true;
            self.report(f0, &out, None)
        } else {
            let l = self.cursor;
            self.cursor = (self.cursor + 1) % self.partition.len();
            let idx = self.partition.units()[l].params.clone();
            let decrease = self.decrease(problem.params(), v_hat.as_deref(), &idx)?;
            let eta_init = reset_step(self.unit_etas[l], &self.cfg)?;
            let out = search_and_move(problem, &idx, &dir, f0, eta_init, decrease, &self.cfg)?;
            self.unit_etas[l] = out.eta;
            // The searched unit already sits at its accepted point; every
            // other unit moves by its stored step.
            let params = problem.params_mut();
            for (u, unit) in self.partition.units().iter().enumerate() {
                if u == l {
                    continue;
                }
                let eta = self.unit_etas[u];
                for &p in &unit.params {
                    for (w, d) in params[p].values_mut().iter_mut().zip(&dir[p]) {
                        *w += eta * d;
                    }
                }
            }
            let name = self.partition.units()[l].name.clone();
            self.report(f0, &out, Some(name))
        };

        match merge_units(
            &mut self.partition,
            &mut self.unit_etas,
            &mut self.cursor,
            self.merge_threshold,
        )? {
            MergeOutcome::Unchanged => {}
            MergeOutcome::Merged(ev) => {
                report.merge = Some(ev);
                report.unit_etas = self.snapshot_etas();
            }
            MergeOutcome::LoneUnitBelowThreshold => report.merge_warning = true,
        }
        Ok(report)
    }
}
