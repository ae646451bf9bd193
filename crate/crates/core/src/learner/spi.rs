//! Soft policy iteration: evaluation plus exponential-weights updates.

use serde::Serialize;

use crate::data::{OfflineDataset, RewardSelector};
use crate::error::{input_err, Result};
use crate::mdp::{MixturePolicy, QTable, RewardProfile, StagePolicy};

use super::bellman::EmpiricalModel;
use super::evaluate::{evaluate_with_model, Evaluation};
use super::{Mode, SpiConfig};

/// `pi'(a|s) ~ pi(a|s) exp(eta q(s,a))`, row by row.
pub fn mirror_descent_update(policy: &StagePolicy, q: &QTable, eta: f64) -> Result<StagePolicy> {
    let shape = policy.shape();
    shape.check_same(&q.shape(), "Q table")?;
    if !(eta.is_finite() && eta >= 0.0) {
        return input_err(format!("eta must be nonnegative, got {eta}"));
    }
    let mut probs = Vec::with_capacity(shape.len());
    for h in 0..shape.horizon {
        for s in 0..shape.states {
            let row = policy.row(h, s);
            let start = shape.index(h, s, 0);
            let qs = &q.values()[start..start + shape.actions];
            let top = qs
                .iter()
                .zip(row)
                .filter(|(_, p)| **p > 0.0)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = qs
                .iter()
                .zip(row)
                .map(|(v, p)| if *p > 0.0 { p * (eta * (v - top)).exp() } else { 0.0 })
                .collect();
            let total: f64 = weights.iter().sum();
            probs.extend(weights.iter().map(|w| w / total));
        }
    }
    Ok(StagePolicy::from_normalized(shape, probs))
}

/// One side of soft policy iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpiBranch {
    pub mode: Mode,
    /// Uniform mixture of the `T` iterates, the uniform start included.
    pub mixture: MixturePolicy,
    /// Mean of the per-iterate tables.
    pub q: QTable,
    /// Mean of the per-iterate start values: the mixture's estimated value.
    pub value: f64,
    /// Evaluation of iterate `t`, in order.
    pub evaluations: Vec<Evaluation>,
}

impl SpiBranch {
    /// Start value of every iterate.
    pub fn value_trace(&self) -> Vec<f64> {
        self.evaluations.iter().map(|e| e.value).collect()
    }

    pub fn all_converged(&self) -> bool {
        self.evaluations.iter().all(|e| e.converged)
    }
}

/// Both sides of soft policy iteration; a side is `None` when not requested.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpiOutput {
    pub optimistic: Option<SpiBranch>,
    pub pessimistic: Option<SpiBranch>,
}

impl SpiOutput {
    pub fn branch(&self, mode: Mode) -> Result<&SpiBranch> {
        let b = match mode {
            Mode::Opt => self.optimistic.as_ref(),
            Mode::Pes => self.pessimistic.as_ref(),
        };
        match b {
            Some(b) => Ok(b),
            None => input_err(format!("the {} branch was not run", mode.label())),
        }
    }
}

/// Run soft policy iteration on the learning problem `(dataset, reported, selector)`.
pub fn soft_policy_iteration(
    dataset: &OfflineDataset,
    reported: &RewardProfile,
    selector: &RewardSelector,
    initial_state: usize,
    cfg: &SpiConfig,
) -> Result<SpiOutput> {
    let model = EmpiricalModel::new(dataset, reported, selector, initial_state)?;
    soft_policy_iteration_with_model(&model, cfg)
}

/// [`soft_policy_iteration`] on precomputed sufficient statistics.
pub fn soft_policy_iteration_with_model(model: &EmpiricalModel, cfg: &SpiConfig) -> Result<SpiOutput> {
    cfg.validate()?;
    let run = |mode: Mode| -> Result<Option<SpiBranch>> {
        if !cfg.branches.includes(mode) {
            return Ok(None);
        }
        run_branch(model, cfg, mode).map(Some)
    };
    Ok(SpiOutput {
        optimistic: run(Mode::Opt)?,
        pessimistic: run(Mode::Pes)?,
    })
}

fn run_branch(model: &EmpiricalModel, cfg: &SpiConfig, mode: Mode) -> Result<SpiBranch> {
    let shape = model.shape();
    let eval_cfg = cfg.eval(mode);
    let mut policy = StagePolicy::uniform(shape);
    let mut iterates = Vec::with_capacity(cfg.iterations);
    let mut evaluations = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        let ev = evaluate_with_model(model, &policy, eval_cfg)?;
        let next = if t + 1 < cfg.iterations {
            Some(mirror_descent_update(&policy, &ev.q, cfg.eta)?)
        } else {
            None
        };
        iterates.push(policy);
        evaluations.push(ev);
        match next {
            Some(p) => policy = p,
            None => break,
        }
    }
    let t = evaluations.len() as f64;
    let mut mean = vec![0.0; shape.len()];
    for ev in &evaluations {
        for (m, v) in mean.iter_mut().zip(ev.q.values()) {
            *m += v / t;
        }
    }
    let value = evaluations.iter().map(|e| e.value).sum::<f64>() / t;
    Ok(SpiBranch {
        mode,
        mixture: MixturePolicy::new(iterates)?,
        q: QTable::from_raw(shape, model.r_max(), mean),
        value,
        evaluations,
    })
}
