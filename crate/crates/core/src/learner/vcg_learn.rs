//! Offline VCG learning: a pessimistic welfare policy plus estimated
//! Clarke-pivot prices.
//!
//! For every agent `i` the price estimate is
//! `G1_i - G2_i`, where `G1_i` is the `zeta1`-side soft-policy-iteration
//! value on the others' reward `R_{-i}` and `G2_i` is the `zeta2`-side
//! evaluation of the learned welfare policy on `R_{-i}`. Mixtures are
//! evaluated component by component and averaged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{OfflineDataset, RewardSelector};
use crate::error::Result;
use crate::mdp::{Policy, RewardProfile};
use crate::mechanism::{MechanismOutcome, Provenance};

use super::bellman::EmpiricalModel;
use super::evaluate::{evaluate_mixture, Evaluation};
use super::spi::{soft_policy_iteration_with_model, SpiBranch};
use super::{Branches, Mode, SpiConfig, VcgLearnConfig};

/// Intermediate values of one learning run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnDiagnostics {
    pub zeta1: Mode,
    pub zeta2: Mode,
    /// Pessimistic estimate of the learned policy's welfare.
    pub welfare_estimate: f64,
    /// Per-iterate pessimistic start values of the welfare problem.
    pub welfare_trace: Vec<f64>,
    /// Estimated best welfare of the others, per agent.
    pub g1: Vec<f64>,
    /// Estimated welfare of the others under the learned policy, per agent.
    pub g2: Vec<f64>,
    pub evaluations: usize,
    pub nonconverged_evaluations: usize,
    pub max_gradient_norm: f64,
}

impl LearnDiagnostics {
    pub fn all_converged(&self) -> bool {
        self.nonconverged_evaluations == 0
    }
}

/// A learned mechanism with the soft-policy-iteration outputs behind it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LearnedMechanism {
    pub outcome: MechanismOutcome,
    pub diagnostics: LearnDiagnostics,
    /// Pessimistic branch on the total reward.
    pub welfare: SpiBranch,
    /// `zeta1` branch on `R_{-i}` for each agent.
    pub others: Vec<SpiBranch>,
}

fn tally<'a>(evals: impl IntoIterator<Item = &'a Evaluation>) -> (usize, usize, f64) {
    evals.into_iter().fold((0, 0, 0.0_f64), |(n, bad, g), e| {
        (n + 1, bad + usize::from(!e.converged), g.max(e.gradient_norm))
    })
}

/// Learn a mechanism from `dataset`, whose rewards are the agents' reports.
pub fn offline_vcg_learn(
    dataset: &OfflineDataset,
    reported: &RewardProfile,
    initial_state: usize,
    cfg: &VcgLearnConfig,
) -> Result<LearnedMechanism> {
    cfg.validate()?;
    let n = reported.num_agents();
    let selectors: Vec<RewardSelector> = std::iter::once(RewardSelector::Total)
        .chain((0..n).map(RewardSelector::Exclude))
        .collect();
    let models = selectors
        .par_iter()
        .map(|sel| EmpiricalModel::new(dataset, reported, sel, initial_state))
        .collect::<Result<Vec<_>>>()?;

    let branch_cfg = |mode: Mode| SpiConfig {
        branches: Branches::Only(mode),
        ..cfg.spi
    };
    let branches = models
        .par_iter()
        .enumerate()
        .map(|(j, model)| {
            let mode = if j == 0 { Mode::Pes } else { cfg.zeta1 };
            let out = soft_policy_iteration_with_model(model, &branch_cfg(mode))?;
            Ok(out.branch(mode)?.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut branches = branches.into_iter();
    let welfare = branches.next().expect("welfare branch");
    let others: Vec<SpiBranch> = branches.collect();

    let g2_cfg = *cfg.spi.eval(cfg.zeta2);
    let g2_runs = models[1..]
        .par_iter()
        .map(|model| evaluate_mixture(model, &welfare.mixture, &g2_cfg))
        .collect::<Result<Vec<_>>>()?;

    let g1: Vec<f64> = others.iter().map(|b| b.value).collect();
    let g2: Vec<f64> = g2_runs.iter().map(|(v, _)| *v).collect();
    let prices = g1.iter().zip(&g2).map(|(a, b)| a - b).collect();

    let (evaluations, nonconverged_evaluations, max_gradient_norm) = tally(
        welfare
            .evaluations
            .iter()
            .chain(others.iter().flat_map(|b| b.evaluations.iter()))
            .chain(g2_runs.iter().flat_map(|(_, e)| e.iter())),
    );
    let diagnostics = LearnDiagnostics {
        zeta1: cfg.zeta1,
        zeta2: cfg.zeta2,
        welfare_estimate: welfare.value,
        welfare_trace: welfare.value_trace(),
        g1,
        g2,
        evaluations,
        nonconverged_evaluations,
        max_gradient_norm,
    };
    Ok(LearnedMechanism {
        outcome: MechanismOutcome::new(Policy::Mixture(welfare.mixture.clone()), prices, Provenance::Learned),
        diagnostics,
        welfare,
        others,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_dataset, DataDistribution, Sample};
    use crate::instance::{m2_externality, m2_single_agent};
    use crate::learner::soft_policy_iteration;
    use crate::mdp::{RewardRole, RewardTable, Shape};
    use crate::mechanism::subopt_welfare;

    fn cfg(t: usize, eta: f64, lambda: f64) -> VcgLearnConfig {
        VcgLearnConfig {
            zeta1: Mode::Pes,
            zeta2: Mode::Opt,
            spi: SpiConfig::new(t, eta, lambda),
        }
    }

    #[test]
    fn zero_profile_single_cell_prices() {
        let shape = Shape::new(1, 1, 1).unwrap();
        let samples = vec![
            Sample {
                s: 0,
                a: 0,
                rewards: vec![0.0],
                next: 0
            };
            40
        ];
        let d = OfflineDataset::new(shape, 1, 1.0, 40, 0, serde_json::Value::Null, samples).unwrap();
        let z = RewardTable::zeros(shape);
        let p = RewardProfile::new(1.0, z.clone(), vec![z], RewardRole::Reported).unwrap();
        let learned = offline_vcg_learn(&d, &p, 0, &cfg(4, 0.1, 10.0)).unwrap();
        let price = learned.outcome.prices[0];
        assert!((price + 0.1).abs() < 1e-12);
        assert!(price.abs() <= 1.0 / 10.0 + 0.02);
    }

    #[test]
    fn branches_match_full_runs() {
        let inst = m2_externality();
        let d = sample_dataset(&inst.mdp, &inst.profile, &DataDistribution::uniform(inst.shape()), 500, 4).unwrap();
        let c = cfg(8, 0.2, 5.0);
        let learned = offline_vcg_learn(&d, &inst.profile, 0, &c).unwrap();
        let full = soft_policy_iteration(&d, &inst.profile, &RewardSelector::Total, 0, &c.spi).unwrap();
        assert_eq!(&learned.welfare, full.branch(Mode::Pes).unwrap());
        let full1 = soft_policy_iteration(&d, &inst.profile, &RewardSelector::Exclude(1), 0, &c.spi).unwrap();
        assert_eq!(&learned.others[1], full1.branch(Mode::Pes).unwrap());
        assert_eq!(learned.outcome.prices.len(), 2);
        assert_eq!(learned.outcome.provenance, Provenance::Learned);
        assert_eq!(learned.diagnostics.evaluations, 8 * 3 + 8 * 2);
    }

    #[test]
    fn single_agent_m2_is_near_the_benchmark() {
        let inst = m2_single_agent();
        let d = sample_dataset(&inst.mdp, &inst.profile, &DataDistribution::uniform(inst.shape()), 20_000, 1).unwrap();
        let learned = offline_vcg_learn(&d, &inst.profile, 0, &cfg(256, 0.1, 50.0)).unwrap();
        assert!(learned.outcome.prices[0].abs() <= 0.15, "{:?}", learned.outcome.prices);
        let gap = subopt_welfare(&inst.mdp, &inst.profile, &learned.outcome.policy).unwrap();
        assert!(gap <= 0.15, "{gap}");
        assert!(learned.diagnostics.all_converged());
    }

    #[test]
    #[ignore = "welfare ties: the exact price of agent 1 follows the all-a0 tie-break while the learned policy stays near uniform"]
    fn externality_m2_prices_match_the_benchmark() {
        let inst = m2_externality();
        let d = sample_dataset(&inst.mdp, &inst.profile, &DataDistribution::uniform(inst.shape()), 20_000, 1).unwrap();
        let learned = offline_vcg_learn(&d, &inst.profile, 0, &cfg(256, 0.1, 50.0)).unwrap();
        let p = &learned.outcome.prices;
        assert!(p[0].abs() <= 0.25, "{p:?}");
        assert!((p[1] - 1.0).abs() <= 0.25, "{p:?}");
    }
}
