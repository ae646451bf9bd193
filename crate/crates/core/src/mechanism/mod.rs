//! Dynamic VCG mechanisms: Clarke-pivot prices, utilities and
//! suboptimality against the exact truthful benchmark.
//!
//! A mechanism maps reported rewards to a policy and one price per agent.
//! Agent `i` pays the welfare the others lose because `i` is present:
//!
//! ```text
//! p_i = V*(s0; R_{-i}) - V^pi(s0; R_{-i})
//! ```
//!
//! Both value terms use the reported rewards. Utilities always use actual
//! rewards. Ties in the welfare-maximizing policy go to the lowest action
//! index, which is what makes the benchmark prices well defined.

mod misreport;

pub use misreport::{check_desiderata, AgentDesiderata, DesiderataReport, MisreportFamily};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::mdp::{exact_optimal, Policy, RewardProfile, RewardTable, TabularMdp};

/// Where a mechanism outcome came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Exact,
    Learned,
}

/// A chosen policy plus one price per agent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MechanismOutcome {
    pub policy: Policy,
    pub prices: Vec<f64>,
    pub provenance: Provenance,
}

impl MechanismOutcome {
    pub fn new(policy: Policy, prices: Vec<f64>, provenance: Provenance) -> Self {
        MechanismOutcome {
            policy,
            prices,
            provenance,
        }
    }

    fn check(&self, mdp: &TabularMdp, agents: usize) -> Result<()> {
        mdp.shape().check_same(&self.policy.shape(), "outcome policy")?;
        if self.prices.len() != agents {
            return dim_err(format!(
                "outcome has {} prices for {agents} agents",
                self.prices.len()
            ));
        }
        Ok(())
    }
}

/// Clarke-pivot price of agent `i` for `policy` under `reported` rewards.
pub fn vcg_price(mdp: &TabularMdp, reported: &RewardProfile, policy: &Policy, i: usize) -> Result<f64> {
    let others = reported.excluding(i)?;
    let best = exact_optimal(mdp, &others)?.start_value();
    Ok(best - policy.value(mdp, &others)?)
}

/// Welfare-maximizing policy on the reports, priced by the Clarke pivot rule.
pub fn exact_vcg(mdp: &TabularMdp, reported: &RewardProfile) -> Result<MechanismOutcome> {
    let policy = Policy::Stage(exact_optimal(mdp, &reported.total())?.policy);
    let prices = (0..reported.num_agents())
        .map(|i| vcg_price(mdp, reported, &policy, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(MechanismOutcome::new(policy, prices, Provenance::Exact))
}

/// `U_i = V^pi(s0; r_i) - p_i`.
pub fn agent_utility(mdp: &TabularMdp, actual_reward: &RewardTable, policy: &Policy, price: f64) -> Result<f64> {
    Ok(policy.value(mdp, actual_reward)? - price)
}

/// `U_0 = V^pi(s0; r_0) + sum_i p_i`.
pub fn seller_utility(mdp: &TabularMdp, seller_reward: &RewardTable, policy: &Policy, prices: &[f64]) -> Result<f64> {
    Ok(policy.value(mdp, seller_reward)? + prices.iter().sum::<f64>())
}

/// `V*(s0; R) - V^pi(s0; R)` on actual rewards.
pub fn subopt_welfare(mdp: &TabularMdp, actual: &RewardProfile, policy: &Policy) -> Result<f64> {
    let total = actual.total();
    Ok(exact_optimal(mdp, &total)?.start_value() - policy.value(mdp, &total)?)
}

/// Utilities of the exact mechanism run on truthful reports.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub outcome: MechanismOutcome,
    pub welfare: f64,
    pub agent_utilities: Vec<f64>,
    pub seller_utility: f64,
}

impl Benchmark {
    pub fn new(mdp: &TabularMdp, actual: &RewardProfile) -> Result<Self> {
        let outcome = exact_vcg(mdp, &actual.as_reported())?;
        let welfare = outcome.policy.value(mdp, &actual.total())?;
        let agent_utilities = actual
            .agents()
            .iter()
            .zip(&outcome.prices)
            .map(|(r, p)| agent_utility(mdp, r, &outcome.policy, *p))
            .collect::<Result<Vec<_>>>()?;
        let seller_utility = seller_utility(mdp, actual.seller(), &outcome.policy, &outcome.prices)?;
        Ok(Benchmark {
            outcome,
            welfare,
            agent_utilities,
            seller_utility,
        })
    }

    pub fn subopt_agent(&self, mdp: &TabularMdp, actual: &RewardProfile, i: usize, outcome: &MechanismOutcome) -> Result<f64> {
        outcome.check(mdp, actual.num_agents())?;
        let u = agent_utility(mdp, actual.agent(i)?, &outcome.policy, outcome.prices[i])?;
        Ok(self.agent_utilities[i] - u)
    }

    pub fn subopt_seller(&self, mdp: &TabularMdp, actual: &RewardProfile, outcome: &MechanismOutcome) -> Result<f64> {
        outcome.check(mdp, actual.num_agents())?;
        let u = seller_utility(mdp, actual.seller(), &outcome.policy, &outcome.prices)?;
        Ok(self.seller_utility - u)
    }
}

/// Agent `i`'s utility shortfall relative to the exact truthful benchmark.
pub fn subopt_agent(mdp: &TabularMdp, actual: &RewardProfile, i: usize, outcome: &MechanismOutcome) -> Result<f64> {
    actual.check_agent(i)?;
    Benchmark::new(mdp, actual)?.subopt_agent(mdp, actual, i, outcome)
}

/// The seller's utility shortfall relative to the exact truthful benchmark.
pub fn subopt_seller(mdp: &TabularMdp, actual: &RewardProfile, outcome: &MechanismOutcome) -> Result<f64> {
    Benchmark::new(mdp, actual)?.subopt_seller(mdp, actual, outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::instance::{m2_externality, m2_mdp, m2_single_agent};
    use crate::mdp::{RewardRole, StagePolicy};

    /// Brute-force optimum over all deterministic policies.
    fn brute_optimum(mdp: &TabularMdp, r: &RewardTable) -> f64 {
        let shape = mdp.shape();
        let rows = shape.horizon * shape.states;
        (0..shape.actions.pow(rows as u32))
            .map(|mut code| {
                let acts: Vec<usize> = (0..rows)
                    .map(|_| {
                        let a = code % shape.actions;
                        code /= shape.actions;
                        a
                    })
                    .collect();
                let p = StagePolicy::deterministic(shape, &acts).unwrap();
                Policy::Stage(p).value(mdp, r).unwrap()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn single_agent_prices() {
        let inst = m2_single_agent();
        let out = exact_vcg(&inst.mdp, &inst.profile).unwrap();
        assert_eq!(out.prices, vec![0.0]);
        assert_eq!(out.provenance, Provenance::Exact);
        assert_eq!(out.policy.value(&inst.mdp, &inst.profile.total()).unwrap(), 1.0);
        let u = agent_utility(&inst.mdp, inst.profile.agent(0).unwrap(), &out.policy, out.prices[0]).unwrap();
        assert_eq!(u, 1.0);
        // zero residual reward: price zero for any policy
        let uni = Policy::Stage(StagePolicy::uniform(inst.shape()));
        assert_eq!(vcg_price(&inst.mdp, &inst.profile, &uni, 0).unwrap(), 0.0);
        assert!(matches!(
            vcg_price(&inst.mdp, &inst.profile, &uni, 1),
            Err(Error::AgentIndex { .. })
        ));
    }

    #[test]
    fn externality_prices() {
        let inst = m2_externality();
        let mdp = &inst.mdp;
        let out = exact_vcg(mdp, &inst.profile).unwrap();
        assert_eq!(out.prices, vec![0.0, 1.0]);
        assert_eq!(out.policy.value(mdp, &inst.profile.total()).unwrap(), 2.0);
        // each V* term agrees with brute force
        for i in 0..2 {
            let others = inst.profile.excluding(i).unwrap();
            let v = exact_optimal(mdp, &others).unwrap().start_value();
            assert_eq!(v, brute_optimum(mdp, &others));
        }
        let u2 = agent_utility(mdp, inst.profile.agent(1).unwrap(), &out.policy, out.prices[1]).unwrap();
        assert_eq!(u2, 1.0);
        let u0 = seller_utility(mdp, inst.profile.seller(), &out.policy, &out.prices).unwrap();
        assert_eq!(u0, 1.0);
    }

    #[test]
    fn seller_with_constant_negative_reward() {
        let inst = m2_externality();
        let seller = RewardTable::constant(inst.shape(), -1.0);
        let out = exact_vcg(&inst.mdp, &inst.profile).unwrap();
        let u0 = seller_utility(&inst.mdp, &seller, &out.policy, &[0.0, 1.0]).unwrap();
        assert_eq!(u0, -1.0);
    }

    #[test]
    fn zero_profile() {
        let mdp = m2_mdp();
        let shape = mdp.shape();
        let z = RewardTable::zeros(shape);
        let p = RewardProfile::new(1.0, z.clone(), vec![z.clone()], RewardRole::Reported).unwrap();
        let out = exact_vcg(&mdp, &p).unwrap();
        assert_eq!(out.prices, vec![0.0]);
        let Policy::Stage(pi) = &out.policy else { panic!() };
        assert!(pi.probs().chunks(2).all(|r| r == [1.0, 0.0]));
        assert_eq!(agent_utility(&mdp, &z, &out.policy, 0.0).unwrap(), 0.0);
        assert_eq!(seller_utility(&mdp, &z, &out.policy, &out.prices).unwrap(), 0.0);
    }

    #[test]
    fn suboptimality_metrics() {
        let inst = m2_single_agent();
        let (mdp, actual) = (&inst.mdp, &inst.profile);
        let exact = exact_vcg(mdp, actual).unwrap();
        assert_eq!(subopt_welfare(mdp, actual, &exact.policy).unwrap(), 0.0);
        assert_eq!(subopt_agent(mdp, actual, 0, &exact).unwrap(), 0.0);
        assert_eq!(subopt_seller(mdp, actual, &exact).unwrap(), 0.0);

        let uni = Policy::Stage(StagePolicy::uniform(inst.shape()));
        assert_eq!(subopt_welfare(mdp, actual, &uni).unwrap(), 0.5);
        let price = vcg_price(mdp, actual, &uni, 0).unwrap();
        let out = MechanismOutcome::new(uni, vec![price], Provenance::Learned);
        assert_eq!(subopt_agent(mdp, actual, 0, &out).unwrap(), 0.5);
        assert_eq!(subopt_seller(mdp, actual, &out).unwrap(), 0.0);

        let ext = m2_externality();
        for p in [
            StagePolicy::uniform(ext.shape()),
            StagePolicy::deterministic(ext.shape(), &[1, 0, 1, 1]).unwrap(),
        ] {
            assert_eq!(subopt_welfare(&ext.mdp, &ext.profile, &Policy::Stage(p)).unwrap(), 0.0);
        }
    }

    #[test]
    fn price_shift_moves_utilities() {
        let inst = m2_externality();
        let (mdp, actual) = (&inst.mdp, &inst.profile);
        let mut out = exact_vcg(mdp, actual).unwrap();
        out.prices[1] += 0.3;
        assert!((subopt_agent(mdp, actual, 1, &out).unwrap() - 0.3).abs() < 1e-15);
        assert!((subopt_seller(mdp, actual, &out).unwrap() + 0.3).abs() < 1e-15);
        out.prices[1] -= 0.6;
        assert!((subopt_seller(mdp, actual, &out).unwrap() - 0.3).abs() < 1e-15);
        out.prices.pop();
        assert!(matches!(subopt_seller(mdp, actual, &out), Err(Error::Dimension(_))));
    }
}
