//! Misreport families and the brute-force desiderata checker.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{agent_utility, subopt_welfare, MechanismOutcome};
use crate::error::{input_err, Result};
use crate::mdp::{RewardProfile, RewardTable, TabularMdp};
use crate::rng::{derive_seed, stream_rng};

/// Largest number of reports a family may expand to for one agent.
const MAX_FAMILY_SIZE: usize = 1 << 20;

/// A finite, enumerable set of alternative reward reports for one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MisreportFamily {
    /// Every combination of `levels` on up to `max_entries` table entries
    /// (chosen by `seed`); the remaining entries stay truthful.
    Grid {
        levels: Vec<f64>,
        max_entries: usize,
        #[serde(default)]
        seed: u64,
    },
    /// `count` random reports, each entry moved by up to `scale` and clipped to `[0, 1]`.
    Cloud {
        count: usize,
        scale: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Reports on the segment from the truth to its complement `1 - r`,
    /// at `points` evenly spaced positions.
    ScalarLine { points: usize },
    /// Fixed reports; each is a flat `[h][s][a]` table.
    Explicit { reports: Vec<Vec<f64>> },
}

impl MisreportFamily {
    /// Three levels over at most `max_entries` entries.
    pub fn grid3(max_entries: usize, seed: u64) -> Self {
        MisreportFamily::Grid {
            levels: vec![0.0, 0.5, 1.0],
            max_entries,
            seed,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            MisreportFamily::Grid {
                levels,
                max_entries,
                seed,
            } => format!("grid(levels={levels:?}, max_entries={max_entries}, seed={seed})"),
            MisreportFamily::Cloud { count, scale, seed } => {
                format!("cloud(count={count}, scale={scale}, seed={seed})")
            }
            MisreportFamily::ScalarLine { points } => format!("scalar_line(points={points})"),
            MisreportFamily::Explicit { reports } => format!("explicit({} reports)", reports.len()),
        }
    }

    /// Enumerate the reports available to `agent` whose true reward is `truth`.
    pub fn reports(&self, agent: usize, truth: &RewardTable) -> Result<Vec<RewardTable>> {
        let shape = truth.shape();
        match self {
            MisreportFamily::Grid {
                levels,
                max_entries,
                seed,
            } => {
                if levels.is_empty() {
                    return input_err("grid family needs at least one level");
                }
                if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
                    return input_err("grid levels must lie in [0, 1]");
                }
                let mut entries: Vec<usize> = (0..shape.len()).collect();
                if *max_entries < entries.len() {
                    let mut rng = stream_rng(derive_seed(*seed, "grid-entries", agent as u64), 0);
                    entries.shuffle(&mut rng);
                    entries.truncate(*max_entries);
                    entries.sort_unstable();
                }
                let count = (levels.len() as f64).powi(entries.len() as i32);
                if count > MAX_FAMILY_SIZE as f64 {
                    return input_err(format!("grid family expands to {count} reports"));
                }
                let count = count as usize;
                let mut out = Vec::with_capacity(count);
                for mut code in 0..count {
                    let mut values = truth.values().to_vec();
                    for &e in &entries {
                        values[e] = levels[code % levels.len()];
                        code /= levels.len();
                    }
                    out.push(RewardTable::new(shape, values)?);
                }
                Ok(out)
            }
            MisreportFamily::Cloud { count, scale, seed } => {
                if !(scale.is_finite() && *scale >= 0.0) {
                    return input_err("cloud scale must be a nonnegative number");
                }
                (0..*count)
                    .map(|k| {
                        let mut rng = stream_rng(derive_seed(*seed, "cloud", agent as u64), k as u64);
                        let values = truth
                            .values()
                            .iter()
                            .map(|v| (v + scale * (2.0 * rng.gen::<f64>() - 1.0)).clamp(0.0, 1.0))
                            .collect();
                        RewardTable::new(shape, values)
                    })
                    .collect()
            }
            MisreportFamily::ScalarLine { points } => {
                if *points < 2 {
                    return input_err("scalar line needs at least two points");
                }
                (0..*points)
                    .map(|k| {
                        let alpha = k as f64 / (*points - 1) as f64;
                        let values = truth
                            .values()
                            .iter()
                            .map(|v| ((1.0 - alpha) * v + alpha * (1.0 - v)).clamp(0.0, 1.0))
                            .collect();
                        RewardTable::new(shape, values)
                    })
                    .collect()
            }
            MisreportFamily::Explicit { reports } => reports
                .iter()
                .map(|r| {
                    if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
                        return input_err("explicit reports must lie in [0, 1]");
                    }
                    RewardTable::new(shape, r.clone())
                })
                .collect(),
        }
    }
}

/// Per-agent detail of a desiderata check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentDesiderata {
    pub agent: usize,
    pub truthful_price: f64,
    pub truthful_utility: f64,
    /// Smallest truthful utility seen while the other agents misreport.
    pub min_ir_utility: f64,
    /// Largest `U_i(misreport) - U_i(truth)` with the others truthful.
    pub max_gain: f64,
    /// Index into the agent's family of the most profitable report.
    pub best_misreport: Option<usize>,
    pub misreports_checked: usize,
    pub ir_profiles_checked: usize,
}

/// Efficiency, individual rationality and truthfulness measured on one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesiderataReport {
    pub welfare_gap: f64,
    pub min_agent_utility: f64,
    pub max_truthfulness_gain: f64,
    pub seller_utility: f64,
    pub agents: Vec<AgentDesiderata>,
    pub family: String,
    /// Individual rationality is only certified over the supplied family.
    pub ir_scope: String,
}

impl DesiderataReport {
    pub fn is_finite(&self) -> bool {
        [
            self.welfare_gap,
            self.min_agent_utility,
            self.max_truthfulness_gain,
            self.seller_utility,
        ]
        .iter()
        .all(|v| v.is_finite())
            && self.agents.iter().all(|a| {
                a.truthful_utility.is_finite() && a.min_ir_utility.is_finite() && a.max_gain.is_finite()
            })
    }
}

/// Run `mechanism` on truthful reports and on every misreport in `family`.
///
/// Truthfulness deviations change one agent's report at a time. For
/// individual rationality the k-th report of every other agent is submitted
/// jointly while agent `i` stays truthful.
pub fn check_desiderata<M>(
    mdp: &TabularMdp,
    actual: &RewardProfile,
    family: &MisreportFamily,
    mechanism: M,
) -> Result<DesiderataReport>
where
    M: Fn(&RewardProfile) -> Result<MechanismOutcome> + Sync,
{
    let n = actual.num_agents();
    let truthful = actual.as_reported();
    let base = mechanism(&truthful)?;
    if base.prices.len() != n {
        return input_err("mechanism returned the wrong number of prices");
    }
    let welfare_gap = subopt_welfare(mdp, actual, &base.policy)?;
    let seller_utility = super::seller_utility(mdp, actual.seller(), &base.policy, &base.prices)?;

    let families = (0..n)
        .map(|j| family.reports(j, actual.agent(j)?))
        .collect::<Result<Vec<_>>>()?;

    let utility_of = |i: usize, profile: &RewardProfile| -> Result<f64> {
        let out = mechanism(profile)?;
        agent_utility(mdp, actual.agent(i)?, &out.policy, out.prices[i])
    };

    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let truthful_utility = agent_utility(mdp, actual.agent(i)?, &base.policy, base.prices[i])?;

        let deviations: Vec<f64> = families[i]
            .par_iter()
            .map(|report| {
                let profile = truthful.with_agent_report(i, report.clone())?;
                Ok(utility_of(i, &profile)? - truthful_utility)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut max_gain = 0.0_f64;
        let mut best_misreport = None;
        for (k, g) in deviations.iter().enumerate() {
            if best_misreport.is_none() || *g > max_gain {
                max_gain = *g;
                best_misreport = Some(k);
            }
        }

        let ir_len = if n > 1 {
            (0..n).filter(|&j| j != i).map(|j| families[j].len()).max().unwrap_or(0)
        } else {
            0
        };
        let ir_values: Vec<f64> = (0..ir_len)
            .into_par_iter()
            .map(|k| {
                let mut profile = truthful.clone();
                for j in (0..n).filter(|&j| j != i) {
                    if let Some(r) = families[j].get(k) {
                        profile = profile.with_agent_report(j, r.clone())?;
                    }
                }
                utility_of(i, &profile)
            })
            .collect::<Result<Vec<_>>>()?;
        let min_ir_utility = ir_values.iter().fold(truthful_utility, |m, v| m.min(*v));

        agents.push(AgentDesiderata {
            agent: i,
            truthful_price: base.prices[i],
            truthful_utility,
            min_ir_utility,
            max_gain,
            best_misreport,
            misreports_checked: deviations.len(),
            ir_profiles_checked: ir_values.len() + 1,
        });
    }

    Ok(DesiderataReport {
        welfare_gap,
        min_agent_utility: agents.iter().map(|a| a.min_ir_utility).fold(f64::INFINITY, f64::min),
        max_truthfulness_gain: agents.iter().map(|a| a.max_gain).fold(f64::NEG_INFINITY, f64::max),
        seller_utility,
        agents,
        family: family.describe(),
        ir_scope: "other agents' reports restricted to the misreport family".into(),
    })
}
