//! Distribution-shift coefficients, error-term calculators and
//! finite-sample bounds for the learned mechanism.
//!
//! In the boxed tabular class a Bellman residual can be concentrated on any
//! single cell, so the worst-case ratio of `nu`- to `mu`-weighted squared
//! residuals reduces to the largest per-step density ratio `nu_h / mu_h`.
//! [`shift_ratio_search`] checks that reduction by brute force.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, input_err, Error, Result};
use crate::learner::Mode;
use crate::mdp::{
    bellman_backup, policy_value, visitation, Policy, QTable, RewardTable, StagePolicy, TabularMdp, VisitationMeasure,
};
use crate::rng::{derive_seed, stream_rng};

/// `max_h max_{nu_h(s,a) > 0} nu_h(s,a) / mu_h(s,a)`; `+inf` when `nu`
/// charges a cell that `mu` does not.
pub fn shift_coefficient(nu: &VisitationMeasure, mu: &VisitationMeasure) -> Result<f64> {
    nu.shape().check_same(&mu.shape(), "data measure")?;
    let mut c = 0.0_f64;
    for (p, q) in nu.values().iter().zip(mu.values()) {
        if *p > 0.0 {
            if *q == 0.0 {
                return Ok(f64::INFINITY);
            }
            c = c.max(p / q);
        }
    }
    Ok(c)
}

/// Visitation of a policy; for a mixture, the mean of its components'.
pub fn policy_visitation(mdp: &TabularMdp, policy: &Policy) -> Result<VisitationMeasure> {
    let parts = policy.components();
    let mut acc = vec![0.0; mdp.shape().len()];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(visitation(mdp, p)?.values()) {
            *a += v;
        }
    }
    let k = parts.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(VisitationMeasure::from_raw(mdp.shape(), acc))
}

/// Both sides of the induced-MDP inequality for one evaluation output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InducedGap {
    /// `|f_0(s0, pi) - V^pi(s0)|`.
    pub gap: f64,
    /// `sum_h E_{d^pi_h} |f_h - T^pi_h f_{h+1}|` under the true model.
    pub residual: f64,
}

impl InducedGap {
    pub fn holds(&self, tol: f64) -> bool {
        self.gap <= self.residual + tol
    }
}

/// Compare `f` with the true value of `policy` through its Bellman residuals.
pub fn induced_gap(mdp: &TabularMdp, reward: &RewardTable, policy: &StagePolicy, f: &QTable) -> Result<InducedGap> {
    let shape = mdp.shape();
    shape.check_same(&f.shape(), "Q table")?;
    let truth = policy_value(mdp, reward, policy)?;
    let occ = visitation(mdp, policy)?;
    let c = shape.cells();
    let mut residual = 0.0;
    for h in 0..shape.horizon {
        let next = (h + 1 < shape.horizon).then(|| f.step(h + 1));
        let tf = bellman_backup(mdp, reward.step(h), policy, next, h)?;
        for j in 0..c {
            residual += occ.step(h)[j] * (f.step(h)[j] - tf[j]).abs();
        }
    }
    let s0 = mdp.initial_state();
    Ok(InducedGap {
        gap: (f.expected(0, s0, policy) - truth).abs(),
        residual,
    })
}

/// Largest residual ratio seen over `draws` random `(f1, f2, h, r, pi)`.
///
/// Half the draws use uniform boxed tables; the other half set `f1` to the
/// exact backup of `f2` except at one random cell, which concentrates the
/// residual and probes the supremum.
pub fn shift_ratio_search(
    mdp: &TabularMdp,
    nu: &VisitationMeasure,
    mu: &VisitationMeasure,
    r_max: f64,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let shape = mdp.shape();
    shape.check_same(&nu.shape(), "target measure")?;
    shape.check_same(&mu.shape(), "data measure")?;
    const SHARD: usize = 1024;
    let shards = draws.div_ceil(SHARD);
    let maxima = (0..shards)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let mut rng = stream_rng(derive_seed(seed, "shift-search", k as u64), 0);
            let count = SHARD.min(draws - k * SHARD);
            let c = shape.cells();
            let mut best = 0.0_f64;
            for d in 0..count {
                let h = rng.gen_range(0..shape.horizon);
                let probs: Vec<f64> = (0..shape.len()).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let policy = StagePolicy::from_normalized(shape, normalize_rows(probs, shape.actions));
                let reward: Vec<f64> = (0..c).map(|_| rng.gen_range(-r_max..=r_max)).collect();
                let b_next = shape.box_bound((h + 1).min(shape.horizon - 1), r_max);
                let f2: Vec<f64> = (0..c).map(|_| rng.gen_range(-b_next..=b_next)).collect();
                let target = bellman_backup(mdp, &reward, &policy, Some(&f2), h)?;
                let b = shape.box_bound(h, r_max);
                let f1: Vec<f64> = if d % 2 == 0 {
                    (0..c).map(|_| rng.gen_range(-b..=b)).collect()
                } else {
                    let mut f = target.clone();
                    f[rng.gen_range(0..c)] = rng.gen_range(-b..=b);
                    f
                };
                let (mut num, mut den) = (0.0, 0.0);
                for j in 0..c {
                    let r2 = (f1[j] - target[j]).powi(2);
                    num += nu.step(h)[j] * r2;
                    den += mu.step(h)[j] * r2;
                }
                if den > 0.0 {
                    best = best.max(num / den);
                } else if num > 0.0 {
                    return Ok(f64::INFINITY);
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(maxima.into_iter().fold(0.0, f64::max))
}

fn normalize_rows(mut probs: Vec<f64>, width: usize) -> Vec<f64> {
    for row in probs.chunks_mut(width) {
        let t: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= t);
    }
    probs
}

/// Optimization error of `T` mirror-descent rounds: `2 H^2 R sqrt(2 ln A / T)`.
pub fn err_opt(horizon: usize, r_max: f64, actions: usize, iterations: usize) -> Result<f64> {
    if iterations == 0 {
        return input_err("err_opt needs T >= 1");
    }
    if actions == 0 || horizon == 0 {
        return input_err("err_opt needs H, A >= 1");
    }
    let h = horizon as f64;
    Ok(2.0 * h * h * r_max * (2.0 * (actions as f64).ln() / iterations as f64).sqrt())
}

/// `2 (H R)^{1/3} (eps_s + 3 eps_f)^{1/3}`, the penalty part of one evaluation's error.
fn cube_term(horizon: usize, r_max: f64, eps_s: f64, eps_f: f64) -> f64 {
    2.0 * (horizon as f64 * r_max).cbrt() * (eps_s + 3.0 * eps_f).cbrt()
}

/// Statistical error of one evaluation, before the shift and horizon factors.
pub fn err_stat_unit(horizon: usize, r_max: f64, eps_s: f64, eps_f: f64, eps_ff: f64) -> Result<f64> {
    for (name, v) in [("eps_s", eps_s), ("eps_f", eps_f), ("eps_ff", eps_ff), ("r_max", r_max)] {
        if !(v.is_finite() && v >= 0.0) {
            return input_err(format!("{name} must be finite and nonnegative, got {v}"));
        }
    }
    Ok(cube_term(horizon, r_max, eps_s, eps_f) + (8.0 * eps_s + 12.0 * eps_f + 3.0 * eps_ff).sqrt())
}

/// Names of the shift-coefficient slots used by [`theorem_bound`].
///
/// Each slot holds a list of coefficients `C`; a bound uses the mean of
/// `sqrt(C)` over the list. Per-agent slots are suffixed with `[i]`, see
/// [`agent_key`].
pub mod shift_keys {
    /// Welfare iterates against the optimal policy, one entry per iterate.
    pub const WELFARE_ITERATES: &str = "welfare_iterates";
    /// The output welfare mixture against itself.
    pub const WELFARE_OUTPUT: &str = "welfare_output";
    /// `zeta1` output on `R_{-i}` against itself.
    pub const OTHERS_OUTPUT: &str = "others_output";
    /// `zeta1` iterates on `R_{-i}` against the optimal policy for `R_{-i}`.
    pub const OTHERS_ITERATES: &str = "others_iterates";
    /// `zeta1` iterates on `R_{-i}` against themselves, one entry per iterate.
    pub const OTHERS_SELF: &str = "others_self";
    /// Iterates learned under a misreport against the optimum for `r_i + R~_{-i}`.
    pub const MISREPORT_ITERATES: &str = "misreport_iterates";
    /// Output learned under a misreport against itself.
    pub const MISREPORT_OUTPUT: &str = "misreport_output";
}

pub fn agent_key(base: &str, i: usize) -> String {
    format!("{base}[{i}]")
}

/// Everything a bound is assembled from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub horizon: usize,
    pub r_max: f64,
    pub actions: usize,
    pub iterations: usize,
    pub agents: usize,
    pub err_opt: f64,
    pub err_stat: f64,
    pub eps_s: f64,
    pub eps_f: f64,
    pub eps_ff: f64,
    #[serde(default)]
    pub shift_coefficients: BTreeMap<String, Vec<f64>>,
}

impl ErrorBudget {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        horizon: usize,
        r_max: f64,
        actions: usize,
        iterations: usize,
        agents: usize,
        eps_s: f64,
        eps_f: f64,
        eps_ff: f64,
    ) -> Result<Self> {
        Ok(ErrorBudget {
            horizon,
            r_max,
            actions,
            iterations,
            agents,
            err_opt: err_opt(horizon, r_max, actions, iterations)?,
            err_stat: err_stat_unit(horizon, r_max, eps_s, eps_f, eps_ff)?,
            eps_s,
            eps_f,
            eps_ff,
            shift_coefficients: BTreeMap::new(),
        })
    }

    pub fn set_shift(&mut self, key: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.is_empty() || values.iter().any(|c| c.is_nan() || *c < 0.0) {
            return input_err("shift coefficients must be a nonempty list of nonnegative numbers");
        }
        self.shift_coefficients.insert(key.into(), values);
        Ok(())
    }

    pub fn with_shift(mut self, key: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        self.set_shift(key, values)?;
        Ok(self)
    }

    /// Set every slot a bound could ask for to the same coefficient.
    pub fn with_uniform_shift(mut self, c: f64) -> Result<Self> {
        use shift_keys::*;
        for key in [WELFARE_ITERATES, WELFARE_OUTPUT, MISREPORT_ITERATES, MISREPORT_OUTPUT] {
            self.set_shift(key, vec![c])?;
        }
        for i in 0..self.agents {
            for key in [OTHERS_OUTPUT, OTHERS_ITERATES, OTHERS_SELF] {
                self.set_shift(agent_key(key, i), vec![c])?;
            }
        }
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            ("err_opt", self.err_opt),
            ("err_stat", self.err_stat),
            ("eps_s", self.eps_s),
            ("eps_f", self.eps_f),
            ("eps_ff", self.eps_ff),
            ("r_max", self.r_max),
        ];
        for (name, v) in fields {
            if v.is_nan() || v < 0.0 {
                return input_err(format!("budget field {name} must be nonnegative, got {v}"));
            }
        }
        Ok(())
    }

    fn cube(&self) -> f64 {
        cube_term(self.horizon, self.r_max, self.eps_s, self.eps_f)
    }
}

/// Which guarantee to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    /// Upper bound on welfare suboptimality.
    Welfare,
    /// Upper bound on agent `i`'s utility suboptimality.
    Agent(usize),
    /// Upper bound on the seller's utility suboptimality.
    Seller,
    /// Lower bound on a truthful agent's utility; returned as a (negative) number.
    IndividualRationality(usize),
    /// Upper bound on agent `i`'s gain from misreporting.
    Truthfulness(usize),
}

impl Bound {
    pub fn label(&self) -> String {
        match self {
            Bound::Welfare => "welfare".into(),
            Bound::Agent(i) => format!("agent[{i}]"),
            Bound::Seller => "seller".into(),
            Bound::IndividualRationality(i) => format!("ir[{i}]"),
            Bound::Truthfulness(i) => format!("truthfulness[{i}]"),
        }
    }

    /// Whether the measured value must be at least the bound.
    pub fn is_lower(&self) -> bool {
        matches!(self, Bound::IndividualRationality(_))
    }
}

/// One shift term: a slot name and how many times it is counted.
type Term = (String, f64);

/// Evaluate a finite-sample guarantee for pricing sides `zetas = (zeta1, zeta2)`.
///
/// Only `(PES, OPT)` and `(OPT, PES)` have agent, seller and IR bounds;
/// truthfulness depends on `zeta2` alone and welfare on neither.
pub fn theorem_bound(budget: &ErrorBudget, which: Bound, zetas: (Mode, Mode)) -> Result<f64> {
    use shift_keys::*;
    budget.validate()?;
    let n = budget.agents as f64;
    let one = |k: &str| (k.to_string(), 1.0);
    let per = |k: &str, i: usize| (agent_key(k, i), 1.0);
    let check_agent = |i: usize| -> Result<()> {
        if i >= budget.agents {
            return Err(Error::AgentIndex {
                index: i,
                agents: budget.agents,
            });
        }
        Ok(())
    };
    let pair = match zetas {
        (Mode::Pes, Mode::Opt) => Some(true),
        (Mode::Opt, Mode::Pes) => Some(false),
        _ => None,
    };
    let need_pair = || match pair {
        Some(p) => Ok(p),
        None => input_err(format!(
            "no {} bound for ({}, {})",
            which.label(),
            zetas.0.label(),
            zetas.1.label()
        )),
    };
    // (err_opt, sqrt eps_f, cube) coefficients and shift terms
    let (a, b, c, terms): (f64, f64, f64, Vec<Term>) = match which {
        Bound::Welfare => (1.0, 1.0, 1.0, vec![one(WELFARE_ITERATES)]),
        Bound::Agent(i) => {
            check_agent(i)?;
            if need_pair()? {
                (1.0, 3.0, 3.0, vec![one(WELFARE_ITERATES)])
            } else {
                (
                    1.0,
                    1.0,
                    1.0,
                    vec![one(WELFARE_ITERATES), per(OTHERS_OUTPUT, i), one(WELFARE_OUTPUT)],
                )
            }
        }
        Bound::Seller => {
            let mut t = Vec::new();
            if need_pair()? {
                for i in 0..budget.agents {
                    t.push(per(OTHERS_OUTPUT, i));
                    t.push(per(OTHERS_ITERATES, i));
                }
                t.push((WELFARE_OUTPUT.to_string(), n));
                (n, n, n, t)
            } else {
                for i in 0..budget.agents {
                    t.push(per(OTHERS_ITERATES, i));
                    t.push(per(OTHERS_SELF, i));
                }
                (n, 2.0 * n, 2.0 * n, t)
            }
        }
        Bound::IndividualRationality(i) => {
            check_agent(i)?;
            if need_pair()? {
                (
                    2.0,
                    3.0,
                    3.0,
                    vec![one(MISREPORT_ITERATES), per(OTHERS_ITERATES, i), per(OTHERS_OUTPUT, i)],
                )
            } else {
                (
                    2.0,
                    2.0,
                    2.0,
                    vec![
                        one(MISREPORT_ITERATES),
                        per(OTHERS_ITERATES, i),
                        per(OTHERS_SELF, i),
                        one(MISREPORT_OUTPUT),
                    ],
                )
            }
        }
        Bound::Truthfulness(i) => {
            check_agent(i)?;
            let own = match zetas.1 {
                Mode::Opt => WELFARE_OUTPUT,
                Mode::Pes => MISREPORT_OUTPUT,
            };
            (1.0, 2.0, 2.0, vec![one(MISREPORT_ITERATES), one(own)])
        }
    };
    let missing: Vec<String> = terms
        .iter()
        .filter(|(k, _)| !budget.shift_coefficients.contains_key(k))
        .map(|(k, _)| k.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingShiftTerms(missing));
    }
    let factor: f64 = terms
        .iter()
        .map(|(k, w)| {
            let cs = &budget.shift_coefficients[k];
            w * cs.iter().map(|c| c.sqrt()).sum::<f64>() / cs.len() as f64
        })
        .sum();
    let h = budget.horizon as f64;
    let magnitude = a * budget.err_opt + b * budget.eps_f.sqrt() + c * budget.cube() + h * factor * budget.err_stat;
    Ok(if which.is_lower() { -magnitude } else { magnitude })
}

/// Measured quantities of one run, compared against the bounds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasuredMetrics {
    pub welfare_subopt: f64,
    pub agent_subopt: Vec<f64>,
    pub seller_subopt: f64,
    /// Minimum utility of each truthful agent over the checked profiles.
    #[serde(default)]
    pub ir_min: Option<Vec<f64>>,
    /// Largest misreporting gain of each agent.
    #[serde(default)]
    pub truthfulness_gain: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub metric: String,
    pub measured: f64,
    pub bound: f64,
    /// `true` when the measured value must not fall below the bound.
    pub lower: bool,
    pub violated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundComparison {
    pub zeta1: Mode,
    pub zeta2: Mode,
    pub checks: Vec<BoundCheck>,
    pub violations: usize,
}

/// Tabulate `measured` against every applicable bound.
pub fn empirical_vs_bound(measured: &MeasuredMetrics, budget: &ErrorBudget, zetas: (Mode, Mode)) -> Result<BoundComparison> {
    let n = budget.agents;
    let check_len = |name: &str, len: usize| {
        if len != n {
            return dim_err(format!("{name} has {len} entries for {n} agents"));
        }
        Ok(())
    };
    check_len("agent_subopt", measured.agent_subopt.len())?;
    let mut rows: Vec<(Bound, f64)> = vec![(Bound::Welfare, measured.welfare_subopt)];
    rows.extend(measured.agent_subopt.iter().enumerate().map(|(i, v)| (Bound::Agent(i), *v)));
    rows.push((Bound::Seller, measured.seller_subopt));
    if let Some(ir) = &measured.ir_min {
        check_len("ir_min", ir.len())?;
        rows.extend(ir.iter().enumerate().map(|(i, v)| (Bound::IndividualRationality(i), *v)));
    }
    if let Some(g) = &measured.truthfulness_gain {
        check_len("truthfulness_gain", g.len())?;
        rows.extend(g.iter().enumerate().map(|(i, v)| (Bound::Truthfulness(i), *v)));
    }
    let mut checks = Vec::with_capacity(rows.len());
    for (which, value) in rows {
        let bound = theorem_bound(budget, which, zetas)?;
        let lower = which.is_lower();
        let violated = if lower { value < bound } else { value > bound };
        checks.push(BoundCheck {
            metric: which.label(),
            measured: value,
            bound,
            lower,
            violated,
        });
    }
    let violations = checks.iter().filter(|c| c.violated).count();
    Ok(BoundComparison {
        zeta1: zetas.0,
        zeta2: zetas.1,
        checks,
        violations,
    })
}
