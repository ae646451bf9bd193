//! Tabular episodic MDPs with per-agent rewards and their exact solvers.
//!
//! Steps are indexed from zero internally: step `h` in `0..H` corresponds to
//! the `(h + 1)`-th decision of an episode. All tables are stored densely in
//! `[h][s][a]` order. The value of any action-value table at step `h` lies in
//! the box `[-(H - h) R_max, (H - h) R_max]`.
//!
//! Everything here is a pure function of immutable inputs; the dynamic
//! programming routines double as ground-truth oracles for the learner.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, input_err, Error, Result};
use crate::rng::sample_categorical;

const PROB_TOL: f64 = 1e-12;
const VISITATION_TOL: f64 = 1e-10;
const REWARD_TOL: f64 = 1e-12;
/// Relative slack used when deciding that two action values tie.
const TIE_TOL: f64 = 1e-12;

/// Dimensions of a tabular episodic problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
}

impl Shape {
    pub fn new(states: usize, actions: usize, horizon: usize) -> Result<Self> {
        if states == 0 || actions == 0 || horizon == 0 {
            return input_err(format!(
                "shape dimensions must be positive (S={states}, A={actions}, H={horizon})"
            ));
        }
        Ok(Shape {
            states,
            actions,
            horizon,
        })
    }

    /// Number of (state, action) cells per step.
    pub fn cells(&self) -> usize {
        self.states * self.actions
    }

    /// Number of entries of an `[h][s][a]` table.
    pub fn len(&self) -> usize {
        self.horizon * self.cells()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.states + s) * self.actions + a
    }

    /// Half-width of the value box at step `h` (zero-based).
    pub fn box_bound(&self, h: usize, r_max: f64) -> f64 {
        (self.horizon - h) as f64 * r_max
    }

    pub(crate) fn check_same(&self, other: &Shape, what: &str) -> Result<()> {
        if self != other {
            return dim_err(format!("{what}: expected {self:?}, got {other:?}"));
        }
        Ok(())
    }
}

/// A dense `[h][s][a]` table of scalar rewards.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RewardTable {
    shape: Shape,
    values: Vec<f64>,
}

impl RewardTable {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return dim_err(format!(
                "reward table needs {} entries, got {}",
                shape.len(),
                values.len()
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return input_err(format!("reward table contains non-finite value {v}"));
        }
        Ok(RewardTable { shape, values })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::constant(shape, 0.0)
    }

    pub fn constant(shape: Shape, c: f64) -> Self {
        RewardTable {
            shape,
            values: vec![c; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(shape.len());
        for h in 0..shape.horizon {
            for s in 0..shape.states {
                for a in 0..shape.actions {
                    values.push(f(h, s, a));
                }
            }
        }
        RewardTable { shape, values }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.values[self.shape.index(h, s, a)]
    }

    /// The `[s][a]` slice for step `h`.
    pub fn step(&self, h: usize) -> &[f64] {
        let c = self.shape.cells();
        &self.values[h * c..(h + 1) * c]
    }

    pub fn abs_max(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Pointwise sum of `tables`; all must share `shape`.
    pub fn sum<'a>(shape: Shape, tables: impl IntoIterator<Item = &'a RewardTable>) -> Result<Self> {
        let mut out = Self::zeros(shape);
        for t in tables {
            shape.check_same(&t.shape, "reward sum")?;
            for (o, v) in out.values.iter_mut().zip(&t.values) {
                *o += v;
            }
        }
        Ok(out)
    }

    pub fn plus(&self, other: &RewardTable) -> Result<Self> {
        Self::sum(self.shape, [self, other])
    }
}

/// Whether a reward profile holds true rewards or reports submitted to the seller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardRole {
    Actual,
    Reported,
}

/// Seller reward plus one reward table per agent.
///
/// Agent rewards lie in `[0, 1]` and the seller reward in
/// `[-R_max, R_max - n]`, so every aggregate lies in `[-R_max, R_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardProfile {
    r_max: f64,
    seller: RewardTable,
    agents: Vec<RewardTable>,
    role: RewardRole,
}

impl RewardProfile {
    pub fn new(
        r_max: f64,
        seller: RewardTable,
        agents: Vec<RewardTable>,
        role: RewardRole,
    ) -> Result<Self> {
        if agents.is_empty() {
            return input_err("a reward profile needs at least one agent");
        }
        if !(r_max.is_finite() && r_max >= 1.0) {
            return input_err(format!("R_max must be at least 1, got {r_max}"));
        }
        let shape = seller.shape();
        let n = agents.len() as f64;
        let (lo, hi) = (-r_max, r_max - n);
        if lo > hi + REWARD_TOL {
            return input_err(format!(
                "R_max = {r_max} leaves an empty seller range for {} agents",
                agents.len()
            ));
        }
        for &v in seller.values() {
            if v < lo - REWARD_TOL || v > hi + REWARD_TOL {
                return input_err(format!("seller reward {v} outside [{lo}, {hi}]"));
            }
        }
        for (i, t) in agents.iter().enumerate() {
            shape.check_same(&t.shape(), &format!("agent {i} reward"))?;
            Self::check_agent_range(i, t)?;
        }
        Ok(RewardProfile {
            r_max,
            seller,
            agents,
            role,
        })
    }

    fn check_agent_range(i: usize, t: &RewardTable) -> Result<()> {
        for &v in t.values() {
            if !(-REWARD_TOL..=1.0 + REWARD_TOL).contains(&v) {
                return input_err(format!("agent {i} reward {v} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> Shape {
        self.seller.shape()
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn role(&self) -> RewardRole {
        self.role
    }

    pub fn seller(&self) -> &RewardTable {
        &self.seller
    }

    pub fn agents(&self) -> &[RewardTable] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> Result<&RewardTable> {
        self.agents.get(i).ok_or(Error::AgentIndex {
            index: i,
            agents: self.agents.len(),
        })
    }

    pub(crate) fn check_agent(&self, i: usize) -> Result<()> {
        self.agent(i).map(|_| ())
    }

    /// `R = r_0 + sum_i r_i`.
    pub fn total(&self) -> RewardTable {
        let mut out = self.seller.clone();
        for t in &self.agents {
            for (o, v) in out.values.iter_mut().zip(&t.values) {
                *o += v;
            }
        }
        out
    }

    /// `R_{-i}`: the total without agent `i`.
    pub fn excluding(&self, i: usize) -> Result<RewardTable> {
        self.check_agent(i)?;
        let mut out = self.seller.clone();
        for (j, t) in self.agents.iter().enumerate() {
            if j != i {
                for (o, v) in out.values.iter_mut().zip(&t.values) {
                    *o += v;
                }
            }
        }
        Ok(out)
    }

    /// `r_i + R_{-i}` with agent `i`'s entry replaced by `own`.
    pub fn single_plus(&self, i: usize, own: &RewardTable) -> Result<RewardTable> {
        self.excluding(i)?.plus(own)
    }

    /// Copy of this profile with agent `i` reporting `report` instead.
    pub fn with_agent_report(&self, i: usize, report: RewardTable) -> Result<RewardProfile> {
        self.check_agent(i)?;
        self.shape().check_same(&report.shape(), "agent report")?;
        Self::check_agent_range(i, &report)?;
        let mut out = self.clone();
        out.agents[i] = report;
        out.role = RewardRole::Reported;
        Ok(out)
    }

    /// The same rewards, labelled as reports.
    pub fn as_reported(&self) -> RewardProfile {
        RewardProfile {
            role: RewardRole::Reported,
            ..self.clone()
        }
    }
}

/// A Markov policy: one action distribution per (step, state).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StagePolicy {
    shape: Shape,
    probs: Vec<f64>,
}

impl StagePolicy {
    pub fn new(shape: Shape, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != shape.len() {
            return dim_err(format!(
                "policy table needs {} entries, got {}",
                shape.len(),
                probs.len()
            ));
        }
        for (row_idx, row) in probs.chunks(shape.actions).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return input_err(format!("policy row {row_idx} has a negative or non-finite entry"));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_TOL {
                return input_err(format!("policy row {row_idx} sums to {total}"));
            }
        }
        Ok(StagePolicy { shape, probs })
    }

    pub(crate) fn from_normalized(shape: Shape, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), shape.len());
        StagePolicy { shape, probs }
    }

    pub fn uniform(shape: Shape) -> Self {
        StagePolicy {
            shape,
            probs: vec![1.0 / shape.actions as f64; shape.len()],
        }
    }

    /// Deterministic policy from an `[h][s]` table of action indices.
    pub fn deterministic(shape: Shape, actions: &[usize]) -> Result<Self> {
        if actions.len() != shape.horizon * shape.states {
            return dim_err(format!(
                "deterministic policy needs {} actions, got {}",
                shape.horizon * shape.states,
                actions.len()
            ));
        }
        let mut probs = vec![0.0; shape.len()];
        for (row, &a) in actions.iter().enumerate() {
            if a >= shape.actions {
                return input_err(format!("action {a} out of range"));
            }
            probs[row * shape.actions + a] = 1.0;
        }
        Ok(StagePolicy { shape, probs })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let start = self.shape.index(h, s, 0);
        &self.probs[start..start + self.shape.actions]
    }

    #[inline]
    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        self.probs[self.shape.index(h, s, a)]
    }
}

/// Uniform episode-level mixture: one component is drawn at the start of
/// each episode and followed throughout.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixturePolicy {
    components: Vec<StagePolicy>,
}

impl MixturePolicy {
    pub fn new(components: Vec<StagePolicy>) -> Result<Self> {
        let Some(first) = components.first() else {
            return input_err("a mixture policy needs at least one component");
        };
        let shape = first.shape();
        for c in &components[1..] {
            shape.check_same(&c.shape(), "mixture component")?;
        }
        Ok(MixturePolicy { components })
    }

    pub fn components(&self) -> &[StagePolicy] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.components[0].shape()
    }
}

/// Either a Markov policy or an episode-level mixture of them.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Stage(StagePolicy),
    Mixture(MixturePolicy),
}

impl Policy {
    pub fn shape(&self) -> Shape {
        match self {
            Policy::Stage(p) => p.shape(),
            Policy::Mixture(m) => m.shape(),
        }
    }

    pub fn components(&self) -> &[StagePolicy] {
        match self {
            Policy::Stage(p) => std::slice::from_ref(p),
            Policy::Mixture(m) => m.components(),
        }
    }

    /// Exact `V_1(s0)` under `reward`, averaging over mixture components.
    pub fn value(&self, mdp: &TabularMdp, reward: &RewardTable) -> Result<f64> {
        match self {
            Policy::Stage(p) => policy_value(mdp, reward, p),
            Policy::Mixture(m) => mixture_value(mdp, reward, m),
        }
    }
}

impl From<StagePolicy> for Policy {
    fn from(p: StagePolicy) -> Self {
        Policy::Stage(p)
    }
}

impl From<MixturePolicy> for Policy {
    fn from(m: MixturePolicy) -> Self {
        Policy::Mixture(m)
    }
}

/// Horizon-indexed action-value table; an element of the boxed tabular class.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QTable {
    shape: Shape,
    r_max: f64,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(shape: Shape, r_max: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return dim_err(format!(
                "Q table needs {} entries, got {}",
                shape.len(),
                values.len()
            ));
        }
        let q = QTable {
            shape,
            r_max,
            values,
        };
        if !q.within_box(r_max) {
            return input_err("Q table leaves its per-step box");
        }
        Ok(q)
    }

    pub(crate) fn from_raw(shape: Shape, r_max: f64, values: Vec<f64>) -> Self {
        QTable {
            shape,
            r_max,
            values,
        }
    }

    pub fn zeros(shape: Shape, r_max: f64) -> Self {
        Self::from_raw(shape, r_max, vec![0.0; shape.len()])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.values[self.shape.index(h, s, a)]
    }

    pub fn step(&self, h: usize) -> &[f64] {
        let c = self.shape.cells();
        &self.values[h * c..(h + 1) * c]
    }

    /// True when `|f_h| <= (H - h) * r_max` everywhere (with 1e-9 slack).
    pub fn within_box(&self, r_max: f64) -> bool {
        (0..self.shape.horizon).all(|h| {
            let b = self.shape.box_bound(h, r_max) + 1e-9;
            self.step(h).iter().all(|v| v.is_finite() && v.abs() <= b)
        })
    }

    /// `f_h(s, pi_h) = E_{a ~ pi_h(.|s)} f_h(s, a)`.
    pub fn expected(&self, h: usize, s: usize, policy: &StagePolicy) -> f64 {
        let start = self.shape.index(h, s, 0);
        self.values[start..start + self.shape.actions]
            .iter()
            .zip(policy.row(h, s))
            .map(|(q, p)| q * p)
            .sum()
    }
}

/// Per-step state-action distributions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VisitationMeasure {
    shape: Shape,
    values: Vec<f64>,
}

impl VisitationMeasure {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return dim_err(format!(
                "visitation table needs {} entries, got {}",
                shape.len(),
                values.len()
            ));
        }
        let m = VisitationMeasure { shape, values };
        for h in 0..shape.horizon {
            let step = m.step(h);
            if step.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return input_err(format!("visitation at step {h} has a negative entry"));
            }
            let total: f64 = step.iter().sum();
            if (total - 1.0).abs() > VISITATION_TOL {
                return input_err(format!("visitation at step {h} sums to {total}"));
            }
        }
        Ok(m)
    }

    pub(crate) fn from_raw(shape: Shape, values: Vec<f64>) -> Self {
        VisitationMeasure { shape, values }
    }

    pub fn uniform(shape: Shape) -> Self {
        Self::from_raw(shape, vec![1.0 / shape.cells() as f64; shape.len()])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.values[self.shape.index(h, s, a)]
    }

    pub fn step(&self, h: usize) -> &[f64] {
        let c = self.shape.cells();
        &self.values[h * c..(h + 1) * c]
    }
}

/// Finite episodic MDP with a fixed initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    shape: Shape,
    transition: Vec<f64>,
    initial_state: usize,
}

impl TabularMdp {
    /// `transition` is laid out `[h][s][a][s']`.
    pub fn new(shape: Shape, transition: Vec<f64>, initial_state: usize) -> Result<Self> {
        let expected = shape.len() * shape.states;
        if transition.len() != expected {
            return dim_err(format!(
                "transition table needs {expected} entries, got {}",
                transition.len()
            ));
        }
        if initial_state >= shape.states {
            return input_err(format!(
                "initial state {initial_state} out of range for {} states",
                shape.states
            ));
        }
        for (row_idx, row) in transition.chunks(shape.states).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return input_err(format!("transition row {row_idx} has a negative entry"));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_TOL {
                return input_err(format!("transition row {row_idx} sums to {total}"));
            }
        }
        Ok(TabularMdp {
            shape,
            transition,
            initial_state,
        })
    }

    /// Deterministic dynamics given by `next(h, s, a)`.
    pub fn deterministic(
        shape: Shape,
        initial_state: usize,
        next: impl Fn(usize, usize, usize) -> usize,
    ) -> Result<Self> {
        let mut transition = vec![0.0; shape.len() * shape.states];
        for h in 0..shape.horizon {
            for s in 0..shape.states {
                for a in 0..shape.actions {
                    let s2 = next(h, s, a);
                    if s2 >= shape.states {
                        return input_err(format!("next state {s2} out of range"));
                    }
                    transition[shape.index(h, s, a) * shape.states + s2] = 1.0;
                }
            }
        }
        Self::new(shape, transition, initial_state)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    /// `P_h(. | s, a)`.
    #[inline]
    pub fn next_distribution(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let start = self.shape.index(h, s, a) * self.shape.states;
        &self.transition[start..start + self.shape.states]
    }
}

/// Optimal values and the lowest-index greedy policy.
#[derive(Clone, Debug)]
pub struct OptimalSolution {
    /// `V*_h(s)` laid out `[h][s]`.
    pub values: Vec<f64>,
    pub q: QTable,
    pub policy: StagePolicy,
    pub initial_state: usize,
    pub states: usize,
}

impl OptimalSolution {
    /// `V*_1(s0)`.
    pub fn start_value(&self) -> f64 {
        self.values[self.initial_state]
    }

    pub fn value(&self, h: usize, s: usize) -> f64 {
        self.values[h * self.states + s]
    }
}

fn state_values(q_step: &[f64], policy: &StagePolicy, h: usize, shape: Shape) -> Vec<f64> {
    (0..shape.states)
        .map(|s| {
            let row = &q_step[s * shape.actions..(s + 1) * shape.actions];
            row.iter().zip(policy.row(h, s)).map(|(q, p)| q * p).sum()
        })
        .collect()
}

fn backup_with_values(mdp: &TabularMdp, reward_step: &[f64], h: usize, next_v: Option<&[f64]>) -> Vec<f64> {
    let shape = mdp.shape;
    let mut out = reward_step.to_vec();
    if let Some(v) = next_v {
        for s in 0..shape.states {
            for a in 0..shape.actions {
                let cont: f64 = mdp
                    .next_distribution(h, s, a)
                    .iter()
                    .zip(v)
                    .map(|(p, v)| p * v)
                    .sum();
                out[s * shape.actions + a] += cont;
            }
        }
    }
    out
}

/// Policy-specific Bellman evaluation operator at step `h`:
/// `r_h(s,a) + sum_{s'} P_h(s'|s,a) E_{a' ~ pi_{h+1}} f_next(s', a')`.
///
/// `reward_step` and `f_next` are `[s][a]` slices. At the last step the
/// continuation is identically zero and `f_next` is ignored.
pub fn bellman_backup(
    mdp: &TabularMdp,
    reward_step: &[f64],
    policy: &StagePolicy,
    f_next: Option<&[f64]>,
    h: usize,
) -> Result<Vec<f64>> {
    let shape = mdp.shape;
    shape.check_same(&policy.shape(), "policy")?;
    if h >= shape.horizon {
        return input_err(format!("step {h} out of range for horizon {}", shape.horizon));
    }
    if reward_step.len() != shape.cells() {
        return dim_err(format!(
            "reward slice needs {} entries, got {}",
            shape.cells(),
            reward_step.len()
        ));
    }
    let next_v = match f_next {
        Some(f) if h + 1 < shape.horizon => {
            if f.len() != shape.cells() {
                return dim_err(format!(
                    "continuation slice needs {} entries, got {}",
                    shape.cells(),
                    f.len()
                ));
            }
            Some(state_values(f, policy, h + 1, shape))
        }
        _ => None,
    };
    Ok(backup_with_values(mdp, reward_step, h, next_v.as_deref()))
}

/// `Q^pi` by backward induction.
pub fn exact_policy_q(mdp: &TabularMdp, reward: &RewardTable, policy: &StagePolicy) -> Result<QTable> {
    let shape = mdp.shape;
    shape.check_same(&reward.shape(), "reward")?;
    shape.check_same(&policy.shape(), "policy")?;
    let mut values = vec![0.0; shape.len()];
    let c = shape.cells();
    let mut next_v: Option<Vec<f64>> = None;
    for h in (0..shape.horizon).rev() {
        let q = backup_with_values(mdp, reward.step(h), h, next_v.as_deref());
        next_v = Some(state_values(&q, policy, h, shape));
        values[h * c..(h + 1) * c].copy_from_slice(&q);
    }
    Ok(QTable::from_raw(shape, reward.abs_max().max(1.0), values))
}

/// `V^pi_1(s0; reward)`.
pub fn policy_value(mdp: &TabularMdp, reward: &RewardTable, policy: &StagePolicy) -> Result<f64> {
    let q = exact_policy_q(mdp, reward, policy)?;
    Ok(q.expected(0, mdp.initial_state, policy))
}

/// Value iteration with ties broken towards the lowest action index.
pub fn exact_optimal(mdp: &TabularMdp, reward: &RewardTable) -> Result<OptimalSolution> {
    let shape = mdp.shape;
    shape.check_same(&reward.shape(), "reward")?;
    let c = shape.cells();
    let mut values = vec![0.0; shape.horizon * shape.states];
    let mut qvals = vec![0.0; shape.len()];
    let mut actions = vec![0usize; shape.horizon * shape.states];
    let mut next_v: Option<Vec<f64>> = None;
    for h in (0..shape.horizon).rev() {
        let q = backup_with_values(mdp, reward.step(h), h, next_v.as_deref());
        let mut v = vec![0.0; shape.states];
        for s in 0..shape.states {
            let row = &q[s * shape.actions..(s + 1) * shape.actions];
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let slack = TIE_TOL * (1.0 + best.abs());
            let a = row.iter().position(|&x| x >= best - slack).unwrap_or(0);
            actions[h * shape.states + s] = a;
            v[s] = row[a];
        }
        values[h * shape.states..(h + 1) * shape.states].copy_from_slice(&v);
        qvals[h * c..(h + 1) * c].copy_from_slice(&q);
        next_v = Some(v);
    }
    Ok(OptimalSolution {
        values,
        q: QTable::from_raw(shape, reward.abs_max().max(1.0), qvals),
        policy: StagePolicy::deterministic(shape, &actions)?,
        initial_state: mdp.initial_state,
        states: shape.states,
    })
}

/// State-action visitation of `policy` from the point mass at `s0`.
pub fn visitation(mdp: &TabularMdp, policy: &StagePolicy) -> Result<VisitationMeasure> {
    let shape = mdp.shape;
    shape.check_same(&policy.shape(), "policy")?;
    let mut d = vec![0.0; shape.len()];
    let mut state_dist = vec![0.0; shape.states];
    state_dist[mdp.initial_state] = 1.0;
    for h in 0..shape.horizon {
        let mut next = vec![0.0; shape.states];
        for s in 0..shape.states {
            if state_dist[s] == 0.0 {
                continue;
            }
            for (a, p) in policy.row(h, s).iter().enumerate() {
                let mass = state_dist[s] * p;
                d[shape.index(h, s, a)] = mass;
                if mass > 0.0 {
                    for (n, q) in next.iter_mut().zip(mdp.next_distribution(h, s, a)) {
                        *n += mass * q;
                    }
                }
            }
        }
        state_dist = next;
    }
    Ok(VisitationMeasure::from_raw(shape, d))
}

/// Exact value of an episode-level mixture: the mean of component values.
pub fn mixture_value(mdp: &TabularMdp, reward: &RewardTable, mixture: &MixturePolicy) -> Result<f64> {
    if mixture.is_empty() {
        return input_err("empty mixture");
    }
    let mut total = 0.0;
    for p in mixture.components() {
        total += policy_value(mdp, reward, p)?;
    }
    Ok(total / mixture.len() as f64)
}

/// Roll out one episode from `s0` and return the summed reward.
pub fn sample_episode_return<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    reward: &RewardTable,
    policy: &StagePolicy,
    rng: &mut R,
) -> f64 {
    let mut s = mdp.initial_state;
    let mut total = 0.0;
    for h in 0..mdp.shape.horizon {
        let a = sample_categorical(policy.row(h, s), rng.gen());
        total += reward.get(h, s, a);
        s = sample_categorical(mdp.next_distribution(h, s, a), rng.gen());
    }
    total
}
