//! Empirical Bellman losses for the tabular class.
//!
//! For a fixed continuation `f_{h+1}` the squared loss
//! `L(g) = 1/K sum_tau (g(s,a) - y_tau)^2` with `y_tau = r_tau + f_{h+1}(s'_tau, pi)`
//! is minimized cellwise by the mean target `g*(s,a)`. Expanding the square
//! gives the excess-loss identity
//!
//! ```text
//! L(f_h) - L(g*) = sum_{s,a} mu_hat(s,a) (f_h(s,a) - g*(s,a))^2
//! ```
//!
//! which is what the evaluation problem penalizes. Targets are bounded by
//! the step box, so `g*` already lies in it.

use crate::data::{aggregate_rewards, OfflineDataset, RewardSelector};
use crate::error::{dim_err, Error, Result};
use crate::mdp::{QTable, RewardProfile, Shape, StagePolicy};

use super::EvalConfig;

/// Sufficient statistics of one learning problem: empirical cell weights,
/// mean rewards and next-state distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalModel {
    shape: Shape,
    r_max: f64,
    initial_state: usize,
    k: usize,
    mu: Vec<f64>,
    reward: Vec<f64>,
    next: Vec<f64>,
}

impl EmpiricalModel {
    pub fn new(
        dataset: &OfflineDataset,
        reported: &RewardProfile,
        selector: &RewardSelector,
        initial_state: usize,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let shape = dataset.shape();
        if initial_state >= shape.states {
            return Err(Error::Input(format!("initial state {initial_state} out of range")));
        }
        let rewards = aggregate_rewards(dataset, reported, selector)?;
        let k = dataset.k();
        let mut counts = vec![0usize; shape.len()];
        let mut reward = vec![0.0; shape.len()];
        let mut next = vec![0.0; shape.len() * shape.states];
        for h in 0..shape.horizon {
            for (tau, x) in dataset.step(h).iter().enumerate() {
                let c = shape.index(h, x.s, x.a);
                counts[c] += 1;
                reward[c] += rewards[h * k + tau];
                next[c * shape.states + x.next] += 1.0;
            }
        }
        let mut mu = vec![0.0; shape.len()];
        for c in 0..shape.len() {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                mu[c] = n / k as f64;
                reward[c] /= n;
                next[c * shape.states..(c + 1) * shape.states]
                    .iter_mut()
                    .for_each(|p| *p /= n);
            }
        }
        Ok(EmpiricalModel {
            shape,
            r_max: reported.r_max(),
            initial_state,
            k,
            mu,
            reward,
            next,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Empirical weights `mu_hat` in `[h][s][a]` order.
    pub fn weights(&self) -> &[f64] {
        &self.mu
    }

    #[inline]
    pub fn seen(&self, cell: usize) -> bool {
        self.mu[cell] > 0.0
    }

    #[inline]
    pub(crate) fn mean_reward(&self, cell: usize) -> f64 {
        self.reward[cell]
    }

    /// Empirical next-state distribution of a flat cell index.
    #[inline]
    pub(crate) fn next_distribution(&self, cell: usize) -> &[f64] {
        let s = self.shape.states;
        &self.next[cell * s..(cell + 1) * s]
    }

    /// Mean target `g*` at step `h` over seen cells; unseen cells get 0.
    pub fn mean_target(&self, h: usize, policy: &StagePolicy, f_next: Option<&[f64]>) -> Vec<f64> {
        let shape = self.shape;
        let c = shape.cells();
        let next_v = match f_next {
            Some(f) if h + 1 < shape.horizon => Some(next_state_values(shape, h + 1, policy, f)),
            _ => None,
        };
        (0..c)
            .map(|j| {
                let cell = h * c + j;
                if !self.seen(cell) {
                    return 0.0;
                }
                let mut g = self.reward[cell];
                if let Some(v) = &next_v {
                    g += self
                        .next_distribution(cell)
                        .iter()
                        .zip(v)
                        .map(|(p, v)| p * v)
                        .sum::<f64>();
                }
                g
            })
            .collect()
    }
}

/// `v(s) = sum_a pi_h(a|s) f_h(s, a)` for an `[s][a]` slice.
pub(crate) fn next_state_values(shape: Shape, h: usize, policy: &StagePolicy, f: &[f64]) -> Vec<f64> {
    (0..shape.states)
        .map(|s| {
            f[s * shape.actions..(s + 1) * shape.actions]
                .iter()
                .zip(policy.row(h, s))
                .map(|(q, p)| q * p)
                .sum()
        })
        .collect()
}

fn check_slices(shape: Shape, h: usize, f_h: Option<&[f64]>, f_next: Option<&[f64]>, policy: &StagePolicy) -> Result<()> {
    shape.check_same(&policy.shape(), "policy")?;
    if h >= shape.horizon {
        return Err(Error::Input(format!("step {h} out of range")));
    }
    for f in [f_h, f_next].into_iter().flatten() {
        if f.len() != shape.cells() {
            return dim_err(format!("step slice needs {} entries, got {}", shape.cells(), f.len()));
        }
    }
    Ok(())
}

/// Squared regression loss of `f_h` against bootstrapped targets, averaged over the `K` samples of step `h`.
pub fn empirical_loss(
    f_h: &[f64],
    f_next: Option<&[f64]>,
    policy: &StagePolicy,
    dataset: &OfflineDataset,
    reported: &RewardProfile,
    selector: &RewardSelector,
    h: usize,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let shape = dataset.shape();
    check_slices(shape, h, Some(f_h), f_next, policy)?;
    let rewards = aggregate_rewards(dataset, reported, selector)?;
    let k = dataset.k();
    let next_v = match f_next {
        Some(f) if h + 1 < shape.horizon => Some(next_state_values(shape, h + 1, policy, f)),
        _ => None,
    };
    let total: f64 = dataset
        .step(h)
        .iter()
        .enumerate()
        .map(|(tau, x)| {
            let y = rewards[h * k + tau] + next_v.as_ref().map_or(0.0, |v| v[x.next]);
            let r = f_h[x.s * shape.actions + x.a] - y;
            r * r
        })
        .sum();
    Ok(total / k as f64)
}

/// The cellwise loss minimizer at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Backup {
    /// `[s][a]` values, clipped to the step box.
    pub values: Vec<f64>,
    /// Cells without samples; their values come from the configured fill.
    pub unseen: Vec<bool>,
}

/// Minimizer of [`empirical_loss`] over step tables for a fixed continuation.
pub fn empirical_backup(
    f_next: Option<&[f64]>,
    policy: &StagePolicy,
    dataset: &OfflineDataset,
    reported: &RewardProfile,
    selector: &RewardSelector,
    initial_state: usize,
    h: usize,
    cfg: &EvalConfig,
) -> Result<Backup> {
    let model = EmpiricalModel::new(dataset, reported, selector, initial_state)?;
    check_slices(model.shape, h, None, f_next, policy)?;
    let bound = model.shape.box_bound(h, model.r_max);
    let c = model.shape.cells();
    let target = model.mean_target(h, policy, f_next);
    let unseen: Vec<bool> = (0..c).map(|j| !model.seen(h * c + j)).collect();
    let values = target
        .iter()
        .zip(&unseen)
        .map(|(g, u)| if *u { cfg.unseen_value(bound) } else { g.clamp(-bound, bound) })
        .collect();
    Ok(Backup { values, unseen })
}

/// Excess empirical loss of `f_h` over the best step table, for continuation `f_{h+1}`.
pub fn empirical_bellman_error(
    f: &QTable,
    policy: &StagePolicy,
    dataset: &OfflineDataset,
    reported: &RewardProfile,
    selector: &RewardSelector,
    initial_state: usize,
    h: usize,
) -> Result<f64> {
    let model = EmpiricalModel::new(dataset, reported, selector, initial_state)?;
    model.shape.check_same(&f.shape(), "Q table")?;
    check_slices(model.shape, h, None, None, policy)?;
    Ok(step_error(&model, policy, f.values(), h))
}

/// `sum mu_hat (f_h - g*)^2` for a flat `[h][s][a]` vector.
pub(crate) fn step_error(model: &EmpiricalModel, policy: &StagePolicy, f: &[f64], h: usize) -> f64 {
    let c = model.shape.cells();
    let f_next = (h + 1 < model.shape.horizon).then(|| &f[(h + 1) * c..(h + 2) * c]);
    let target = model.mean_target(h, policy, f_next);
    (0..c)
        .map(|j| {
            let w = model.mu[h * c + j];
            let r = f[h * c + j] - target[j];
            w * r * r
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_dataset, DataDistribution, Sample};
    use crate::instance::{m2_single_agent, random_instance, RandomInstanceSpec};
    use crate::learner::Mode;
    use crate::mdp::{RewardRole, RewardTable};
    use proptest::prelude::*;

    /// One state, one action, one step; samples carry the given agent rewards.
    fn scalar_dataset(rewards: &[f64]) -> (OfflineDataset, RewardProfile) {
        let shape = Shape::new(1, 1, 1).unwrap();
        let samples = rewards
            .iter()
            .map(|r| Sample {
                s: 0,
                a: 0,
                rewards: vec![*r],
                next: 0,
            })
            .collect();
        let d = OfflineDataset::new(shape, 1, 1.0, rewards.len(), 0, serde_json::Value::Null, samples).unwrap();
        let z = RewardTable::zeros(shape);
        let p = RewardProfile::new(1.0, z.clone(), vec![z], RewardRole::Reported).unwrap();
        (d, p)
    }

    fn uniform1() -> StagePolicy {
        StagePolicy::uniform(Shape::new(1, 1, 1).unwrap())
    }

    #[test]
    fn loss_by_hand() {
        let (d, p) = scalar_dataset(&[1.0]);
        assert_eq!(empirical_loss(&[0.0], None, &uniform1(), &d, &p, &RewardSelector::Total, 0).unwrap(), 1.0);
        assert_eq!(empirical_loss(&[1.0], None, &uniform1(), &d, &p, &RewardSelector::Total, 0).unwrap(), 0.0);
        let (d, p) = scalar_dataset(&[0.0, 1.0]);
        assert_eq!(empirical_loss(&[1.0], None, &uniform1(), &d, &p, &RewardSelector::Total, 0).unwrap(), 0.5);
        let (e, p) = scalar_dataset(&[]);
        assert!(matches!(
            empirical_loss(&[1.0], None, &uniform1(), &e, &p, &RewardSelector::Total, 0),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn backup_is_mean_target() {
        let (d, p) = scalar_dataset(&[0.0, 1.0]);
        let cfg = EvalConfig::new(1.0, Mode::Pes);
        let b = empirical_backup(None, &uniform1(), &d, &p, &RewardSelector::Total, 0, 0, &cfg).unwrap();
        assert_eq!(b.values, vec![0.5]);
        assert_eq!(b.unseen, vec![false]);

        let f = QTable::new(Shape::new(1, 1, 1).unwrap(), 1.0, vec![1.0]).unwrap();
        let e = empirical_bellman_error(&f, &uniform1(), &d, &p, &RewardSelector::Total, 0, 0).unwrap();
        assert_eq!(e, 0.25);
        let l_f = empirical_loss(&[1.0], None, &uniform1(), &d, &p, &RewardSelector::Total, 0).unwrap();
        let l_g = empirical_loss(&[0.5], None, &uniform1(), &d, &p, &RewardSelector::Total, 0).unwrap();
        assert_eq!(l_f - l_g, 0.25);
    }

    #[test]
    fn backup_on_deterministic_mdp_and_unseen_fill() {
        let inst = m2_single_agent();
        let shape = inst.shape();
        let dist = DataDistribution::point_mass(shape, 0, 1).unwrap();
        let d = sample_dataset(&inst.mdp, &inst.profile, &dist, 10, 1).unwrap();
        let pi = StagePolicy::uniform(shape);
        let zero = vec![0.0; 4];
        let cfg = EvalConfig::new(1.0, Mode::Pes);
        let b = empirical_backup(Some(&zero), &pi, &d, &inst.profile, &RewardSelector::Total, 0, 0, &cfg).unwrap();
        assert_eq!(b.unseen, vec![true, false, true, true]);
        assert_eq!(b.values, vec![-2.0, 0.0, -2.0, -2.0]);
        let b = empirical_backup(Some(&zero), &pi, &d, &inst.profile, &RewardSelector::Total, 0, 1, &cfg).unwrap();
        assert_eq!(b.values, vec![-1.0, 0.0, -1.0, -1.0]);
        let opt = EvalConfig::new(1.0, Mode::Opt);
        let b = empirical_backup(None, &pi, &d, &inst.profile, &RewardSelector::Total, 0, 0, &opt).unwrap();
        assert_eq!(b.values[0], 2.0);
    }

    #[test]
    fn weighted_residual_example() {
        // two cells with weights 0.75 / 0.25 and residuals 0.2 / 0.4
        let shape = Shape::new(1, 2, 1).unwrap();
        let mut samples = Vec::new();
        for a in [0, 0, 0, 1] {
            samples.push(Sample {
                s: 0,
                a,
                rewards: vec![0.0],
                next: 0,
            });
        }
        let d = OfflineDataset::new(shape, 1, 1.0, 4, 0, serde_json::Value::Null, samples).unwrap();
        let z = RewardTable::zeros(shape);
        let p = RewardProfile::new(1.0, z.clone(), vec![z], RewardRole::Reported).unwrap();
        let f = QTable::new(shape, 1.0, vec![0.2, 0.4]).unwrap();
        let pi = StagePolicy::uniform(shape);
        let e = empirical_bellman_error(&f, &pi, &d, &p, &RewardSelector::Total, 0, 0).unwrap();
        assert!((e - 0.07).abs() < 1e-15);
    }

    #[test]
    fn grid_search_matches_identity_on_one_cell() {
        let (d, p) = scalar_dataset(&[0.1, 0.7, 0.4, 0.9, 0.35]);
        let pi = uniform1();
        let f = 0.8;
        let l_f = empirical_loss(&[f], None, &pi, &d, &p, &RewardSelector::Total, 0).unwrap();
        let best = (0..=2000)
            .map(|k| -1.0 + k as f64 * 1e-3)
            .map(|g| empirical_loss(&[g], None, &pi, &d, &p, &RewardSelector::Total, 0).unwrap())
            .fold(f64::INFINITY, f64::min);
        let q = QTable::new(Shape::new(1, 1, 1).unwrap(), 1.0, vec![f]).unwrap();
        let e = empirical_bellman_error(&q, &pi, &d, &p, &RewardSelector::Total, 0, 0).unwrap();
        assert!((e - (l_f - best)).abs() < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn identity_matches_definition(seed in 0u64..10_000, k in 1usize..60, h in 0usize..3) {
            let inst = random_instance(&RandomInstanceSpec::new(3, 2, 3, 2, seed)).unwrap();
            let shape = inst.shape();
            let d = sample_dataset(&inst.mdp, &inst.profile, &DataDistribution::uniform(shape), k, seed).unwrap();
            let pi = StagePolicy::uniform(shape);
            let f: Vec<f64> = (0..shape.len())
                .map(|j| ((j as f64 * 0.37 + seed as f64).sin()) * shape.box_bound(j / shape.cells(), 2.0) * 0.9)
                .collect();
            let q = QTable::new(shape, 2.0, f.clone()).unwrap();
            let sel = RewardSelector::Exclude(1);
            let c = shape.cells();
            let f_next = (h + 1 < shape.horizon).then(|| &f[(h + 1) * c..(h + 2) * c]);
            let model = EmpiricalModel::new(&d, &inst.profile, &sel, 0).unwrap();
            let g = model.mean_target(h, &pi, f_next);
            let l_f = empirical_loss(&f[h * c..(h + 1) * c], f_next, &pi, &d, &inst.profile, &sel, h).unwrap();
            let l_g = empirical_loss(&g, f_next, &pi, &d, &inst.profile, &sel, h).unwrap();
            let e = empirical_bellman_error(&q, &pi, &d, &inst.profile, &sel, 0, h).unwrap();
            prop_assert!(e >= -1e-12);
            prop_assert!((e - (l_f - l_g)).abs() <= 1e-12 * (1.0 + l_f));
        }
    }
}
