//! Problem instances: an MDP paired with a reward profile.
//!
//! Instances round-trip through a small JSON document:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "S": 2, "A": 2, "H": 2, "n": 1, "r_max": 1.0, "s0": 0,
//!   "transition": [[[[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [1.0, 0.0]]], ...],
//!   "seller_reward": [[[0.0, 0.0], [0.0, 0.0]], ...],
//!   "agent_rewards": [[[[0.0, 0.0], [1.0, 1.0]], ...]]
//! }
//! ```
//!
//! `transition` is nested `[h][s][a][s']`, reward tables `[h][s][a]`, and
//! `agent_rewards` adds a leading agent axis.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{RewardProfile, RewardRole, RewardTable, Shape, TabularMdp};
use crate::rng::stream_rng;

pub const INSTANCE_SCHEMA_VERSION: u32 = 1;

/// An MDP together with the true rewards of the seller and every agent.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub mdp: TabularMdp,
    pub profile: RewardProfile,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    schema_version: u32,
    #[serde(rename = "S")]
    states: usize,
    #[serde(rename = "A")]
    actions: usize,
    #[serde(rename = "H")]
    horizon: usize,
    n: usize,
    r_max: f64,
    s0: usize,
    transition: Vec<Vec<Vec<Vec<f64>>>>,
    seller_reward: Vec<Vec<Vec<f64>>>,
    agent_rewards: Vec<Vec<Vec<Vec<f64>>>>,
}

fn flatten3(name: &str, t: &[Vec<Vec<f64>>], shape: Shape) -> Result<Vec<f64>> {
    let bad = || Error::Dimension(format!("{name} must be {}x{}x{}", shape.horizon, shape.states, shape.actions));
    if t.len() != shape.horizon {
        return Err(bad());
    }
    let mut out = Vec::with_capacity(shape.len());
    for step in t {
        if step.len() != shape.states {
            return Err(bad());
        }
        for row in step {
            if row.len() != shape.actions {
                return Err(bad());
            }
            out.extend_from_slice(row);
        }
    }
    Ok(out)
}

fn nest3(values: &[f64], shape: Shape) -> Vec<Vec<Vec<f64>>> {
    values
        .chunks(shape.cells())
        .map(|step| step.chunks(shape.actions).map(<[f64]>::to_vec).collect())
        .collect()
}

impl Instance {
    pub fn new(mdp: TabularMdp, profile: RewardProfile) -> Result<Self> {
        mdp.shape().check_same(&profile.shape(), "reward profile")?;
        Ok(Instance { mdp, profile })
    }

    pub fn shape(&self) -> Shape {
        self.mdp.shape()
    }

    pub fn num_agents(&self) -> usize {
        self.profile.num_agents()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if file.schema_version != INSTANCE_SCHEMA_VERSION {
            return Err(Error::Input(format!(
                "unsupported instance schema_version {}",
                file.schema_version
            )));
        }
        let shape = Shape::new(file.states, file.actions, file.horizon)?;
        if file.agent_rewards.len() != file.n {
            return Err(Error::Dimension(format!(
                "agent_rewards has {} tables but n = {}",
                file.agent_rewards.len(),
                file.n
            )));
        }
        let mut transition = Vec::with_capacity(shape.len() * shape.states);
        let bad = || Error::Dimension("transition must be HxSxAxS".into());
        if file.transition.len() != shape.horizon {
            return Err(bad());
        }
        for step in &file.transition {
            if step.len() != shape.states {
                return Err(bad());
            }
            for by_action in step {
                if by_action.len() != shape.actions {
                    return Err(bad());
                }
                for row in by_action {
                    if row.len() != shape.states {
                        return Err(bad());
                    }
                    transition.extend_from_slice(row);
                }
            }
        }
        let mdp = TabularMdp::new(shape, transition, file.s0)?;
        let seller = RewardTable::new(shape, flatten3("seller_reward", &file.seller_reward, shape)?)?;
        let agents = file
            .agent_rewards
            .iter()
            .enumerate()
            .map(|(i, t)| RewardTable::new(shape, flatten3(&format!("agent_rewards[{i}]"), t, shape)?))
            .collect::<Result<Vec<_>>>()?;
        let profile = RewardProfile::new(file.r_max, seller, agents, RewardRole::Actual)?;
        Instance::new(mdp, profile)
    }

    pub fn to_json_string(&self) -> String {
        let shape = self.shape();
        let transition = self
            .mdp
            .transitions()
            .chunks(shape.cells() * shape.states)
            .map(|step| {
                step.chunks(shape.actions * shape.states)
                    .map(|by_state| by_state.chunks(shape.states).map(<[f64]>::to_vec).collect())
                    .collect()
            })
            .collect();
        let file = InstanceFile {
            schema_version: INSTANCE_SCHEMA_VERSION,
            states: shape.states,
            actions: shape.actions,
            horizon: shape.horizon,
            n: self.num_agents(),
            r_max: self.profile.r_max(),
            s0: self.mdp.initial_state(),
            transition,
            seller_reward: nest3(self.profile.seller().values(), shape),
            agent_rewards: self
                .profile
                .agents()
                .iter()
                .map(|t| nest3(t.values(), shape))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("instance serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }
}

/// Two states, two actions, two steps; `a0` stays and `a1` swaps.
pub fn m2_mdp() -> TabularMdp {
    let shape = Shape {
        states: 2,
        actions: 2,
        horizon: 2,
    };
    TabularMdp::deterministic(shape, 0, |_, s, a| if a == 0 { s } else { 1 - s })
        .expect("valid M2 dynamics")
}

/// Indicator reward of being in state `target` at every step.
pub fn state_indicator(shape: Shape, target: usize) -> RewardTable {
    RewardTable::from_fn(shape, |_, s, _| if s == target { 1.0 } else { 0.0 })
}

/// M2 with one agent rewarded for sitting in `s1`; zero seller reward.
pub fn m2_single_agent() -> Instance {
    let mdp = m2_mdp();
    let shape = mdp.shape();
    let profile = RewardProfile::new(
        1.0,
        RewardTable::zeros(shape),
        vec![state_indicator(shape, 1)],
        RewardRole::Actual,
    )
    .expect("valid profile");
    Instance { mdp, profile }
}

/// M2 with two agents who want opposite states, so welfare is constant.
pub fn m2_externality() -> Instance {
    let mdp = m2_mdp();
    let shape = mdp.shape();
    let profile = RewardProfile::new(
        2.0,
        RewardTable::zeros(shape),
        vec![state_indicator(shape, 1), state_indicator(shape, 0)],
        RewardRole::Actual,
    )
    .expect("valid profile");
    Instance { mdp, profile }
}

/// Parameters for a random instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomInstanceSpec {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub n: usize,
    /// Defaults to `max(1, n)`, which leaves the seller the range `[-n, 0]`.
    #[serde(default)]
    pub r_max: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of transition entries zeroed out before renormalizing.
    #[serde(default)]
    pub sparsity: f64,
}

impl RandomInstanceSpec {
    pub fn new(states: usize, actions: usize, horizon: usize, n: usize, seed: u64) -> Self {
        RandomInstanceSpec {
            states,
            actions,
            horizon,
            n,
            r_max: None,
            seed,
            sparsity: 0.0,
        }
    }

    pub fn resolved_r_max(&self) -> f64 {
        self.r_max.unwrap_or((self.n as f64).max(1.0))
    }
}

/// Draw a random instance: Dirichlet(1) transitions, uniform agent rewards
/// in `[0, 1]` and uniform seller rewards over their admissible range.
pub fn random_instance(spec: &RandomInstanceSpec) -> Result<Instance> {
    let shape = Shape::new(spec.states, spec.actions, spec.horizon)?;
    if spec.n == 0 {
        return Err(Error::Input("random instance needs n >= 1".into()));
    }
    if !(0.0..1.0).contains(&spec.sparsity) {
        return Err(Error::Input(format!("sparsity must lie in [0, 1), got {}", spec.sparsity)));
    }
    let r_max = spec.resolved_r_max();
    let mut rng = stream_rng(spec.seed, 0);
    let mut transition = Vec::with_capacity(shape.len() * shape.states);
    for _ in 0..shape.len() {
        let mut row: Vec<f64> = (0..shape.states)
            .map(|_| {
                let u: f64 = rng.gen();
                let keep = rng.gen::<f64>() >= spec.sparsity;
                if keep {
                    -(1.0 - u).ln()
                } else {
                    0.0
                }
            })
            .collect();
        if row.iter().all(|v| *v == 0.0) {
            row[rng.gen_range(0..shape.states)] = 1.0;
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
        // make the row sum to one exactly up to rounding
        let drift: f64 = 1.0 - row.iter().sum::<f64>();
        let j = row
            .iter()
            .enumerate()
            .fold(0, |b, (k, v)| if *v > row[b] { k } else { b });
        row[j] += drift;
        transition.extend(row);
    }
    let s0 = rng.gen_range(0..shape.states);
    let mdp = TabularMdp::new(shape, transition, s0)?;
    let (lo, hi) = (-r_max, r_max - spec.n as f64);
    let seller = RewardTable::from_fn(shape, |_, _, _| lo + (hi - lo) * rng.gen::<f64>());
    let agents = (0..spec.n)
        .map(|_| RewardTable::from_fn(shape, |_, _, _| rng.gen::<f64>()))
        .collect();
    let profile = RewardProfile::new(r_max, seller, agents, RewardRole::Actual)?;
    Instance::new(mdp, profile)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        for inst in [
            m2_single_agent(),
            m2_externality(),
            random_instance(&RandomInstanceSpec::new(3, 2, 3, 2, 9)).unwrap(),
        ] {
            let text = inst.to_json_string();
            let back = Instance::from_json_str(&text).unwrap();
            assert_eq!(back, inst);
            assert_eq!(back.to_json_string(), text);
        }
    }

    #[test]
    fn missing_field_is_named() {
        let text = m2_single_agent().to_json_string().replace("\"H\"", "\"horizon\"");
        let err = Instance::from_json_str(&text).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(err.to_string().contains("`H`"), "{err}");
    }

    #[test]
    fn random_instances_are_valid_and_seeded() {
        for seed in 0..20 {
            let spec = RandomInstanceSpec {
                sparsity: 0.5,
                ..RandomInstanceSpec::new(4, 3, 3, 3, seed)
            };
            let a = random_instance(&spec).unwrap();
            let b = random_instance(&spec).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.profile.r_max(), 3.0);
        }
        let a = random_instance(&RandomInstanceSpec::new(3, 3, 2, 1, 1)).unwrap();
        let b = random_instance(&RandomInstanceSpec::new(3, 3, 2, 1, 2)).unwrap();
        assert_ne!(a, b);
    }
}
