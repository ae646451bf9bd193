//! Offline datasets collected step by step from a data distribution.
//!
//! At every step `h` the `K` samples are drawn independently: `(s, a)` from
//! `mu_h`, then `s'` from `P_h(. | s, a)`. Each sample carries the agents'
//! reported rewards at `(h, s, a)`. Sample `(h, tau)` uses its own random
//! stream, so parallel generation matches serial generation exactly.
//!
//! Datasets persist as JSON lines: a header object followed by one object
//! per sample in `[h][tau]` order.
//!
//! ```text
//! {"format":"offline-vcg-dataset","version":1,"S":2,"A":2,"H":2,"n":1,"K":3,"seed":7,"r_max":1.0,"provenance":{...}}
//! {"h":0,"tau":0,"s":0,"a":1,"r":[0.0],"next":1}
//! ```

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, input_err, Error, Result};
use crate::mdp::{visitation, RewardProfile, RewardTable, Shape, StagePolicy, TabularMdp, VisitationMeasure};
use crate::rng::{sample_categorical, stream_rng};

const FORMAT_NAME: &str = "offline-vcg-dataset";
const FORMAT_VERSION: u32 = 1;

/// Per-step sampling distribution over (state, action) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct DataDistribution {
    mu: VisitationMeasure,
}

impl DataDistribution {
    pub fn new(mu: VisitationMeasure) -> Self {
        DataDistribution { mu }
    }

    /// Explicit `[h][s][a]` table; each step must be a distribution.
    pub fn explicit(shape: Shape, values: Vec<f64>) -> Result<Self> {
        Ok(Self::new(VisitationMeasure::new(shape, values)?))
    }

    /// Uniform over every (state, action) pair at every step.
    pub fn uniform(shape: Shape) -> Self {
        Self::new(VisitationMeasure::uniform(shape))
    }

    /// Visitation of a behavior policy.
    pub fn from_policy(mdp: &TabularMdp, behavior: &StagePolicy) -> Result<Self> {
        Ok(Self::new(visitation(mdp, behavior)?))
    }

    /// All mass on `(s, a)` at every step.
    pub fn point_mass(shape: Shape, s: usize, a: usize) -> Result<Self> {
        if s >= shape.states || a >= shape.actions {
            return input_err(format!("point mass ({s}, {a}) out of range"));
        }
        let mut values = vec![0.0; shape.len()];
        for h in 0..shape.horizon {
            values[shape.index(h, s, a)] = 1.0;
        }
        Self::explicit(shape, values)
    }

    pub fn measure(&self) -> &VisitationMeasure {
        &self.mu
    }

    pub fn shape(&self) -> Shape {
        self.mu.shape()
    }
}

/// Optional additive noise on recorded rewards, clipped back to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardNoise {
    /// Half-width of the uniform perturbation.
    pub scale: f64,
}

/// One offline sample at step `h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub s: usize,
    pub a: usize,
    /// Reported reward of every agent at `(h, s, a)`.
    pub rewards: Vec<f64>,
    pub next: usize,
}

/// `K` samples per step for every step of the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    shape: Shape,
    num_agents: usize,
    r_max: f64,
    k: usize,
    seed: u64,
    provenance: serde_json::Value,
    samples: Vec<Sample>,
}

impl OfflineDataset {
    pub fn new(
        shape: Shape,
        num_agents: usize,
        r_max: f64,
        k: usize,
        seed: u64,
        provenance: serde_json::Value,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        if samples.len() != shape.horizon * k {
            return dim_err(format!(
                "dataset needs {} samples, got {}",
                shape.horizon * k,
                samples.len()
            ));
        }
        for (idx, x) in samples.iter().enumerate() {
            if x.s >= shape.states || x.next >= shape.states || x.a >= shape.actions {
                return input_err(format!("sample {idx} has an index out of range"));
            }
            if x.rewards.len() != num_agents {
                return dim_err(format!("sample {idx} has {} rewards", x.rewards.len()));
            }
            if x.rewards.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return input_err(format!("sample {idx} has a reward outside [0, 1]"));
            }
        }
        Ok(OfflineDataset {
            shape,
            num_agents,
            r_max,
            k,
            seed,
            provenance,
            samples,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// Samples per step.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn provenance(&self) -> &serde_json::Value {
        &self.provenance
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    /// Samples of step `h`, indexed by `tau`.
    pub fn step(&self, h: usize) -> &[Sample] {
        &self.samples[h * self.k..(h + 1) * self.k]
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub(crate) fn check_profile(&self, profile: &RewardProfile) -> Result<()> {
        self.shape.check_same(&profile.shape(), "dataset vs profile")?;
        if profile.num_agents() != self.num_agents {
            return dim_err(format!(
                "dataset has {} agents, profile has {}",
                self.num_agents,
                profile.num_agents()
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let header = Header {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            states: self.shape.states,
            actions: self.shape.actions,
            horizon: self.shape.horizon,
            n: self.num_agents,
            k: self.k,
            seed: self.seed,
            r_max: self.r_max,
            provenance: self.provenance.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for (idx, x) in self.samples.iter().enumerate() {
            let rec = Record {
                h: idx / self.k.max(1),
                tau: idx % self.k.max(1),
                s: x.s,
                a: x.a,
                r: x.rewards.clone(),
                next: x.next,
            };
            writeln!(w, "{}", serde_json::to_string(&rec).expect("record serializes"))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(std::fs::File::open(path)?))
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let parse_err = |line: usize, column: usize, message: String| Error::Parse {
            line,
            column,
            message,
        };
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| parse_err(1, 0, "missing header".into()))??;
        let header: Header =
            serde_json::from_str(&first).map_err(|e| parse_err(1, e.column(), e.to_string()))?;
        if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
            return Err(parse_err(
                1,
                0,
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }
        let shape = Shape::new(header.states, header.actions, header.horizon)?;
        let mut samples = Vec::with_capacity(shape.horizon * header.k);
        for (offset, line) in lines.enumerate() {
            let line_no = offset + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record =
                serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.column(), e.to_string()))?;
            let idx = samples.len();
            if header.k == 0 || rec.h != idx / header.k || rec.tau != idx % header.k {
                return Err(parse_err(
                    line_no,
                    0,
                    format!("record (h={}, tau={}) out of order", rec.h, rec.tau),
                ));
            }
            samples.push(Sample {
                s: rec.s,
                a: rec.a,
                rewards: rec.r,
                next: rec.next,
            });
        }
        OfflineDataset::new(
            shape,
            header.n,
            header.r_max,
            header.k,
            header.seed,
            header.provenance,
            samples,
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    #[serde(rename = "S")]
    states: usize,
    #[serde(rename = "A")]
    actions: usize,
    #[serde(rename = "H")]
    horizon: usize,
    n: usize,
    #[serde(rename = "K")]
    k: usize,
    seed: u64,
    r_max: f64,
    provenance: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    h: usize,
    tau: usize,
    s: usize,
    a: usize,
    r: Vec<f64>,
    next: usize,
}

/// Draw `k` noiseless samples per step.
pub fn sample_dataset(
    mdp: &TabularMdp,
    reported: &RewardProfile,
    dist: &DataDistribution,
    k: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    sample_dataset_with_noise(mdp, reported, dist, k, seed, None)
}

/// Like [`sample_dataset`], optionally perturbing the recorded rewards.
pub fn sample_dataset_with_noise(
    mdp: &TabularMdp,
    reported: &RewardProfile,
    dist: &DataDistribution,
    k: usize,
    seed: u64,
    noise: Option<RewardNoise>,
) -> Result<OfflineDataset> {
    let shape = mdp.shape();
    shape.check_same(&dist.shape(), "data distribution")?;
    shape.check_same(&reported.shape(), "reward profile")?;
    if let Some(nz) = noise {
        if !(nz.scale.is_finite() && nz.scale >= 0.0) {
            return input_err("noise scale must be a nonnegative number");
        }
    }
    let mu = dist.measure();
    let samples: Vec<Sample> = (0..shape.horizon * k)
        .into_par_iter()
        .map(|idx| {
            let (h, tau) = (idx / k, idx % k);
            let mut rng = stream_rng(seed, ((h as u64) << 32) | tau as u64);
            let cell = sample_categorical(mu.step(h), rng.gen());
            let (s, a) = (cell / shape.actions, cell % shape.actions);
            let next = sample_categorical(mdp.next_distribution(h, s, a), rng.gen());
            let rewards = reported
                .agents()
                .iter()
                .map(|t| {
                    let r = t.get(h, s, a);
                    match noise {
                        Some(nz) => (r + nz.scale * (2.0 * rng.gen::<f64>() - 1.0)).clamp(0.0, 1.0),
                        None => r,
                    }
                })
                .collect();
            Sample { s, a, rewards, next }
        })
        .collect();
    let provenance = serde_json::json!({
        "generator": "iid-per-step",
        "noise_scale": noise.map(|n| n.scale),
    });
    OfflineDataset::new(
        shape,
        reported.num_agents(),
        reported.r_max(),
        k,
        seed,
        provenance,
        samples,
    )
}

/// The same transitions with rewards re-read from `reported`.
pub fn relabel(dataset: &OfflineDataset, reported: &RewardProfile) -> Result<OfflineDataset> {
    dataset.check_profile(reported)?;
    let k = dataset.k;
    let samples = dataset
        .samples
        .iter()
        .enumerate()
        .map(|(idx, x)| {
            let h = idx / k;
            Sample {
                rewards: reported.agents().iter().map(|t| t.get(h, x.s, x.a)).collect(),
                ..x.clone()
            }
        })
        .collect();
    Ok(OfflineDataset {
        samples,
        ..dataset.clone()
    })
}

/// Which aggregate reward a learning problem targets.
#[derive(Clone, Debug, PartialEq)]
pub enum RewardSelector {
    /// Seller plus every agent.
    Total,
    /// Seller plus every agent except the given one.
    Exclude(usize),
    /// Everything but the given agent's report, plus that agent's actual reward.
    SinglePlus { agent: usize, actual: RewardTable },
}

impl RewardSelector {
    pub fn label(&self) -> String {
        match self {
            RewardSelector::Total => "total".into(),
            RewardSelector::Exclude(i) => format!("exclude[{i}]"),
            RewardSelector::SinglePlus { agent, .. } => format!("single_plus[{agent}]"),
        }
    }

    pub(crate) fn check(&self, profile: &RewardProfile) -> Result<()> {
        match self {
            RewardSelector::Total => Ok(()),
            RewardSelector::Exclude(i) => profile.check_agent(*i),
            RewardSelector::SinglePlus { agent, actual } => {
                profile.check_agent(*agent)?;
                profile.shape().check_same(&actual.shape(), "single-plus reward")
            }
        }
    }
}

/// Per-sample scalar rewards `r_h^tau` in `[h][tau]` order.
pub fn aggregate_rewards(
    dataset: &OfflineDataset,
    reported: &RewardProfile,
    selector: &RewardSelector,
) -> Result<Vec<f64>> {
    dataset.check_profile(reported)?;
    selector.check(reported)?;
    let k = dataset.k;
    let seller = reported.seller();
    Ok(dataset
        .samples
        .iter()
        .enumerate()
        .map(|(idx, x)| {
            let h = idx / k;
            let mut r = seller.get(h, x.s, x.a);
            for (j, v) in x.rewards.iter().enumerate() {
                r += match selector {
                    RewardSelector::Total => *v,
                    RewardSelector::Exclude(i) if *i == j => 0.0,
                    RewardSelector::Exclude(_) => *v,
                    RewardSelector::SinglePlus { agent, actual } if *agent == j => actual.get(h, x.s, x.a),
                    RewardSelector::SinglePlus { .. } => *v,
                };
            }
            r
        })
        .collect())
}

/// `mu_hat_h(s, a) = count_h(s, a) / K`.
pub fn empirical_visitation(dataset: &OfflineDataset) -> Result<VisitationMeasure> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let shape = dataset.shape;
    let mut values = vec![0.0; shape.len()];
    let mut counts = vec![0usize; shape.len()];
    for h in 0..shape.horizon {
        for x in dataset.step(h) {
            counts[shape.index(h, x.s, x.a)] += 1;
        }
    }
    for (v, c) in values.iter_mut().zip(&counts) {
        *v = *c as f64 / dataset.k as f64;
    }
    VisitationMeasure::new(shape, values)
}
