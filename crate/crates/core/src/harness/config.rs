//! Run configuration: a versioned JSON document.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DataDistribution, RewardNoise};
use crate::error::{Error, Result};
use crate::instance::{m2_externality, m2_mdp, m2_single_agent, random_instance, Instance, RandomInstanceSpec};
use crate::learner::{EtaMode, LambdaMode, Mode, OptimizerConfig, UnseenInit};
use crate::mdp::{RewardProfile, RewardRole, RewardTable, StagePolicy};
use crate::mechanism::MisreportFamily;
use crate::rng::derive_seed;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Master seed; instance and dataset seeds are derived from it.
    #[serde(default)]
    pub seed: u64,
    pub instance: InstanceSource,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub learner: LearnerSpec,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    M2SingleAgent,
    M2Externality,
    /// M2 dynamics, one agent, every reward zero.
    M2Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum InstanceSource {
    /// Relative paths resolve against the config file's directory.
    File { path: PathBuf },
    Random(RandomInstanceSpec),
    Builtin { name: Builtin },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Uniform,
    /// Flat `[h][s][a]` table, each step summing to one.
    Explicit { values: Vec<f64> },
    /// Visitation of a behavior policy given as flat `[h][s][a]` probabilities.
    Behavior { policy: Vec<f64> },
    PointMass { state: usize, action: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default = "default_distribution")]
    pub distribution: DistributionSpec,
    /// Dataset sizes.
    #[serde(default = "default_k")]
    pub k: Vec<usize>,
    /// Replicate labels; each gives an independent dataset per `K`.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub noise: Option<RewardNoise>,
}

fn default_distribution() -> DistributionSpec {
    DistributionSpec::Uniform
}

fn default_k() -> Vec<usize> {
    vec![2000]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            distribution: default_distribution(),
            k: default_k(),
            seeds: default_seeds(),
            noise: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    /// `(zeta1, zeta2)` pairs; every pair is run on every dataset.
    #[serde(default = "default_zetas")]
    pub zetas: Vec<(Mode, Mode)>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_lambda")]
    pub lambda: LambdaMode,
    #[serde(default = "default_eta")]
    pub eta: EtaMode,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub unseen_init: UnseenInit,
    /// Approximation error of the function class; zero for the tabular class.
    #[serde(default)]
    pub eps_f: f64,
}

fn default_zetas() -> Vec<(Mode, Mode)> {
    vec![(Mode::Pes, Mode::Opt)]
}

fn default_iterations() -> usize {
    256
}

fn default_lambda() -> LambdaMode {
    LambdaMode::Scaled {
        lambda_ref: 50.0,
        k_ref: 20_000,
    }
}

fn default_eta() -> EtaMode {
    EtaMode::Fixed { eta: 0.3 }
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec {
            zetas: default_zetas(),
            iterations: default_iterations(),
            lambda: default_lambda(),
            eta: default_eta(),
            optimizer: OptimizerConfig::default(),
            unseen_init: UnseenInit::default(),
            eps_f: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Welfare suboptimality of the learned policy.
    Welfare,
    /// Per-agent utility suboptimality.
    Agents,
    Seller,
    /// Learned prices and their distance to the exact ones.
    Prices,
    /// Minimum truthful utility over the misreport family.
    Ir,
    /// Largest gain from a single misreport.
    Truthfulness,
    /// Comparison with the finite-sample bounds at the theoretical error level.
    Bounds,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Welfare,
        Metric::Agents,
        Metric::Seller,
        Metric::Prices,
        Metric::Ir,
        Metric::Truthfulness,
        Metric::Bounds,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSpec {
    #[serde(default = "default_family")]
    pub misreports: MisreportFamily,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    /// Dataset sizes at which IR and truthfulness are computed; all when absent.
    /// Each misreport costs one extra learning run.
    #[serde(default)]
    pub desiderata_k: Option<Vec<usize>>,
}

fn default_family() -> MisreportFamily {
    MisreportFamily::grid3(3, 0)
}

fn default_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        EvaluationSpec {
            misreports: default_family(),
            metrics: default_metrics(),
            desiderata_k: None,
        }
    }
}

impl EvaluationSpec {
    pub fn wants(&self, m: Metric) -> bool {
        self.metrics.contains(&m)
    }

    pub fn desiderata_at(&self, k: usize) -> bool {
        self.desiderata_k.as_ref().is_none_or(|ks| ks.contains(&k))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// File stem of every output.
    #[serde(default = "default_name")]
    pub name: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_name() -> String {
    "report".into()
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: default_dir(),
            name: default_name(),
        }
    }
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl RunConfig {
    /// A minimal config around `instance`, everything else at defaults.
    pub fn new(instance: InstanceSource) -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            instance,
            data: DataSpec::default(),
            learner: LearnerSpec::default(),
            evaluation: EvaluationSpec::default(),
            output: OutputSpec::default(),
        }
    }

    /// Parse and validate; errors name the offending field path.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(if path == "." { "" } else { &path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load from disk; relative instance paths are resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json_str(&text)?;
        if let InstanceSource::File { path: p } = &mut cfg.instance {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let d = &self.data;
        if d.k.is_empty() {
            return Err(config_err("data.k", "at least one dataset size is required"));
        }
        if let Some(j) = d.k.iter().position(|k| *k == 0) {
            return Err(config_err(&format!("data.k[{j}]"), "dataset sizes must be at least 1"));
        }
        if d.seeds.is_empty() {
            return Err(config_err("data.seeds", "at least one seed is required"));
        }
        if d.seeds.iter().collect::<BTreeSet<_>>().len() != d.seeds.len() {
            return Err(config_err("data.seeds", "seeds must be distinct"));
        }
        if d.k.iter().collect::<BTreeSet<_>>().len() != d.k.len() {
            return Err(config_err("data.k", "dataset sizes must be distinct"));
        }
        let l = &self.learner;
        if l.zetas.is_empty() {
            return Err(config_err("learner.zetas", "at least one (zeta1, zeta2) pair is required"));
        }
        if l.iterations == 0 {
            return Err(config_err("learner.iterations", "must be at least 1"));
        }
        if !(l.eps_f >= 0.0) {
            return Err(config_err("learner.eps_f", "must be nonnegative"));
        }
        match l.lambda {
            LambdaMode::Fixed { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                return Err(config_err("learner.lambda.lambda", "must be positive"));
            }
            LambdaMode::Scaled { lambda_ref, k_ref } if !(lambda_ref > 0.0 && lambda_ref.is_finite()) || k_ref == 0 => {
                return Err(config_err("learner.lambda", "lambda_ref and k_ref must be positive"));
            }
            LambdaMode::Theory { delta } if !(delta > 0.0 && delta < 1.0) => {
                return Err(config_err("learner.lambda.delta", "must lie in (0, 1)"));
            }
            _ => {}
        }
        if let EtaMode::Fixed { eta } = l.eta {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(config_err("learner.eta.eta", "must be nonnegative"));
            }
        }
        if self.evaluation.metrics.is_empty() {
            return Err(config_err("evaluation.metrics", "at least one metric is required"));
        }
        if let Some(ks) = &self.evaluation.desiderata_k {
            if let Some(k) = ks.iter().find(|k| !d.k.contains(k)) {
                return Err(config_err("evaluation.desiderata_k", format!("{k} is not in data.k")));
            }
        }
        if self.output.name.is_empty() || self.output.name.contains(['/', '\\']) {
            return Err(config_err("output.name", "must be a plain file stem"));
        }
        Ok(())
    }

    /// Build the configured instance.
    pub fn build_instance(&self) -> Result<Instance> {
        match &self.instance {
            InstanceSource::File { path } => Instance::load(path),
            InstanceSource::Random(spec) => {
                let spec = RandomInstanceSpec {
                    seed: derive_seed(self.seed, "instance", spec.seed),
                    ..spec.clone()
                };
                random_instance(&spec)
            }
            InstanceSource::Builtin { name } => Ok(match name {
                Builtin::M2SingleAgent => m2_single_agent(),
                Builtin::M2Externality => m2_externality(),
                Builtin::M2Zero => {
                    let mdp = m2_mdp();
                    let z = RewardTable::zeros(mdp.shape());
                    let profile = RewardProfile::new(1.0, z.clone(), vec![z], RewardRole::Actual)?;
                    Instance::new(mdp, profile)?
                }
            }),
        }
    }

    pub fn distribution(&self, instance: &Instance) -> Result<DataDistribution> {
        let shape = instance.shape();
        let wrap = |e: Error| config_err("data.distribution", e.to_string());
        match &self.data.distribution {
            DistributionSpec::Uniform => Ok(DataDistribution::uniform(shape)),
            DistributionSpec::Explicit { values } => DataDistribution::explicit(shape, values.clone()).map_err(wrap),
            DistributionSpec::Behavior { policy } => {
                let pi = StagePolicy::new(shape, policy.clone()).map_err(wrap)?;
                DataDistribution::from_policy(&instance.mdp, &pi).map_err(wrap)
            }
            DistributionSpec::PointMass { state, action } => {
                DataDistribution::point_mass(shape, *state, *action).map_err(wrap)
            }
        }
    }

    /// Seed of the dataset for replicate `seed` at size `k`.
    pub fn dataset_seed(&self, seed: u64, k: usize) -> u64 {
        derive_seed(derive_seed(self.seed, "dataset", seed), "k", k as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::from_json_str(r#"{"schema_version":1,"instance":{"source":"builtin","name":"m2_single_agent"}}"#)
            .unwrap();
        assert_eq!(cfg.data.k, vec![2000]);
        assert_eq!(cfg.learner.zetas, vec![(Mode::Pes, Mode::Opt)]);
        let back = RunConfig::from_json_str(&cfg.to_json_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn random_instance_spec_missing_h_names_the_field() {
        let text = r#"{"schema_version":1,"instance":{"source":"random","S":2,"A":2,"n":1,"seed":3}}"#;
        match RunConfig::from_json_str(text) {
            Err(Error::Config { path, message }) => {
                assert!(message.contains("`H`"), "{message}");
                assert!(path.starts_with("instance") || path.is_empty(), "{path}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_carry_field_paths() {
        let bad = |body: &str| match RunConfig::from_json_str(body) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("{other:?}"),
        };
        let base = r#""schema_version":1,"instance":{"source":"builtin","name":"m2_zero"}"#;
        assert_eq!(bad(&format!(r#"{{{base},"data":{{"k":[10,0]}}}}"#)), "data.k[1]");
        assert_eq!(bad(&format!(r#"{{{base},"data":{{"seeds":[1,1]}}}}"#)), "data.seeds");
        assert_eq!(bad(&format!(r#"{{{base},"learner":{{"iterations":"x"}}}}"#)), "learner.iterations");
        assert_eq!(bad(&format!(r#"{{{base},"learner":{{"lambda":{{"kind":"fixed","lambda":-1}}}}}}"#)), "learner.lambda.lambda");
        assert_eq!(bad(&format!(r#"{{{base},"bogus":1}}"#)), "bogus");
        assert_eq!(bad(r#"{"schema_version":2,"instance":{"source":"builtin","name":"m2_zero"}}"#), "schema_version");
    }

    #[test]
    fn dataset_seeds_do_not_depend_on_other_sizes() {
        let cfg = RunConfig::new(InstanceSource::Builtin { name: Builtin::M2Zero });
        assert_eq!(cfg.dataset_seed(3, 200), cfg.dataset_seed(3, 200));
        assert_ne!(cfg.dataset_seed(3, 200), cfg.dataset_seed(3, 2000));
        assert_ne!(cfg.dataset_seed(3, 200), cfg.dataset_seed(4, 200));
    }

    #[test]
    fn builtins_and_random_build() {
        for name in [Builtin::M2SingleAgent, Builtin::M2Externality, Builtin::M2Zero] {
            RunConfig::new(InstanceSource::Builtin { name }).build_instance().unwrap();
        }
        let cfg = RunConfig::new(InstanceSource::Random(RandomInstanceSpec::new(3, 2, 2, 2, 5)));
        assert_eq!(cfg.build_instance().unwrap().num_agents(), 2);
    }
}
