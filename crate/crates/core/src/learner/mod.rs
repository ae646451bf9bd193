//! Learning a VCG mechanism from offline data.
//!
//! Three layers, each built on the one below:
//!
//! * [`evaluate_policy`] fits an optimistic or pessimistic action-value
//!   table for a fixed policy by trading the start value against the
//!   empirical Bellman error.
//! * [`soft_policy_iteration`] alternates those evaluations with
//!   exponential-weights policy updates and returns the uniform mixture of
//!   the iterates.
//! * [`offline_vcg_learn`] runs soft policy iteration on the total reward
//!   and on every "all but agent i" reward, and turns the resulting values
//!   into prices.
//!
//! Every learning problem shares one dataset. Step indices are zero-based.

mod bellman;
mod evaluate;
mod hyper;
mod spi;
mod vcg_learn;

pub use bellman::{empirical_backup, empirical_bellman_error, empirical_loss, Backup, EmpiricalModel};
pub use evaluate::{evaluate_mixture, evaluate_policy, evaluate_with_model, objective, Evaluation};
pub use hyper::{
    compute_lambda_eta, covering_log_bounds, epsilon_s, theory_parameters, EtaMode, LambdaMode, TheoryParameters,
};
pub use spi::{mirror_descent_update, soft_policy_iteration, soft_policy_iteration_with_model, SpiBranch, SpiOutput};
pub use vcg_learn::{offline_vcg_learn, LearnDiagnostics, LearnedMechanism};

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};

/// Which side the evaluation leans to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Optimistic: maximizes the start value.
    #[serde(rename = "OPT")]
    Opt,
    /// Pessimistic: minimizes the start value.
    #[serde(rename = "PES")]
    Pes,
}

impl Mode {
    /// Sign of the start-value term in the objective.
    pub fn sign(self) -> f64 {
        match self {
            Mode::Opt => -1.0,
            Mode::Pes => 1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Mode::Opt => "OPT",
            Mode::Pes => "PES",
        }
    }
}

/// Value given to cells that never appear in the data at a step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnseenInit {
    /// The box edge on the mode's side: lower edge for PES, upper for OPT.
    #[default]
    BoxEdge,
    Zero,
}

/// Projected-gradient settings for the evaluation problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Fixed step; `None` uses the inverse of the gradient's Lipschitz bound.
    #[serde(default)]
    pub step_size: Option<f64>,
    /// Stop once an accepted step lowers the objective by less than this.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// ... and the gradient mapping is at most this long.
    #[serde(default = "default_gradient_tolerance")]
    pub gradient_tolerance: f64,
}

fn default_max_iterations() -> usize {
    5000
}

fn default_tolerance() -> f64 {
    1e-9
}

fn default_gradient_tolerance() -> f64 {
    1e-6
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: default_max_iterations(),
            step_size: None,
            tolerance: default_tolerance(),
            gradient_tolerance: default_gradient_tolerance(),
        }
    }
}

/// Settings of one regularized evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub lambda: f64,
    pub mode: Mode,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub unseen_init: UnseenInit,
}

impl EvalConfig {
    pub fn new(lambda: f64, mode: Mode) -> Self {
        EvalConfig {
            lambda,
            mode,
            optimizer: OptimizerConfig::default(),
            unseen_init: UnseenInit::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return input_err(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.optimizer.max_iterations == 0 {
            return input_err("max_iterations must be at least 1");
        }
        if !(self.optimizer.tolerance > 0.0) || !(self.optimizer.gradient_tolerance > 0.0) {
            return input_err("optimizer tolerances must be positive");
        }
        if let Some(step) = self.optimizer.step_size {
            if !(step.is_finite() && step > 0.0) {
                return input_err("step_size must be positive");
            }
        }
        Ok(())
    }

    /// Fill value for cells without data at step `h`.
    pub fn unseen_value(&self, box_bound: f64) -> f64 {
        match (self.unseen_init, self.mode) {
            (UnseenInit::Zero, _) => 0.0,
            (UnseenInit::BoxEdge, Mode::Pes) => -box_bound,
            (UnseenInit::BoxEdge, Mode::Opt) => box_bound,
        }
    }
}

/// Which halves of soft policy iteration to run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branches {
    #[default]
    Both,
    Only(Mode),
}

impl Branches {
    pub fn includes(self, mode: Mode) -> bool {
        match self {
            Branches::Both => true,
            Branches::Only(m) => m == mode,
        }
    }
}

/// Soft policy iteration settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpiConfig {
    /// Number of iterates `T`.
    pub iterations: usize,
    pub eta: f64,
    pub optimistic: EvalConfig,
    pub pessimistic: EvalConfig,
    #[serde(default)]
    pub branches: Branches,
}

impl SpiConfig {
    /// Same `lambda` for both sides.
    pub fn new(iterations: usize, eta: f64, lambda: f64) -> Self {
        SpiConfig {
            iterations,
            eta,
            optimistic: EvalConfig::new(lambda, Mode::Opt),
            pessimistic: EvalConfig::new(lambda, Mode::Pes),
            branches: Branches::Both,
        }
    }

    pub fn eval(&self, mode: Mode) -> &EvalConfig {
        match mode {
            Mode::Opt => &self.optimistic,
            Mode::Pes => &self.pessimistic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return input_err("soft policy iteration needs at least one iteration");
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return input_err(format!("eta must be nonnegative, got {}", self.eta));
        }
        if self.optimistic.mode != Mode::Opt || self.pessimistic.mode != Mode::Pes {
            return input_err("optimistic/pessimistic evaluation configs have swapped modes");
        }
        self.optimistic.validate()?;
        self.pessimistic.validate()
    }
}

/// Offline VCG learning settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VcgLearnConfig {
    /// Side used for the others' best achievable welfare.
    pub zeta1: Mode,
    /// Side used for the others' welfare under the learned policy.
    pub zeta2: Mode,
    pub spi: SpiConfig,
}

impl VcgLearnConfig {
    pub fn validate(&self) -> Result<()> {
        self.spi.validate()
    }
}
