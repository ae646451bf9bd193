//! Dynamic VCG mechanisms for episodic tabular MDPs, exact and learned from
//! offline data.
//!
//! - [`mdp`]: shapes, reward tables, policies, backward induction.
//! - [`mechanism`]: exact VCG prices, utilities and brute-force desiderata checks.
//! - [`data`]: offline datasets, sampling, CSV persistence.
//! - [`learner`]: regularized optimistic/pessimistic evaluation, soft policy
//!   iteration and the learned mechanism.
//! - [`diagnostics`]: shift coefficients and error budgets.
//! - [`harness`]: config-driven experiments behind the `offline-vcg` binary.
//!
//! Runnable examples live in `examples/`: `exact_mechanism`, `desiderata_check`,
//! `offline_dataset`, `policy_evaluation`, `soft_policy_iteration`,
//! `offline_vcg_learn`, `distribution_shift` and `k_sweep`.

pub mod error;
pub mod instance;
pub mod mdp;
pub mod rng;
pub mod mechanism;
pub mod data;
pub mod learner;
pub mod diagnostics;
pub mod harness;
