//! Optimistic and pessimistic evaluation of one policy at growing sample sizes.
use offline_vcg::data::{sample_dataset, DataDistribution, RewardSelector};
use offline_vcg::instance::m2_single_agent;
use offline_vcg::learner::{evaluate_policy, EvalConfig, Mode};
use offline_vcg::mdp::{policy_value, StagePolicy};

fn main() -> offline_vcg::error::Result<()> {
    let inst = m2_single_agent();
    let pi = StagePolicy::uniform(inst.shape());
    let truth = policy_value(&inst.mdp, &inst.profile.total(), &pi)?;
    let dist = DataDistribution::uniform(inst.shape());
    println!("true value {truth:.4}");
    for k in [100, 1000, 10000] {
        let data = sample_dataset(&inst.mdp, &inst.profile, &dist, k, 3)?;
        let lambda = 50.0 * (k as f64 / 20000.0).powf(2.0 / 3.0);
        let mut line = format!("K={k:>5}");
        for mode in [Mode::Pes, Mode::Opt] {
            let e = evaluate_policy(&data, &inst.profile, &RewardSelector::Total, 0, &pi, &EvalConfig::new(lambda, mode))?;
            line += &format!("  {} {:.4} ({} its)", mode.label(), e.value, e.iterations);
        }
        println!("{line}");
    }
    Ok(())
}
