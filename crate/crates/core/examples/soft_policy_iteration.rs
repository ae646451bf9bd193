//! Pessimistic soft policy iteration on welfare; prints the value trace.
use offline_vcg::data::{sample_dataset, DataDistribution, RewardSelector};
use offline_vcg::instance::m2_single_agent;
use offline_vcg::learner::{soft_policy_iteration, Mode, SpiConfig};
use offline_vcg::mdp::{exact_optimal, Policy};

fn main() -> offline_vcg::error::Result<()> {
    let inst = m2_single_agent();
    let dist = DataDistribution::uniform(inst.shape());
    let data = sample_dataset(&inst.mdp, &inst.profile, &dist, 20000, 5)?;
    let cfg = SpiConfig::new(64, 0.3, 50.0);
    let out = soft_policy_iteration(&data, &inst.profile, &RewardSelector::Total, 0, &cfg)?;
    let pes = out.branch(Mode::Pes)?;
    for (t, v) in pes.value_trace().iter().enumerate().step_by(8) {
        println!("t={t:>3} estimate {v:.4}");
    }
    let total = inst.profile.total();
    let best = exact_optimal(&inst.mdp, &total)?.start_value();
    let got = Policy::from(pes.mixture.clone()).value(&inst.mdp, &total)?;
    println!("mixture value {got:.4} vs optimum {best:.4}");
    Ok(())
}
