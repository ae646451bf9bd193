//! Learn a mechanism from offline data and compare it with exact VCG.
use offline_vcg::data::{sample_dataset, DataDistribution};
use offline_vcg::instance::m2_single_agent;
use offline_vcg::learner::{offline_vcg_learn, Mode, SpiConfig, VcgLearnConfig};
use offline_vcg::mechanism::{subopt_welfare, Benchmark};

fn main() -> offline_vcg::error::Result<()> {
    let inst = m2_single_agent();
    let bench = Benchmark::new(&inst.mdp, &inst.profile)?;
    let dist = DataDistribution::uniform(inst.shape());
    let data = sample_dataset(&inst.mdp, &inst.profile, &dist, 20000, 1)?;
    let cfg = VcgLearnConfig {
        zeta1: Mode::Pes,
        zeta2: Mode::Opt,
        spi: SpiConfig::new(256, 0.3, 50.0),
    };
    let learned = offline_vcg_learn(&data, &inst.profile, 0, &cfg)?;
    let out = &learned.outcome;
    println!("prices learned {:?} exact {:?}", out.prices, bench.outcome.prices);
    println!("welfare suboptimality {:.4}", subopt_welfare(&inst.mdp, &inst.profile, &out.policy)?);
    println!("seller suboptimality {:.4}", bench.subopt_seller(&inst.mdp, &inst.profile, out)?);
    println!(
        "{} evaluations, {} not converged",
        learned.diagnostics.evaluations, learned.diagnostics.nonconverged_evaluations
    );
    Ok(())
}
