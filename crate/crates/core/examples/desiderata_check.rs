//! Brute-force efficiency, rationality and truthfulness checks of exact VCG
//! on the two-agent externality instance.
use offline_vcg::instance::m2_externality;
use offline_vcg::mechanism::{check_desiderata, exact_vcg, MisreportFamily};

fn main() -> offline_vcg::error::Result<()> {
    let inst = m2_externality();
    let family = MisreportFamily::grid3(8, 0);
    let r = check_desiderata(&inst.mdp, &inst.profile, &family, |p| exact_vcg(&inst.mdp, p))?;
    println!("family: {}", r.family);
    println!("welfare gap {:e}", r.welfare_gap);
    println!("min utility {:e}", r.min_agent_utility);
    println!("max gain from lying {:e}", r.max_truthfulness_gain);
    for a in &r.agents {
        println!(
            "agent {}: price {:.3}, {} misreports, {} joint profiles",
            a.agent, a.truthful_price, a.misreports_checked, a.ir_profiles_checked
        );
    }
    Ok(())
}
