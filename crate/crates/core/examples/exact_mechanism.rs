//! Exact VCG on a random instance: allocation value and prices.
use offline_vcg::instance::{random_instance, RandomInstanceSpec};
use offline_vcg::mdp::exact_optimal;
use offline_vcg::mechanism::{agent_utility, exact_vcg, seller_utility};

fn main() -> offline_vcg::error::Result<()> {
    let inst = random_instance(&RandomInstanceSpec::new(3, 2, 3, 2, 7))?;
    let out = exact_vcg(&inst.mdp, &inst.profile)?;
    let welfare = exact_optimal(&inst.mdp, &inst.profile.total())?.start_value();
    println!("optimal welfare {welfare:.4}");
    for (i, p) in out.prices.iter().enumerate() {
        let u = agent_utility(&inst.mdp, inst.profile.agent(i)?, &out.policy, *p)?;
        println!("agent {i}: price {p:.4}, utility {u:.4}");
    }
    let seller = seller_utility(&inst.mdp, inst.profile.seller(), &out.policy, &out.prices)?;
    println!("seller utility {seller:.4}");
    Ok(())
}
