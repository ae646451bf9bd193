//! Shift coefficients of two policies against a behavior distribution, and
//! a random search confirming they bound the ratio of Bellman residuals.
use offline_vcg::data::DataDistribution;
use offline_vcg::diagnostics::{policy_visitation, shift_coefficient, shift_ratio_search};
use offline_vcg::instance::{random_instance, RandomInstanceSpec};
use offline_vcg::mdp::{exact_optimal, Policy, StagePolicy};

fn main() -> offline_vcg::error::Result<()> {
    let inst = random_instance(&RandomInstanceSpec::new(3, 2, 2, 1, 4))?;
    let shape = inst.shape();
    let behavior = StagePolicy::uniform(shape);
    let mu = DataDistribution::from_policy(&inst.mdp, &behavior)?;
    let star = exact_optimal(&inst.mdp, &inst.profile.total())?.policy;
    for (name, pi) in [("behavior", behavior), ("optimal", star)] {
        let nu = policy_visitation(&inst.mdp, &Policy::from(pi))?;
        let c = shift_coefficient(&nu, mu.measure())?;
        let found = shift_ratio_search(&inst.mdp, &nu, mu.measure(), inst.profile.r_max(), 20000, 9)?;
        println!("{name}: C = {c:.3}, largest sampled ratio {found:.3}");
    }
    Ok(())
}
