//! A small sample-size sweep through the experiment harness.
use offline_vcg::harness::{cmd_learn, Builtin, InstanceSource, RunConfig};
use offline_vcg::learner::Mode;

fn main() -> offline_vcg::error::Result<()> {
    let mut cfg = RunConfig::new(InstanceSource::Builtin { name: Builtin::M2SingleAgent });
    cfg.data.k = vec![200, 2000, 20000];
    cfg.data.seeds = (0..5).collect();
    cfg.evaluation.desiderata_k = Some(vec![]);
    let (report, timings) = cmd_learn(&cfg)?;
    let z = (Mode::Pes, Mode::Opt);
    for k in &cfg.data.k {
        let a = report.aggregate(z, *k, "welfare_subopt").expect("aggregate");
        println!("K={k:>5} median SubOpt {:.4} [{:.4}, {:.4}]", a.median, a.q25, a.q75);
    }
    if let Some(s) = report.slope(z, "welfare_subopt") {
        println!("log-log slope {s:.3}");
    }
    println!("{:.2}s", timings.total_seconds);
    Ok(())
}
