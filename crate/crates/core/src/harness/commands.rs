use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{relabel, sample_dataset_with_noise, DataDistribution, OfflineDataset};
use crate::diagnostics::{
    agent_key, empirical_vs_bound, policy_visitation, shift_coefficient, shift_keys, ErrorBudget,
    MeasuredMetrics,
};
use crate::error::Result;
use crate::instance::Instance;
use crate::learner::{
    offline_vcg_learn, theory_parameters, EvalConfig, LearnedMechanism, Mode, SpiConfig, VcgLearnConfig,
};
use crate::mdp::{exact_optimal, Policy, VisitationMeasure};
use crate::mechanism::{check_desiderata, exact_vcg, subopt_welfare, Benchmark};

use super::checks::{run_suite, SuiteResult};
use super::config::{Metric, RunConfig};
use super::report::{BenchmarkSummary, ExactReport, InstanceSummary, RunReport, RunRow, Timings};

/// Tolerance of the exact-mechanism checks.
pub const EXACT_TOLERANCE: f64 = 1e-9;

/// Exact VCG on the configured instance plus the brute-force desiderata check.
pub fn cmd_exact(cfg: &RunConfig) -> Result<ExactReport> {
    let inst = cfg.build_instance()?;
    let bench = Benchmark::new(&inst.mdp, &inst.profile)?;
    let desiderata = check_desiderata(&inst.mdp, &inst.profile, &cfg.evaluation.misreports, |p| {
        exact_vcg(&inst.mdp, p)
    })?;
    Ok(ExactReport {
        schema_version: super::report::REPORT_SCHEMA,
        instance: InstanceSummary::of(&inst),
        benchmark: BenchmarkSummary::of(&bench),
        tolerance: EXACT_TOLERANCE,
        efficient: desiderata.welfare_gap <= EXACT_TOLERANCE,
        individually_rational: desiderata.min_agent_utility >= -EXACT_TOLERANCE,
        truthful: desiderata.max_truthfulness_gain <= EXACT_TOLERANCE,
        desiderata,
    })
}

/// Learning settings for one `(zetas, K)` cell.
pub fn learn_config(cfg: &RunConfig, inst: &Instance, zetas: (Mode, Mode), k: usize) -> Result<(VcgLearnConfig, crate::learner::TheoryParameters)> {
    let shape = inst.shape();
    let l = &cfg.learner;
    let r_max = inst.profile.r_max();
    let theory = theory_parameters(
        k,
        l.lambda.delta(),
        inst.num_agents(),
        shape.states,
        shape.actions,
        shape.horizon,
        l.iterations,
        r_max,
        l.eps_f,
    )?;
    let lambda = l.lambda.resolve(k, Some(&theory))?;
    let eta = l.eta.resolve(r_max, shape.horizon, shape.actions, l.iterations)?;
    let eval = |mode| EvalConfig {
        optimizer: l.optimizer,
        unseen_init: l.unseen_init,
        ..EvalConfig::new(lambda, mode)
    };
    let spi = SpiConfig {
        optimistic: eval(Mode::Opt),
        pessimistic: eval(Mode::Pes),
        ..SpiConfig::new(l.iterations, eta, lambda)
    };
    Ok((
        VcgLearnConfig {
            zeta1: zetas.0,
            zeta2: zetas.1,
            spi,
        },
        theory,
    ))
}

fn learned_mechanism<'a>(
    data: &OfflineDataset,
    inst: &'a Instance,
    cfg: &'a VcgLearnConfig,
) -> impl Fn(&crate::mdp::RewardProfile) -> Result<crate::mechanism::MechanismOutcome> + Sync + 'a {
    let data = data.clone();
    move |profile| {
        let d = relabel(&data, profile)?;
        Ok(offline_vcg_learn(&d, profile, inst.mdp.initial_state(), cfg)?.outcome)
    }
}

/// Coefficients for every bound slot, measured against the data distribution.
///
/// Slots tied to misreports get `max 1/mu`, which bounds the coefficient of
/// any target measure.
fn budget_for(
    inst: &Instance,
    mu: &VisitationMeasure,
    learned: &LearnedMechanism,
    cfg: &RunConfig,
    theory: &crate::learner::TheoryParameters,
) -> Result<Option<ErrorBudget>> {
    let shape = inst.shape();
    let n = inst.num_agents();
    let coeff = |policy: &Policy| -> Result<f64> { shift_coefficient(&policy_visitation(&inst.mdp, policy)?, mu) };
    let mut b = ErrorBudget::new(
        shape.horizon,
        inst.profile.r_max(),
        shape.actions,
        cfg.learner.iterations,
        n,
        theory.eps_s,
        cfg.learner.eps_f,
        0.0,
    )?;
    let star = exact_optimal(&inst.mdp, &inst.profile.total())?;
    b.set_shift(shift_keys::WELFARE_ITERATES, vec![coeff(&star.policy.clone().into())?])?;
    b.set_shift(shift_keys::WELFARE_OUTPUT, vec![coeff(&learned.outcome.policy)?])?;
    let universal = mu.values().iter().fold(0.0_f64, |m, p| if *p > 0.0 { m.max(1.0 / p) } else { f64::INFINITY });
    b.set_shift(shift_keys::MISREPORT_ITERATES, vec![universal])?;
    b.set_shift(shift_keys::MISREPORT_OUTPUT, vec![universal])?;
    for i in 0..n {
        let others = &learned.others[i];
        let star_i = exact_optimal(&inst.mdp, &inst.profile.excluding(i)?)?;
        b.set_shift(agent_key(shift_keys::OTHERS_OUTPUT, i), vec![coeff(&others.mixture.clone().into())?])?;
        b.set_shift(agent_key(shift_keys::OTHERS_ITERATES, i), vec![coeff(&star_i.policy.clone().into())?])?;
        let selfs = others
            .mixture
            .components()
            .iter()
            .map(|p| coeff(&p.clone().into()))
            .collect::<Result<Vec<_>>>()?;
        b.set_shift(agent_key(shift_keys::OTHERS_SELF, i), selfs)?;
    }
    let finite = b.shift_coefficients.values().flatten().all(|c| c.is_finite());
    Ok(finite.then_some(b))
}

fn supports_bounds(zetas: (Mode, Mode)) -> bool {
    matches!(zetas, (Mode::Pes, Mode::Opt) | (Mode::Opt, Mode::Pes))
}

#[allow(clippy::too_many_arguments)]
fn learn_row(
    cfg: &RunConfig,
    inst: &Instance,
    bench: &Benchmark,
    dist: &DataDistribution,
    zetas: (Mode, Mode),
    k: usize,
    seed: u64,
) -> Result<RunRow> {
    let ev = &cfg.evaluation;
    let dataset_seed = cfg.dataset_seed(seed, k);
    let reported = inst.profile.as_reported();
    let data = sample_dataset_with_noise(&inst.mdp, &reported, dist, k, dataset_seed, cfg.data.noise)?;
    let (lcfg, theory) = learn_config(cfg, inst, zetas, k)?;
    let learned = offline_vcg_learn(&data, &reported, inst.mdp.initial_state(), &lcfg)?;
    let outcome = &learned.outcome;
    let n = inst.num_agents();

    let welfare = subopt_welfare(&inst.mdp, &inst.profile, &outcome.policy)?;
    let agents = (0..n)
        .map(|i| bench.subopt_agent(&inst.mdp, &inst.profile, i, outcome))
        .collect::<Result<Vec<_>>>()?;
    let seller = bench.subopt_seller(&inst.mdp, &inst.profile, outcome)?;
    let price_error: Vec<f64> = outcome
        .prices
        .iter()
        .zip(&bench.outcome.prices)
        .map(|(a, b)| (a - b).abs())
        .collect();

    let wants_desiderata = (ev.wants(Metric::Ir) || ev.wants(Metric::Truthfulness)) && ev.desiderata_at(k);
    let desiderata = if wants_desiderata {
        Some(check_desiderata(
            &inst.mdp,
            &inst.profile,
            &ev.misreports,
            learned_mechanism(&data, inst, &lcfg),
        )?)
    } else {
        None
    };
    let ir_min = desiderata.as_ref().map(|d| d.agents.iter().map(|a| a.min_ir_utility).collect::<Vec<_>>());
    let gains = desiderata.as_ref().map(|d| d.agents.iter().map(|a| a.max_gain).collect::<Vec<_>>());

    let (budget, bounds) = if ev.wants(Metric::Bounds) && supports_bounds(zetas) {
        match budget_for(inst, dist.measure(), &learned, cfg, &theory)? {
            Some(b) => {
                let measured = MeasuredMetrics {
                    welfare_subopt: welfare,
                    agent_subopt: agents.clone(),
                    seller_subopt: seller,
                    ir_min: ir_min.clone(),
                    truthfulness_gain: gains.clone(),
                };
                let cmp = empirical_vs_bound(&measured, &b, zetas)?;
                (Some(b), Some(cmp))
            }
            None => (None, None),
        }
    } else {
        (None, None)
    };

    let keep = |m: Metric| ev.wants(m);
    Ok(RunRow {
        zeta1: zetas.0,
        zeta2: zetas.1,
        k,
        seed,
        dataset_seed,
        lambda: lcfg.spi.pessimistic.lambda,
        eta: lcfg.spi.eta,
        welfare_subopt: keep(Metric::Welfare).then_some(welfare),
        agent_subopt: keep(Metric::Agents).then_some(agents),
        seller_subopt: keep(Metric::Seller).then_some(seller),
        prices: keep(Metric::Prices).then(|| outcome.prices.clone()),
        price_error: keep(Metric::Prices).then_some(price_error),
        ir_min: ir_min.filter(|_| keep(Metric::Ir)),
        truthfulness_gain: gains.filter(|_| keep(Metric::Truthfulness)),
        bound_violations: bounds.as_ref().map(|b| b.violations),
        converged: learned.diagnostics.all_converged(),
        nonconverged_evaluations: learned.diagnostics.nonconverged_evaluations,
        welfare_estimate: learned.diagnostics.welfare_estimate,
        theory: Some(theory),
        budget,
        bounds,
    })
}

/// Learn on every `(zetas, K, seed)` cell and evaluate against the exact mechanism.
pub fn cmd_learn(cfg: &RunConfig) -> Result<(RunReport, Timings)> {
    cfg.validate()?;
    let start = Instant::now();
    let inst = cfg.build_instance()?;
    let dist = cfg.distribution(&inst)?;
    let bench = Benchmark::new(&inst.mdp, &inst.profile)?;
    let mut cells = Vec::new();
    for &z in &cfg.learner.zetas {
        for &k in &cfg.data.k {
            for &s in &cfg.data.seeds {
                cells.push((z, k, s));
            }
        }
    }
    let rows = cells
        .par_iter()
        .map(|&(z, k, s)| {
            let t = Instant::now();
            let row = learn_row(cfg, &inst, &bench, &dist, z, k, s)?;
            Ok((row, (z.0, z.1, k, s, t.elapsed().as_secs_f64())))
        })
        .collect::<Result<Vec<_>>>()?;
    let (rows, times): (Vec<RunRow>, Vec<_>) = rows.into_iter().unzip();
    let report = RunReport::new(
        InstanceSummary::of(&inst),
        BenchmarkSummary::of(&bench),
        cfg.evaluation.misreports.describe(),
        cfg.evaluation.metrics.clone(),
        rows,
    );
    let timings = Timings {
        total_seconds: start.elapsed().as_secs_f64(),
        rows: times,
    };
    Ok((report, timings))
}

/// Merge saved reports (their JSON sidecars) and recompute the aggregates.
pub fn cmd_sweep_report(paths: &[PathBuf]) -> Result<RunReport> {
    let reports = paths
        .iter()
        .map(|p| Ok((p.clone(), RunReport::load(p)?)))
        .collect::<Result<Vec<_>>>()?;
    RunReport::merge(reports)
}

/// Write the merged table, its sidecar and one plot-data file per metric.
pub fn write_sweep(report: &RunReport, dir: &Path, name: &str) -> Result<Vec<PathBuf>> {
    let mut written = report.write(dir, name)?;
    let agg = dir.join(format!("{name}.aggregates.csv"));
    std::fs::write(&agg, report.aggregates_csv()?)?;
    written.push(agg);
    for (metric, text) in report.plot_data()? {
        let p = dir.join(format!("{name}.plot.{metric}.csv"));
        std::fs::write(&p, text)?;
        written.push(p);
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

/// Run the named suite, or every suite for `all`.
pub fn cmd_check(suite: &str, seed: u64) -> Result<CheckReport> {
    let names: Vec<&str> = if suite == "all" {
        super::checks::SUITES.to_vec()
    } else {
        vec![suite]
    };
    let suites = names.iter().map(|n| run_suite(n, seed)).collect::<Result<Vec<_>>>()?;
    Ok(CheckReport { seed, suites })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{Builtin, InstanceSource};

    fn small(name: Builtin) -> RunConfig {
        let mut cfg = RunConfig::new(InstanceSource::Builtin { name });
        cfg.data.k = vec![200, 800];
        cfg.data.seeds = vec![0, 1];
        cfg.learner.iterations = 8;
        cfg.evaluation.misreports = crate::mechanism::MisreportFamily::ScalarLine { points: 3 };
        cfg
    }

    #[test]
    fn exact_on_m2_is_clean() {
        let r = cmd_exact(&small(Builtin::M2SingleAgent)).unwrap();
        assert!(r.passed());
        assert_eq!(r.desiderata.welfare_gap, 0.0);
        assert!(r.desiderata.max_truthfulness_gain <= 0.0);
        let z = cmd_exact(&small(Builtin::M2Zero)).unwrap();
        assert_eq!(z.benchmark.welfare, 0.0);
        assert_eq!(z.benchmark.prices, vec![0.0]);
        assert_eq!(z.desiderata.welfare_gap, 0.0);
        assert_eq!(z.desiderata.min_agent_utility, 0.0);
        assert_eq!(z.desiderata.max_truthfulness_gain, 0.0);
    }

    #[test]
    fn learn_rows_cover_the_grid_and_repeat_exactly() {
        let cfg = small(Builtin::M2Externality);
        let (a, _) = cmd_learn(&cfg).unwrap();
        assert_eq!(a.rows.len(), 4);
        assert!(a.rows.iter().all(|r| r.ir_min.is_some() && r.bound_violations.is_some()));
        let (b, _) = cmd_learn(&cfg).unwrap();
        assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.slope((Mode::Pes, Mode::Opt), "welfare_subopt").is_none());
    }

    #[test]
    fn desiderata_can_be_restricted_to_some_sizes() {
        let mut cfg = small(Builtin::M2SingleAgent);
        cfg.evaluation.desiderata_k = Some(vec![800]);
        let (r, _) = cmd_learn(&cfg).unwrap();
        for row in &r.rows {
            assert_eq!(row.ir_min.is_some(), row.k == 800);
        }
        assert!(r.to_csv().unwrap().contains(super::super::report::NOT_COMPUTED));
    }

    #[test]
    fn merge_is_identity_on_one_report_and_unions_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(Builtin::M2SingleAgent);
        cfg.evaluation.metrics = vec![Metric::Welfare, Metric::Prices];
        let (a, _) = cmd_learn(&cfg).unwrap();
        let pa = a.write(dir.path(), "a").unwrap()[1].clone();
        assert_eq!(cmd_sweep_report(std::slice::from_ref(&pa)).unwrap(), a);
        cfg.data.seeds = vec![2, 3];
        let (b, _) = cmd_learn(&cfg).unwrap();
        let pb = b.write(dir.path(), "b").unwrap()[1].clone();
        let merged = cmd_sweep_report(&[pa.clone(), pb]).unwrap();
        assert_eq!(merged.rows.len(), 8);
        assert_eq!(merged.aggregate((Mode::Pes, Mode::Opt), 200, "welfare_subopt").unwrap().count, 4);
        let files = write_sweep(&merged, dir.path(), "merged").unwrap();
        assert!(files.iter().any(|p| p.to_string_lossy().ends_with("merged.plot.welfare_subopt.csv")));
        // a report of another instance does not merge
        let (c, _) = cmd_learn(&RunConfig {
            evaluation: cfg.evaluation.clone(),
            ..small(Builtin::M2Zero)
        })
        .unwrap();
        let pc = c.write(dir.path(), "c").unwrap()[1].clone();
        assert!(matches!(cmd_sweep_report(&[pa, pc]), Err(crate::error::Error::Schema { .. })));
    }

    #[test]
    fn check_runs_named_suites() {
        let r = cmd_check("hyper", 0).unwrap();
        assert!(r.passed());
        assert!(cmd_check("bogus", 0).is_err());
    }
}
