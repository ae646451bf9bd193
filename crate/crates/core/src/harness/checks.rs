//! Invariant suites run by `offline-vcg check` and by the acceptance tests.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_dataset, DataDistribution, OfflineDataset, RewardSelector, Sample};
use crate::diagnostics::{induced_gap, shift_coefficient, shift_ratio_search};
use crate::error::{Error, Result};
use crate::instance::{m2_externality, random_instance, Instance, RandomInstanceSpec};
use crate::learner::{
    compute_lambda_eta, empirical_bellman_error, empirical_loss, epsilon_s, evaluate_policy, mirror_descent_update,
    EmpiricalModel, EvalConfig, Mode,
};
use crate::mdp::{
    policy_value, visitation, QTable, RewardProfile, RewardRole, RewardTable, Shape, StagePolicy, VisitationMeasure,
};
use crate::mechanism::{check_desiderata, exact_vcg, MisreportFamily};
use crate::rng::{derive_seed, stream_rng};

/// Outcome of one suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub failures: usize,
    /// Largest violation of the suite's inequality (`<= 0` when all hold).
    pub worst_margin: f64,
    pub detail: String,
}

impl SuiteResult {
    fn from_margins(name: &str, margins: &[f64], detail: String) -> Self {
        let failures = margins.iter().filter(|m| !(**m <= 0.0)).count();
        SuiteResult {
            name: name.into(),
            passed: failures == 0 && !margins.is_empty(),
            cases: margins.len(),
            failures,
            worst_margin: margins.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            detail,
        }
    }

    /// One line for logs: `PASS name: detail`.
    pub fn line(&self) -> String {
        format!(
            "{} {}: {} cases, {} failures, worst margin {:.3e}; {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.failures,
            self.worst_margin,
            self.detail
        )
    }
}

pub const SUITES: [&str; 8] = [
    "desiderata",
    "pessimism",
    "induced-gap",
    "regret",
    "closed-form",
    "identity",
    "shift-soundness",
    "hyper",
];

/// Run a suite by name with its default size.
pub fn run_suite(name: &str, seed: u64) -> Result<SuiteResult> {
    match name {
        "desiderata" => desiderata_suite(50, seed),
        "pessimism" => Ok(pessimism_suite(20, 20_000, seed)?.0),
        "induced-gap" => Ok(pessimism_suite(20, 20_000, seed)?.1),
        "regret" => regret_suite(200, &[16, 64, 256], seed),
        "closed-form" => closed_form_suite(),
        "identity" => identity_suite(100, seed),
        "shift-soundness" => shift_suite(20, 10_000, seed),
        "hyper" => hyper_suite(),
        other => Err(Error::Config {
            path: "--suite".into(),
            message: format!("unknown suite `{other}`; expected one of {}", SUITES.join(", ")),
        }),
    }
}

fn random_policy(shape: Shape, rng: &mut ChaCha8Rng, floor: f64) -> StagePolicy {
    let mut probs = Vec::with_capacity(shape.len());
    for _ in 0..shape.horizon * shape.states {
        let row: Vec<f64> = (0..shape.actions).map(|_| rng.gen::<f64>() + floor).collect();
        let t: f64 = row.iter().sum();
        probs.extend(row.iter().map(|p| p / t));
    }
    StagePolicy::new(shape, probs).expect("normalized rows")
}

/// Exact-mechanism efficiency, IR and truthfulness on random instances with
/// three-level grids over at most nine entries per agent, plus the M2
/// externality instance with its full grid.
pub fn desiderata_suite(instances: usize, seed: u64) -> Result<SuiteResult> {
    const TOL: f64 = 1e-9;
    let mut cases: Vec<(Instance, MisreportFamily)> = (0..instances)
        .map(|j| {
            let mut rng = stream_rng(derive_seed(seed, "desiderata", j as u64), 0);
            let spec = RandomInstanceSpec::new(
                rng.gen_range(1..=4),
                rng.gen_range(1..=4),
                rng.gen_range(1..=3),
                rng.gen_range(1..=3),
                rng.gen(),
            );
            Ok((random_instance(&spec)?, MisreportFamily::grid3(9, rng.gen())))
        })
        .collect::<Result<_>>()?;
    cases.push((m2_externality(), MisreportFamily::grid3(8, 0)));
    let reports = cases
        .iter()
        .map(|(inst, fam)| check_desiderata(&inst.mdp, &inst.profile, fam, |p| exact_vcg(&inst.mdp, p)))
        .collect::<Result<Vec<_>>>()?;
    let mut margins = Vec::new();
    let mut profiles = 0;
    for r in &reports {
        margins.push(r.welfare_gap - TOL);
        margins.push(-r.min_agent_utility - TOL);
        margins.push(r.max_truthfulness_gain - TOL);
        profiles += r.agents.iter().map(|a| a.misreports_checked + a.ir_profiles_checked).sum::<usize>();
    }
    let worst_gain = reports.iter().map(|r| r.max_truthfulness_gain).fold(f64::NEG_INFINITY, f64::max);
    let min_ir = reports.iter().map(|r| r.min_agent_utility).fold(f64::INFINITY, f64::min);
    Ok(SuiteResult::from_margins(
        "desiderata",
        &margins,
        format!(
            "{} instances, {profiles} profiles, max gain {worst_gain:.3e}, min IR utility {min_ir:.3e}",
            reports.len()
        ),
    ))
}

/// Pessimism/optimism of the evaluation and the induced-MDP inequality on
/// random `(instance, policy, seed)` triples with uniform data.
///
/// Returns `(pessimism, induced_gap)`. Pessimism passes at a 95% rate.
pub fn pessimism_suite(triples: usize, k: usize, seed: u64) -> Result<(SuiteResult, SuiteResult)> {
    let results = (0..triples)
        .into_par_iter()
        .map(|j| -> Result<(f64, f64, [f64; 2])> {
            let mut rng = stream_rng(derive_seed(seed, "pessimism", j as u64), 0);
            let spec = RandomInstanceSpec::new(rng.gen_range(2..=4), rng.gen_range(2..=3), rng.gen_range(1..=3), rng.gen_range(1..=2), rng.gen());
            let inst = random_instance(&spec)?;
            let shape = inst.shape();
            let pi = random_policy(shape, &mut rng, 0.05);
            let d = sample_dataset(&inst.mdp, &inst.profile, &DataDistribution::uniform(shape), k, rng.gen())?;
            let total = inst.profile.total();
            let truth = policy_value(&inst.mdp, &total, &pi)?;
            let scale = shape.horizon as f64 * inst.profile.r_max();
            let lambda = 50.0 * (k as f64 / 20_000.0).powf(2.0 / 3.0);
            let s0 = inst.mdp.initial_state();
            let mut gaps = [0.0; 2];
            let mut values = [0.0; 2];
            for (slot, mode) in [Mode::Pes, Mode::Opt].into_iter().enumerate() {
                let ev = evaluate_policy(&d, &inst.profile, &RewardSelector::Total, s0, &pi, &EvalConfig::new(lambda, mode))?;
                let g = induced_gap(&inst.mdp, &total, &pi, &ev.q)?;
                gaps[slot] = g.gap - g.residual - 1e-8;
                values[slot] = ev.value;
            }
            Ok((values[0] - truth - 0.05 * scale, truth - values[1] - 0.05 * scale, gaps))
        })
        .collect::<Result<Vec<_>>>()?;
    let passes = results.iter().filter(|(a, b, _)| *a <= 0.0 && *b <= 0.0).count();
    let needed = (0.95 * triples as f64).ceil() as usize;
    let side_margins: Vec<f64> = results.iter().map(|(a, b, _)| a.max(*b)).collect();
    let mut pess = SuiteResult::from_margins(
        "pessimism",
        &side_margins,
        format!("{passes}/{triples} triples within 0.05 H R_max (need {needed}), K = {k}"),
    );
    pess.passed = passes >= needed;
    let gap_margins: Vec<f64> = results.iter().flat_map(|(_, _, g)| g.iter().copied()).collect();
    let gap = SuiteResult::from_margins(
        "induced-gap",
        &gap_margins,
        format!("{} evaluation outputs, tolerance 1e-8", gap_margins.len()),
    );
    Ok((pess, gap))
}

/// Exponential-weights regret against random and adversarial boxed sequences.
pub fn regret_suite(sequences: usize, horizons: &[usize], seed: u64) -> Result<SuiteResult> {
    let margins = horizons
        .iter()
        .flat_map(|&t| (0..sequences).map(move |j| (t, j)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(t_max, j)| -> Result<f64> {
            let mut rng = stream_rng(derive_seed(seed, "regret", t_max as u64), j as u64);
            let shape = Shape::new(rng.gen_range(1..=3), rng.gen_range(2..=4), rng.gen_range(1..=3))?;
            let r_max: f64 = rng.gen_range(0.5..3.0);
            let (h, a) = (shape.horizon as f64, shape.actions as f64);
            let eta = (a.ln() / (2.0 * (h * r_max).powi(2) * t_max as f64)).sqrt();
            let bound = 2.0 * h * r_max * (2.0 * t_max as f64 * a.ln()).sqrt();
            let adversarial = j % 2 == 1;
            let mut pi = StagePolicy::uniform(shape);
            let mut cumulative = vec![0.0; shape.len()];
            let mut earned = vec![0.0; shape.horizon * shape.states];
            for _ in 0..t_max {
                let values: Vec<f64> = (0..shape.len())
                    .map(|idx| {
                        let b = shape.box_bound(idx / shape.cells(), r_max);
                        if adversarial {
                            // full reward to the currently least likely action
                            let (hh, rest) = (idx / shape.cells(), idx % shape.cells());
                            let (s, act) = (rest / shape.actions, rest % shape.actions);
                            let row = pi.row(hh, s);
                            let low = (0..shape.actions).min_by(|x, y| row[*x].total_cmp(&row[*y])).unwrap_or(0);
                            if act == low {
                                b
                            } else {
                                -b
                            }
                        } else {
                            rng.gen_range(-b..=b)
                        }
                    })
                    .collect();
                let q = QTable::new(shape, r_max, values)?;
                for hh in 0..shape.horizon {
                    for s in 0..shape.states {
                        earned[hh * shape.states + s] += q.expected(hh, s, &pi);
                    }
                }
                for (c, v) in cumulative.iter_mut().zip(q.values()) {
                    *c += v;
                }
                pi = mirror_descent_update(&pi, &q, eta)?;
            }
            let mut worst = f64::NEG_INFINITY;
            for hh in 0..shape.horizon {
                for s in 0..shape.states {
                    let start = shape.index(hh, s, 0);
                    let best = cumulative[start..start + shape.actions].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    worst = worst.max(best - earned[hh * shape.states + s] - bound);
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteResult::from_margins(
        "regret",
        &margins,
        format!("{sequences} sequences per T in {horizons:?}, zero tolerance"),
    ))
}

fn single_cell(rewards: &[f64]) -> Result<(OfflineDataset, RewardProfile)> {
    let shape = Shape::new(1, 1, 1)?;
    let samples = rewards
        .iter()
        .map(|r| Sample {
            s: 0,
            a: 0,
            rewards: vec![*r],
            next: 0,
        })
        .collect();
    let d = OfflineDataset::new(shape, 1, 1.0, rewards.len(), 0, serde_json::Value::Null, samples)?;
    let z = RewardTable::zeros(shape);
    let p = RewardProfile::new(1.0, z.clone(), vec![z], RewardRole::Reported)?;
    Ok((d, p))
}

/// Zero-reward single-cell instance: `-1/(2 lambda)` and `+1/(2 lambda)`.
pub fn closed_form_suite() -> Result<SuiteResult> {
    let (d, p) = single_cell(&[0.0; 10])?;
    let pi = StagePolicy::uniform(d.shape());
    let mut margins = Vec::new();
    for lambda in [0.5, 1.0, 10.0] {
        for (mode, sign) in [(Mode::Pes, -1.0), (Mode::Opt, 1.0)] {
            let ev = evaluate_policy(&d, &p, &RewardSelector::Total, 0, &pi, &EvalConfig::new(lambda, mode))?;
            let expected = (sign / (2.0 * lambda)).clamp(-1.0, 1.0);
            margins.push((ev.value - expected).abs() - 1e-6);
        }
    }
    Ok(SuiteResult::from_margins("closed-form", &margins, "lambda in {0.5, 1, 10}, both modes".into()))
}

/// Weighted-residual Bellman error against the definitional loss difference.
pub fn identity_suite(datasets: usize, seed: u64) -> Result<SuiteResult> {
    let mut margins = (0..datasets)
        .into_par_iter()
        .map(|j| -> Result<f64> {
            let mut rng = stream_rng(derive_seed(seed, "identity", j as u64), 0);
            let spec = RandomInstanceSpec::new(rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=2), rng.gen());
            let inst = random_instance(&spec)?;
            let shape = inst.shape();
            let r_max = inst.profile.r_max();
            let d = sample_dataset(&inst.mdp, &inst.profile, &DataDistribution::uniform(shape), rng.gen_range(1..60), rng.gen())?;
            let pi = random_policy(shape, &mut rng, 0.0);
            let f: Vec<f64> = (0..shape.len())
                .map(|idx| {
                    let b = shape.box_bound(idx / shape.cells(), r_max);
                    rng.gen_range(-b..=b)
                })
                .collect();
            let q = QTable::new(shape, r_max, f.clone())?;
            let sel = RewardSelector::Total;
            let h = rng.gen_range(0..shape.horizon);
            let c = shape.cells();
            let f_next = (h + 1 < shape.horizon).then(|| &f[(h + 1) * c..(h + 2) * c]);
            let model = EmpiricalModel::new(&d, &inst.profile, &sel, 0)?;
            let g = model.mean_target(h, &pi, f_next);
            let l_f = empirical_loss(&f[h * c..(h + 1) * c], f_next, &pi, &d, &inst.profile, &sel, h)?;
            let l_g = empirical_loss(&g, f_next, &pi, &d, &inst.profile, &sel, h)?;
            let e = empirical_bellman_error(&q, &pi, &d, &inst.profile, &sel, 0, h)?;
            Ok((e - (l_f - l_g)).abs() - 1e-12)
        })
        .collect::<Result<Vec<_>>>()?;
    // dense grid on one-cell instances
    for j in 0..10u64 {
        let mut rng = stream_rng(derive_seed(seed, "identity-grid", j), 0);
        let n = rng.gen_range(1..20);
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let (d, p) = single_cell(&rewards)?;
        let pi = StagePolicy::uniform(d.shape());
        let f = rng.gen_range(0.0..=1.0);
        let l_f = empirical_loss(&[f], None, &pi, &d, &p, &RewardSelector::Total, 0)?;
        let mut best = f64::INFINITY;
        for step in 0..=2000 {
            let g = -1.0 + step as f64 * 1e-3;
            best = best.min(empirical_loss(&[g], None, &pi, &d, &p, &RewardSelector::Total, 0)?);
        }
        let q = QTable::new(d.shape(), 1.0, vec![f])?;
        let e = empirical_bellman_error(&q, &pi, &d, &p, &RewardSelector::Total, 0, 0)?;
        margins.push((e - (l_f - best)).abs() - 1e-5);
    }
    Ok(SuiteResult::from_margins(
        "identity",
        &margins,
        format!("{datasets} random datasets within 1e-12, 10 one-cell grids within 1e-5"),
    ))
}

fn random_measure(shape: Shape, rng: &mut ChaCha8Rng, holes: bool) -> Result<VisitationMeasure> {
    let mut v: Vec<f64> = (0..shape.len()).map(|_| rng.gen::<f64>() + 1e-3).collect();
    if holes {
        let mut idx: Vec<usize> = (0..shape.len()).collect();
        idx.shuffle(rng);
        for &i in idx.iter().take(shape.len() / 4) {
            v[i] = 0.0;
        }
    }
    for step in v.chunks_mut(shape.cells()) {
        let t: f64 = step.iter().sum();
        if t == 0.0 {
            step[0] = 1.0;
        } else {
            step.iter_mut().for_each(|x| *x /= t);
        }
    }
    VisitationMeasure::new(shape, v)
}

/// Random residual search never beats the closed-form shift coefficient.
pub fn shift_suite(instances: usize, draws: usize, seed: u64) -> Result<SuiteResult> {
    let mut margins = Vec::new();
    let mut self_ok = true;
    for j in 0..instances {
        let mut rng = stream_rng(derive_seed(seed, "shift", j as u64), 0);
        let spec = RandomInstanceSpec::new(rng.gen_range(2..=4), rng.gen_range(2..=3), rng.gen_range(1..=3), 1, rng.gen());
        let inst = random_instance(&spec)?;
        let shape = inst.shape();
        let nu = if j % 2 == 0 {
            visitation(&inst.mdp, &random_policy(shape, &mut rng, 0.0))?
        } else {
            random_measure(shape, &mut rng, false)?
        };
        let mu = random_measure(shape, &mut rng, j % 5 == 4)?;
        let c = shift_coefficient(&nu, &mu)?;
        let found = shift_ratio_search(&inst.mdp, &nu, &mu, inst.profile.r_max(), draws, rng.gen())?;
        margins.push(if c.is_infinite() { -1.0 } else { found - c * (1.0 + 1e-9) });
        let full = random_measure(shape, &mut rng, false)?;
        self_ok &= shift_coefficient(&full, &full)? == 1.0;
    }
    if !self_ok {
        margins.push(1.0);
    }
    Ok(SuiteResult::from_margins(
        "shift-soundness",
        &margins,
        format!("{instances} instances x {draws} draws; C(mu, mu) = 1: {self_ok}"),
    ))
}

/// Hand-computed hyperparameter values and the `1/K` scaling of `eps_s`.
pub fn hyper_suite() -> Result<SuiteResult> {
    let mut margins = Vec::new();
    let (lambda, eta) = compute_lambda_eta(1.0, 2, 2, 8, 0.5, 0.0)?;
    margins.push((lambda - 1.0).abs() - 1e-12);
    margins.push((eta - (2f64.ln() / 64.0).sqrt()).abs() - 1e-12);
    let (_, eta4) = compute_lambda_eta(1.0, 2, 2, 32, 0.5, 0.0)?;
    margins.push((eta4 - eta / 2.0).abs() - 1e-12);
    let (lambda_f, _) = compute_lambda_eta(1.0, 2, 2, 8, 0.2, 0.1)?;
    margins.push((lambda_f - 1.0).abs() - 1e-12);
    let e1 = epsilon_s(1000, 0.5, 1, 1, 1.0, 0.0, 0.0)?;
    margins.push((e1 - 5136.0 * 112f64.ln() / 1000.0).abs() - 1e-12);
    for (k, delta, n, h, r, lf, lp) in [(1000usize, 0.5, 1usize, 1usize, 1.0, 0.0, 0.0), (777, 0.05, 2, 3, 1.5, 4.2, 11.0)] {
        let a = epsilon_s(k, delta, n, h, r, lf, lp)?;
        let b = epsilon_s(2 * k, delta, n, h, r, lf, lp)?;
        margins.push(if a == 2.0 * b { -1.0 } else { 1.0 });
    }
    Ok(SuiteResult::from_margins("hyper", &margins, "lambda, eta and eps_s examples".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        for r in [
            closed_form_suite().unwrap(),
            hyper_suite().unwrap(),
            identity_suite(10, 1).unwrap(),
            regret_suite(4, &[16], 2).unwrap(),
            shift_suite(2, 500, 3).unwrap(),
            desiderata_suite(3, 4).unwrap(),
        ] {
            assert!(r.passed, "{}", r.line());
        }
        let (p, g) = pessimism_suite(2, 2000, 5).unwrap();
        assert!(g.passed, "{}", g.line());
        assert_eq!(p.cases, 2);
    }

    #[test]
    fn unknown_suite_is_a_config_error() {
        assert!(matches!(run_suite("nope", 0), Err(Error::Config { .. })));
    }
}
