//! Report records, aggregation and file output.
//!
//! A run writes `<name>.csv` (one row per `(zeta1, zeta2, K, seed)`),
//! `<name>.json` (metadata, aggregates and the rows again, for merging) and
//! `<name>.timings.json`. Only the last one depends on the machine.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, Median, OrderStatistics};

use crate::diagnostics::{BoundComparison, ErrorBudget};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::learner::{Mode, TheoryParameters};
use crate::mechanism::{Benchmark, DesiderataReport};

use super::config::Metric;

/// Written in place of a metric that was not computed.
pub const NOT_COMPUTED: &str = "NA";

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub agents: usize,
    pub r_max: f64,
}

impl InstanceSummary {
    pub fn of(instance: &Instance) -> Self {
        let s = instance.shape();
        InstanceSummary {
            states: s.states,
            actions: s.actions,
            horizon: s.horizon,
            agents: instance.num_agents(),
            r_max: instance.profile.r_max(),
        }
    }

    /// `H * R_max`, the scale of every value.
    pub fn scale(&self) -> f64 {
        self.horizon as f64 * self.r_max
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub welfare: f64,
    pub prices: Vec<f64>,
    pub agent_utilities: Vec<f64>,
    pub seller_utility: f64,
}

impl BenchmarkSummary {
    pub fn of(b: &Benchmark) -> Self {
        BenchmarkSummary {
            welfare: b.welfare,
            prices: b.outcome.prices.clone(),
            agent_utilities: b.agent_utilities.clone(),
            seller_utility: b.seller_utility,
        }
    }
}

/// Metrics of one learned mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub zeta1: Mode,
    pub zeta2: Mode,
    pub k: usize,
    pub seed: u64,
    pub dataset_seed: u64,
    pub lambda: f64,
    pub eta: f64,
    pub welfare_subopt: Option<f64>,
    pub agent_subopt: Option<Vec<f64>>,
    pub seller_subopt: Option<f64>,
    pub prices: Option<Vec<f64>>,
    /// `|p_hat_i - p_i|` against the exact mechanism on truthful reports.
    pub price_error: Option<Vec<f64>>,
    pub ir_min: Option<Vec<f64>>,
    pub truthfulness_gain: Option<Vec<f64>>,
    pub bound_violations: Option<usize>,
    pub converged: bool,
    pub nonconverged_evaluations: usize,
    /// Pessimistic estimate of the learned policy's welfare.
    pub welfare_estimate: f64,
    pub theory: Option<TheoryParameters>,
    pub budget: Option<ErrorBudget>,
    pub bounds: Option<BoundComparison>,
}

impl RunRow {
    pub fn key(&self) -> (&'static str, &'static str, usize, u64) {
        (self.zeta1.label(), self.zeta2.label(), self.k, self.seed)
    }

    /// Named scalar metrics; per-agent entries are suffixed with `[i]`.
    pub fn scalars(&self, agents: usize) -> Vec<(String, Option<f64>)> {
        let mut out = vec![
            ("welfare_subopt".to_string(), self.welfare_subopt),
            ("seller_subopt".to_string(), self.seller_subopt),
        ];
        let per = |name: &str, v: &Option<Vec<f64>>, out: &mut Vec<(String, Option<f64>)>| {
            for i in 0..agents {
                out.push((format!("{name}[{i}]"), v.as_ref().map(|v| v[i])));
            }
        };
        per("agent_subopt", &self.agent_subopt, &mut out);
        per("price", &self.prices, &mut out);
        per("price_error", &self.price_error, &mut out);
        per("ir_min", &self.ir_min, &mut out);
        per("truthfulness_gain", &self.truthfulness_gain, &mut out);
        out
    }
}

/// Median and quartiles of one metric at one `(zeta1, zeta2, K)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub zeta1: Mode,
    pub zeta2: Mode,
    pub k: usize,
    pub metric: String,
    pub count: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Least-squares slope of `ln(median)` against `ln K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slope {
    pub zeta1: Mode,
    pub zeta2: Mode,
    pub metric: String,
    /// `None` when fewer than two sizes or a nonpositive median.
    pub slope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub instance: InstanceSummary,
    pub benchmark: BenchmarkSummary,
    pub misreports: String,
    pub metrics: Vec<Metric>,
    pub rows: Vec<RunRow>,
    pub aggregates: Vec<Aggregate>,
    pub slopes: Vec<Slope>,
}

/// Median, lower and upper quartile.
pub fn quartiles(values: &[f64]) -> (f64, f64, f64) {
    let mut d = Data::new(values.to_vec());
    let median = d.median();
    (median, d.lower_quartile(), d.upper_quartile())
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn sort_rows(rows: &mut [RunRow]) {
    rows.sort_by(|a, b| a.key().cmp(&b.key()));
}

impl RunReport {
    pub fn new(
        instance: InstanceSummary,
        benchmark: BenchmarkSummary,
        misreports: String,
        metrics: Vec<Metric>,
        mut rows: Vec<RunRow>,
    ) -> Self {
        sort_rows(&mut rows);
        let mut r = RunReport {
            schema_version: REPORT_SCHEMA,
            instance,
            benchmark,
            misreports,
            metrics,
            rows,
            aggregates: Vec::new(),
            slopes: Vec::new(),
        };
        r.recompute();
        r
    }

    /// Rebuild aggregates and slopes from the rows.
    pub fn recompute(&mut self) {
        let n = self.instance.agents;
        let mut groups: BTreeMap<(&str, &str, usize), (Mode, Mode, BTreeMap<String, Vec<f64>>)> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        for row in &self.rows {
            let entry = groups
                .entry((row.zeta1.label(), row.zeta2.label(), row.k))
                .or_insert_with(|| (row.zeta1, row.zeta2, BTreeMap::new()));
            for (name, v) in row.scalars(n) {
                if !order.contains(&name) {
                    order.push(name.clone());
                }
                if let Some(v) = v {
                    entry.2.entry(name).or_default().push(v);
                }
            }
        }
        let mut aggregates = Vec::new();
        for (&(_, _, k), (z1, z2, metrics)) in &groups {
            for name in &order {
                if let Some(vals) = metrics.get(name) {
                    let (median, q25, q75) = quartiles(vals);
                    aggregates.push(Aggregate {
                        zeta1: *z1,
                        zeta2: *z2,
                        k,
                        metric: name.clone(),
                        count: vals.len(),
                        median,
                        q25,
                        q75,
                    });
                }
            }
        }
        let mut slopes = Vec::new();
        let mut pairs: Vec<(Mode, Mode)> = Vec::new();
        for a in &aggregates {
            if !pairs.contains(&(a.zeta1, a.zeta2)) {
                pairs.push((a.zeta1, a.zeta2));
            }
        }
        for (z1, z2) in pairs {
            for name in ["welfare_subopt", "seller_subopt"] {
                let pts: Vec<(f64, f64)> = aggregates
                    .iter()
                    .filter(|a| a.zeta1 == z1 && a.zeta2 == z2 && a.metric == name)
                    .map(|a| (a.k as f64, a.median))
                    .collect();
                if pts.is_empty() {
                    continue;
                }
                let slope = if pts.iter().all(|p| p.1 > 0.0) {
                    fit_slope(&pts.iter().map(|(k, m)| (k.ln(), m.ln())).collect::<Vec<_>>())
                } else {
                    None
                };
                slopes.push(Slope {
                    zeta1: z1,
                    zeta2: z2,
                    metric: name.into(),
                    slope,
                });
            }
        }
        self.aggregates = aggregates;
        self.slopes = slopes;
    }

    pub fn aggregate(&self, zetas: (Mode, Mode), k: usize, metric: &str) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| (a.zeta1, a.zeta2) == zetas && a.k == k && a.metric == metric)
    }

    pub fn slope(&self, zetas: (Mode, Mode), metric: &str) -> Option<f64> {
        self.slopes
            .iter()
            .find(|s| (s.zeta1, s.zeta2) == zetas && s.metric == metric)
            .and_then(|s| s.slope)
    }

    /// Merge reports of the same instance and settings; rows are unioned.
    pub fn merge(reports: Vec<(PathBuf, RunReport)>) -> Result<RunReport> {
        let mut iter = reports.into_iter();
        let (_, mut base) = iter.next().ok_or_else(|| Error::Input("no reports to merge".into()))?;
        for (path, r) in iter {
            let schema = |message: String| Error::Schema {
                path: path.clone(),
                message,
            };
            if r.schema_version != base.schema_version {
                return Err(schema(format!("schema version {} vs {}", r.schema_version, base.schema_version)));
            }
            if r.instance != base.instance || r.benchmark != base.benchmark {
                return Err(schema("reports describe different instances".into()));
            }
            if r.metrics != base.metrics || r.misreports != base.misreports {
                return Err(schema("reports use different metrics or misreport families".into()));
            }
            for row in r.rows {
                match base.rows.iter().find(|b| b.key() == row.key()) {
                    Some(existing) if *existing == row => {}
                    Some(_) => return Err(schema(format!("conflicting rows for {:?}", row.key()))),
                    None => base.rows.push(row),
                }
            }
        }
        sort_rows(&mut base.rows);
        base.recompute();
        Ok(base)
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["zeta1", "zeta2", "k", "seed", "dataset_seed", "lambda", "eta", "welfare_subopt", "seller_subopt"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 0..self.instance.agents {
            for name in ["agent_subopt", "price", "price_error", "ir_min", "truthfulness_gain"] {
                h.push(format!("{name}_{i}"));
            }
        }
        h.extend(
            ["bound_violations", "converged", "nonconverged_evaluations", "welfare_estimate"]
                .iter()
                .map(|s| s.to_string()),
        );
        h
    }

    fn csv_record(&self, row: &RunRow) -> Vec<String> {
        let f = |v: Option<f64>| v.map_or_else(|| NOT_COMPUTED.to_string(), |x| x.to_string());
        let at = |v: &Option<Vec<f64>>, i: usize| f(v.as_ref().map(|v| v[i]));
        let mut rec = vec![
            row.zeta1.label().to_string(),
            row.zeta2.label().to_string(),
            row.k.to_string(),
            row.seed.to_string(),
            row.dataset_seed.to_string(),
            row.lambda.to_string(),
            row.eta.to_string(),
            f(row.welfare_subopt),
            f(row.seller_subopt),
        ];
        for i in 0..self.instance.agents {
            rec.push(at(&row.agent_subopt, i));
            rec.push(at(&row.prices, i));
            rec.push(at(&row.price_error, i));
            rec.push(at(&row.ir_min, i));
            rec.push(at(&row.truthfulness_gain, i));
        }
        rec.push(row.bound_violations.map_or_else(|| NOT_COMPUTED.to_string(), |v| v.to_string()));
        rec.push(row.converged.to_string());
        rec.push(row.nonconverged_evaluations.to_string());
        rec.push(row.welfare_estimate.to_string());
        rec
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.csv_header())?;
        for row in &self.rows {
            w.write_record(self.csv_record(row))?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("utf8"))
    }

    pub fn aggregates_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["zeta1", "zeta2", "k", "metric", "count", "median", "q25", "q75", "slope"])?;
        for a in &self.aggregates {
            let slope = self.slope((a.zeta1, a.zeta2), &a.metric);
            w.write_record([
                a.zeta1.label().to_string(),
                a.zeta2.label().to_string(),
                a.k.to_string(),
                a.metric.clone(),
                a.count.to_string(),
                a.median.to_string(),
                a.q25.to_string(),
                a.q75.to_string(),
                slope.map_or_else(|| NOT_COMPUTED.to_string(), |s| s.to_string()),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("utf8"))
    }

    /// One table per metric: `series,k,median,q25,q75`, a series per `(zeta1, zeta2)`.
    pub fn plot_data(&self) -> Result<Vec<(String, String)>> {
        let mut by_metric: BTreeMap<&str, Vec<&Aggregate>> = BTreeMap::new();
        for a in &self.aggregates {
            by_metric.entry(a.metric.as_str()).or_default().push(a);
        }
        let mut out = Vec::new();
        for (metric, aggs) in by_metric {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["series", "k", "median", "q25", "q75"])?;
            for a in aggs {
                w.write_record([
                    format!("{}_{}", a.zeta1.label(), a.zeta2.label()),
                    a.k.to_string(),
                    a.median.to_string(),
                    a.q25.to_string(),
                    a.q75.to_string(),
                ])?;
            }
            let text = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("utf8");
            let file = metric.replace(['[', ']'], "_").trim_end_matches('_').to_string();
            out.push((file, text));
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Write `<name>.csv` and `<name>.json` under `dir`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{name}.csv"));
        let json_path = dir.join(format!("{name}.json"));
        fs::write(&csv_path, self.to_csv()?)?;
        fs::write(&json_path, self.to_json())?;
        Ok(vec![csv_path, json_path])
    }
}

/// Result of the exact mechanism on one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactReport {
    pub schema_version: u32,
    pub instance: InstanceSummary,
    pub benchmark: BenchmarkSummary,
    pub desiderata: DesiderataReport,
    pub tolerance: f64,
    pub efficient: bool,
    pub individually_rational: bool,
    pub truthful: bool,
}

impl ExactReport {
    pub fn passed(&self) -> bool {
        self.efficient && self.individually_rational && self.truthful
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = ["welfare", "welfare_gap", "min_agent_utility", "max_truthfulness_gain", "seller_utility"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 0..self.instance.agents {
            header.push(format!("price_{i}"));
            header.push(format!("utility_{i}"));
            header.push(format!("ir_min_{i}"));
            header.push(format!("truthfulness_gain_{i}"));
        }
        header.push("passed".into());
        w.write_record(&header)?;
        let d = &self.desiderata;
        let mut rec = vec![
            self.benchmark.welfare.to_string(),
            d.welfare_gap.to_string(),
            d.min_agent_utility.to_string(),
            d.max_truthfulness_gain.to_string(),
            d.seller_utility.to_string(),
        ];
        for a in &d.agents {
            rec.push(a.truthful_price.to_string());
            rec.push(a.truthful_utility.to_string());
            rec.push(a.min_ir_utility.to_string());
            rec.push(a.max_gain.to_string());
        }
        rec.push(self.passed().to_string());
        w.write_record(&rec)?;
        Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("utf8"))
    }

    pub fn write(&self, dir: &Path, name: &str) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{name}.csv"));
        let json_path = dir.join(format!("{name}.json"));
        fs::write(&csv_path, self.to_csv()?)?;
        fs::write(&json_path, serde_json::to_string_pretty(self).expect("report serializes"))?;
        Ok(vec![csv_path, json_path])
    }
}

/// Machine-dependent timings, kept apart from the reproducible outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    /// `(zeta1, zeta2, K, seed, seconds)` per row.
    pub rows: Vec<(Mode, Mode, usize, u64, f64)>,
}

impl Timings {
    pub fn write(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{name}.timings.json"));
        fs::write(&path, serde_json::to_string_pretty(self).expect("timings serialize"))?;
        Ok(path)
    }
}
