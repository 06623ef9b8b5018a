use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, Method, SignificanceUnit};
use super::metrics::{evaluate_policy, Metric, MetricReport, Ranker};
use super::significance::{mean_std, paired_t_test};
use crate::baselines::{
    dla_train, estimate_cm_lambdas, estimate_ipw_propensities, ipw_train, result_randomization,
    train_logging_policy, LinearRanker, LoggingConfig, PropensityTable, RankerConfig, Skyline,
};
use crate::click_sim::{simulate_session, AttractionModel, ClickModelKind, Session};
use crate::cuolr::{self, EpisodeSet, TraceRow, TrainConfig};
use crate::dataset::{train_fraction, Dataset, Document, Query};
use crate::error::{Error, Result};
use crate::mdp_rank::build_episode;
use crate::rng::{self, tag};

/// Conservatism grid of the alpha sweep.
pub const ALPHA_GRID: [f64; 11] = [0.0, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1, 5e-1, 1.0, 5.0, 10.0, 50.0];

/// Loads or generates the configured dataset.
pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    match &config.data {
        DataSource::Synthetic(spec) => spec.generate(),
        DataSource::Letor(dir) => Dataset::load_dir(dir, config.r_max),
    }
}

/// One method trained and evaluated under one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub method: Method,
    pub seed: u64,
    pub report: Option<MetricReport>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub agent_trace: Vec<TraceRow>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub ranker_trace: Vec<f64>,
    pub failure: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedLog {
    pub seed: u64,
    pub logged_sessions: usize,
    pub logged_clicks: usize,
    pub ipw_propensities: Option<PropensityTable>,
    pub cm_lambdas: Option<PropensityTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub click_model: ClickModelKind,
    pub ks: Vec<usize>,
    pub seeds: Vec<SeedLog>,
    pub runs: Vec<MethodRun>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn run(&self, method: Method, seed: u64) -> Option<&MethodRun> {
        self.runs.iter().find(|r| r.method == method && r.seed == seed)
    }

    /// Seed-wise means of `metric@k` for `method`, skipping failed runs.
    pub fn seed_means(&self, method: Method, metric: Metric, k: usize) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.method == method)
            .filter_map(|r| r.report.as_ref()?.mean(metric, k))
            .collect()
    }

    /// Mean over seeds of `metric@k`, if any seed succeeded.
    pub fn mean(&self, method: Method, metric: Metric, k: usize) -> Option<f64> {
        let v = self.seed_means(method, metric, k);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn failures(&self) -> impl Iterator<Item = &MethodRun> {
        self.runs.iter().filter(|r| r.failure.is_some())
    }
}

struct SeedContext<'a> {
    config: &'a ExperimentConfig,
    data: &'a Dataset,
    seed: u64,
    logging: LinearRanker,
    sessions: Vec<Session>,
    randomized: Option<Vec<Session>>,
}

impl SeedContext<'_> {
    fn randomized(&mut self) -> Result<&[Session]> {
        if self.randomized.is_none() {
            let c = self.config;
            let attraction = AttractionModel::new(c.epsilon, c.r_max)?;
            let mut rng = rng::stream(self.seed, tag::RANDOMIZE | 1 << 32);
            let s = result_randomization(
                &self.data.train,
                &c.click_spec(),
                &attraction,
                c.randomization_sessions,
                c.list_size,
                &mut rng,
            )?;
            self.randomized = Some(s);
        }
        Ok(self.randomized.as_deref().expect("filled above"))
    }

    fn ranker_config(&self) -> RankerConfig {
        RankerConfig {
            seed: self.seed,
            ..self.config.ranker.clone()
        }
    }

    fn train_config(&self, method: Method) -> TrainConfig {
        let mut t = self.config.train.clone();
        t.seed = self.seed;
        if method == Method::CuolrSac {
            t.cql_alpha = 0.0;
        }
        t
    }
}

/// Logged sessions: every train query shown in logging-policy order.
pub fn log_sessions(
    config: &ExperimentConfig,
    queries: &[Query],
    logging: &dyn Ranker,
    seed: u64,
) -> Result<Vec<Session>> {
    let spec = config.click_spec();
    let attraction = AttractionModel::new(config.epsilon, config.r_max)?;
    let mut out = Vec::with_capacity(queries.len() * config.sessions_per_query);
    for q in queries {
        let ranking = logging.rank(q, config.list_size.min(q.len()))?;
        let docs: Vec<&Document> = ranking
            .iter()
            .map(|&d| {
                q.doc(d).ok_or(Error::UnknownDocument {
                    query_id: q.query_id,
                    doc_id: d,
                })
            })
            .collect::<Result<_>>()?;
        let mut rng = rng::stream(seed, tag::CLICKS | u64::from(q.query_id));
        for _ in 0..config.sessions_per_query {
            out.push(simulate_session(&spec, q.query_id, &docs, &attraction, &mut rng)?);
        }
    }
    Ok(out)
}

fn run_method(ctx: &mut SeedContext<'_>, method: Method, out: &mut MethodRun) -> Result<()> {
    let data = ctx.data;
    let (ks, r_max) = (&ctx.config.ks, ctx.config.r_max);
    let report = match method {
        Method::Logging => evaluate_policy(&ctx.logging, &data.test, ks, r_max)?,
        Method::Oracle => evaluate_policy(&Skyline, &data.test, ks, r_max)?,
        Method::CuolrCql | Method::CuolrSac => {
            let episodes = ctx
                .sessions
                .iter()
                .zip(data.train.iter().flat_map(|q| std::iter::repeat(q).take(ctx.config.sessions_per_query)))
                .map(|(s, q)| build_episode(s, q))
                .collect::<Result<Vec<_>>>()?;
            let set = EpisodeSet::new(data.train.clone(), &episodes)?;
            let trained = cuolr::train(&set, &ctx.train_config(method))?;
            out.agent_trace = trained.trace;
            let agent = trained.agent;
            let ranker = move |q: &Query, k: usize| cuolr::rank(&agent, q, k);
            evaluate_policy(&ranker, &data.test, ks, r_max)?
        }
        Method::Ipw | Method::CmIpw => {
            let table = if method == Method::Ipw {
                estimate_ipw_propensities(ctx.randomized()?)?
            } else {
                estimate_cm_lambdas(ctx.randomized()?)?
            };
            let (ranker, trace) = ipw_train(&data.train, &ctx.sessions, &table, &ctx.ranker_config())?;
            out.ranker_trace = trace;
            evaluate_policy(&ranker, &data.test, ks, r_max)?
        }
        Method::Dla => {
            let models = dla_train(&data.train, &ctx.sessions, &ctx.ranker_config())?;
            evaluate_policy(&models, &data.test, ks, r_max)?
        }
    };
    out.report = Some(report);
    Ok(())
}

/// Runs every configured method for every seed.
///
/// Stage failures inside one method are recorded on that method's entry;
/// the rest of the run continues. Setup failures (data, logging policy,
/// session simulation) abort the run.
pub fn run_experiment(config: &ExperimentConfig, data: &Dataset) -> Result<RunRecord> {
    run_experiment_observed(config, data, &mut |_| {})
}

/// [`run_experiment`] reporting each finished method to `observe`.
pub fn run_experiment_observed(
    config: &ExperimentConfig,
    data: &Dataset,
    observe: &mut dyn FnMut(&MethodRun),
) -> Result<RunRecord> {
    config.validate()?;
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::Degenerate("experiment needs train and test queries".into()));
    }
    let start = Instant::now();
    let mut record = RunRecord {
        config_hash: config.hash(),
        click_model: config.click_model,
        ks: config.ks.clone(),
        seeds: Vec::new(),
        runs: Vec::new(),
        wall_clock_secs: 0.0,
    };
    for &seed in &config.seeds {
        let subset = train_fraction(&data.train, config.logging_fraction, seed)?;
        let logging = train_logging_policy(
            &subset,
            &LoggingConfig {
                seed,
                ..config.logging.clone()
            },
        )?;
        let sessions = log_sessions(config, &data.train, &logging, seed)?;
        let mut ctx = SeedContext {
            config,
            data,
            seed,
            logging,
            sessions,
            randomized: None,
        };
        let mut seed_log = SeedLog {
            seed,
            logged_sessions: ctx.sessions.len(),
            logged_clicks: ctx.sessions.iter().map(Session::click_count).sum(),
            ipw_propensities: None,
            cm_lambdas: None,
        };
        for &method in &config.methods {
            let t0 = Instant::now();
            let mut run = MethodRun {
                method,
                seed,
                report: None,
                agent_trace: Vec::new(),
                ranker_trace: Vec::new(),
                failure: None,
                seconds: 0.0,
            };
            if let Err(e) = run_method(&mut ctx, method, &mut run) {
                run.failure = Some(e.to_string());
            }
            run.seconds = t0.elapsed().as_secs_f64();
            observe(&run);
            record.runs.push(run);
        }
        if let Some(r) = &ctx.randomized {
            seed_log.ipw_propensities = estimate_ipw_propensities(r).ok();
            seed_log.cm_lambdas = estimate_cm_lambdas(r).ok();
        }
        record.seeds.push(seed_log);
    }
    record.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub click_model: String,
    pub seed: u64,
    pub metric: String,
    pub k: usize,
    pub value: f64,
}

/// Rows of `results.csv`, in run order then metric then cutoff.
pub fn result_rows(record: &RunRecord) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for run in &record.runs {
        let Some(report) = &run.report else { continue };
        for metric in Metric::ALL {
            for &k in &record.ks {
                if let Some(value) = report.mean(metric, k) {
                    rows.push(ResultRow {
                        method: run.method.name().into(),
                        click_model: record.click_model.name().into(),
                        seed: run.seed,
                        metric: metric.name().into(),
                        k,
                        value,
                    });
                }
            }
        }
    }
    rows
}

pub fn write_results_csv<W: std::io::Write>(writer: W, record: &RunRecord) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in result_rows(record) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub click_model: String,
    pub significance: String,
    /// method -> "metric@k" -> aggregate over seeds.
    pub methods: BTreeMap<String, BTreeMap<String, Aggregate>>,
    /// "a vs b" -> "metric@k" -> two-sided p-value.
    pub p_values: BTreeMap<String, BTreeMap<String, f64>>,
    pub failures: Vec<String>,
}

fn samples(record: &RunRecord, method: Method, metric: Metric, k: usize, unit: SignificanceUnit) -> Vec<(u64, Vec<f64>)> {
    record
        .runs
        .iter()
        .filter(|r| r.method == method)
        .filter_map(|r| {
            let rep = r.report.as_ref()?;
            let v = match unit {
                SignificanceUnit::PerQuery => rep.per_query_values(metric, k)?,
                SignificanceUnit::PerSeed => vec![rep.mean(metric, k)?],
            };
            Some((r.seed, v))
        })
        .collect()
}

/// Paired samples over the seeds both methods completed.
fn paired(a: &[(u64, Vec<f64>)], b: &[(u64, Vec<f64>)]) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (seed, va) in a {
        if let Some((_, vb)) = b.iter().find(|(s, _)| s == seed) {
            if va.len() == vb.len() {
                xs.extend_from_slice(va);
                ys.extend_from_slice(vb);
            }
        }
    }
    (xs, ys)
}

pub fn summarize(record: &RunRecord, unit: SignificanceUnit) -> Summary {
    let mut methods_seen: Vec<Method> = record.runs.iter().map(|r| r.method).collect();
    methods_seen.sort_unstable();
    methods_seen.dedup();
    let mut methods = BTreeMap::new();
    for &m in &methods_seen {
        let mut by_key = BTreeMap::new();
        for metric in Metric::ALL {
            for &k in &record.ks {
                let v = record.seed_means(m, metric, k);
                if v.is_empty() {
                    continue;
                }
                let (mean, std) = mean_std(&v);
                by_key.insert(format!("{}@{k}", metric.name()), Aggregate { mean, std, seeds: v.len() });
            }
        }
        methods.insert(m.name().to_string(), by_key);
    }
    let mut p_values = BTreeMap::new();
    for (i, &a) in methods_seen.iter().enumerate() {
        for &b in &methods_seen[i + 1..] {
            let mut by_key = BTreeMap::new();
            for metric in Metric::ALL {
                for &k in &record.ks {
                    let (xs, ys) = paired(&samples(record, a, metric, k, unit), &samples(record, b, metric, k, unit));
                    if let Ok(p) = paired_t_test(&xs, &ys) {
                        by_key.insert(format!("{}@{k}", metric.name()), p);
                    }
                }
            }
            p_values.insert(format!("{} vs {}", a.name(), b.name()), by_key);
        }
    }
    Summary {
        config_hash: record.config_hash.clone(),
        click_model: record.click_model.name().into(),
        significance: match unit {
            SignificanceUnit::PerQuery => "per-query".into(),
            SignificanceUnit::PerSeed => "per-seed".into(),
        },
        methods,
        p_values,
        failures: record
            .failures()
            .map(|r| format!("{} seed {}: {}", r.method, r.seed, r.failure.as_deref().unwrap_or("")))
            .collect(),
    }
}

/// Writes `results.csv`, `summary.json`, `run.json`, `config.txt` and one
/// trace CSV per trained method and seed into `dir`.
///
/// Everything except `run.json` (which holds timings) is a pure function of
/// the config.
pub fn persist(record: &RunRecord, config: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_results_csv(fs::File::create(dir.join("results.csv"))?, record)?;
    let summary = summarize(record, config.significance);
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(record)? + "\n")?;
    fs::write(dir.join("config.txt"), config.to_text())?;
    let traces = dir.join("traces");
    for run in &record.runs {
        if !run.agent_trace.is_empty() {
            fs::create_dir_all(&traces)?;
            let path = traces.join(format!("{}-seed{}.csv", run.method, run.seed));
            cuolr::write_trace_csv(fs::File::create(path)?, &run.agent_trace)?;
        }
        if !run.ranker_trace.is_empty() {
            fs::create_dir_all(&traces)?;
            let path = traces.join(format!("{}-seed{}.csv", run.method, run.seed));
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(["step", "loss"])?;
            for (i, l) in run.ranker_trace.iter().enumerate() {
                w.write_record([(i + 1).to_string(), l.to_string()])?;
            }
            w.flush()?;
        }
    }
    for s in &record.seeds {
        for table in [&s.ipw_propensities, &s.cm_lambdas].into_iter().flatten() {
            let name = format!("propensities-{:?}-seed{}.csv", table.kind, s.seed).to_lowercase();
            table.write_csv(fs::File::create(dir.join(name))?)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub metric: String,
    pub k: usize,
    pub mean: f64,
    pub std: f64,
}

/// CUOLR-CQL at each `alpha`, everything else as configured.
pub fn sweep_alpha(
    config: &ExperimentConfig,
    data: &Dataset,
    alphas: &[f64],
    observe: &mut dyn FnMut(f64, &MethodRun),
) -> Result<Vec<SweepPoint>> {
    if alphas.is_empty() {
        return Err(Error::Config("alpha grid is empty".into()));
    }
    let mut points = Vec::new();
    for &alpha in alphas {
        let mut c = config.clone();
        c.train.cql_alpha = alpha;
        c.methods = vec![Method::CuolrCql];
        let record = run_experiment_observed(&c, data, &mut |r| observe(alpha, r))?;
        if let Some(f) = record.failures().next() {
            return Err(Error::Degenerate(format!(
                "alpha {alpha}, seed {}: {}",
                f.seed,
                f.failure.as_deref().unwrap_or("")
            )));
        }
        for metric in Metric::ALL {
            for &k in &c.ks {
                let (mean, std) = mean_std(&record.seed_means(Method::CuolrCql, metric, k));
                points.push(SweepPoint {
                    alpha,
                    metric: metric.name().into(),
                    k,
                    mean,
                    std,
                });
            }
        }
    }
    Ok(points)
}

pub fn write_sweep_csv<W: std::io::Write>(writer: W, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
