use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use cuolr_core::baselines::{result_randomization, train_logging_policy, LoggingConfig};
use cuolr_core::click_sim::{read_sessions_csv, write_sessions_csv, AttractionModel, Session};
use cuolr_core::cuolr::{self, AgentState, EpisodeSet};
use cuolr_core::dataset::{train_fraction, Dataset, Query};
use cuolr_core::evalharness::{
    evaluate_policy, load_dataset, log_sessions, persist, run_experiment_observed, sweep_alpha, write_sweep_csv,
    ExperimentConfig, Metric, MetricReport, CONFIG_KEYS, ALPHA_GRID,
};
use cuolr_core::mdp_rank::build_episode;
use cuolr_core::rng;

#[derive(Parser)]
#[command(name = "cuolr", version, about = "Off-policy learning to rank from simulated click logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file; see `cuolr keys`.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set click_model=cascade`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset as LETOR files (train.txt, vali.txt, test.txt).
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate click sessions on the train queries for the first seed.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Uniformly shuffled lists instead of logging-policy order.
        #[arg(long)]
        randomize: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a CUOLR agent on logged sessions (simulated unless --sessions is given).
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        sessions: Option<PathBuf>,
        /// Checkpoint prefix; the loss trace goes to `<prefix>.trace.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained agent on the test queries.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        agent: PathBuf,
        /// Write the full report as JSON here instead of a table to stdout.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run every configured method over every seed and persist the results.
    Experiment {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// CUOLR-CQL across a grid of conservatism weights.
    SweepAlpha {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma list; defaults to the full grid.
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// List every config key with its default value.
    Keys,
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

fn load_config(args: &ConfigArgs) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::parse(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    for o in &args.overrides {
        let Some((k, v)) = o.split_once('=') else {
            bail!("--set expects KEY=VALUE, got {o:?}");
        };
        config.set(k, v)?;
    }
    config.validate()?;
    Ok(config)
}

fn print_report(report: &MetricReport) {
    println!("{:>6} {:>8} {:>8}", "k", "ndcg", "err");
    for &k in &report.ks {
        println!(
            "{k:>6} {:>8.4} {:>8.4}",
            report.mean(Metric::Ndcg, k).unwrap_or(f64::NAN),
            report.mean(Metric::Err, k).unwrap_or(f64::NAN)
        );
    }
}

fn first_seed(config: &ExperimentConfig) -> u64 {
    config.seeds[0]
}

fn logged(config: &ExperimentConfig, data: &Dataset) -> anyhow::Result<Vec<Session>> {
    let seed = first_seed(config);
    let subset = train_fraction(&data.train, config.logging_fraction, seed)?;
    let logging = train_logging_policy(&subset, &LoggingConfig { seed, ..config.logging.clone() })?;
    Ok(log_sessions(config, &data.train, &logging, seed)?)
}

fn train_agent(config: &ExperimentConfig, data: &Dataset, sessions: &[Session], out: &Path) -> anyhow::Result<()> {
    let episodes = sessions
        .iter()
        .map(|s| {
            let q: &Query = data
                .train
                .iter()
                .find(|q| q.query_id == s.query_id)
                .with_context(|| format!("session for unknown train query {}", s.query_id))?;
            Ok(build_episode(s, q)?)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let set = EpisodeSet::new(data.train.clone(), &episodes)?;
    let mut tc = config.train.clone();
    tc.seed = first_seed(config);
    let trained = cuolr::train(&set, &tc)?;
    trained.agent.save(out)?;
    let trace = out.with_extension("trace.csv");
    cuolr::write_trace_csv(fs::File::create(&trace)?, &trained.trace)?;
    if let Some(last) = trained.trace.last() {
        eprintln!(
            "trained {} iterations; final critic {:.4}, actor {:.4}",
            last.iteration, last.critic_loss, last.actor_loss
        );
    }
    Ok(())
}

fn run(command: Command) -> Result<(), Failure> {
    let cfg = match &command {
        Command::Keys => {
            let d = ExperimentConfig::default();
            for (key, help) in CONFIG_KEYS {
                println!("{key} = {}\n    {help}", d.get(key).unwrap_or_default());
            }
            return Ok(());
        }
        Command::GenData { cfg, .. }
        | Command::Simulate { cfg, .. }
        | Command::Train { cfg, .. }
        | Command::Evaluate { cfg, .. }
        | Command::Experiment { cfg, .. }
        | Command::SweepAlpha { cfg, .. } => cfg,
    };
    let config = load_config(cfg).map_err(Failure::Config)?;
    let data = load_dataset(&config).context("loading data").map_err(Failure::Runtime)?;
    runtime(command, &config, &data).map_err(Failure::Runtime)
}

fn runtime(command: Command, config: &ExperimentConfig, data: &Dataset) -> anyhow::Result<()> {
    match command {
        Command::Keys => unreachable!("handled before loading data"),
        Command::GenData { out, .. } => {
            data.save_dir(&out)?;
            eprintln!(
                "wrote {} / {} / {} queries to {}",
                data.train.len(),
                data.validation.len(),
                data.test.len(),
                out.display()
            );
        }
        Command::Simulate { randomize, out, .. } => {
            let sessions = if randomize {
                let attraction = AttractionModel::new(config.epsilon, config.r_max)?;
                let mut r = rng::stream(first_seed(config), rng::tag::RANDOMIZE | 1 << 32);
                result_randomization(
                    &data.train,
                    &config.click_spec(),
                    &attraction,
                    config.randomization_sessions,
                    config.list_size,
                    &mut r,
                )?
            } else {
                logged(config, data)?
            };
            write_sessions_csv(fs::File::create(&out)?, &sessions)?;
            let clicks: usize = sessions.iter().map(Session::click_count).sum();
            eprintln!("wrote {} sessions with {clicks} clicks to {}", sessions.len(), out.display());
        }
        Command::Train { sessions, out, .. } => {
            let sessions = match sessions {
                Some(p) => read_sessions_csv(fs::File::open(&p).with_context(|| format!("opening {}", p.display()))?)?,
                None => logged(config, data)?,
            };
            train_agent(config, data, &sessions, &out)?;
        }
        Command::Evaluate { agent, json, .. } => {
            let agent = AgentState::load(&agent)?;
            let ranker = |q: &Query, k: usize| cuolr::rank(&agent, q, k);
            let report = evaluate_policy(&ranker, &data.test, &config.ks, config.r_max)?;
            match json {
                Some(p) => fs::write(p, serde_json::to_string_pretty(&report)? + "\n")?,
                None => print_report(&report),
            }
        }
        Command::Experiment { out, .. } => {
            let record = run_experiment_observed(config, data, &mut |r| {
                let status = match (&r.report, &r.failure) {
                    (Some(rep), _) => format!("ndcg@10 {:.4}", rep.mean(Metric::Ndcg, 10).unwrap_or(f64::NAN)),
                    (None, Some(f)) => format!("FAILED: {f}"),
                    (None, None) => "no report".into(),
                };
                eprintln!("[seed {}] {:<10} {status} ({:.1}s)", r.seed, r.method, r.seconds);
            })?;
            persist(&record, config, &out)?;
            eprintln!("results in {}", out.display());
            let failed = record.failures().count();
            if failed > 0 {
                bail!("{failed} method run(s) failed; partial results persisted");
            }
        }
        Command::SweepAlpha { alphas, out, .. } => {
            let grid = if alphas.is_empty() { ALPHA_GRID.to_vec() } else { alphas };
            let points = sweep_alpha(config, data, &grid, &mut |alpha, r| {
                eprintln!("[alpha {alpha}] seed {} done in {:.1}s", r.seed, r.seconds);
            })?;
            fs::create_dir_all(&out)?;
            write_sweep_csv(fs::File::create(out.join("sweep.csv"))?, &points)?;
            fs::write(out.join("config.txt"), config.to_text())?;
            eprintln!("sweep in {}", out.join("sweep.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
