use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{LoggingConfig, RankerConfig};
use crate::click_sim::{ClickModelKind, ClickModelSpec, DEFAULT_EPSILON};
use crate::cuolr::TrainConfig;
use crate::dataset::{SyntheticSpec, DEFAULT_R_MAX};
use crate::diffmath::Readout;
use crate::error::{Error, Result};
use crate::mdp_rank::DEFAULT_LIST_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    CuolrCql,
    CuolrSac,
    Dla,
    Ipw,
    CmIpw,
    Logging,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::CuolrCql,
        Method::CuolrSac,
        Method::Dla,
        Method::Ipw,
        Method::CmIpw,
        Method::Logging,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::CuolrCql => "cuolr-cql",
            Method::CuolrSac => "cuolr-sac",
            Method::Dla => "dla",
            Method::Ipw => "ipw",
            Method::CmIpw => "cm-ipw",
            Method::Logging => "logging",
            Method::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// Directory holding `train.txt`, `vali.txt` and `test.txt`.
    Letor(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignificanceUnit {
    PerQuery,
    PerSeed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub r_max: u8,
    pub click_model: ClickModelKind,
    pub eta: f64,
    pub epsilon: f64,
    pub list_size: usize,
    pub logging_fraction: f64,
    pub sessions_per_query: usize,
    pub randomization_sessions: usize,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub ks: Vec<usize>,
    pub significance: SignificanceUnit,
    pub train: TrainConfig,
    pub ranker: RankerConfig,
    pub logging: LoggingConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic(SyntheticSpec {
                train_queries: 200,
                validation_queries: 0,
                test_queries: 50,
                docs_per_query: 10,
                feature_dim: 8,
                r_max: DEFAULT_R_MAX,
                seed: 7,
            }),
            r_max: DEFAULT_R_MAX,
            click_model: ClickModelKind::Pbm,
            eta: 1.0,
            epsilon: DEFAULT_EPSILON,
            list_size: DEFAULT_LIST_SIZE,
            logging_fraction: 0.01,
            sessions_per_query: 50,
            randomization_sessions: 100_000,
            methods: Method::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            ks: vec![3, 5, 10],
            significance: SignificanceUnit::PerQuery,
            train: TrainConfig::desk(),
            ranker: RankerConfig::default(),
            logging: LoggingConfig::default(),
        }
    }
}

/// Every recognised key with a one-line description, in dump order.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("data", "`synthetic` or a directory with train.txt / vali.txt / test.txt"),
    ("r_max", "highest relevance grade"),
    ("synthetic.train_queries", "synthetic train queries"),
    ("synthetic.validation_queries", "synthetic validation queries"),
    ("synthetic.test_queries", "synthetic test queries"),
    ("synthetic.docs_per_query", "documents per synthetic query"),
    ("synthetic.feature_dim", "synthetic feature width"),
    ("synthetic.seed", "seed of the synthetic generator"),
    ("click_model", "pbm | cascade | dcm | ccm | ubm"),
    ("eta", "position-bias exponent"),
    ("epsilon", "click noise floor"),
    ("list_size", "ranked list length K"),
    ("logging_fraction", "share of train queries used to fit the logging policy"),
    ("sessions_per_query", "logged sessions per train query"),
    ("randomization_sessions", "randomized sessions for propensity estimation"),
    ("methods", "comma list of cuolr-cql, cuolr-sac, dla, ipw, cm-ipw, logging, oracle"),
    ("seeds", "comma list of run seeds"),
    ("ks", "comma list of metric cutoffs"),
    ("significance", "per-query | per-seed"),
    ("critic_lr", "critic learning rate"),
    ("actor_lr", "actor learning rate"),
    ("embed_lr", "state-embedding learning rate"),
    ("cql_alpha", "weight of the conservative term"),
    ("entropy_alpha", "entropy temperature"),
    ("tau", "target-network soft-update rate"),
    ("gamma", "discount"),
    ("batch_queries", "queries per training iteration"),
    ("iterations", "training iterations"),
    ("embedding", "pos | predoc | pos+predoc | attention"),
    ("hidden", "hidden width of actor and critic"),
    ("heads", "attention heads"),
    ("readout", "last | mean attention read-out"),
    ("full_candidate_lse", "conservative term over all documents (true/false)"),
    ("ranker.hidden", "hidden width of the IPW / CM-IPW / DLA scorer"),
    ("ranker.lr", "scorer learning rate"),
    ("ranker.steps", "full-batch scorer steps"),
    ("ranker.clip", "propensity floor before inversion"),
    ("logging.epochs", "logging-policy SGD epochs"),
    ("logging.lr", "logging-policy SGD step"),
    ("logging.l2", "logging-policy weight decay"),
];

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    fn synthetic_mut(&mut self, key: &str) -> Result<&mut SyntheticSpec> {
        match &mut self.data {
            DataSource::Synthetic(s) => Ok(s),
            DataSource::Letor(_) => Err(Error::Config(format!("{key} needs data = synthetic"))),
        }
    }

    /// Sets one `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let v = value.trim();
        match key {
            "data" => {
                self.data = if v.eq_ignore_ascii_case("synthetic") {
                    match &self.data {
                        DataSource::Synthetic(_) => self.data.clone(),
                        DataSource::Letor(_) => ExperimentConfig::default().data,
                    }
                } else {
                    DataSource::Letor(PathBuf::from(v))
                }
            }
            "r_max" => {
                self.r_max = num(key, v)?;
                let r = self.r_max;
                if let DataSource::Synthetic(s) = &mut self.data {
                    s.r_max = r;
                }
            }
            "synthetic.train_queries" => self.synthetic_mut(key)?.train_queries = num(key, v)?,
            "synthetic.validation_queries" => self.synthetic_mut(key)?.validation_queries = num(key, v)?,
            "synthetic.test_queries" => self.synthetic_mut(key)?.test_queries = num(key, v)?,
            "synthetic.docs_per_query" => self.synthetic_mut(key)?.docs_per_query = num(key, v)?,
            "synthetic.feature_dim" => self.synthetic_mut(key)?.feature_dim = num(key, v)?,
            "synthetic.seed" => self.synthetic_mut(key)?.seed = num(key, v)?,
            "click_model" => self.click_model = v.parse()?,
            "eta" => self.eta = num(key, v)?,
            "epsilon" => self.epsilon = num(key, v)?,
            "list_size" => self.list_size = num(key, v)?,
            "logging_fraction" => self.logging_fraction = num(key, v)?,
            "sessions_per_query" => self.sessions_per_query = num(key, v)?,
            "randomization_sessions" => self.randomization_sessions = num(key, v)?,
            "methods" => self.methods = list(key, v)?,
            "seeds" => self.seeds = list(key, v)?,
            "ks" => self.ks = list(key, v)?,
            "significance" => {
                self.significance = match v {
                    "per-query" => SignificanceUnit::PerQuery,
                    "per-seed" => SignificanceUnit::PerSeed,
                    _ => return Err(Error::Config(format!("significance: unknown unit {v:?}"))),
                }
            }
            "critic_lr" => self.train.critic_lr = num(key, v)?,
            "actor_lr" => self.train.actor_lr = num(key, v)?,
            "embed_lr" => self.train.embed_lr = num(key, v)?,
            "cql_alpha" => self.train.cql_alpha = num(key, v)?,
            "entropy_alpha" => self.train.entropy_alpha = num(key, v)?,
            "tau" => self.train.tau = num(key, v)?,
            "gamma" => self.train.gamma = num(key, v)?,
            "batch_queries" => self.train.batch_queries = num(key, v)?,
            "iterations" => self.train.iterations = num(key, v)?,
            "embedding" => self.train.embedding = v.parse()?,
            "hidden" => self.train.hidden = num(key, v)?,
            "heads" => self.train.heads = num(key, v)?,
            "readout" => {
                self.train.readout = match v {
                    "last" => Readout::Last,
                    "mean" => Readout::Mean,
                    _ => return Err(Error::Config(format!("readout: unknown value {v:?}"))),
                }
            }
            "full_candidate_lse" => self.train.full_candidate_lse = num(key, v)?,
            "ranker.hidden" => self.ranker.hidden = num(key, v)?,
            "ranker.lr" => self.ranker.lr = num(key, v)?,
            "ranker.steps" => self.ranker.steps = num(key, v)?,
            "ranker.clip" => self.ranker.clip = num(key, v)?,
            "logging.epochs" => self.logging.epochs = num(key, v)?,
            "logging.lr" => self.logging.lr = num(key, v)?,
            "logging.l2" => self.logging.l2 = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            config.set(k, v).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        config.validate()?;
        Ok(config)
    }

    /// `key = value` for every key; parsing it back gives an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, _) in CONFIG_KEYS {
            if let Some(v) = self.get(key) {
                out.push_str(&format!("{key} = {v}\n"));
            }
        }
        out
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let syn = match &self.data {
            DataSource::Synthetic(s) => Some(s),
            DataSource::Letor(_) => None,
        };
        let t = &self.train;
        Some(match key {
            "data" => match &self.data {
                DataSource::Synthetic(_) => "synthetic".into(),
                DataSource::Letor(p) => p.display().to_string(),
            },
            "r_max" => self.r_max.to_string(),
            "synthetic.train_queries" => syn?.train_queries.to_string(),
            "synthetic.validation_queries" => syn?.validation_queries.to_string(),
            "synthetic.test_queries" => syn?.test_queries.to_string(),
            "synthetic.docs_per_query" => syn?.docs_per_query.to_string(),
            "synthetic.feature_dim" => syn?.feature_dim.to_string(),
            "synthetic.seed" => syn?.seed.to_string(),
            "click_model" => self.click_model.to_string(),
            "eta" => self.eta.to_string(),
            "epsilon" => self.epsilon.to_string(),
            "list_size" => self.list_size.to_string(),
            "logging_fraction" => self.logging_fraction.to_string(),
            "sessions_per_query" => self.sessions_per_query.to_string(),
            "randomization_sessions" => self.randomization_sessions.to_string(),
            "methods" => join(&self.methods),
            "seeds" => join(&self.seeds),
            "ks" => join(&self.ks),
            "significance" => match self.significance {
                SignificanceUnit::PerQuery => "per-query".into(),
                SignificanceUnit::PerSeed => "per-seed".into(),
            },
            "critic_lr" => t.critic_lr.to_string(),
            "actor_lr" => t.actor_lr.to_string(),
            "embed_lr" => t.embed_lr.to_string(),
            "cql_alpha" => t.cql_alpha.to_string(),
            "entropy_alpha" => t.entropy_alpha.to_string(),
            "tau" => t.tau.to_string(),
            "gamma" => t.gamma.to_string(),
            "batch_queries" => t.batch_queries.to_string(),
            "iterations" => t.iterations.to_string(),
            "embedding" => t.embedding.to_string(),
            "hidden" => t.hidden.to_string(),
            "heads" => t.heads.to_string(),
            "readout" => match t.readout {
                Readout::Last => "last".into(),
                Readout::Mean => "mean".into(),
            },
            "full_candidate_lse" => t.full_candidate_lse.to_string(),
            "ranker.hidden" => self.ranker.hidden.to_string(),
            "ranker.lr" => self.ranker.lr.to_string(),
            "ranker.steps" => self.ranker.steps.to_string(),
            "ranker.clip" => self.ranker.clip.to_string(),
            "logging.epochs" => self.logging.epochs.to_string(),
            "logging.lr" => self.logging.lr.to_string(),
            "logging.l2" => self.logging.l2.to_string(),
            _ => return None,
        })
    }

    /// FNV-1a of the canonical dump.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_text().bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    pub fn click_spec(&self) -> ClickModelSpec {
        let rho = (1..=self.list_size).map(|k| 1.0 / k as f64).collect();
        ClickModelSpec::with_rho(self.click_model, rho, self.eta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.list_size == 0 {
            return Err(Error::Config("list_size must be at least 1".into()));
        }
        if !(self.logging_fraction > 0.0 && self.logging_fraction <= 1.0) {
            return Err(Error::Config(format!("logging_fraction {} outside (0, 1]", self.logging_fraction)));
        }
        if self.methods.is_empty() || self.seeds.is_empty() || self.ks.is_empty() {
            return Err(Error::Config("methods, seeds and ks must be nonempty".into()));
        }
        if self.ks.contains(&0) {
            return Err(Error::Config("metric cutoffs must be positive".into()));
        }
        if self.sessions_per_query == 0 || self.randomization_sessions == 0 {
            return Err(Error::Config("session counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside [0, 1)", self.epsilon)));
        }
        if self.ranker.clip <= 0.0 || self.ranker.hidden == 0 {
            return Err(Error::Config("ranker.clip and ranker.hidden must be positive".into()));
        }
        self.click_spec().validate()?;
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cuolr::StateEmbeddingKind;

    #[test]
    fn parse_with_comments() {
        let c = ExperimentConfig::parse(
            "# demo\nclick_model = cascade  # stop at first click\nseeds = 1, 2\nmethods = logging,oracle\n\nembedding = predoc\n",
        )
        .unwrap();
        assert_eq!(c.click_model, ClickModelKind::Cascade);
        assert_eq!(c.seeds, vec![1, 2]);
        assert_eq!(c.methods, vec![Method::Logging, Method::Oracle]);
        assert_eq!(c.train.embedding, StateEmbeddingKind::Predoc);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = ExperimentConfig::parse("seeds = 1\nbogus = 3\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = ExperimentConfig::parse("no equals sign").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        assert!(ExperimentConfig::parse("tau = 0").is_err());
    }

    #[test]
    fn dump_round_trips() {
        let mut c = ExperimentConfig::default();
        c.set("cql_alpha", "0.5").unwrap();
        c.set("methods", "dla, ipw").unwrap();
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        c.set("seeds", "9").unwrap();
        assert_ne!(back.hash(), c.hash());
    }
}
