//! Query/document collections with graded relevance labels.
//!
//! Data comes either from LETOR/SVMrank text (`<label> qid:<q> <fid>:<v> ...`)
//! or from a synthetic generator whose features are a noisy one-hot encoding
//! of the relevance grade. A linear ranker can learn the synthetic task but
//! cannot separate it perfectly, which keeps logging policies suboptimal.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Maximum relevance grade of the 5-level LETOR benchmarks.
pub const DEFAULT_R_MAX: u8 = 4;

/// Standard deviation of the feature noise in synthetic data.
pub const SYNTHETIC_NOISE_STD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: u32,
    pub features: Vec<f64>,
    pub relevance: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: u32,
    pub documents: Vec<Document>,
}

impl Query {
    pub fn doc(&self, doc_id: u32) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn position_of(&self, doc_id: u32) -> Option<usize> {
        self.documents.iter().position(|d| d.doc_id == doc_id)
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Relevance labels sorted best-first, the ideal ordering for nDCG.
    pub fn ideal_relevances(&self) -> Vec<u8> {
        let mut rels: Vec<u8> = self.documents.iter().map(|d| d.relevance).collect();
        rels.sort_unstable_by(|a, b| b.cmp(a));
        rels
    }

    /// Relevance labels of `ranking` (doc ids) in rank order.
    pub fn relevances_of(&self, ranking: &[u32]) -> Result<Vec<u8>> {
        ranking
            .iter()
            .map(|&id| {
                self.doc(id)
                    .map(|d| d.relevance)
                    .ok_or(Error::UnknownDocument {
                        query_id: self.query_id,
                        doc_id: id,
                    })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<Query>,
    pub validation: Vec<Query>,
    pub test: Vec<Query>,
    pub feature_dim: usize,
    pub r_max: u8,
}

impl Dataset {
    /// Assembles a dataset, zero-padding features to the widest partition.
    pub fn from_partitions(
        mut train: Vec<Query>,
        mut validation: Vec<Query>,
        mut test: Vec<Query>,
        r_max: u8,
    ) -> Result<Self> {
        let feature_dim = train
            .iter()
            .chain(&validation)
            .chain(&test)
            .flat_map(|q| &q.documents)
            .map(|d| d.features.len())
            .max()
            .unwrap_or(0);
        for q in train.iter_mut().chain(&mut validation).chain(&mut test) {
            for d in &mut q.documents {
                d.features.resize(feature_dim, 0.0);
            }
        }
        let ds = Dataset {
            train,
            validation,
            test,
            feature_dim,
            r_max,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for q in self.train.iter().chain(&self.validation).chain(&self.test) {
            if !seen.insert(q.query_id) {
                return Err(Error::Domain(format!(
                    "query {} appears in more than one partition",
                    q.query_id
                )));
            }
            if q.documents.is_empty() {
                return Err(Error::Domain(format!("query {} has no documents", q.query_id)));
            }
            let mut ids = HashSet::new();
            for d in &q.documents {
                if !ids.insert(d.doc_id) {
                    return Err(Error::Domain(format!(
                        "duplicate doc id {} in query {}",
                        d.doc_id, q.query_id
                    )));
                }
                if d.features.len() != self.feature_dim {
                    return Err(Error::Domain(format!(
                        "document {} of query {} has {} features, expected {}",
                        d.doc_id,
                        q.query_id,
                        d.features.len(),
                        self.feature_dim
                    )));
                }
                if d.relevance > self.r_max {
                    return Err(Error::Domain(format!(
                        "relevance {} exceeds r_max {}",
                        d.relevance, self.r_max
                    )));
                }
            }
        }
        Ok(())
    }

    /// Loads `train.txt`, `vali.txt` and `test.txt` from a directory.
    pub fn load_dir(dir: &Path, r_max: u8) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<Query>> {
            let path = dir.join(name);
            if !path.exists() {
                return Ok(Vec::new());
            }
            parse_letor(&std::fs::read_to_string(path)?, r_max)
        };
        Self::from_partitions(read("train.txt")?, read("vali.txt")?, read("test.txt")?, r_max)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("train.txt"), write_letor(&self.train))?;
        std::fs::write(dir.join("vali.txt"), write_letor(&self.validation))?;
        std::fs::write(dir.join("test.txt"), write_letor(&self.test))?;
        Ok(())
    }
}

/// Parses LETOR/SVMrank lines into queries.
///
/// Queries are grouped by qid in order of first appearance, documents get
/// ids `0..n` in file order within their query, and every feature vector is
/// padded with zeros to the largest feature id seen.
pub fn parse_letor(text: &str, r_max: u8) -> Result<Vec<Query>> {
    let mut queries: Vec<Query> = Vec::new();
    let mut by_qid: HashMap<u32, usize> = HashMap::new();
    let mut feature_dim = 0usize;

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().ok_or_else(|| parse_err("missing label".into()))?;
        let label: i64 = label_tok
            .parse()
            .map_err(|_| parse_err(format!("invalid label {label_tok:?}")))?;
        if label < 0 || label > i64::from(r_max) {
            return Err(Error::Domain(format!(
                "line {line_no}: label {label} outside [0, {r_max}]"
            )));
        }
        let qid_tok = tokens.next().ok_or_else(|| parse_err("missing qid".into()))?;
        let qid: u32 = qid_tok
            .strip_prefix("qid:")
            .and_then(|q| q.parse().ok())
            .ok_or_else(|| parse_err(format!("invalid qid token {qid_tok:?}")))?;

        let mut sparse = Vec::new();
        for tok in tokens {
            let (fid, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(format!("invalid feature token {tok:?}")))?;
            let fid: usize = fid
                .parse()
                .ok()
                .filter(|&f| f >= 1)
                .ok_or_else(|| parse_err(format!("invalid feature id in {tok:?}")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(format!("invalid feature value in {tok:?}")))?;
            feature_dim = feature_dim.max(fid);
            sparse.push((fid, val));
        }
        let mut features = vec![0.0; sparse.iter().map(|&(f, _)| f).max().unwrap_or(0)];
        for (fid, val) in sparse {
            features[fid - 1] = val;
        }

        let slot = *by_qid.entry(qid).or_insert_with(|| {
            queries.push(Query {
                query_id: qid,
                documents: Vec::new(),
            });
            queries.len() - 1
        });
        let q = &mut queries[slot];
        q.documents.push(Document {
            doc_id: q.documents.len() as u32,
            features,
            relevance: label as u8,
        });
    }

    for d in queries.iter_mut().flat_map(|q| &mut q.documents) {
        d.features.resize(feature_dim, 0.0);
    }
    Ok(queries)
}

/// Serializes queries as dense LETOR lines, documents in stored order.
pub fn write_letor(queries: &[Query]) -> String {
    let mut out = String::new();
    for q in queries {
        for d in &q.documents {
            let _ = write!(out, "{} qid:{}", d.relevance, q.query_id);
            for (i, v) in d.features.iter().enumerate() {
                let _ = write!(out, " {}:{}", i + 1, v);
            }
            out.push('\n');
        }
    }
    out
}

/// Partition sizes and feature model for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub train_queries: usize,
    pub validation_queries: usize,
    pub test_queries: usize,
    pub docs_per_query: usize,
    pub feature_dim: usize,
    pub r_max: u8,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 60/20/20 split of `n_queries`.
    pub fn with_default_split(
        n_queries: usize,
        docs_per_query: usize,
        feature_dim: usize,
        r_max: u8,
        seed: u64,
    ) -> Self {
        let train_queries = n_queries * 3 / 5;
        let validation_queries = n_queries / 5;
        SyntheticSpec {
            train_queries,
            validation_queries,
            test_queries: n_queries - train_queries - validation_queries,
            docs_per_query,
            feature_dim,
            r_max,
            seed,
        }
    }

    pub fn total_queries(&self) -> usize {
        self.train_queries + self.validation_queries + self.test_queries
    }

    pub fn generate(&self) -> Result<Dataset> {
        if self.total_queries() == 0 || self.docs_per_query == 0 {
            return Err(Error::Domain("synthetic sizes must be at least 1".into()));
        }
        if self.feature_dim < usize::from(self.r_max) + 1 {
            return Err(Error::Domain(format!(
                "feature_dim {} cannot one-hot encode {} relevance grades",
                self.feature_dim,
                self.r_max as usize + 1
            )));
        }
        let noise = Normal::new(0.0, SYNTHETIC_NOISE_STD).expect("valid std");
        let grade = Uniform::new_inclusive(0u8, self.r_max).expect("valid range");
        let mut all: Vec<Query> = (0..self.total_queries() as u32)
            .map(|qid| {
                let mut rng = rng::stream(self.seed, rng::tag::DATA | u64::from(qid));
                let documents = (0..self.docs_per_query as u32)
                    .map(|doc_id| {
                        let relevance = grade.sample(&mut rng);
                        let mut features: Vec<f64> =
                            (0..self.feature_dim).map(|_| noise.sample(&mut rng)).collect();
                        features[usize::from(relevance)] += 1.0;
                        Document {
                            doc_id,
                            features,
                            relevance,
                        }
                    })
                    .collect();
                Query {
                    query_id: qid,
                    documents,
                }
            })
            .collect();
        let test = all.split_off(self.train_queries + self.validation_queries);
        let validation = all.split_off(self.train_queries);
        Dataset::from_partitions(all, validation, test, self.r_max)
    }
}

/// Synthetic dataset split 60/20/20 by query; a pure function of its arguments.
pub fn generate_synthetic(
    n_queries: usize,
    docs_per_query: usize,
    feature_dim: usize,
    r_max: u8,
    seed: u64,
) -> Result<Dataset> {
    SyntheticSpec::with_default_split(n_queries, docs_per_query, feature_dim, r_max, seed).generate()
}

/// Deterministic subsample of `ceil(fraction * n)` queries, kept in input order.
pub fn train_fraction(partition: &[Query], fraction: f64, seed: u64) -> Result<Vec<Query>> {
    if partition.is_empty() {
        return Err(Error::Degenerate("cannot subsample an empty partition".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Domain(format!("fraction {fraction} outside (0, 1]")));
    }
    let n = partition.len();
    // Guard against products such as 0.1 * 250 landing a hair above 25.
    let take = ((fraction * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    if take == n {
        return Ok(partition.to_vec());
    }
    let mut rng = rng::stream(seed, rng::tag::SUBSAMPLE);
    let mut picked = index::sample(&mut rng, n, take).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| partition[i].clone()).collect())
}
