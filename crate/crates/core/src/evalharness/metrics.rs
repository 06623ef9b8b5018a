use serde::{Deserialize, Serialize};

use crate::dataset::Query;
use crate::error::{Error, Result};

pub const DEFAULT_KS: [usize; 3] = [3, 5, 10];

/// Anything that turns a query into a ranked list of doc ids.
pub trait Ranker {
    fn rank(&self, query: &Query, k: usize) -> Result<Vec<u32>>;
}

impl<F> Ranker for F
where
    F: Fn(&Query, usize) -> Result<Vec<u32>>,
{
    fn rank(&self, query: &Query, k: usize) -> Result<Vec<u32>> {
        self(query, k)
    }
}

fn gain(rel: u8) -> f64 {
    2f64.powi(i32::from(rel)) - 1.0
}

/// `sum_{i<=k} (2^rel_i - 1) / log2(i + 1)`.
pub fn dcg_at_k(rels: &[u8], k: usize) -> f64 {
    rels.iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| gain(r) / ((i + 2) as f64).log2())
        .sum()
}

/// DCG normalized by the ideal DCG; 0 when nothing is relevant.
pub fn ndcg_at_k(rels: &[u8], ideal: &[u8], k: usize) -> f64 {
    let idcg = dcg_at_k(ideal, k);
    if idcg == 0.0 {
        0.0
    } else {
        dcg_at_k(rels, k) / idcg
    }
}

/// Expected reciprocal rank with stop probability `(2^rel - 1) / 2^r_max`.
pub fn err_at_k(rels: &[u8], k: usize, r_max: u8) -> f64 {
    let denom = 2f64.powi(i32::from(r_max));
    let mut continue_p = 1.0;
    let mut total = 0.0;
    for (i, &r) in rels.iter().take(k).enumerate() {
        let stop = gain(r) / denom;
        total += continue_p * stop / (i + 1) as f64;
        continue_p *= 1.0 - stop;
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: u32,
    /// Indexed like `MetricReport::ks`.
    pub ndcg: Vec<f64>,
    pub err: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ks: Vec<usize>,
    pub per_query: Vec<QueryMetrics>,
    pub mean_ndcg: Vec<f64>,
    pub mean_err: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Ndcg,
    Err,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Err, Metric::Ndcg];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ndcg => "ndcg",
            Metric::Err => "err",
        }
    }
}

impl MetricReport {
    pub fn query_count(&self) -> usize {
        self.per_query.len()
    }

    fn k_index(&self, k: usize) -> Option<usize> {
        self.ks.iter().position(|&x| x == k)
    }

    pub fn mean(&self, metric: Metric, k: usize) -> Option<f64> {
        let i = self.k_index(k)?;
        Some(match metric {
            Metric::Ndcg => self.mean_ndcg[i],
            Metric::Err => self.mean_err[i],
        })
    }

    pub fn per_query_values(&self, metric: Metric, k: usize) -> Option<Vec<f64>> {
        let i = self.k_index(k)?;
        Some(
            self.per_query
                .iter()
                .map(|q| match metric {
                    Metric::Ndcg => q.ndcg[i],
                    Metric::Err => q.err[i],
                })
                .collect(),
        )
    }
}

/// Scores the ranker's top list on every query against true labels.
pub fn evaluate_policy<R: Ranker + ?Sized>(ranker: &R, queries: &[Query], ks: &[usize], r_max: u8) -> Result<MetricReport> {
    if queries.is_empty() {
        return Err(Error::Degenerate("no queries to evaluate".into()));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("metric cutoffs must be positive".into()));
    }
    let k_max = *ks.iter().max().expect("nonempty");
    let mut per_query = Vec::with_capacity(queries.len());
    for q in queries {
        let ranking = ranker.rank(q, k_max.min(q.len()))?;
        let rels = q.relevances_of(&ranking)?;
        let ideal = q.ideal_relevances();
        per_query.push(QueryMetrics {
            query_id: q.query_id,
            ndcg: ks.iter().map(|&k| ndcg_at_k(&rels, &ideal, k)).collect(),
            err: ks.iter().map(|&k| err_at_k(&rels, k, r_max)).collect(),
        });
    }
    let n = per_query.len() as f64;
    let mean = |f: &dyn Fn(&QueryMetrics) -> f64| per_query.iter().map(f).sum::<f64>() / n;
    let mean_ndcg = (0..ks.len()).map(|i| mean(&|q| q.ndcg[i])).collect();
    let mean_err = (0..ks.len()).map(|i| mean(&|q| q.err[i])).collect();
    Ok(MetricReport {
        ks: ks.to_vec(),
        per_query,
        mean_ndcg,
        mean_err,
    })
}
