//! Comparison rankers: the logging policy, propensity estimation from
//! randomized logs, IPW / CM-IPW / DLA click learners, and the skyline.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::click_sim::{simulate_session, AttractionModel, ClickModelSpec, Session};
use crate::dataset::{Document, Query};
use crate::diffmath::{Activation, Adam, Mlp, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::evalharness::Ranker;
use crate::mdp_rank::argmax_by_doc;
use crate::rng::{self, tag, Rng};

/// Sorts documents by descending score, ties to ascending doc_id.
fn sort_by_score(docs: &[Document], scores: &[f64], k: usize) -> Vec<u32> {
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(docs[a].doc_id.cmp(&docs[b].doc_id)));
    order.into_iter().take(k).map(|i| docs[i].doc_id).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRanker {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearRanker {
    pub fn zeros(feature_dim: usize) -> Self {
        LinearRanker {
            weights: vec![0.0; feature_dim],
            bias: 0.0,
        }
    }

    pub fn score(&self, features: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(features).map(|(w, f)| w * f).sum::<f64>()
    }
}

impl Ranker for LinearRanker {
    fn rank(&self, query: &Query, k: usize) -> Result<Vec<u32>> {
        let scores: Vec<f64> = query.documents.iter().map(|d| self.score(&d.features)).collect();
        Ok(sort_by_score(&query.documents, &scores, k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggingConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for LoggingConfig {
    fn default() -> Self {
        LoggingConfig {
            epochs: 50,
            lr: 0.01,
            l2: 1e-3,
            seed: 0,
        }
    }
}

/// Pairwise hinge-loss linear ranker fit by SGD over shuffled pairs.
pub fn train_logging_policy(queries: &[Query], config: &LoggingConfig) -> Result<LinearRanker> {
    let dim = queries
        .iter()
        .flat_map(|q| q.documents.first())
        .map(|d| d.features.len())
        .next()
        .ok_or_else(|| Error::Degenerate("no documents to train the logging policy on".into()))?;
    let mut pairs: Vec<Vec<f64>> = Vec::new();
    for q in queries {
        for a in &q.documents {
            for b in &q.documents {
                if a.relevance > b.relevance {
                    pairs.push(a.features.iter().zip(&b.features).map(|(x, y)| x - y).collect());
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Degenerate("no comparable document pairs".into()));
    }
    let mut ranker = LinearRanker::zeros(dim);
    let mut rng = rng::stream(config.seed, tag::LOGGING);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let diff = &pairs[i];
            let margin: f64 = ranker.weights.iter().zip(diff).map(|(w, d)| w * d).sum();
            for (w, d) in ranker.weights.iter_mut().zip(diff) {
                let hinge = if margin < 1.0 { *d } else { 0.0 };
                *w += config.lr * (hinge - config.l2 * *w);
            }
        }
    }
    Ok(ranker)
}

/// Pairs ordered against their labels.
pub fn pair_violations(ranker: &LinearRanker, queries: &[Query]) -> usize {
    let mut n = 0;
    for q in queries {
        for a in &q.documents {
            for b in &q.documents {
                if a.relevance > b.relevance && ranker.score(&a.features) <= ranker.score(&b.features) {
                    n += 1;
                }
            }
        }
    }
    n
}

/// Documents by descending true relevance, ties to ascending doc_id.
pub fn skyline_ranking(query: &Query) -> Vec<u32> {
    let scores: Vec<f64> = query.documents.iter().map(|d| f64::from(d.relevance)).collect();
    sort_by_score(&query.documents, &scores, query.len())
}

pub struct Skyline;

impl Ranker for Skyline {
    fn rank(&self, query: &Query, k: usize) -> Result<Vec<u32>> {
        let mut r = skyline_ranking(query);
        r.truncate(k);
        Ok(r)
    }
}

/// Uniformly random order, drawn afresh per call from a per-query stream.
pub struct RandomRanker {
    pub seed: u64,
}

impl Ranker for RandomRanker {
    fn rank(&self, query: &Query, k: usize) -> Result<Vec<u32>> {
        let mut rng = rng::stream(self.seed, tag::RANDOMIZE | u64::from(query.query_id));
        let mut ids: Vec<u32> = query.documents.iter().map(|d| d.doc_id).collect();
        ids.shuffle(&mut rng);
        ids.truncate(k);
        Ok(ids)
    }
}

/// Sessions showing a uniformly random query and a uniformly random
/// ordering of up to `k` of its documents.
pub fn result_randomization(
    queries: &[Query],
    spec: &ClickModelSpec,
    attraction: &AttractionModel,
    n_sessions: usize,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<Session>> {
    if queries.is_empty() || n_sessions == 0 {
        return Err(Error::Domain("randomization needs queries and at least one session".into()));
    }
    let mut out = Vec::with_capacity(n_sessions);
    for _ in 0..n_sessions {
        let q = queries.choose(rng).expect("nonempty");
        let mut docs: Vec<&Document> = q.documents.iter().collect();
        docs.shuffle(rng);
        docs.truncate(k.min(spec.list_size()));
        out.push(simulate_session(spec, q.query_id, &docs, attraction, rng)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PropensityKind {
    Ipw,
    Cm,
}

/// Per-rank estimates; `None` where the log holds no evidence.
///
/// For `Ipw` the values are examination propensities `theta_k` with
/// `theta_1 = 1`; for `Cm` they are continuation probabilities `lambda_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityTable {
    pub kind: PropensityKind,
    pub values: Vec<Option<f64>>,
}

impl PropensityTable {
    pub fn theta(&self, k: usize) -> Option<f64> {
        debug_assert_eq!(self.kind, PropensityKind::Ipw);
        self.values.get(k.wrapping_sub(1)).copied().flatten()
    }

    pub fn lambda(&self, k: usize) -> Option<f64> {
        debug_assert_eq!(self.kind, PropensityKind::Cm);
        self.values.get(k.wrapping_sub(1)).copied().flatten()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rank", if self.kind == PropensityKind::Ipw { "theta" } else { "lambda" }])?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([(i + 1).to_string(), v.map_or(String::new(), |x| x.to_string())])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn max_len(sessions: &[Session]) -> usize {
    sessions.iter().map(|s| s.clicks.len()).max().unwrap_or(0)
}

/// `theta_k = (clicks at k) / (clicks at 1)`, clamped to `[0, 1]`.
pub fn estimate_ipw_propensities(sessions: &[Session]) -> Result<PropensityTable> {
    let k = max_len(sessions);
    let mut clicks = vec![0.0; k];
    for s in sessions {
        for (i, &c) in s.clicks.iter().enumerate() {
            clicks[i] += f64::from(c);
        }
    }
    if clicks.first().copied().unwrap_or(0.0) == 0.0 {
        return Err(Error::Degenerate("no clicks at rank 1".into()));
    }
    let values = clicks
        .iter()
        .map(|&c| (c > 0.0).then(|| (c / clicks[0]).min(1.0)))
        .collect();
    Ok(PropensityTable {
        kind: PropensityKind::Ipw,
        values,
    })
}

/// `lambda_k` = share of sessions clicking at `k` that click again below it.
pub fn estimate_cm_lambdas(sessions: &[Session]) -> Result<PropensityTable> {
    let k = max_len(sessions);
    let mut clicked = vec![0usize; k];
    let mut continued = vec![0usize; k];
    for s in sessions {
        let last = s.clicks.iter().rposition(|&c| c == 1);
        for (i, &c) in s.clicks.iter().enumerate() {
            if c == 1 {
                clicked[i] += 1;
                if last.is_some_and(|l| l > i) {
                    continued[i] += 1;
                }
            }
        }
    }
    let values = clicked
        .iter()
        .zip(&continued)
        .map(|(&n, &c)| (n > 0).then(|| c as f64 / n as f64))
        .collect();
    Ok(PropensityTable {
        kind: PropensityKind::Cm,
        values,
    })
}

/// `prod_{i<k} (1 - C_i (1 - lambda_i))`; an unestimated lambda counts as 1.
pub fn cm_ipw_propensity(click_prefix: &[u8], lambdas: &PropensityTable) -> f64 {
    click_prefix
        .iter()
        .enumerate()
        .map(|(i, &c)| 1.0 - f64::from(c) * (1.0 - lambdas.lambda(i + 1).unwrap_or(1.0)))
        .product()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerConfig {
    pub hidden: usize,
    pub lr: f64,
    pub steps: usize,
    /// Floor applied to propensities before inverting them.
    pub clip: f64,
    pub seed: u64,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            hidden: 32,
            lr: 3e-3,
            steps: 300,
            clip: 0.01,
            seed: 0,
        }
    }
}

/// Two-hidden-layer ReLU scorer over document features.
#[derive(Debug, Clone)]
pub struct MlpRanker {
    pub mlp: Mlp,
    pub store: ParamStore,
}

impl MlpRanker {
    pub fn new(feature_dim: usize, config: &RankerConfig, stream: u64) -> Result<Self> {
        let mut rng = rng::stream(config.seed, tag::BASELINE | stream);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            "ranker",
            &[feature_dim, config.hidden, config.hidden, 1],
            Activation::Relu,
            &mut rng,
        )?;
        Ok(MlpRanker { mlp, store })
    }

    pub fn scores(&self, docs: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = tape.constant(docs.clone());
        let y = self.mlp.forward(&mut tape, &self.store, x)?;
        Ok(tape.value(y).data().to_vec())
    }
}

impl Ranker for MlpRanker {
    fn rank(&self, query: &Query, k: usize) -> Result<Vec<u32>> {
        let rows: Vec<&[f64]> = query.documents.iter().map(|d| d.features.as_slice()).collect();
        let dim = rows.first().map_or(0, |r| r.len());
        let scores = self.scores(&Tensor::from_rows(&rows, dim)?)?;
        let refs: Vec<&Document> = query.documents.iter().collect();
        debug_assert!(k <= refs.len());
        if k == 1 {
            return Ok(vec![refs[argmax_by_doc(&scores, &refs)].doc_id]);
        }
        Ok(sort_by_score(&query.documents, &scores, k))
    }
}

/// Click log laid out for listwise softmax losses.
///
/// All documents of all queries are stacked into one matrix; each query is a
/// row segment. Clicks are also summed per distinct (query, ranking) pair.
#[derive(Debug, Clone)]
pub struct ClickLog {
    pub docs: Tensor,
    pub offsets: Rc<[usize]>,
    pub groups: Vec<ClickGroup>,
    /// Each session as (rows of its ranked documents, clicks).
    pub sessions: Vec<(Vec<usize>, Vec<u8>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClickGroup {
    pub query: usize,
    /// Row of each ranked document within `ClickLog::docs`.
    pub rows: Vec<usize>,
    /// Clicks summed over the group's sessions, per rank.
    pub clicks: Vec<f64>,
}

impl ClickLog {
    pub fn new(queries: &[Query], sessions: &[Session]) -> Result<Self> {
        let mut offsets = vec![0];
        let mut rows: Vec<&[f64]> = Vec::new();
        for q in queries {
            rows.extend(q.documents.iter().map(|d| d.features.as_slice()));
            offsets.push(rows.len());
        }
        let dim = rows.first().map_or(0, |r| r.len());
        let index: BTreeMap<u32, usize> = queries.iter().enumerate().map(|(i, q)| (q.query_id, i)).collect();
        let mut groups: Vec<ClickGroup> = Vec::new();
        let mut lookup: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        let mut kept = Vec::with_capacity(sessions.len());
        for s in sessions {
            let &qi = index.get(&s.query_id).ok_or(Error::UnknownDocument {
                query_id: s.query_id,
                doc_id: s.ranking.first().copied().unwrap_or(0),
            })?;
            let q = &queries[qi];
            let ranked = s
                .ranking
                .iter()
                .map(|&d| {
                    q.position_of(d).map(|p| offsets[qi] + p).ok_or(Error::UnknownDocument {
                        query_id: s.query_id,
                        doc_id: d,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let gi = *lookup.entry(ranked.clone()).or_insert_with(|| {
                groups.push(ClickGroup {
                    query: qi,
                    rows: ranked.clone(),
                    clicks: vec![0.0; ranked.len()],
                });
                groups.len() - 1
            });
            for (c, &x) in groups[gi].clicks.iter_mut().zip(&s.clicks) {
                *c += f64::from(x);
            }
            kept.push((ranked, s.clicks.clone()));
        }
        Ok(ClickLog {
            docs: Tensor::from_rows(&rows, dim)?,
            offsets: Rc::from(offsets),
            groups,
            sessions: kept,
        })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    pub fn total_clicks(&self) -> f64 {
        self.groups.iter().flat_map(|g| &g.clicks).sum()
    }

    /// Per-document weight `sum over clicks of 1 / max(propensity, clip)`.
    ///
    /// IPW looks up `theta` by rank; CM-IPW uses each session's own clicks
    /// above the clicked rank.
    pub fn inverse_propensity_weights(&self, table: &PropensityTable, clip: f64) -> Vec<f64> {
        let mut w = vec![0.0; self.docs.rows()];
        match table.kind {
            PropensityKind::Ipw => {
                for g in &self.groups {
                    for (k, (&row, &c)) in g.rows.iter().zip(&g.clicks).enumerate() {
                        if c > 0.0 {
                            w[row] += c / table.theta(k + 1).unwrap_or(clip).max(clip);
                        }
                    }
                }
            }
            PropensityKind::Cm => {
                for (rows, clicks) in &self.sessions {
                    for (k, &c) in clicks.iter().enumerate() {
                        if c == 1 {
                            w[rows[k]] += 1.0 / cm_ipw_propensity(&clicks[..k], table).max(clip);
                        }
                    }
                }
            }
        }
        w
    }
}

/// `sum_d w_d * (-log softmax_q(score)_d) / normalizer`, softmax within
/// each query's row segment.
pub fn weighted_softmax_loss(
    tape: &mut Tape,
    ranker: &Mlp,
    store: &ParamStore,
    log: &ClickLog,
    weights: &[f64],
) -> Result<Var> {
    let x = tape.constant(log.docs.clone());
    let scores = ranker.forward(tape, store, x)?;
    let log_p = tape.segment_log_softmax(scores, log.offsets.clone())?;
    let n = log.session_count().max(1) as f64;
    let w = tape.constant(Tensor::column(weights.iter().map(|v| -v / n).collect()));
    let wl = tape.mul(log_p, w)?;
    Ok(tape.sum(wl))
}

fn fit_softmax(ranker: &mut MlpRanker, log: &ClickLog, weights: &[f64], config: &RankerConfig) -> Result<Vec<f64>> {
    let mut opt = Adam::new(config.lr);
    let mut trace = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let mut tape = Tape::new();
        let loss = weighted_softmax_loss(&mut tape, &ranker.mlp, &ranker.store, log, weights)?;
        trace.push(tape.value(loss).item());
        let g = tape.backward(loss)?;
        ranker.store.accumulate(&tape, &g);
        opt.step(&mut ranker.store)?;
    }
    Ok(trace)
}

/// Trains a scorer on propensity-weighted clicks; returns it with its loss trace.
pub fn ipw_train(
    queries: &[Query],
    sessions: &[Session],
    propensities: &PropensityTable,
    config: &RankerConfig,
) -> Result<(MlpRanker, Vec<f64>)> {
    let log = ClickLog::new(queries, sessions)?;
    if log.total_clicks() == 0.0 {
        return Err(Error::Degenerate("click log has no clicks".into()));
    }
    let weights = log.inverse_propensity_weights(propensities, config.clip);
    let stream = match propensities.kind {
        PropensityKind::Ipw => 1,
        PropensityKind::Cm => 2,
    };
    let mut ranker = MlpRanker::new(log.docs.cols(), config, stream)?;
    let trace = fit_softmax(&mut ranker, &log, &weights, config)?;
    Ok((ranker, trace))
}

/// Ranker plus per-rank propensity logits, learned jointly.
#[derive(Debug, Clone)]
pub struct DlaModels {
    pub ranker: MlpRanker,
    pub propensity: ParamStore,
    pub logits: ParamId,
}

impl DlaModels {
    pub fn new(feature_dim: usize, list_size: usize, config: &RankerConfig) -> Result<Self> {
        let ranker = MlpRanker::new(feature_dim, config, 3)?;
        let mut propensity = ParamStore::new();
        let logits = propensity.add("propensity", Tensor::zeros(1, list_size))?;
        Ok(DlaModels {
            ranker,
            propensity,
            logits,
        })
    }

    /// Softmax of the propensity logits, rescaled so rank 1 is 1.
    pub fn propensity_ratios(&self) -> Vec<f64> {
        let p = softmax(self.propensity.get(self.logits).data());
        p.iter().map(|v| v / p[0]).collect()
    }
}

impl Ranker for DlaModels {
    fn rank(&self, query: &Query, k: usize) -> Result<Vec<u32>> {
        self.ranker.rank(query, k)
    }
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Ranker objective: clicks weighted by `p_1 / p_k` of the current propensity model.
pub fn dla_ranker_loss(tape: &mut Tape, models: &DlaModels, ranker: &ParamStore, log: &ClickLog) -> Result<Var> {
    let p = softmax(models.propensity.get(models.logits).data());
    let mut w = vec![0.0; log.docs.rows()];
    for g in &log.groups {
        for (k, (&row, &c)) in g.rows.iter().zip(&g.clicks).enumerate() {
            w[row] += c * p[0] / p[k];
        }
    }
    weighted_softmax_loss(tape, &models.ranker.mlp, ranker, log, &w)
}

/// Propensity objective: clicks at rank `k` weighted by `r_1 / r_k`, where
/// `r` is the current ranker's softmax over the shown list.
pub fn dla_propensity_loss(tape: &mut Tape, models: &DlaModels, propensity: &ParamStore, log: &ClickLog) -> Result<Var> {
    let scores = models.ranker.scores(&log.docs)?;
    let k = propensity.get(models.logits).cols();
    let mut counts = vec![0.0; k];
    for g in &log.groups {
        let shown: Vec<f64> = g.rows.iter().map(|&r| scores[r]).collect();
        let rel = softmax(&shown);
        for (i, &c) in g.clicks.iter().enumerate().take(k) {
            counts[i] += c * rel[0] / rel[i];
        }
    }
    let logits = tape.param(propensity, models.logits);
    let log_p = tape.log_softmax(logits, 1)?;
    let n = log.session_count().max(1) as f64;
    let w = tape.constant(Tensor::row(counts.iter().map(|c| -c / n).collect()));
    let wl = tape.mul(log_p, w)?;
    Ok(tape.sum(wl))
}

/// Alternates one ranker step and one propensity step per iteration.
pub fn dla_train(queries: &[Query], sessions: &[Session], config: &RankerConfig) -> Result<DlaModels> {
    let log = ClickLog::new(queries, sessions)?;
    if log.total_clicks() == 0.0 {
        return Err(Error::Degenerate("click log has no clicks".into()));
    }
    let list_size = log.groups.iter().map(|g| g.rows.len()).max().unwrap_or(1);
    let mut models = DlaModels::new(log.docs.cols(), list_size, config)?;
    let mut ranker_opt = Adam::new(config.lr);
    let mut prop_opt = Adam::new(config.lr);
    for _ in 0..config.steps {
        let mut tape = Tape::new();
        let loss = dla_ranker_loss(&mut tape, &models, &models.ranker.store, &log)?;
        let g = tape.backward(loss)?;
        models.ranker.store.accumulate(&tape, &g);
        ranker_opt.step(&mut models.ranker.store)?;

        let mut tape = Tape::new();
        let loss = dla_propensity_loss(&mut tape, &models, &models.propensity, &log)?;
        let g = tape.backward(loss)?;
        models.propensity.accumulate(&tape, &g);
        prop_opt.step(&mut models.propensity)?;
    }
    Ok(models)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::click_sim::ClickModelKind;
    use approx::assert_relative_eq;

    fn doc(id: u32, rel: u8, f: Vec<f64>) -> Document {
        Document {
            doc_id: id,
            features: f,
            relevance: rel,
        }
    }

    fn session(clicks: &[u8]) -> Session {
        Session {
            query_id: 0,
            ranking: (0..clicks.len() as u32).collect(),
            clicks: clicks.to_vec(),
        }
    }

    #[test]
    fn separable_pairs_are_learned() {
        let q = Query {
            query_id: 0,
            documents: vec![
                doc(0, 0, vec![0.0, 1.0]),
                doc(1, 2, vec![1.0, 0.0]),
                doc(2, 1, vec![0.5, 0.5]),
            ],
        };
        let r = train_logging_policy(std::slice::from_ref(&q), &LoggingConfig::default()).unwrap();
        assert_eq!(pair_violations(&r, &[q.clone()]), 0);
        assert_eq!(r.rank(&q, 3).unwrap(), vec![1, 2, 0]);
        assert_eq!(LinearRanker::zeros(2).rank(&q, 3).unwrap(), vec![0, 1, 2]);
        let flat = Query {
            query_id: 1,
            documents: vec![doc(0, 1, vec![0.0, 0.0]), doc(1, 1, vec![1.0, 0.0])],
        };
        assert!(train_logging_policy(&[flat], &LoggingConfig::default()).is_err());
    }

    #[test]
    fn skyline_sorts_by_relevance() {
        let q = Query {
            query_id: 0,
            documents: vec![doc(0, 0, vec![0.0]), doc(1, 4, vec![0.0]), doc(2, 2, vec![0.0])],
        };
        assert_eq!(skyline_ranking(&q), vec![1, 2, 0]);
    }

    #[test]
    fn ipw_estimator_examples() {
        let t = estimate_ipw_propensities(&[session(&[1, 0, 0])]).unwrap();
        assert_eq!(t.values, vec![Some(1.0), None, None]);
        assert!(estimate_ipw_propensities(&[session(&[0, 1])]).is_err());
        let t = estimate_ipw_propensities(&[session(&[1, 1]), session(&[1, 0])]).unwrap();
        assert_eq!(t.theta(2), Some(0.5));
    }

    #[test]
    fn cm_estimator_examples() {
        let t = estimate_cm_lambdas(&[session(&[1, 0, 1]), session(&[1, 0, 0]), session(&[0, 0, 0])]).unwrap();
        assert_eq!(t.lambda(1), Some(0.5));
        assert_eq!(t.lambda(2), None);
        assert_eq!(t.lambda(3), Some(0.0));
        let none = estimate_cm_lambdas(&[session(&[0, 0])]).unwrap();
        assert!(none.values.iter().all(Option::is_none));
    }

    #[test]
    fn cm_propensity_examples() {
        let t = PropensityTable {
            kind: PropensityKind::Cm,
            values: vec![Some(0.4), Some(0.0), Some(0.9)],
        };
        assert_eq!(cm_ipw_propensity(&[], &t), 1.0);
        assert_eq!(cm_ipw_propensity(&[0, 0], &t), 1.0);
        assert_relative_eq!(cm_ipw_propensity(&[1], &t), 0.4);
        assert_eq!(cm_ipw_propensity(&[0, 1], &t), 0.0);
    }

    #[test]
    fn randomization_covers_ranks_uniformly() {
        let q = Query {
            query_id: 0,
            documents: (0..3).map(|i| doc(i, 1, vec![0.0])).collect(),
        };
        let spec = ClickModelSpec::new(ClickModelKind::Pbm, 3);
        let attraction = AttractionModel::new(0.1, 4).unwrap();
        let mut rng = rng::stream(2, 0);
        let n = 30_000;
        let s = result_randomization(&[q], &spec, &attraction, n, 3, &mut rng).unwrap();
        assert_eq!(s.len(), n);
        let sigma = (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for d in 0..3 {
            let c = s.iter().filter(|x| x.ranking[0] == d).count() as f64;
            assert!((c - n as f64 / 3.0).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn unit_propensities_give_click_counts() {
        let q = Query {
            query_id: 0,
            documents: (0..3).map(|i| doc(i, 1, vec![i as f64])).collect(),
        };
        let log = ClickLog::new(&[q], &[session(&[1, 0, 1]), session(&[0, 0, 1])]).unwrap();
        let ones = PropensityTable {
            kind: PropensityKind::Ipw,
            values: vec![Some(1.0); 3],
        };
        assert_eq!(log.inverse_propensity_weights(&ones, 0.01), vec![1.0, 0.0, 2.0]);
    }
}
