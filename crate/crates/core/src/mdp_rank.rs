//! Ranking as a finite-horizon MDP.
//!
//! A state is the list built so far plus the next position; an action picks
//! one remaining document; the reward is the click on it. Transitions are
//! deterministic, so an episode is just a ranked list with its clicks.

use std::cmp::Ordering;
use std::io::{Read, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::click_sim::{marginal_examination, AttractionModel, ClickModelKind, ClickModelSpec, Session};
use crate::dataset::{Document, Query};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DEFAULT_GAMMA: f64 = 0.8;
pub const DEFAULT_LIST_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdpConfig {
    pub gamma: f64,
    pub k: usize,
}

impl Default for MdpConfig {
    fn default() -> Self {
        MdpConfig {
            gamma: DEFAULT_GAMMA,
            k: DEFAULT_LIST_SIZE,
        }
    }
}

impl MdpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        Ok(())
    }
}

/// Features of the documents placed so far, and the 1-based position to fill.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawState<'a> {
    pub prefix: &'a [Vec<f64>],
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step<'a> {
    pub state: RawState<'a>,
    pub doc_id: u32,
    pub action: &'a [f64],
    pub reward: u8,
}

/// A logged session unrolled top to bottom.
///
/// Stored compactly: step `k`'s prefix is a slice of the action features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub query_id: u32,
    pub doc_ids: Vec<u32>,
    pub features: Vec<Vec<f64>>,
    pub rewards: Vec<u8>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn steps(&self) -> impl Iterator<Item = Step<'_>> + '_ {
        (0..self.len()).map(move |i| Step {
            state: RawState {
                prefix: &self.features[..i],
                position: i + 1,
            },
            doc_id: self.doc_ids[i],
            action: &self.features[i],
            reward: self.rewards[i],
        })
    }

    /// The ranking the episode was built from.
    pub fn ranking(&self) -> &[u32] {
        &self.doc_ids
    }
}

pub fn build_episode(session: &Session, query: &Query) -> Result<Episode> {
    if session.ranking.len() != session.clicks.len() {
        return Err(Error::Domain(format!(
            "session has {} documents but {} clicks",
            session.ranking.len(),
            session.clicks.len()
        )));
    }
    let features = session
        .ranking
        .iter()
        .map(|&doc_id| {
            query
                .doc(doc_id)
                .map(|d| d.features.clone())
                .ok_or(Error::UnknownDocument {
                    query_id: query.query_id,
                    doc_id,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Episode {
        query_id: session.query_id,
        doc_ids: session.ranking.clone(),
        features,
        rewards: session.clicks.clone(),
    })
}

/// `sum_k gamma^(k-1) r_k`.
pub fn episode_return(episode: &Episode, gamma: f64) -> f64 {
    discounted_sum(episode.rewards.iter().map(|&r| f64::from(r)), gamma)
}

pub(crate) fn discounted_sum(values: impl Iterator<Item = f64>, gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for v in values {
        total += discount * v;
        discount *= gamma;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    Greedy,
    Sample,
}

/// Scores each candidate for the next position. Higher is better; in sample
/// mode the scores are treated as logits.
pub trait RankingPolicy {
    fn scores(&self, query: &Query, state: RawState<'_>, candidates: &[&Document]) -> Result<Vec<f64>>;
}

impl<F> RankingPolicy for F
where
    F: Fn(&Query, RawState<'_>, &[&Document]) -> Result<Vec<f64>>,
{
    fn scores(&self, query: &Query, state: RawState<'_>, candidates: &[&Document]) -> Result<Vec<f64>> {
        self(query, state, candidates)
    }
}

/// Index of the best score, ties to the lowest doc_id; NaN never wins.
pub(crate) fn argmax_by_doc(scores: &[f64], candidates: &[&Document]) -> usize {
    let mut best = 0;
    for i in 1..scores.len() {
        let ord = scores[i].partial_cmp(&scores[best]).unwrap_or(if scores[best].is_nan() {
            Ordering::Greater
        } else {
            Ordering::Less
        });
        if ord == Ordering::Greater || (ord == Ordering::Equal && candidates[i].doc_id < candidates[best].doc_id) {
            best = i;
        }
    }
    best
}

pub(crate) fn sample_logits(logits: &[f64], rng: &mut Rng) -> usize {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Builds a length-`k` ranking by repeatedly asking `policy` for the next document.
pub fn induced_ranking<P: RankingPolicy + ?Sized>(
    policy: &P,
    query: &Query,
    k: usize,
    mode: SelectionMode,
    rng: &mut Rng,
) -> Result<Vec<u32>> {
    if k > query.len() {
        return Err(Error::Domain(format!(
            "cannot rank {k} of {} documents",
            query.len()
        )));
    }
    let mut remaining: Vec<&Document> = query.documents.iter().collect();
    let mut prefix: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut ranking = Vec::with_capacity(k);
    for position in 1..=k {
        let state = RawState {
            prefix: &prefix,
            position,
        };
        let scores = policy.scores(query, state, &remaining)?;
        if scores.len() != remaining.len() {
            return Err(Error::shape("policy scores", &[scores.len()], &[remaining.len()]));
        }
        let pick = match mode {
            SelectionMode::Greedy => argmax_by_doc(&scores, &remaining),
            SelectionMode::Sample => sample_logits(&scores, rng),
        };
        let doc = remaining.remove(pick);
        ranking.push(doc.doc_id);
        prefix.push(doc.features.clone());
    }
    Ok(ranking)
}

/// Top `k` doc_ids by descending attraction, ties to ascending doc_id.
pub fn optimal_ranking(attractions: &[(u32, f64)], k: usize) -> Result<Vec<u32>> {
    if k > attractions.len() {
        return Err(Error::Domain(format!(
            "cannot rank {k} of {} documents",
            attractions.len()
        )));
    }
    let mut sorted = attractions.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(sorted.into_iter().take(k).map(|(id, _)| id).collect())
}

/// Exact expected discounted clicks of a ranking under a closed-form click model.
pub fn expected_return(
    spec: &ClickModelSpec,
    relevances: &[u8],
    attraction: &AttractionModel,
    gamma: f64,
) -> Result<f64> {
    let alphas = relevances
        .iter()
        .map(|&r| attraction.prob(r))
        .collect::<Result<Vec<_>>>()?;
    expected_return_from_attractions(spec, &alphas, gamma)
}

fn expected_return_from_attractions(spec: &ClickModelSpec, alphas: &[f64], gamma: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut discount = 1.0;
    for (i, &a) in alphas.iter().enumerate() {
        total += discount * marginal_examination(spec, alphas, i + 1)? * a;
        discount *= gamma;
    }
    Ok(total)
}

/// Limits on brute-force enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DpCap {
    pub max_docs: usize,
    pub max_k: usize,
}

impl Default for DpCap {
    fn default() -> Self {
        DpCap { max_docs: 7, max_k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpResult {
    pub best_value: f64,
    pub best_ranking: Vec<u32>,
}

/// Enumerates every length-`k` ordering and returns the one with the highest
/// exact expected return.
///
/// Rankings whose values agree within 1e-12 are broken by comparing their
/// `(-attraction, doc_id)` sequences, the same order `optimal_ranking` sorts by.
pub fn dp_optimal_value(
    query: &Query,
    spec: &ClickModelSpec,
    attraction: &AttractionModel,
    gamma: f64,
    k: usize,
    cap: DpCap,
) -> Result<DpResult> {
    let n = query.len();
    if n > cap.max_docs || k > cap.max_k {
        return Err(Error::TooLarge(format!(
            "{n} documents with K = {k} exceeds the enumeration cap ({} documents, K = {}); shrink the instance",
            cap.max_docs, cap.max_k
        )));
    }
    if k == 0 || k > n {
        return Err(Error::Domain(format!("cannot rank {k} of {n} documents")));
    }
    if spec.kind == ClickModelKind::Ubm {
        return Err(Error::Unsupported("UBM has no closed-form return".into()));
    }
    let alphas = query
        .documents
        .iter()
        .map(|d| attraction.prob(d.relevance))
        .collect::<Result<Vec<_>>>()?;

    struct Search<'a> {
        spec: &'a ClickModelSpec,
        ids: Vec<u32>,
        alphas: Vec<f64>,
        gamma: f64,
        k: usize,
        used: Vec<bool>,
        current: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
    }

    impl Search<'_> {
        fn key_cmp(&self, a: &[usize], b: &[usize]) -> Ordering {
            for (&i, &j) in a.iter().zip(b) {
                let ord = self.alphas[j]
                    .total_cmp(&self.alphas[i])
                    .then(self.ids[i].cmp(&self.ids[j]));
                if ord != Ordering::Equal {
                    return ord;
                }
            }
            Ordering::Equal
        }

        fn visit(&mut self) -> Result<()> {
            if self.current.len() == self.k {
                let a: Vec<f64> = self.current.iter().map(|&i| self.alphas[i]).collect();
                let value = expected_return_from_attractions(self.spec, &a, self.gamma)?;
                let better = match &self.best {
                    None => true,
                    Some((bv, br)) => {
                        value > bv + 1e-12
                            || ((value - bv).abs() <= 1e-12
                                && self.key_cmp(&self.current, br) == Ordering::Less)
                    }
                };
                if better {
                    self.best = Some((value, self.current.clone()));
                }
                return Ok(());
            }
            for i in 0..self.ids.len() {
                if !self.used[i] {
                    self.used[i] = true;
                    self.current.push(i);
                    self.visit()?;
                    self.current.pop();
                    self.used[i] = false;
                }
            }
            Ok(())
        }
    }

    let mut search = Search {
        spec,
        ids: query.documents.iter().map(|d| d.doc_id).collect(),
        alphas,
        gamma,
        k,
        used: vec![false; n],
        current: Vec::with_capacity(k),
        best: None,
    };
    search.visit()?;
    let (best_value, best) = search.best.expect("at least one ordering");
    Ok(DpResult {
        best_value,
        best_ranking: best.iter().map(|&i| search.ids[i]).collect(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeRow {
    query_id: u32,
    step: usize,
    doc_id: u32,
    reward: u8,
}

/// Writes `query_id,step,doc_id,reward` rows, steps 1-based.
pub fn write_episodes_csv<W: Write>(writer: W, episodes: &[Episode]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for e in episodes {
        for step in e.steps() {
            w.serialize(EpisodeRow {
                query_id: e.query_id,
                step: step.state.position,
                doc_id: step.doc_id,
                reward: step.reward,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads episode rows back into sessions (features are not stored).
pub fn read_episodes_csv<R: Read>(reader: R) -> Result<Vec<Session>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out: Vec<Session> = Vec::new();
    for (i, row) in r.deserialize::<EpisodeRow>().enumerate() {
        let row = row?;
        if row.step == 1 {
            out.push(Session {
                query_id: row.query_id,
                ranking: Vec::new(),
                clicks: Vec::new(),
            });
        }
        match out.last_mut() {
            Some(s) if s.query_id == row.query_id && s.ranking.len() + 1 == row.step => {
                s.ranking.push(row.doc_id);
                s.clicks.push(row.reward);
            }
            _ => {
                return Err(Error::Parse {
                    line: i + 2,
                    message: format!("step {} does not continue an episode", row.step),
                })
            }
        }
    }
    Ok(out)
}
