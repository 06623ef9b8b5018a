//! Conservative actor-critic ranking from logged episodes.
//!
//! Each iteration samples queries, rebuilds their state embeddings, takes a
//! critic step on the conservative Bellman loss, an actor step on the
//! entropy-regularized policy objective, then moves the target critic.

mod embedding;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

pub use embedding::{StateEmbedder, StateEmbeddingKind, DEFAULT_HEADS};

use crate::dataset::Query;
use crate::diffmath::{Activation, Adam, Mlp, ParamStore, Readout, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::mdp_rank::{argmax_by_doc, Episode};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub embed_lr: f64,
    pub cql_alpha: f64,
    pub entropy_alpha: f64,
    pub tau: f64,
    pub gamma: f64,
    pub batch_queries: usize,
    pub iterations: usize,
    pub seed: u64,
    pub embedding: StateEmbeddingKind,
    pub hidden: usize,
    pub heads: usize,
    pub readout: Readout,
    /// Log-sum-exp over every document of the query instead of the ones
    /// not yet placed.
    pub full_candidate_lse: bool,
}

impl TrainConfig {
    /// Settings from the original large-scale setup.
    pub fn full_scale() -> Self {
        TrainConfig {
            critic_lr: 1e-4,
            actor_lr: 1e-4,
            embed_lr: 1e-6,
            cql_alpha: 0.1,
            entropy_alpha: 1e-10,
            tau: 5e-3,
            gamma: 0.8,
            batch_queries: 256,
            iterations: 10_000,
            seed: 0,
            embedding: StateEmbeddingKind::Attention,
            hidden: 256,
            heads: DEFAULT_HEADS,
            readout: Readout::Last,
            full_candidate_lse: false,
        }
    }

    /// Smaller networks and batches with faster rates, for a single core.
    pub fn desk() -> Self {
        TrainConfig {
            critic_lr: 1e-3,
            actor_lr: 1e-3,
            embed_lr: 1e-4,
            tau: 0.01,
            batch_queries: 8,
            iterations: 5000,
            hidden: 32,
            ..TrainConfig::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("critic_lr", self.critic_lr),
            ("actor_lr", self.actor_lr),
            ("embed_lr", self.embed_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau = {} outside (0, 1]", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma = {} outside [0, 1]", self.gamma)));
        }
        if !(self.cql_alpha >= 0.0) || !(self.entropy_alpha >= 0.0) {
            return Err(Error::Config("cql_alpha and entropy_alpha must be >= 0".into()));
        }
        if self.batch_queries == 0 || self.hidden == 0 {
            return Err(Error::Config("batch_queries and hidden must be positive".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

/// Network layouts; the weights live in the stores of [`AgentState`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentNets {
    pub embedder: StateEmbedder,
    pub critic: Mlp,
    pub actor: Mlp,
}

/// `psi` embeds states, `theta` is the critic, `theta_target` its slow copy,
/// and `xi` the actor.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub nets: AgentNets,
    pub psi: ParamStore,
    pub theta: ParamStore,
    pub theta_target: ParamStore,
    pub xi: ParamStore,
    pub config: TrainConfig,
}

impl AgentState {
    pub fn new(feature_dim: usize, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(config.seed, tag::INIT);
        let mut psi = ParamStore::new();
        let embedder = StateEmbedder::new(config.embedding, feature_dim, config.heads, config.readout, &mut psi, &mut rng)?;
        let width = embedder.state_dim() + feature_dim;
        let sizes = [width, config.hidden, config.hidden, 1];
        let mut theta = ParamStore::new();
        let critic = Mlp::new(&mut theta, "critic", &sizes, Activation::Relu, &mut rng)?;
        let mut xi = ParamStore::new();
        let actor = Mlp::new(&mut xi, "actor", &sizes, Activation::Relu, &mut rng)?;
        let theta_target = theta.clone();
        Ok(AgentState {
            nets: AgentNets { embedder, critic, actor },
            psi,
            theta,
            theta_target,
            xi,
            config: config.clone(),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.nets.embedder.feature_dim
    }

    /// Writes `<prefix>.agent.json` plus one checkpoint per parameter store.
    pub fn save(&self, prefix: &Path) -> Result<()> {
        let meta = AgentMeta {
            nets: self.nets.clone(),
            config: self.config.clone(),
        };
        std::fs::write(suffixed(prefix, ".agent.json"), serde_json::to_string_pretty(&meta)?)?;
        self.psi.save(&suffixed(prefix, ".psi"))?;
        self.theta.save(&suffixed(prefix, ".theta"))?;
        self.theta_target.save(&suffixed(prefix, ".theta_target"))?;
        self.xi.save(&suffixed(prefix, ".xi"))?;
        Ok(())
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let meta: AgentMeta = serde_json::from_str(&std::fs::read_to_string(suffixed(prefix, ".agent.json"))?)?;
        Ok(AgentState {
            nets: meta.nets,
            psi: ParamStore::load(&suffixed(prefix, ".psi"))?,
            theta: ParamStore::load(&suffixed(prefix, ".theta"))?,
            theta_target: ParamStore::load(&suffixed(prefix, ".theta_target"))?,
            xi: ParamStore::load(&suffixed(prefix, ".xi"))?,
            config: meta.config,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct AgentMeta {
    nets: AgentNets,
    config: TrainConfig,
}

fn suffixed(prefix: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

/// Sessions of one query that showed the same ranking, merged.
///
/// Per-step reward mean and variance keep the squared Bellman error of the
/// group equal to the sum over its sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeGroup {
    /// Positions of the ranked documents within the query's document list.
    pub ranking: Vec<usize>,
    pub mean_reward: Vec<f64>,
    pub reward_var: Vec<f64>,
    pub count: usize,
}

/// Logged episodes keyed by query.
#[derive(Debug, Clone)]
pub struct EpisodeSet {
    pub queries: Vec<Query>,
    pub groups: Vec<Vec<EpisodeGroup>>,
}

impl EpisodeSet {
    pub fn new(queries: Vec<Query>, episodes: &[Episode]) -> Result<Self> {
        let index: BTreeMap<u32, usize> = queries.iter().enumerate().map(|(i, q)| (q.query_id, i)).collect();
        let mut acc: Vec<BTreeMap<Vec<usize>, (usize, Vec<f64>, Vec<f64>)>> = vec![BTreeMap::new(); queries.len()];
        let mut order: Vec<Vec<Vec<usize>>> = vec![Vec::new(); queries.len()];
        for e in episodes {
            let &qi = index.get(&e.query_id).ok_or_else(|| Error::UnknownDocument {
                query_id: e.query_id,
                doc_id: e.doc_ids.first().copied().unwrap_or(0),
            })?;
            let q = &queries[qi];
            let ranking = e
                .doc_ids
                .iter()
                .map(|&d| {
                    q.position_of(d).ok_or(Error::UnknownDocument {
                        query_id: q.query_id,
                        doc_id: d,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let entry = acc[qi].entry(ranking.clone()).or_insert_with(|| {
                order[qi].push(ranking.clone());
                (0, vec![0.0; e.len()], vec![0.0; e.len()])
            });
            entry.0 += 1;
            for (i, &r) in e.rewards.iter().enumerate() {
                let r = f64::from(r);
                entry.1[i] += r;
                entry.2[i] += r * r;
            }
        }
        let groups = acc
            .into_iter()
            .zip(order)
            .map(|(mut m, order)| {
                order
                    .into_iter()
                    .map(|ranking| {
                        let (n, sum, sq) = m.remove(&ranking).expect("recorded ranking");
                        let nf = n as f64;
                        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
                        let var = sq.iter().zip(&mean).map(|(q, m)| (q / nf - m * m).max(0.0)).collect();
                        EpisodeGroup {
                            ranking,
                            mean_reward: mean,
                            reward_var: var,
                            count: n,
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(EpisodeSet { queries, groups })
    }

    pub fn session_count(&self) -> usize {
        self.groups.iter().flatten().map(|g| g.count).sum()
    }

    fn active_queries(&self) -> Vec<usize> {
        (0..self.queries.len()).filter(|&i| !self.groups[i].is_empty()).collect()
    }
}

/// Constant structure of one training batch.
///
/// States are the positions of each group's list; every state owns a block of
/// candidate rows (documents still unplaced there).
#[derive(Debug, Clone)]
pub struct Batch {
    lists: Vec<Vec<Vec<f64>>>,
    cand_state: Rc<[usize]>,
    cand_offsets: Rc<[usize]>,
    cand_docs: Tensor,
    /// Row of the logged action in the candidate rows, per state.
    logged: Rc<[usize]>,
    next_state: Vec<Option<usize>>,
    reward: Vec<f64>,
    reward_var: Vec<f64>,
    weight: Vec<f64>,
    full: Option<(Rc<[usize]>, Rc<[usize]>, Tensor, Rc<[usize]>)>,
}

impl Batch {
    pub fn new(set: &EpisodeSet, queries: &[usize], full_candidate_lse: bool) -> Result<Self> {
        let mut b = Batch {
            lists: Vec::new(),
            cand_state: Rc::from(Vec::new()),
            cand_offsets: Rc::from(Vec::new()),
            cand_docs: Tensor::zeros(0, 0),
            logged: Rc::from(Vec::new()),
            next_state: Vec::new(),
            reward: Vec::new(),
            reward_var: Vec::new(),
            weight: Vec::new(),
            full: None,
        };
        let mut cand_state = Vec::new();
        let mut offsets = vec![0];
        let mut docs: Vec<&[f64]> = Vec::new();
        let mut logged = Vec::new();
        let mut full_state = Vec::new();
        let mut full_offsets = vec![0];
        let mut full_docs: Vec<&[f64]> = Vec::new();
        let mut full_logged = Vec::new();
        let mut counts = Vec::new();
        for &qi in queries {
            let q = &set.queries[qi];
            for g in &set.groups[qi] {
                b.lists.push(g.ranking.iter().map(|&p| q.documents[p].features.clone()).collect());
                let mut placed = vec![false; q.len()];
                let n = g.ranking.len();
                for (k, &action) in g.ranking.iter().enumerate() {
                    let s = b.reward.len();
                    for (p, d) in q.documents.iter().enumerate() {
                        if !placed[p] {
                            if p == action {
                                logged.push(docs.len());
                            }
                            cand_state.push(s);
                            docs.push(&d.features);
                        }
                        if full_candidate_lse {
                            if p == action {
                                full_logged.push(full_docs.len());
                            }
                            full_state.push(s);
                            full_docs.push(&d.features);
                        }
                    }
                    placed[action] = true;
                    offsets.push(docs.len());
                    full_offsets.push(full_docs.len());
                    b.next_state.push((k + 1 < n).then_some(s + 1));
                    b.reward.push(g.mean_reward[k]);
                    b.reward_var.push(g.reward_var[k]);
                    counts.push(g.count as f64);
                }
            }
        }
        if b.reward.is_empty() {
            return Err(Error::Degenerate("batch has no logged steps".into()));
        }
        let total: f64 = counts.iter().sum();
        b.weight = counts.iter().map(|c| c / total).collect();
        let dim = docs.first().map_or(0, |d| d.len());
        b.cand_docs = Tensor::from_rows(&docs, dim)?;
        b.cand_state = Rc::from(cand_state);
        b.cand_offsets = Rc::from(offsets);
        b.logged = Rc::from(logged);
        if full_candidate_lse {
            b.full = Some((
                Rc::from(full_state),
                Rc::from(full_offsets),
                Tensor::from_rows(&full_docs, dim)?,
                Rc::from(full_logged),
            ));
        }
        Ok(b)
    }

    pub fn state_count(&self) -> usize {
        self.reward.len()
    }
}

fn state_rows(tape: &mut Tape, nets: &AgentNets, psi: &ParamStore, batch: &Batch) -> Result<Var> {
    let lists: Vec<Vec<&[f64]>> = batch.lists.iter().map(|l| l.iter().map(Vec::as_slice).collect()).collect();
    nets.embedder.embed_lists(tape, psi, &lists)
}

/// Network output for every candidate row: `net(concat(state, doc))`.
fn score_rows(
    tape: &mut Tape,
    net: &Mlp,
    store: &ParamStore,
    states: Var,
    cand_state: &Rc<[usize]>,
    docs: &Tensor,
) -> Result<Var> {
    let s = tape.select_rows(states, cand_state.clone())?;
    let d = tape.constant(docs.clone());
    let x = tape.concat(&[s, d], 1)?;
    net.forward(tape, store, x)
}

fn weighted_sum(tape: &mut Tape, x: Var, weights: &[f64]) -> Result<Var> {
    let w = tape.constant(Tensor::column(weights.to_vec()));
    let wx = tape.mul(x, w)?;
    Ok(tape.sum(wx))
}

/// `sum_a pi(a|s) * (q(s, a) - entropy_alpha * log pi(a|s))` per state.
fn soft_value(tape: &mut Tape, log_pi: Var, q: Var, offsets: &Rc<[usize]>, entropy_alpha: f64) -> Result<Var> {
    let pi = tape.exp(log_pi);
    let ent = tape.scale(log_pi, entropy_alpha);
    let adv = tape.sub(q, ent)?;
    let inner = tape.mul(pi, adv)?;
    tape.segment_sum(inner, offsets.clone())
}

#[derive(Debug, Clone, Copy)]
pub struct CriticLoss {
    pub total: Var,
    pub conservative: f64,
    pub bellman: f64,
}

/// Conservative critic objective on `batch`.
///
/// The bootstrap target uses the target critic and the actor's exact
/// expectation over next-state candidates and is a constant on the tape.
#[allow(clippy::too_many_arguments)]
pub fn cql_critic_loss(
    tape: &mut Tape,
    nets: &AgentNets,
    psi: &ParamStore,
    theta: &ParamStore,
    theta_target: &ParamStore,
    xi: &ParamStore,
    batch: &Batch,
    config: &TrainConfig,
) -> Result<CriticLoss> {
    let states = state_rows(tape, nets, psi, batch)?;
    let q = score_rows(tape, &nets.critic, theta, states, &batch.cand_state, &batch.cand_docs)?;

    let frozen = tape.detach(states);
    let q_next = score_rows(tape, &nets.critic, theta_target, frozen, &batch.cand_state, &batch.cand_docs)?;
    let logits = score_rows(tape, &nets.actor, xi, frozen, &batch.cand_state, &batch.cand_docs)?;
    let log_pi = tape.segment_log_softmax(logits, batch.cand_offsets.clone())?;
    let v = soft_value(tape, log_pi, q_next, &batch.cand_offsets, config.entropy_alpha)?;
    let v = tape.value(v).data().to_vec();
    let target: Vec<f64> = (0..batch.state_count())
        .map(|s| batch.reward[s] + batch.next_state[s].map_or(0.0, |n| config.gamma * v[n]))
        .collect();

    let q_logged = tape.select_rows(q, batch.logged.clone())?;
    let lse = match &batch.full {
        None => tape.segment_logsumexp(q, batch.cand_offsets.clone())?,
        Some((state, offsets, docs, _)) => {
            let q_full = score_rows(tape, &nets.critic, theta, states, state, docs)?;
            tape.segment_logsumexp(q_full, offsets.clone())?
        }
    };
    let gap = tape.sub(lse, q_logged)?;
    let conservative = weighted_sum(tape, gap, &batch.weight)?;

    let y = tape.constant(Tensor::column(target));
    let err = tape.sub(q_logged, y)?;
    let sq = tape.mul(err, err)?;
    let sq = weighted_sum(tape, sq, &batch.weight)?;
    let noise: f64 = batch.reward_var.iter().zip(&batch.weight).map(|(v, w)| v * w).sum();
    let bellman = tape.scale(sq, 0.5);
    let bellman = tape.add_scalar(bellman, 0.5 * noise);

    let scaled = tape.scale(conservative, config.cql_alpha);
    let total = tape.add(scaled, bellman)?;
    Ok(CriticLoss {
        total,
        conservative: tape.value(conservative).item(),
        bellman: tape.value(bellman).item(),
    })
}

/// Entropy-regularized policy objective; critic values enter as constants.
pub fn sac_actor_loss(
    tape: &mut Tape,
    nets: &AgentNets,
    psi: &ParamStore,
    theta: &ParamStore,
    xi: &ParamStore,
    batch: &Batch,
    config: &TrainConfig,
) -> Result<Var> {
    let states = state_rows(tape, nets, psi, batch)?;
    let frozen = tape.detach(states);
    let q = score_rows(tape, &nets.critic, theta, frozen, &batch.cand_state, &batch.cand_docs)?;
    let q = tape.detach(q);
    let logits = score_rows(tape, &nets.actor, xi, states, &batch.cand_state, &batch.cand_docs)?;
    let log_pi = tape.segment_log_softmax(logits, batch.cand_offsets.clone())?;
    let v = soft_value(tape, log_pi, q, &batch.cand_offsets, config.entropy_alpha)?;
    let total = weighted_sum(tape, v, &batch.weight)?;
    Ok(tape.scale(total, -1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub conservative_term: f64,
}

pub fn write_trace_csv<W: Write>(writer: W, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub agent: AgentState,
    pub trace: Vec<TraceRow>,
}

/// Optimizers for one agent.
pub struct Trainer {
    pub agent: AgentState,
    critic_opt: Adam,
    actor_opt: Adam,
    embed_opt: Adam,
}

impl Trainer {
    pub fn new(agent: AgentState) -> Self {
        let c = &agent.config;
        Trainer {
            critic_opt: Adam::new(c.critic_lr),
            actor_opt: Adam::new(c.actor_lr),
            embed_opt: Adam::new(c.embed_lr),
            agent,
        }
    }

    /// Critic step, actor step, target update.
    pub fn step(&mut self, batch: &Batch, iteration: usize) -> Result<TraceRow> {
        let a = &mut self.agent;
        let cfg = a.config.clone();

        let mut tape = Tape::new();
        let critic = cql_critic_loss(&mut tape, &a.nets, &a.psi, &a.theta, &a.theta_target, &a.xi, batch, &cfg)?;
        let critic_value = tape.value(critic.total).item();
        if !critic_value.is_finite() {
            return Err(Error::NonFinite(format!("critic loss at iteration {iteration}")));
        }
        let grads = tape.backward(critic.total)?;
        a.theta.accumulate(&tape, &grads);
        a.psi.accumulate(&tape, &grads);
        self.critic_opt.step(&mut a.theta)?;
        if !a.psi.is_empty() {
            self.embed_opt.step(&mut a.psi)?;
        }

        let mut tape = Tape::new();
        let actor = sac_actor_loss(&mut tape, &a.nets, &a.psi, &a.theta, &a.xi, batch, &cfg)?;
        let actor_value = tape.value(actor).item();
        if !actor_value.is_finite() {
            return Err(Error::NonFinite(format!("actor loss at iteration {iteration}")));
        }
        let grads = tape.backward(actor)?;
        a.xi.accumulate(&tape, &grads);
        a.psi.accumulate(&tape, &grads);
        self.actor_opt.step(&mut a.xi)?;
        if !a.psi.is_empty() {
            self.embed_opt.step(&mut a.psi)?;
        }

        a.theta_target.soft_update_from(&a.theta, cfg.tau)?;
        Ok(TraceRow {
            iteration,
            critic_loss: critic_value,
            actor_loss: actor_value,
            conservative_term: critic.conservative,
        })
    }
}

/// Runs `config.iterations` iterations on batches of `config.batch_queries`
/// queries drawn without replacement.
pub fn train(set: &EpisodeSet, config: &TrainConfig) -> Result<TrainOutput> {
    let active = set.active_queries();
    if active.is_empty() {
        return Err(Error::Degenerate("no logged episodes to train on".into()));
    }
    let feature_dim = set.queries[active[0]].documents[0].features.len();
    let mut trainer = Trainer::new(AgentState::new(feature_dim, config)?);
    let mut rng = rng::stream(config.seed, tag::TRAIN);
    let b = config.batch_queries.min(active.len());
    let mut trace = Vec::with_capacity(config.iterations);
    let whole = (b == active.len()).then(|| Batch::new(set, &active, config.full_candidate_lse)).transpose()?;
    for t in 0..config.iterations {
        let row = match &whole {
            Some(batch) => trainer.step(batch, t + 1)?,
            None => {
                let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, active.len(), b)
                    .into_iter()
                    .map(|i| active[i])
                    .collect();
                picked.sort_unstable();
                let batch = Batch::new(set, &picked, config.full_candidate_lse)?;
                trainer.step(&batch, t + 1)?
            }
        };
        trace.push(row);
    }
    Ok(TrainOutput {
        agent: trainer.agent,
        trace,
    })
}

/// Actor scores for every candidate at the state `prefix`.
pub fn actor_scores(agent: &AgentState, prefix: &[&[f64]], candidates: &[&[f64]]) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::Degenerate("empty candidate set".into()));
    }
    let mut tape = Tape::new();
    let state = agent.nets.embedder.embed(&mut tape, &agent.psi, prefix, prefix.len() + 1)?;
    let cand = Tensor::from_rows(candidates, agent.feature_dim())?;
    let rows: Rc<[usize]> = vec![0; candidates.len()].into();
    let s = score_rows(&mut tape, &agent.nets.actor, &agent.xi, state, &rows, &cand)?;
    Ok(tape.value(s).data().to_vec())
}

/// `pi(. | prefix)` over the candidates.
pub fn policy_distribution(agent: &AgentState, prefix: &[&[f64]], candidates: &[&[f64]]) -> Result<Vec<f64>> {
    let scores = actor_scores(agent, prefix, candidates)?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / z).collect())
}

/// `Q_theta(s, a)` for one state and action.
pub fn q_value(agent: &AgentState, prefix: &[&[f64]], action: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let state = agent.nets.embedder.embed(&mut tape, &agent.psi, prefix, prefix.len() + 1)?;
    let cand = Tensor::from_rows(&[action], agent.feature_dim())?;
    let s = score_rows(&mut tape, &agent.nets.critic, &agent.theta, state, &Rc::from(vec![0]), &cand)?;
    Ok(tape.value(s).item())
}

/// Greedy ranking by actor score, re-embedding after each pick.
pub fn rank(agent: &AgentState, query: &Query, k: usize) -> Result<Vec<u32>> {
    if k > query.len() {
        return Err(Error::Domain(format!("cannot rank {k} of {} documents", query.len())));
    }
    let mut remaining: Vec<&crate::dataset::Document> = query.documents.iter().collect();
    let mut prefix: Vec<&[f64]> = Vec::with_capacity(k);
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let cands: Vec<&[f64]> = remaining.iter().map(|d| d.features.as_slice()).collect();
        let scores = actor_scores(agent, &prefix, &cands)?;
        let pick = argmax_by_doc(&scores, &remaining);
        let d = remaining.remove(pick);
        out.push(d.doc_id);
        prefix.push(&d.features);
    }
    Ok(out)
}
