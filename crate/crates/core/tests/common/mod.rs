#![allow(dead_code)]

pub mod grads;

use cuolr_core::click_sim::{simulate_session, AttractionModel, ClickModelKind, ClickModelSpec, Session};
use cuolr_core::cuolr::{AgentState, EpisodeSet, StateEmbeddingKind, TrainConfig};
use cuolr_core::dataset::{Dataset, Document, Query, SyntheticSpec};
use cuolr_core::mdp_rank::build_episode;
use cuolr_core::rng::{stream, Rng};
use rand::seq::SliceRandom;

pub fn rng(seed: u64) -> Rng {
    stream(seed, 99)
}

pub fn tiny_data(seed: u64) -> Dataset {
    SyntheticSpec {
        train_queries: 6,
        validation_queries: 0,
        test_queries: 3,
        docs_per_query: 5,
        feature_dim: 6,
        r_max: 4,
        seed,
    }
    .generate()
    .unwrap()
}

pub fn pbm(k: usize) -> ClickModelSpec {
    ClickModelSpec::with_rho(ClickModelKind::Pbm, (1..=k).map(|i| 1.0 / i as f64).collect(), 1.0)
}

/// Sessions over shuffled lists so every rank sees clicks.
pub fn shuffled_sessions(queries: &[Query], spec: &ClickModelSpec, per_query: usize, seed: u64) -> Vec<Session> {
    let attraction = AttractionModel::new(0.1, 4).unwrap();
    let mut r = rng(seed);
    let mut out = Vec::new();
    for q in queries {
        for _ in 0..per_query {
            let mut docs: Vec<&Document> = q.documents.iter().collect();
            docs.shuffle(&mut r);
            docs.truncate(spec.list_size());
            out.push(simulate_session(spec, q.query_id, &docs, &attraction, &mut r).unwrap());
        }
    }
    out
}

pub fn episode_set(queries: &[Query], sessions: &[Session]) -> EpisodeSet {
    let episodes: Vec<_> = sessions
        .iter()
        .map(|s| build_episode(s, queries.iter().find(|q| q.query_id == s.query_id).unwrap()).unwrap())
        .collect();
    EpisodeSet::new(queries.to_vec(), &episodes).unwrap()
}

pub fn agent(kind: StateEmbeddingKind, feature_dim: usize, seed: u64) -> (AgentState, TrainConfig) {
    let cfg = TrainConfig {
        embedding: kind,
        hidden: 8,
        heads: 2,
        seed,
        ..TrainConfig::desk()
    };
    (AgentState::new(feature_dim, &cfg).unwrap(), cfg)
}

/// Adds small noise to every parameter so zero-initialised biases do not sit
/// exactly on a ReLU kink, where finite differences see half the slope.
pub fn jitter(store: &mut cuolr_core::diffmath::ParamStore, seed: u64) {
    use rand::Rng as _;
    let mut r = rng(seed);
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.get_mut(id).data_mut() {
            *v += r.random_range(-0.05..0.05);
        }
    }
}
