//! Gradient checks of every training objective, shared by the gradient and
//! acceptance tests.

use super::*;
use cuolr_core::baselines::{
    dla_propensity_loss, dla_ranker_loss, estimate_ipw_propensities, weighted_softmax_loss, ClickLog, DlaModels,
    MlpRanker, RankerConfig,
};
use cuolr_core::click_sim::Session;
use cuolr_core::cuolr::{cql_critic_loss, sac_actor_loss, Batch, EpisodeSet, StateEmbeddingKind};
use cuolr_core::diffmath::{grad_check, GradCheckConfig, GradCheckReport, ParamStore};

pub type Check = (String, GradCheckReport);

fn all_probes() -> GradCheckConfig {
    GradCheckConfig {
        probes: 400,
        ..GradCheckConfig::default()
    }
}

/// Three queries with six shuffled sessions each; rankings repeat, so every
/// batch mixes merged and distinct episodes.
fn episodes() -> EpisodeSet {
    let data = tiny_data(3);
    let sessions = shuffled_sessions(&data.train[..3], &pbm(4), 6, 1);
    episode_set(&data.train[..3], &sessions)
}

pub fn critic_all_embeddings() -> Vec<Check> {
    let set = episodes();
    let batch = Batch::new(&set, &[0, 1, 2], false).unwrap();
    StateEmbeddingKind::ALL
        .into_iter()
        .map(|kind| {
            // With gamma = 0 the bootstrap target no longer moves with psi.
            let (mut a, mut cfg) = agent(kind, 6, 11);
            cfg.gamma = 0.0;
            cfg.cql_alpha = 0.5;
            jitter(&mut a.psi, 1);
            jitter(&mut a.theta, 2);
            let (target, xi) = (a.theta_target.clone(), a.xi.clone());
            let nets = a.nets.clone();
            let report = grad_check(
                &mut [&mut a.psi, &mut a.theta],
                |tape, s| Ok(cql_critic_loss(tape, &nets, s[0], s[1], &target, &xi, &batch, &cfg)?.total),
                all_probes(),
                &mut rng(1),
            )
            .unwrap();
            (format!("critic/{kind}"), report)
        })
        .collect()
}

pub fn critic_bootstrap_full_lse() -> Check {
    let set = episodes();
    let batch = Batch::new(&set, &[0, 2], true).unwrap();
    let (mut a, mut cfg) = agent(StateEmbeddingKind::Attention, 6, 12);
    cfg.full_candidate_lse = true;
    jitter(&mut a.theta, 3);
    let (psi, target, xi) = (a.psi.clone(), a.theta_target.clone(), a.xi.clone());
    let nets = a.nets.clone();
    let report = grad_check(
        &mut [&mut a.theta],
        |tape, s| Ok(cql_critic_loss(tape, &nets, &psi, s[0], &target, &xi, &batch, &cfg)?.total),
        all_probes(),
        &mut rng(2),
    )
    .unwrap();
    ("critic/bootstrap+full-lse".into(), report)
}

pub fn actor() -> Vec<Check> {
    let set = episodes();
    let batch = Batch::new(&set, &[0, 1], false).unwrap();
    [StateEmbeddingKind::Attention, StateEmbeddingKind::PosPlusPredoc]
        .into_iter()
        .map(|kind| {
            let (mut a, mut cfg) = agent(kind, 6, 13);
            cfg.entropy_alpha = 0.3;
            jitter(&mut a.xi, 4);
            let (psi, theta) = (a.psi.clone(), a.theta.clone());
            let nets = a.nets.clone();
            let report = grad_check(
                &mut [&mut a.xi],
                |tape, s| sac_actor_loss(tape, &nets, &psi, &theta, s[0], &batch, &cfg),
                all_probes(),
                &mut rng(3),
            )
            .unwrap();
            (format!("actor/{kind}"), report)
        })
        .collect()
}

/// Critic values are constants on the actor tape; zeroing the critic keeps
/// them fixed while psi moves, so the attention path can be checked exactly.
pub fn actor_embedding_path() -> Check {
    let set = episodes();
    let batch = Batch::new(&set, &[1, 2], false).unwrap();
    let (mut a, mut cfg) = agent(StateEmbeddingKind::Attention, 6, 14);
    cfg.entropy_alpha = 0.3;
    jitter(&mut a.psi, 5);
    jitter(&mut a.xi, 6);
    let mut theta = a.theta.clone();
    for id in theta.ids().collect::<Vec<_>>() {
        theta.get_mut(id).data_mut().fill(0.0);
    }
    let nets = a.nets.clone();
    let report = grad_check(
        &mut [&mut a.psi, &mut a.xi],
        |tape, s| sac_actor_loss(tape, &nets, s[0], &theta, s[1], &batch, &cfg),
        all_probes(),
        &mut rng(4),
    )
    .unwrap();
    ("actor/attention-path".into(), report)
}

fn click_log() -> (ClickLog, Vec<Session>) {
    let data = tiny_data(5);
    let sessions = shuffled_sessions(&data.train, &pbm(5), 20, 2);
    (ClickLog::new(&data.train, &sessions).unwrap(), sessions)
}

fn small_ranker() -> RankerConfig {
    RankerConfig {
        hidden: 6,
        seed: 3,
        ..RankerConfig::default()
    }
}

pub fn ipw_softmax() -> Check {
    let (log, sessions) = click_log();
    let table = estimate_ipw_propensities(&sessions).unwrap();
    let weights = log.inverse_propensity_weights(&table, 0.01);
    let mut ranker = MlpRanker::new(6, &small_ranker(), 1).unwrap();
    jitter(&mut ranker.store, 7);
    let mlp = ranker.mlp.clone();
    let report = grad_check(
        &mut [&mut ranker.store],
        |tape, s| weighted_softmax_loss(tape, &mlp, s[0], &log, &weights),
        all_probes(),
        &mut rng(5),
    )
    .unwrap();
    ("ipw-softmax".into(), report)
}

pub fn dla() -> Vec<Check> {
    let (log, _) = click_log();
    let mut models = DlaModels::new(6, 5, &small_ranker()).unwrap();
    jitter(&mut models.ranker.store, 8);
    let logits = models.logits;
    models.propensity.get_mut(logits).data_mut().copy_from_slice(&[0.4, 0.1, -0.2, -0.3, -0.5]);
    let frozen = models.clone();

    let mut store = models.ranker.store.clone();
    let ranker = grad_check(
        &mut [&mut store],
        |tape, s| dla_ranker_loss(tape, &frozen, s[0], &log),
        all_probes(),
        &mut rng(6),
    )
    .unwrap();
    let mut prop: ParamStore = models.propensity.clone();
    let propensity = grad_check(
        &mut [&mut prop],
        |tape, s| dla_propensity_loss(tape, &frozen, s[0], &log),
        all_probes(),
        &mut rng(7),
    )
    .unwrap();
    vec![("dla/ranker".into(), ranker), ("dla/propensity".into(), propensity)]
}

pub fn every_loss() -> Vec<Check> {
    let mut out = critic_all_embeddings();
    out.push(critic_bootstrap_full_lse());
    out.extend(actor());
    out.push(actor_embedding_path());
    out.push(ipw_softmax());
    out.extend(dla());
    out
}
