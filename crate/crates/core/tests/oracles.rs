//! Monte-Carlo checks against independently derived closed forms.

mod common;

use common::*;
use cuolr_core::baselines::{
    estimate_ipw_propensities, weighted_softmax_loss, ClickLog, MlpRanker, PropensityKind, PropensityTable,
    RandomRanker, RankerConfig, Skyline,
};
use cuolr_core::click_sim::{simulate_session, AttractionModel, ClickModelKind, ClickModelSpec};
use cuolr_core::cuolr::{self, StateEmbeddingKind, TrainConfig};
use cuolr_core::dataset::{Document, Query, SyntheticSpec};
use cuolr_core::diffmath::Tape;
use cuolr_core::evalharness::{evaluate_policy, paired_t_test, Metric};
use cuolr_core::rng::stream;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

fn docs(rels: &[u8]) -> Vec<Document> {
    rels.iter()
        .enumerate()
        .map(|(i, &r)| Document {
            doc_id: i as u32,
            features: vec![f64::from(r), 1.0],
            relevance: r,
        })
        .collect()
}

#[test]
fn ubm_click_rates_match_last_click_recursion() {
    let rels = [4, 0, 2, 1, 3];
    let d = docs(&rels);
    let refs: Vec<&Document> = d.iter().collect();
    let spec = ClickModelSpec::new(ClickModelKind::Ubm, 5);
    let attraction = AttractionModel::new(0.1, 4).unwrap();
    let alpha: Vec<f64> = rels.iter().map(|&r| 0.1 + 0.9 * ((1u32 << r) - 1) as f64 / 15.0).collect();

    // Distribution of the most recent clicked rank (0 = none) before each rank.
    let mut last = vec![0.0; 6];
    last[0] = 1.0;
    let mut exact = Vec::new();
    for k in 1..=5 {
        let rho = 1.0 / k as f64;
        let gamma = |j: usize| if j == 0 { rho } else { (rho / (k - j) as f64).min(1.0) };
        let p: f64 = (0..k).map(|j| last[j] * gamma(j) * alpha[k - 1]).sum();
        for (j, slot) in last.iter_mut().enumerate().take(k) {
            *slot *= 1.0 - gamma(j) * alpha[k - 1];
        }
        last[k] = p;
        exact.push(p);
    }

    let n = 100_000;
    let mut counts = [0usize; 5];
    let mut rng = stream(21, 0);
    for _ in 0..n {
        let s = simulate_session(&spec, 0, &refs, &attraction, &mut rng).unwrap();
        for (c, &x) in counts.iter_mut().zip(&s.clicks) {
            *c += usize::from(x);
        }
    }
    for (k, (&c, &p)) in counts.iter().zip(&exact).enumerate() {
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let got = c as f64 / n as f64;
        assert!((got - p).abs() <= 4.0 * sigma + 1e-12, "rank {}: {got} vs {p}", k + 1);
    }
}

#[test]
fn ipw_with_true_propensities_is_unbiased() {
    let rels = [3, 1, 4, 0];
    let q = Query {
        query_id: 0,
        documents: docs(&rels),
    };
    let rho = [1.0, 0.5, 1.0 / 3.0, 0.25];
    let spec = ClickModelSpec::with_rho(ClickModelKind::Pbm, rho.to_vec(), 1.0);
    let attraction = AttractionModel::new(0.1, 4).unwrap();
    let order = [1usize, 3, 0, 2];
    let refs: Vec<&Document> = order.iter().map(|&i| &q.documents[i]).collect();
    let mut rng = stream(5, 0);
    let sessions: Vec<_> = (0..1_000_000)
        .map(|_| simulate_session(&spec, 0, &refs, &attraction, &mut rng).unwrap())
        .collect();
    let log = ClickLog::new(std::slice::from_ref(&q), &sessions).unwrap();
    let table = PropensityTable {
        kind: PropensityKind::Ipw,
        values: rho.iter().map(|&r| Some(r)).collect(),
    };
    let w = log.inverse_propensity_weights(&table, 0.01);
    let ranker = MlpRanker::new(2, &RankerConfig::default(), 0).unwrap();
    let mut tape = Tape::new();
    let l = weighted_softmax_loss(&mut tape, &ranker.mlp, &ranker.store, &log, &w).unwrap();
    let ipw = tape.value(l).item();

    let scores = ranker.scores(&log.docs).unwrap();
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lz = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    let full: f64 = rels
        .iter()
        .zip(&scores)
        .map(|(&r, s)| attraction.prob(r).unwrap() * (lz - s))
        .sum();
    assert!((ipw - full).abs() / full < 0.01, "ipw {ipw} vs full {full}");
}

#[test]
fn ipw_estimates_follow_eta() {
    let data = SyntheticSpec {
        train_queries: 20,
        validation_queries: 0,
        test_queries: 1,
        docs_per_query: 5,
        feature_dim: 5,
        r_max: 4,
        seed: 2,
    }
    .generate()
    .unwrap();
    let rho: Vec<f64> = (1..=5).map(|k| 1.0 / k as f64).collect();
    let spec = ClickModelSpec::with_rho(ClickModelKind::Pbm, rho.clone(), 2.0);
    let sessions = shuffled_sessions(&data.train, &spec, 5000, 4);
    let t = estimate_ipw_propensities(&sessions).unwrap();
    for k in 1..=5 {
        let want = rho[k - 1].powf(2.0);
        let got = t.theta(k).unwrap();
        assert!((got - want).abs() / want < 0.1, "rank {k}: {got} vs {want}");
    }
}

#[test]
fn random_rankers_never_beat_the_skyline_on_average() {
    let data = tiny_data(8);
    let sky = evaluate_policy(&Skyline, &data.train, &[3, 5], 4).unwrap();
    let mut total = 0.0;
    for seed in 0..100 {
        let r = evaluate_policy(&RandomRanker { seed }, &data.train, &[3, 5], 4).unwrap();
        for m in Metric::ALL {
            for qi in 0..data.train.len() {
                let a = r.per_query_values(m, 5).unwrap()[qi];
                let b = sky.per_query_values(m, 5).unwrap()[qi];
                assert!(a <= b + 1e-12);
            }
        }
        total += r.mean(Metric::Ndcg, 5).unwrap();
    }
    assert!(total / 100.0 < sky.mean(Metric::Ndcg, 5).unwrap());
}

#[test]
fn t_test_calibration() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rng = stream(17, 0);
    let trials = 1000;
    let mut rejected = 0;
    for _ in 0..trials {
        let a: Vec<f64> = (0..30).map(|_| normal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..30).map(|_| normal.sample(&mut rng)).collect();
        if paired_t_test(&a, &b).unwrap() < 0.05 {
            rejected += 1;
        }
    }
    // Binomial(1000, 0.05) has sd ~6.9.
    assert!((25..=75).contains(&rejected), "{rejected} rejections");

    let a: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
    let b: Vec<f64> = a.iter().map(|v| v + 0.1 + 1e-3 * rng.random::<f64>()).collect();
    assert!(paired_t_test(&a, &b).unwrap() < 0.01);
}

#[test]
fn cuolr_beats_logging_on_a_tiny_task() {
    let data = SyntheticSpec {
        train_queries: 5,
        validation_queries: 0,
        test_queries: 5,
        docs_per_query: 5,
        feature_dim: 5,
        r_max: 4,
        seed: 9,
    }
    .generate()
    .unwrap();
    let spec = pbm(5);
    let attraction = AttractionModel::new(0.1, 4).unwrap();
    // A deliberately poor logging ranker: reverse of the ideal order.
    let mut sessions = Vec::new();
    for q in &data.train {
        let mut order: Vec<&Document> = q.documents.iter().collect();
        order.sort_by_key(|d| d.relevance);
        let mut rng = stream(1, u64::from(q.query_id));
        for _ in 0..200 {
            sessions.push(simulate_session(&spec, q.query_id, &order, &attraction, &mut rng).unwrap());
        }
    }
    let set = episode_set(&data.train, &sessions);
    let cfg = TrainConfig {
        iterations: 2000,
        embedding: StateEmbeddingKind::Pos,
        ..TrainConfig::desk()
    };
    let agent = cuolr::train(&set, &cfg).unwrap().agent;
    let ranker = |q: &Query, k: usize| cuolr::rank(&agent, q, k);
    let learned = evaluate_policy(&ranker, &data.test, &[5], 4).unwrap();
    let worst = |q: &Query, k: usize| -> cuolr_core::Result<Vec<u32>> {
        let mut d: Vec<&Document> = q.documents.iter().collect();
        d.sort_by_key(|d| d.relevance);
        Ok(d.iter().take(k).map(|d| d.doc_id).collect())
    };
    let logging = evaluate_policy(&worst, &data.test, &[5], 4).unwrap();
    let (l, g) = (learned.mean(Metric::Ndcg, 5).unwrap(), logging.mean(Metric::Ndcg, 5).unwrap());
    assert!(l >= g, "learned {l} < logging {g}");
}
