//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Criteria 1-5 and 9 are exact or statistical correctness checks and fail the
//! run. Criteria 6-8 compare trained rankers; their misses are reported but
//! only fail the run when `ACCEPTANCE_STRICT` is set. `ACCEPTANCE_ONLY=1,4`
//! restricts the run to the listed criteria.

mod common;

use std::collections::HashMap;
use std::time::{Duration, Instant};

use common::*;
use cuolr_core::baselines::{estimate_cm_lambdas, estimate_ipw_propensities, result_randomization};
use cuolr_core::click_sim::{simulate_session, AttractionModel, ClickModelKind, ClickModelSpec};
use cuolr_core::cuolr::StateEmbeddingKind;
use cuolr_core::dataset::{Dataset, Document, SyntheticSpec};
use cuolr_core::evalharness::{
    err_at_k, ndcg_at_k, persist, run_experiment, sweep_alpha, ExperimentConfig, Method, Metric, RunRecord,
};
use cuolr_core::mdp_rank::{dp_optimal_value, optimal_ranking, DpCap};
use cuolr_core::rng::stream;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed.as_secs_f64() < limit_secs as f64
}

// 1. Per-rank CTR of simulated sessions against examination x attraction.
fn click_fidelity() -> Outcome {
    let start = Instant::now();
    let rels = [3u8, 0, 4, 1, 2];
    let docs: Vec<Document> = rels
        .iter()
        .enumerate()
        .map(|(i, &r)| Document {
            doc_id: i as u32,
            features: vec![0.0],
            relevance: r,
        })
        .collect();
    let refs: Vec<&Document> = docs.iter().collect();
    let attraction = AttractionModel::new(0.1, 4).unwrap();
    let a: Vec<f64> = rels.iter().map(|&r| 0.1 + 0.9 * ((1u32 << r) - 1) as f64 / 15.0).collect();
    let rho: Vec<f64> = (1..=5).map(|k| 1.0 / k as f64).collect();
    let n = 100_000;
    let mut worst = 0.0f64;
    for kind in [ClickModelKind::Pbm, ClickModelKind::Cascade, ClickModelKind::Dcm, ClickModelKind::Ccm] {
        let spec = ClickModelSpec::with_rho(kind, rho.clone(), 1.0);
        let (a1, a2, a3) = (spec.alpha1, spec.alpha2, spec.alpha3);
        let mut chi = 1.0;
        let mut expected = Vec::new();
        for k in 0..5 {
            let exam = if kind == ClickModelKind::Pbm { rho[k] } else { chi };
            expected.push(exam * a[k]);
            chi *= match kind {
                ClickModelKind::Cascade => 1.0 - a[k],
                ClickModelKind::Dcm => 1.0 - a[k] * (1.0 - rho[k]),
                ClickModelKind::Ccm => (1.0 - a[k]) * a1 + a[k] * (a2 * (1.0 - a[k]) + a3 * a[k]),
                _ => 1.0,
            };
        }
        let mut counts = [0usize; 5];
        let mut r = stream(1, kind as u64);
        for _ in 0..n {
            let s = simulate_session(&spec, 0, &refs, &attraction, &mut r).unwrap();
            for (c, &x) in counts.iter_mut().zip(&s.clicks) {
                *c += usize::from(x);
            }
        }
        for (c, p) in counts.iter().zip(&expected) {
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            worst = worst.max((*c as f64 / n as f64 - p).abs() / sigma);
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 3.0 && within(t, 30),
        format!("max deviation {worst:.2} sigma over 4 models x 5 ranks, {:.1}s", t.as_secs_f64()),
    )
}

// 2. Every loss against central differences.
fn gradients() -> Outcome {
    let start = Instant::now();
    let checks = grads::every_loss();
    let (name, worst) = checks
        .iter()
        .map(|(n, r)| (n.clone(), r.max_rel_error))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let t = start.elapsed();
    outcome(
        worst < 1e-3 && within(t, 60),
        format!("{} checks, worst {name} at {worst:.2e}, {:.1}s", checks.len(), t.as_secs_f64()),
    )
}

// 3. Exhaustive search agrees with sorting by attraction.
fn dp_oracle() -> Outcome {
    let start = Instant::now();
    let attraction = AttractionModel::new(0.1, 4).unwrap();
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for n in 1..=6 {
        let data = SyntheticSpec {
            train_queries: 8,
            validation_queries: 0,
            test_queries: 0,
            docs_per_query: n,
            feature_dim: 5,
            r_max: 4,
            seed: 40 + n as u64,
        }
        .generate()
        .unwrap();
        for q in &data.train {
            let att: Vec<(u32, f64)> = q
                .documents
                .iter()
                .map(|d| (d.doc_id, attraction.prob(d.relevance).unwrap()))
                .collect();
            for k in 1..=n.min(4) {
                for kind in [ClickModelKind::Pbm, ClickModelKind::Cascade] {
                    let spec = ClickModelSpec::new(kind, k);
                    let dp = dp_optimal_value(q, &spec, &attraction, 1.0, k, DpCap::default()).unwrap();
                    compared += 1;
                    if dp.best_ranking != optimal_ranking(&att, k).unwrap() {
                        mismatches.push(format!("{kind} q{} K={k}", q.query_id));
                    }
                }
            }
        }
    }
    let t = start.elapsed();
    outcome(
        mismatches.is_empty() && within(t, 60),
        format!("{compared} (query, K, model) cases, {} mismatches {:?}, {:.1}s", mismatches.len(), mismatches, t.as_secs_f64()),
    )
}

/// `P(click below rank 1 | click at rank 1)` under DCM, by enumerating every
/// examination and click outcome.
fn dcm_continuation_truth(a: &[f64], lambda: &[f64]) -> f64 {
    // (probability, clicked at 1, clicked later)
    let mut paths = vec![(1.0, false, false, true)];
    for k in 0..a.len() {
        let mut next = Vec::new();
        for (p, c1, later, examining) in paths {
            if !examining {
                next.push((p, c1, later, false));
                continue;
            }
            let first = k == 0;
            // Click, then continue with lambda_k or stop.
            let pc = p * a[k];
            next.push((pc * lambda[k], c1 || first, later || !first, true));
            next.push((pc * (1.0 - lambda[k]), c1 || first, later || !first, false));
            next.push((p * (1.0 - a[k]), c1, later, true));
        }
        paths = next;
    }
    let click1: f64 = paths.iter().filter(|x| x.1).map(|x| x.0).sum();
    let both: f64 = paths.iter().filter(|x| x.1 && x.2).map(|x| x.0).sum();
    both / click1
}

// 4. Randomized PBM logs recover rho; DCM logs recover lambda_1.
fn propensity_recovery() -> Outcome {
    let start = Instant::now();
    let rho = vec![1.0, 0.5, 0.333, 0.25, 0.2];
    let data = SyntheticSpec {
        train_queries: 50,
        validation_queries: 0,
        test_queries: 0,
        docs_per_query: 5,
        feature_dim: 5,
        r_max: 4,
        seed: 3,
    }
    .generate()
    .unwrap();
    let spec = ClickModelSpec::with_rho(ClickModelKind::Pbm, rho.clone(), 1.0);
    let attraction = AttractionModel::new(0.1, 4).unwrap();
    let sessions = result_randomization(&data.train, &spec, &attraction, 100_000, 5, &mut stream(4, 0)).unwrap();
    let table = estimate_ipw_propensities(&sessions).unwrap();
    let theta_err = (1..=5)
        .map(|k| (table.theta(k).unwrap() / table.theta(1).unwrap() - rho[k - 1]).abs() / rho[k - 1])
        .fold(0.0, f64::max);

    let rels = [3u8, 2, 4];
    let docs: Vec<Document> = rels
        .iter()
        .enumerate()
        .map(|(i, &r)| Document {
            doc_id: i as u32,
            features: vec![0.0],
            relevance: r,
        })
        .collect();
    let refs: Vec<&Document> = docs.iter().collect();
    let mut dcm = ClickModelSpec::new(ClickModelKind::Dcm, 3);
    dcm.lambda = vec![0.5, 0.5, 0.5];
    let mut r = stream(5, 0);
    let logs: Vec<_> = (0..100_000)
        .map(|_| simulate_session(&dcm, 0, &refs, &attraction, &mut r).unwrap())
        .collect();
    let lambda1 = estimate_cm_lambdas(&logs).unwrap().lambda(1).unwrap();
    let a: Vec<f64> = rels.iter().map(|&r| attraction.prob(r).unwrap()).collect();
    let truth = dcm_continuation_truth(&a, &dcm.lambda);
    let lambda_err = (lambda1 - truth).abs() / truth;
    let t = start.elapsed();
    outcome(
        theta_err < 0.05 && lambda_err < 0.10 && within(t, 120),
        format!(
            "theta max rel err {theta_err:.4}; lambda_1 {lambda1:.4} vs {truth:.4} (rel {lambda_err:.4}), {:.1}s",
            t.as_secs_f64()
        ),
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

// 5. Metric fixtures and brute-force maximality.
fn metric_fixtures() -> Outcome {
    let fixtures = [
        ndcg_at_k(&[4, 2, 0], &[4, 2, 0], 3) - 1.0,
        ndcg_at_k(&[0, 0, 0], &[0, 0, 0], 3),
        ndcg_at_k(&[0, 4], &[4, 0], 2) - 1.0 / 3f64.log2(),
        err_at_k(&[4], 1, 4) - 0.9375,
        err_at_k(&[0, 0, 0], 3, 4),
        err_at_k(&[4, 4], 2, 4) - (15.0 / 16.0 + 0.5 * (1.0 / 16.0) * (15.0 / 16.0)),
    ];
    let fixture_err = fixtures.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut queries = 0;
    let mut violations = 0;
    for n in 1..=5 {
        let data = SyntheticSpec {
            train_queries: 10,
            validation_queries: 0,
            test_queries: 0,
            docs_per_query: n,
            feature_dim: 5,
            r_max: 4,
            seed: 70 + n as u64,
        }
        .generate()
        .unwrap();
        for q in &data.train {
            queries += 1;
            let rels: Vec<u8> = q.documents.iter().map(|d| d.relevance).collect();
            let ideal = q.ideal_relevances();
            for k in 1..=n {
                let (bn, be) = (ndcg_at_k(&ideal, &ideal, k), err_at_k(&ideal, k, 4));
                for p in permutations(n) {
                    let order: Vec<u8> = p.iter().map(|&i| rels[i]).collect();
                    if ndcg_at_k(&order, &ideal, k) > bn + 1e-12 || err_at_k(&order, k, 4) > be + 1e-12 {
                        violations += 1;
                    }
                }
            }
        }
    }
    outcome(
        fixture_err < 1e-9 && violations == 0,
        format!("fixture max error {fixture_err:.1e}; {queries} queries enumerated, {violations} permutations beat the sorted order"),
    )
}

fn desk_config(click_model: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    for (k, v) in [
        ("synthetic.train_queries", "200"),
        ("synthetic.validation_queries", "0"),
        ("synthetic.test_queries", "50"),
        ("synthetic.docs_per_query", "10"),
        ("synthetic.feature_dim", "8"),
        ("click_model", click_model),
        ("seeds", "0, 1, 2"),
        ("iterations", "5000"),
    ] {
        c.set(k, v).unwrap();
    }
    c
}

/// Runs one method at a time so identical (config, method) pairs are shared
/// between criteria.
struct Runs {
    data: Dataset,
    cache: HashMap<String, RunRecord>,
}

impl Runs {
    fn new() -> Self {
        Runs {
            data: cuolr_core::evalharness::load_dataset(&desk_config("pbm")).unwrap(),
            cache: HashMap::new(),
        }
    }

    fn mean(&mut self, config: &ExperimentConfig, method: Method) -> f64 {
        let mut c = config.clone();
        c.methods = vec![method];
        let data = &self.data;
        let record = self.cache.entry(c.hash()).or_insert_with(|| run_experiment(&c, data).unwrap());
        if let Some(f) = record.failures().next() {
            panic!("{method} failed: {:?}", f.failure);
        }
        record.mean(method, Metric::Ndcg, 10).unwrap()
    }
}

// 6. CUOLR-CQL against the logging policy and the click-model baselines.
fn end_to_end(runs: &mut Runs) -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for cm in ["pbm", "cascade", "dcm"] {
        let c = desk_config(cm);
        let cql = runs.mean(&c, Method::CuolrCql);
        let logging = runs.mean(&c, Method::Logging);
        let baselines: Vec<(Method, f64)> = [Method::Dla, Method::Ipw, Method::CmIpw]
            .into_iter()
            .map(|m| (m, runs.mean(&c, m)))
            .collect();
        let (wm, worst) = baselines.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        let ok = cql > logging + 0.03 && cql >= worst;
        pass &= ok;
        parts.push(format!("{cm}: cql {cql:.4} logging {logging:.4} worst {wm} {worst:.4}{}", if ok { "" } else { " (miss)" }));
    }
    let t = start.elapsed();
    parts.push(format!("{:.0}s", t.as_secs_f64()));
    outcome(pass && within(t, 1200), parts.join("; "))
}

// 7. nDCG@10 spread over the conservatism grid.
fn alpha_sweep() -> Outcome {
    let start = Instant::now();
    let c = desk_config("pbm");
    let data = cuolr_core::evalharness::load_dataset(&c).unwrap();
    let points = sweep_alpha(&c, &data, &[0.0, 1e-2, 1e-1, 1.0], &mut |_, _| {}).unwrap();
    let curve: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.metric == "ndcg" && p.k == 10)
        .map(|p| (p.alpha, p.mean))
        .collect();
    let hi = curve.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = curve.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let t = start.elapsed();
    let shown: Vec<String> = curve.iter().map(|(a, v)| format!("{a}:{v:.4}")).collect();
    outcome(
        hi - lo < 0.05 && within(t, 900),
        format!("spread {:.4} over [{}], {:.0}s", hi - lo, shown.join(" "), t.as_secs_f64()),
    )
}

// 8. Which state embedding wins under which click model.
fn embedding_ablation(runs: &mut Runs) -> Outcome {
    let start = Instant::now();
    let mut score = |cm: &str, kind: StateEmbeddingKind| {
        let mut c = desk_config(cm);
        c.train.embedding = kind;
        runs.mean(&c, Method::CuolrCql)
    };
    let mut parts = Vec::new();
    let mut pass = true;
    for (cm, favoured, other) in [
        ("pbm", StateEmbeddingKind::Pos, StateEmbeddingKind::Predoc),
        ("cascade", StateEmbeddingKind::Predoc, StateEmbeddingKind::Pos),
    ] {
        let f = score(cm, favoured);
        let o = score(cm, other);
        let att = score(cm, StateEmbeddingKind::Attention);
        let ok = f >= o && att >= f.max(o) - 0.02;
        pass &= ok;
        parts.push(format!(
            "{cm}: {favoured} {f:.4} {other} {o:.4} attention {att:.4}{}",
            if ok { "" } else { " (miss)" }
        ));
    }
    let t = start.elapsed();
    parts.push(format!("{:.0}s", t.as_secs_f64()));
    outcome(pass && within(t, 900), parts.join("; "))
}

// 9. Two identical experiment invocations give the same results.csv bytes.
fn determinism() -> Outcome {
    let mut c = ExperimentConfig::default();
    for (k, v) in [
        ("synthetic.train_queries", "20"),
        ("synthetic.test_queries", "10"),
        ("synthetic.docs_per_query", "6"),
        ("list_size", "6"),
        ("seeds", "4, 5"),
        ("iterations", "150"),
        ("randomization_sessions", "5000"),
        ("logging_fraction", "0.1"),
    ] {
        c.set(k, v).unwrap();
    }
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut bytes = Vec::new();
    for d in &dirs {
        let data = cuolr_core::evalharness::load_dataset(&c).unwrap();
        let record = run_experiment(&c, &data).unwrap();
        persist(&record, &c, d.path()).unwrap();
        bytes.push(std::fs::read(d.path().join("results.csv")).unwrap());
    }
    let rows = bytes[0].iter().filter(|&&b| b == b'\n').count();
    outcome(
        bytes[0] == bytes[1] && rows > 1,
        format!("{rows} lines, identical: {}", bytes[0] == bytes[1]),
    )
}

fn main() {
    // `cargo test` passes harness flags such as `--quiet`; none apply here.
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let strict = std::env::var_os("ACCEPTANCE_STRICT").is_some();
    let wanted = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));

    let mut runs: Option<Runs> = None;
    let mut hard_failures = 0;
    let mut soft_failures = 0;
    for n in 1..=9u32 {
        if !wanted(n) {
            continue;
        }
        let (name, result) = match n {
            1 => ("click-model fidelity", click_fidelity()),
            2 => ("gradient correctness", gradients()),
            3 => ("exhaustive optimal ranking", dp_oracle()),
            4 => ("propensity recovery", propensity_recovery()),
            5 => ("metric fixtures", metric_fixtures()),
            6 => ("end-to-end ordering", end_to_end(runs.get_or_insert_with(Runs::new))),
            7 => ("conservatism sweep", alpha_sweep()),
            8 => ("state-embedding ablation", embedding_ablation(runs.get_or_insert_with(Runs::new))),
            _ => ("determinism", determinism()),
        };
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {n} ({name}): {}", result.detail);
        if !result.pass {
            if (6..=8).contains(&n) {
                soft_failures += 1;
            } else {
                hard_failures += 1;
            }
        }
    }
    if hard_failures > 0 || (strict && soft_failures > 0) {
        std::process::exit(1);
    }
}
