use cuolr_core::baselines::{estimate_ipw_propensities, result_randomization};
use cuolr_core::click_sim::{marginal_examination, simulate_session, AttractionModel, ClickModelKind, ClickModelSpec};
use cuolr_core::dataset::{Document, SyntheticSpec, DEFAULT_R_MAX};
use cuolr_core::evalharness::{err_at_k, ndcg_at_k};
use cuolr_core::rng;

pub const MAX_SESSIONS: usize = 1_000_000;

fn check_list(relevances: &[u8]) -> Result<(), String> {
    if relevances.is_empty() {
        return Err("the list is empty".into());
    }
    if let Some(r) = relevances.iter().find(|&&r| r > DEFAULT_R_MAX) {
        return Err(format!("grade {r} is above {DEFAULT_R_MAX}"));
    }
    Ok(())
}

fn check_sessions(n: usize) -> Result<(), String> {
    if n == 0 || n > MAX_SESSIONS {
        return Err(format!("sessions must be in 1..={MAX_SESSIONS}"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClickRates {
    pub simulated: Vec<f64>,
    /// `None` where no closed form exists (UBM).
    pub expected: Option<Vec<f64>>,
}

impl ClickRates {
    pub fn flat(self) -> Vec<f64> {
        let n = self.simulated.len();
        let expected = self.expected.unwrap_or_else(|| vec![f64::NAN; n]);
        [self.simulated, expected].concat()
    }
}

pub fn click_rates(
    model: &str,
    relevances: &[u8],
    eta: f64,
    epsilon: f64,
    sessions: usize,
    seed: u64,
) -> Result<ClickRates, String> {
    check_list(relevances)?;
    check_sessions(sessions)?;
    let kind: ClickModelKind = model.parse().map_err(|e: cuolr_core::Error| e.to_string())?;
    let n = relevances.len();
    let rho = (1..=n).map(|k| 1.0 / k as f64).collect();
    let spec = ClickModelSpec::with_rho(kind, rho, eta);
    spec.validate().map_err(|e| e.to_string())?;
    let attraction = AttractionModel::new(epsilon, DEFAULT_R_MAX).map_err(|e| e.to_string())?;

    let docs: Vec<Document> = relevances
        .iter()
        .enumerate()
        .map(|(i, &relevance)| Document {
            doc_id: i as u32,
            features: Vec::new(),
            relevance,
        })
        .collect();
    let refs: Vec<&Document> = docs.iter().collect();
    let mut rng = rng::stream(seed, 0);
    let mut clicks = vec![0.0; n];
    for _ in 0..sessions {
        let s = simulate_session(&spec, 0, &refs, &attraction, &mut rng).map_err(|e| e.to_string())?;
        for (c, &x) in clicks.iter_mut().zip(&s.clicks) {
            *c += f64::from(x);
        }
    }
    let simulated = clicks.iter().map(|c| c / sessions as f64).collect();

    let attractions: Vec<f64> = relevances
        .iter()
        .map(|&r| attraction.prob(r))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let expected = if kind == ClickModelKind::Ubm {
        None
    } else {
        Some(
            (1..=n)
                .map(|k| marginal_examination(&spec, &attractions, k).map(|e| e * attractions[k - 1]))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?,
        )
    };
    Ok(ClickRates { simulated, expected })
}

/// `(ndcg@k, err@k)` for `k = 1..n`.
pub fn metric_curves(relevances: &[u8]) -> Result<(Vec<f64>, Vec<f64>), String> {
    check_list(relevances)?;
    let mut ideal = relevances.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let ks = 1..=relevances.len();
    Ok((
        ks.clone().map(|k| ndcg_at_k(relevances, &ideal, k)).collect(),
        ks.map(|k| err_at_k(relevances, k, DEFAULT_R_MAX)).collect(),
    ))
}

/// `(true theta, estimated theta)` per rank under PBM with `rho_k = 1/k`.
pub fn propensity_recovery(list_size: usize, eta: f64, sessions: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>), String> {
    if !(1..=50).contains(&list_size) {
        return Err("list size must be in 1..=50".into());
    }
    check_sessions(sessions)?;
    let data = SyntheticSpec {
        train_queries: 50,
        validation_queries: 0,
        test_queries: 1,
        docs_per_query: list_size,
        feature_dim: usize::from(DEFAULT_R_MAX) + 1,
        r_max: DEFAULT_R_MAX,
        seed,
    }
    .generate()
    .map_err(|e| e.to_string())?;
    let rho = (1..=list_size).map(|k| 1.0 / k as f64).collect();
    let spec = ClickModelSpec::with_rho(ClickModelKind::Pbm, rho, eta);
    spec.validate().map_err(|e| e.to_string())?;
    let attraction = AttractionModel::new(0.1, DEFAULT_R_MAX).map_err(|e| e.to_string())?;
    let mut rng = rng::stream(seed, rng::tag::RANDOMIZE);
    let logged = result_randomization(&data.train, &spec, &attraction, sessions, list_size, &mut rng)
        .map_err(|e| e.to_string())?;
    let table = estimate_ipw_propensities(&logged).map_err(|e| e.to_string())?;
    let truth = (1..=list_size)
        .map(|k| spec.position_bias(k))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let estimated = (1..=list_size).map(|k| table.theta(k).unwrap_or(f64::NAN)).collect();
    Ok((truth, estimated))
}
