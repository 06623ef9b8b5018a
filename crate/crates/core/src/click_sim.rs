//! Click models and session simulation.
//!
//! Every model factorizes a click into examination times attraction:
//! `P(C_k = 1) = chi(R, k) * alpha(R(k))`. Attraction depends on the
//! document alone; the models differ only in how examination evolves down
//! the list.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::Document;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Default click-noise floor.
pub const DEFAULT_EPSILON: f64 = 0.1;

/// Maps relevance grades to click-given-examination probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttractionModel {
    pub epsilon: f64,
    pub r_max: u8,
}

impl AttractionModel {
    pub fn new(epsilon: f64, r_max: u8) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Domain(format!("epsilon {epsilon} outside [0, 1)")));
        }
        if r_max == 0 {
            return Err(Error::Domain("r_max must be positive".into()));
        }
        Ok(AttractionModel { epsilon, r_max })
    }

    /// `eps + (1 - eps) * (2^rel - 1) / (2^r_max - 1)`
    pub fn prob(&self, relevance: u8) -> Result<f64> {
        if relevance > self.r_max {
            return Err(Error::Domain(format!(
                "relevance {relevance} outside [0, {}]",
                self.r_max
            )));
        }
        let gain = (2f64.powi(i32::from(relevance)) - 1.0) / (2f64.powi(i32::from(self.r_max)) - 1.0);
        Ok(self.epsilon + (1.0 - self.epsilon) * gain)
    }
}

pub fn attraction_prob(relevance: u8, model: &AttractionModel) -> Result<f64> {
    model.prob(relevance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClickModelKind {
    Pbm,
    Cascade,
    Dcm,
    Ccm,
    Ubm,
}

impl ClickModelKind {
    pub const ALL: [ClickModelKind; 5] = [
        ClickModelKind::Pbm,
        ClickModelKind::Cascade,
        ClickModelKind::Dcm,
        ClickModelKind::Ccm,
        ClickModelKind::Ubm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClickModelKind::Pbm => "pbm",
            ClickModelKind::Cascade => "cascade",
            ClickModelKind::Dcm => "dcm",
            ClickModelKind::Ccm => "ccm",
            ClickModelKind::Ubm => "ubm",
        }
    }

    /// Models whose examination stops for good once it stops.
    pub fn is_cascade_family(self) -> bool {
        matches!(
            self,
            ClickModelKind::Cascade | ClickModelKind::Dcm | ClickModelKind::Ccm
        )
    }
}

impl fmt::Display for ClickModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClickModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClickModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown click model {s:?}")))
    }
}

/// A click model together with all of its parameters.
///
/// Vectors are indexed by rank (`rho[0]` is rank 1). `gamma_matrix[k - 1][j]`
/// is the UBM examination probability at rank `k` given that the most recent
/// click happened at rank `j` (`j = 0` when nothing was clicked yet).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickModelSpec {
    pub kind: ClickModelKind,
    pub rho: Vec<f64>,
    pub eta: f64,
    pub lambda: Vec<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub gamma_matrix: Vec<Vec<f64>>,
}

impl ClickModelSpec {
    /// Defaults for a list of `list_size` ranks: `rho_k = 1/k`, `eta = 1`.
    pub fn new(kind: ClickModelKind, list_size: usize) -> Self {
        let rho = (1..=list_size).map(|k| 1.0 / k as f64).collect();
        Self::with_rho(kind, rho, 1.0)
    }

    /// DCM continuation and UBM gammas are derived from `rho`.
    pub fn with_rho(kind: ClickModelKind, rho: Vec<f64>, eta: f64) -> Self {
        let gamma_matrix = default_gamma(&rho);
        ClickModelSpec {
            kind,
            lambda: rho.clone(),
            rho,
            eta,
            alpha1: 1.0,
            alpha2: 0.6,
            alpha3: 0.2,
            gamma_matrix,
        }
    }

    pub fn list_size(&self) -> usize {
        self.rho.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.list_size();
        if k == 0 {
            return Err(Error::Config("click model needs at least one rank".into()));
        }
        let prob = |name: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} is not a probability")))
            }
        };
        for &r in &self.rho {
            prob("rho", r)?;
        }
        if self.lambda.len() != k {
            return Err(Error::Config(format!(
                "lambda has {} entries, expected {k}",
                self.lambda.len()
            )));
        }
        for &l in &self.lambda {
            prob("lambda", l)?;
        }
        prob("alpha1", self.alpha1)?;
        prob("alpha2", self.alpha2)?;
        prob("alpha3", self.alpha3)?;
        if !(self.eta >= 0.0) {
            return Err(Error::Config(format!("eta = {} must be >= 0", self.eta)));
        }
        if self.gamma_matrix.len() != k || self.gamma_matrix.iter().any(|row| row.len() != k + 1) {
            return Err(Error::Config(format!("gamma matrix must be {k} x {}", k + 1)));
        }
        for &g in self.gamma_matrix.iter().flatten() {
            prob("gamma", g)?;
        }
        Ok(())
    }

    /// `rho_k ^ eta` for 1-based rank `k`.
    pub fn position_bias(&self, k: usize) -> Result<f64> {
        self.rho
            .get(k.wrapping_sub(1))
            .map(|r| r.powf(self.eta))
            .ok_or_else(|| Error::Domain(format!("rank {k} outside 1..={}", self.list_size())))
    }

    /// Probability of examining rank `k + 1` given rank `k` was examined and
    /// its document has attraction `attraction`. Cascade-family models only.
    fn continuation(&self, k: usize, attraction: f64) -> f64 {
        match self.kind {
            ClickModelKind::Cascade => 1.0 - attraction,
            ClickModelKind::Dcm => 1.0 - attraction * (1.0 - self.lambda[k - 1]),
            ClickModelKind::Ccm => {
                (1.0 - attraction) * self.alpha1
                    + attraction * self.after_click_ccm(attraction)
            }
            ClickModelKind::Pbm | ClickModelKind::Ubm => 1.0,
        }
    }

    fn after_click_ccm(&self, attraction: f64) -> f64 {
        self.alpha2 * (1.0 - attraction) + self.alpha3 * attraction
    }
}

/// `gamma[k][0] = rho_k`, `gamma[k][j] = min(1, rho_k / (k - j))` for `1 <= j < k`.
pub fn default_gamma(rho: &[f64]) -> Vec<Vec<f64>> {
    let k_max = rho.len();
    (1..=k_max)
        .map(|k| {
            let mut row = vec![0.0; k_max + 1];
            row[0] = rho[k - 1];
            for (j, slot) in row.iter_mut().enumerate().take(k).skip(1) {
                *slot = (rho[k - 1] / (k - j) as f64).clamp(0.0, 1.0);
            }
            row
        })
        .collect()
}

/// Closed-form examination probability `chi(R, k)` at 1-based rank `k`.
///
/// `attractions` holds the attraction of the documents at ranks `1..k`;
/// entries from rank `k` onwards are ignored. UBM conditions on realized
/// clicks and has no closed form here.
pub fn marginal_examination(spec: &ClickModelSpec, attractions: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("ranks start at 1".into()));
    }
    if attractions.len() + 1 < k {
        return Err(Error::Domain(format!(
            "rank {k} needs {} preceding attractions, got {}",
            k - 1,
            attractions.len()
        )));
    }
    match spec.kind {
        ClickModelKind::Pbm => spec.position_bias(k),
        ClickModelKind::Ubm => Err(Error::Unsupported(
            "UBM examination depends on realized clicks".into(),
        )),
        _ => {
            if k > spec.list_size() {
                return Err(Error::Domain(format!(
                    "rank {k} outside 1..={}",
                    spec.list_size()
                )));
            }
            Ok(attractions[..k - 1]
                .iter()
                .enumerate()
                .map(|(i, &a)| spec.continuation(i + 1, a))
                .product())
        }
    }
}

/// One logged impression: a ranked list and its clicks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub query_id: u32,
    pub ranking: Vec<u32>,
    pub clicks: Vec<u8>,
}

impl Session {
    pub fn click_count(&self) -> usize {
        self.clicks.iter().filter(|&&c| c == 1).count()
    }
}

/// Samples clicks top-down for documents already in rank order.
pub fn simulate_session(
    spec: &ClickModelSpec,
    query_id: u32,
    docs_in_rank_order: &[&Document],
    attraction: &AttractionModel,
    rng: &mut Rng,
) -> Result<Session> {
    if docs_in_rank_order.len() > spec.list_size() {
        return Err(Error::Domain(format!(
            "list of {} documents exceeds the click model's {} ranks",
            docs_in_rank_order.len(),
            spec.list_size()
        )));
    }
    let mut clicks = Vec::with_capacity(docs_in_rank_order.len());
    let mut examining = true;
    let mut last_click = 0usize;
    for (i, doc) in docs_in_rank_order.iter().enumerate() {
        let k = i + 1;
        let alpha = attraction.prob(doc.relevance)?;
        let examined = match spec.kind {
            ClickModelKind::Pbm => rng.random::<f64>() < spec.position_bias(k)?,
            ClickModelKind::Ubm => rng.random::<f64>() < spec.gamma_matrix[i][last_click],
            _ => examining,
        };
        let click = examined && rng.random::<f64>() < alpha;
        if click {
            last_click = k;
        }
        if examining && spec.kind.is_cascade_family() {
            examining = match spec.kind {
                ClickModelKind::Cascade => !click,
                ClickModelKind::Dcm => !click || rng.random::<f64>() < spec.lambda[i],
                ClickModelKind::Ccm => {
                    let p = if click {
                        spec.after_click_ccm(alpha)
                    } else {
                        spec.alpha1
                    };
                    rng.random::<f64>() < p
                }
                ClickModelKind::Pbm | ClickModelKind::Ubm => unreachable!(),
            };
        }
        clicks.push(u8::from(click));
    }
    Ok(Session {
        query_id,
        ranking: docs_in_rank_order.iter().map(|d| d.doc_id).collect(),
        clicks,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SessionRow {
    query_id: u32,
    rank: usize,
    doc_id: u32,
    click: u8,
}

/// Writes sessions as `query_id,rank,doc_id,click` rows, ranks 1-based.
pub fn write_sessions_csv<W: Write>(writer: W, sessions: &[Session]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in sessions {
        for (i, (&doc_id, &click)) in s.ranking.iter().zip(&s.clicks).enumerate() {
            w.serialize(SessionRow {
                query_id: s.query_id,
                rank: i + 1,
                doc_id,
                click,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads sessions back; a row with rank 1 opens a new session.
pub fn read_sessions_csv<R: Read>(reader: R) -> Result<Vec<Session>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut sessions: Vec<Session> = Vec::new();
    for (i, row) in r.deserialize::<SessionRow>().enumerate() {
        let row = row?;
        let line = i + 2;
        if row.click > 1 {
            return Err(Error::Parse {
                line,
                message: format!("click must be 0 or 1, got {}", row.click),
            });
        }
        if row.rank == 1 {
            sessions.push(Session {
                query_id: row.query_id,
                ranking: Vec::new(),
                clicks: Vec::new(),
            });
        }
        match sessions.last_mut() {
            Some(s) if s.query_id == row.query_id && s.ranking.len() + 1 == row.rank => {
                s.ranking.push(row.doc_id);
                s.clicks.push(row.click);
            }
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("rank {} does not continue a session", row.rank),
                })
            }
        }
    }
    Ok(sessions)
}
