use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffmath::{positional_encoding, MultiHeadAttention, ParamStore, Readout, Tape, Tensor, Var, MASKED};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DEFAULT_HEADS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateEmbeddingKind {
    Pos,
    Predoc,
    PosPlusPredoc,
    Attention,
}

impl StateEmbeddingKind {
    pub const ALL: [StateEmbeddingKind; 4] = [
        StateEmbeddingKind::Pos,
        StateEmbeddingKind::Predoc,
        StateEmbeddingKind::PosPlusPredoc,
        StateEmbeddingKind::Attention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StateEmbeddingKind::Pos => "pos",
            StateEmbeddingKind::Predoc => "predoc",
            StateEmbeddingKind::PosPlusPredoc => "pos+predoc",
            StateEmbeddingKind::Attention => "attention",
        }
    }
}

impl fmt::Display for StateEmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StateEmbeddingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace(['_', ' '], "");
        let s = if s == "pospluspredoc" { "pos+predoc".to_string() } else { s };
        StateEmbeddingKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown state embedding {s:?}")))
    }
}

/// Maps a partial ranking and the next position to a state vector.
///
/// Positions are 1-based; rank `k` is encoded as `positional_encoding(k - 1)`
/// so the top slot gets the all-phase-zero code.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateEmbedder {
    pub kind: StateEmbeddingKind,
    pub feature_dim: usize,
    pub d_model: usize,
    pub readout: Readout,
    pub attention: Option<MultiHeadAttention>,
}

fn round_up(x: usize, m: usize) -> usize {
    x.div_ceil(m) * m
}

impl StateEmbedder {
    pub fn new(
        kind: StateEmbeddingKind,
        feature_dim: usize,
        heads: usize,
        readout: Readout,
        psi: &mut ParamStore,
        rng: &mut Rng,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        let (d_model, attention) = if kind == StateEmbeddingKind::Attention {
            if heads == 0 {
                return Err(Error::Config("attention needs at least one head".into()));
            }
            let unit = if heads % 2 == 0 { heads } else { 2 * heads };
            let d = round_up(feature_dim, unit);
            (d, Some(MultiHeadAttention::new(psi, "attention", d, heads, rng)?))
        } else {
            (round_up(feature_dim, 2), None)
        };
        Ok(StateEmbedder {
            kind,
            feature_dim,
            d_model,
            readout,
            attention,
        })
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            StateEmbeddingKind::Pos | StateEmbeddingKind::Attention => self.d_model,
            StateEmbeddingKind::Predoc => self.feature_dim,
            StateEmbeddingKind::PosPlusPredoc => self.d_model + self.feature_dim,
        }
    }

    fn pe(&self, k: usize) -> Vec<f64> {
        positional_encoding(k - 1, self.d_model).expect("d_model is even")
    }

    fn padded(&self, features: &[f64]) -> Vec<f64> {
        let mut v = features.to_vec();
        v.resize(self.d_model, 0.0);
        v
    }

    fn fixed(&self, prefix: &[&[f64]], k: usize) -> Vec<f64> {
        let predoc = || {
            let mut mean = vec![0.0; self.feature_dim];
            for f in prefix {
                for (m, v) in mean.iter_mut().zip(f.iter()) {
                    *m += v;
                }
            }
            if !prefix.is_empty() {
                mean.iter_mut().for_each(|m| *m /= prefix.len() as f64);
            }
            mean
        };
        match self.kind {
            StateEmbeddingKind::Pos => self.pe(k),
            StateEmbeddingKind::Predoc => predoc(),
            StateEmbeddingKind::PosPlusPredoc => {
                let mut v = self.pe(k);
                v.extend(predoc());
                v
            }
            StateEmbeddingKind::Attention => unreachable!("attention is not a fixed embedding"),
        }
    }

    fn check(&self, prefix: &[&[f64]], k: usize) -> Result<()> {
        if k != prefix.len() + 1 {
            return Err(Error::Domain(format!(
                "position {k} does not follow a prefix of {}",
                prefix.len()
            )));
        }
        if let Some(f) = prefix.iter().find(|f| f.len() != self.feature_dim) {
            return Err(Error::shape("state prefix", &[f.len()], &[self.feature_dim]));
        }
        Ok(())
    }

    /// One state as a `1 x state_dim` row.
    pub fn embed(&self, tape: &mut Tape, psi: &ParamStore, prefix: &[&[f64]], k: usize) -> Result<Var> {
        self.check(prefix, k)?;
        match &self.attention {
            None => Ok(tape.constant(Tensor::row(self.fixed(prefix, k)))),
            Some(mha) => {
                let mut rows: Vec<Vec<f64>> = prefix.iter().map(|f| self.padded(f)).collect();
                rows.push(self.pe(k));
                let seq = tape.constant(Tensor::from_rows(&rows, self.d_model)?);
                mha.forward_sequence(tape, psi, seq, self.readout)
            }
        }
    }

    /// State vector for `prefix` at position `k`, values only.
    pub fn embed_state(&self, psi: &ParamStore, prefix: &[&[f64]], k: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = self.embed(&mut tape, psi, prefix, k)?;
        Ok(tape.value(v).data().to_vec())
    }

    /// Every state along each ranked list: for a list of length `L`, rows for
    /// positions `1..=L` in order, lists stacked one after another.
    ///
    /// With last-token read-out, one attention call per list serves all of its
    /// states: the position tokens act as queries and a causal mask limits
    /// position `k` to the documents above it and to itself.
    pub fn embed_lists(&self, tape: &mut Tape, psi: &ParamStore, lists: &[Vec<&[f64]>]) -> Result<Var> {
        for list in lists {
            if let Some(f) = list.iter().find(|f| f.len() != self.feature_dim) {
                return Err(Error::shape("ranked list", &[f.len()], &[self.feature_dim]));
            }
        }
        let Some(mha) = &self.attention else {
            let rows: Vec<Vec<f64>> = lists
                .iter()
                .flat_map(|list| (1..=list.len()).map(move |k| self.fixed(&list[..k - 1], k)))
                .collect();
            return Ok(tape.constant(Tensor::from_rows(&rows, self.state_dim())?));
        };
        let mut parts = Vec::new();
        for list in lists.iter().filter(|l| !l.is_empty()) {
            let n = list.len();
            match self.readout {
                Readout::Last => {
                    let mut rows: Vec<Vec<f64>> = list.iter().map(|f| self.padded(f)).collect();
                    rows.extend((1..=n).map(|k| self.pe(k)));
                    let tokens = tape.constant(Tensor::from_rows(&rows, self.d_model)?);
                    let mut mask = Tensor::filled(n, 2 * n, MASKED);
                    for q in 0..n {
                        let data = mask.data_mut();
                        data[q * 2 * n..q * 2 * n + q].fill(0.0);
                        data[q * 2 * n + n + q] = 0.0;
                    }
                    parts.push(mha.forward_masked(tape, psi, tokens, (n..2 * n).collect(), Some(&mask))?);
                }
                Readout::Mean => {
                    for k in 1..=n {
                        parts.push(self.embed(tape, psi, &list[..k - 1], k)?);
                    }
                }
            }
        }
        if parts.is_empty() {
            return Ok(tape.constant(Tensor::zeros(0, self.state_dim())));
        }
        tape.concat(&parts, 0)
    }
}
