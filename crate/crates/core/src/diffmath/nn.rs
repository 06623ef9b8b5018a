use std::rc::Rc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Added to attention scores of keys a query may not see.
pub const MASKED: f64 = -1e30;

/// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(rows, cols, data).expect("init shape")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut Rng) -> Result<Self> {
        let weight = store.add(&format!("{name}.weight"), init_uniform(input, output, input, rng))?;
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(1, output))?;
        Ok(Linear {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let h = tape.matmul(x, w)?;
        tape.add(h, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

/// Linear layers with an activation between them and none after the last.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `sizes` lists every width from input to output.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config("an MLP needs input and output widths".into()));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers, activation })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let width = tape.value(x).cols();
        if width != self.input_width() {
            return Err(Error::shape("mlp input", &[width], &[self.input_width()]));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i + 1 < self.layers.len() {
                h = match self.activation {
                    Activation::Relu => tape.relu(h),
                    Activation::Tanh => tape.tanh(h),
                    Activation::Identity => h,
                };
            }
        }
        Ok(h)
    }
}

/// Sinusoidal encoding of position `k`: `sin(k / 10000^(2i/d))` at entry
/// `2i` and the matching cosine at `2i + 1`.
pub fn positional_encoding(k: usize, d_model: usize) -> Result<Vec<f64>> {
    if d_model % 2 != 0 {
        return Err(Error::Domain(format!("d_model {d_model} must be even")));
    }
    let mut out = vec![0.0; d_model];
    for i in 0..d_model / 2 {
        let angle = k as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    Ok(out)
}

/// How a sequence's attention outputs become one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Readout {
    Last,
    Mean,
}

/// Multi-head scaled dot-product self-attention without biases.
///
/// Head `h` uses columns `h * d_head .. (h + 1) * d_head` of the query, key
/// and value projections.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || d_model == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible into {heads} heads"
            )));
        }
        let mut add = |suffix: &str, rng: &mut Rng| {
            store.add(&format!("{name}.{suffix}"), init_uniform(d_model, d_model, d_model, rng))
        };
        Ok(MultiHeadAttention {
            wq: add("wq", rng)?,
            wk: add("wk", rng)?,
            wv: add("wv", rng)?,
            wo: add("wo", rng)?,
            heads,
            d_model,
        })
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    /// Attention outputs for the selected query rows of `tokens`.
    ///
    /// `mask`, if given, is `query_rows.len() x tokens.rows()` and is added to
    /// the scores; use [`MASKED`] to hide a key and 0 to keep it.
    pub fn forward_masked(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        tokens: Var,
        query_rows: Rc<[usize]>,
        mask: Option<&Tensor>,
    ) -> Result<Var> {
        let shape = tape.value(tokens).shape();
        if shape[1] != self.d_model {
            return Err(Error::shape("attention input", &shape, &[shape[0], self.d_model]));
        }
        if let Some(m) = mask {
            if m.shape() != [query_rows.len(), shape[0]] {
                return Err(Error::shape("attention mask", &m.shape(), &[query_rows.len(), shape[0]]));
            }
        }
        let (wq, wk, wv, wo) = (
            tape.param(store, self.wq),
            tape.param(store, self.wk),
            tape.param(store, self.wv),
            tape.param(store, self.wo),
        );
        let queries = tape.select_rows(tokens, query_rows)?;
        let q = tape.matmul(queries, wq)?;
        let k = tape.matmul(tokens, wk)?;
        let v = tape.matmul(tokens, wv)?;
        let mask = mask.map(|m| tape.constant(m.clone()));
        let dh = self.d_head();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice(q, 1, h * dh, dh)?;
            let kh = tape.slice(k, 1, h * dh, dh)?;
            let vh = tape.slice(v, 1, h * dh, dh)?;
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt)?;
            let mut scores = tape.scale(scores, scale);
            if let Some(m) = mask {
                scores = tape.add(scores, m)?;
            }
            let weights = tape.softmax(scores, 1)?;
            heads.push(tape.matmul(weights, vh)?);
        }
        let joined = tape.concat(&heads, 1)?;
        tape.matmul(joined, wo)
    }

    /// Full self-attention over one sequence, reduced to a `1 x d_model` row.
    pub fn forward_sequence(&self, tape: &mut Tape, store: &ParamStore, sequence: Var, readout: Readout) -> Result<Var> {
        let n = tape.value(sequence).rows();
        if n == 0 {
            return Err(Error::Degenerate("attention over an empty sequence".into()));
        }
        match readout {
            Readout::Last => self.forward_masked(tape, store, sequence, Rc::from(vec![n - 1]), None),
            Readout::Mean => {
                let all = self.forward_masked(tape, store, sequence, (0..n).collect(), None)?;
                let s = tape.sum_axis(all, 0)?;
                Ok(tape.scale(s, 1.0 / n as f64))
            }
        }
    }
}
