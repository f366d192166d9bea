//! Recurrent position encoder: `p_{i+1} = RNN(z_i, p_i)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;

use super::sinusoidal::{sinusoidal, SinusoidalSpec};

/// What the recurrence reads at step `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RnnInput {
    /// The scalar time `i·Δ`.
    Scalar,
    /// Row `i` of the sinusoidal table.
    Vectorized,
}

impl RnnInput {
    pub fn name(self) -> &'static str {
        match self {
            RnnInput::Scalar => "scalar",
            RnnInput::Vectorized => "vectorized",
        }
    }
}

impl std::str::FromStr for RnnInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scalar" => Ok(RnnInput::Scalar),
            "vectorized" | "vector" => Ok(RnnInput::Vectorized),
            _ => Err(Error::Parse(format!("unknown rnn input mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnLayer {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub h0: ParamId,
}

/// Stacked tanh recurrence with learned initial hidden states, hidden width `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnEncoder {
    pub layers: Vec<RnnLayer>,
    pub input: RnnInput,
    pub dim: usize,
    pub delta: f64,
}

impl RnnEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dim: usize,
        layers: usize,
        input: RnnInput,
        delta: f64,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(1..=2).contains(&layers) {
            return Err(Error::contract(format!("rnn encoder supports 1 or 2 layers, got {layers}")));
        }
        if input == RnnInput::Vectorized && dim % 2 != 0 {
            return Err(Error::contract("vectorized rnn input needs an even dimension"));
        }
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            let width = if l == 0 { Self::input_width(input, dim) } else { dim };
            let g = ParamGroup::Encoder;
            out.push(RnnLayer {
                w_x: store.add(format!("rnn.l{l}.w_x"), Tensor::randn(&[width, dim], std, rng), g),
                w_h: store.add(format!("rnn.l{l}.w_h"), Tensor::randn(&[dim, dim], std, rng), g),
                b: store.add(format!("rnn.l{l}.b"), Tensor::zeros(&[dim]), g),
                h0: store.add(format!("rnn.l{l}.h0"), Tensor::zeros(&[dim]), g),
            });
        }
        Ok(RnnEncoder {
            layers: out,
            input,
            dim,
            delta,
        })
    }

    fn input_width(input: RnnInput, dim: usize) -> usize {
        match input {
            RnnInput::Scalar => 1,
            RnnInput::Vectorized => dim,
        }
    }

    /// `in·d + d² + 2d` for the first layer, `2d² + 2d` for the second.
    pub fn param_count_for(dim: usize, layers: usize, input: RnnInput) -> usize {
        (0..layers)
            .map(|l| {
                let w = if l == 0 { Self::input_width(input, dim) } else { dim };
                w * dim + dim * dim + 2 * dim
            })
            .sum()
    }

    pub fn param_count(&self) -> usize {
        Self::param_count_for(self.dim, self.layers.len(), self.input)
    }

    fn inputs(&self, len: usize) -> Result<Tensor> {
        match self.input {
            RnnInput::Scalar => Tensor::new(
                &[len, 1],
                (0..len).map(|i| i as f64 * self.delta).collect(),
            ),
            RnnInput::Vectorized => Ok(sinusoidal(len, &SinusoidalSpec::new(self.dim)?)),
        }
    }

    /// Encodings for positions `1..=len` as an `len × d` node.
    pub fn encode_on_tape(&self, tape: &mut Tape, bound: &Bound, len: usize) -> Result<Var> {
        let z = self.inputs(len)?;
        let mut hidden: Vec<Var> = self.layers.iter().map(|l| bound[l.h0]).collect();
        let mut rows = Vec::with_capacity(len);
        for i in 0..len {
            let mut x = tape.constant(Tensor::new(&[1, z.cols()], z.row(i).to_vec())?);
            for (l, layer) in self.layers.iter().enumerate() {
                let a = tape.matmul(x, bound[layer.w_x])?;
                let b = tape.matmul(hidden[l], bound[layer.w_h])?;
                let s = tape.add(a, b)?;
                let s = tape.add(s, bound[layer.b])?;
                hidden[l] = tape.tanh(s)?;
                x = hidden[l];
            }
            rows.push(x);
        }
        if rows.is_empty() {
            return Ok(tape.constant(Tensor::zeros(&[0, self.dim])));
        }
        tape.concat_rows(&rows)
    }
}

/// Numeric encodings of length `len` with the current parameters.
pub fn rnn_encode(rnn: &RnnEncoder, store: &ParamStore, len: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = store.bind_constants(&mut tape);
    let v = rnn.encode_on_tape(&mut tape, &bound, len)?;
    Ok(tape.value(v).clone())
}
