use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dropout::Ctx;
use super::init::{glorot_uniform, normal, orthogonal, InitScheme};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Word embeddings. Row [`PAD`] is zero and never receives gradient.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(params: &mut ParamStore, name: &str, vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let mut t = normal(&[vocab_size, dim], 0.1, rng);
        t.data_mut()[..dim].iter_mut().for_each(|x| *x = 0.0);
        let table = params.add(format!("{name}.table"), t);
        Embedding {
            table,
            vocab_size,
            dim,
        }
    }

    /// `[n × dim]` matrix of the rows for `ids`.
    pub fn lookup(&self, tape: &mut Tape, params: &ParamStore, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::Invalid(format!(
                "embedding index {bad} out of range for vocabulary of {}",
                self.vocab_size
            )));
        }
        let t = tape.param(params, self.table);
        tape.gather_rows(t, ids, Some(PAD))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.table]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let w = params.add(format!("{name}.w"), glorot_uniform(in_dim, out_dim, rng));
        let b = params.add(format!("{name}.b"), Tensor::zeros(&[1, out_dim]));
        Dense {
            w,
            b,
            activation,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(params, self.w);
        let b = tape.param(params, self.b);
        let z = tape.matmul(x, w)?;
        let z = tape.add_row(z, b)?;
        match self.activation {
            Activation::Linear => Ok(z),
            Activation::Relu => tape.relu(z),
            Activation::Sigmoid => tape.sigmoid(z),
            Activation::Tanh => tape.tanh(z),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }
}

/// One LSTM direction. Gate columns are ordered input, forget, candidate,
/// output; the forget bias starts at 1.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
}

impl LstmCell {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        init: InitScheme,
        rng: &mut impl Rng,
    ) -> Self {
        let h = hidden_dim;
        let w_x = glorot_uniform(input_dim, 4 * h, rng);
        let w_h = if init.orthogonal_recurrent {
            let blocks: Vec<Tensor> = (0..4).map(|_| orthogonal(h, rng)).collect();
            let mut data = Vec::with_capacity(h * 4 * h);
            for r in 0..h {
                for blk in &blocks {
                    data.extend_from_slice(blk.row(r));
                }
            }
            Tensor::new(vec![h, 4 * h], data).unwrap()
        } else {
            glorot_uniform(h, 4 * h, rng)
        };
        let mut b = Tensor::zeros(&[1, 4 * h]);
        b.data_mut()[h..2 * h].iter_mut().for_each(|x| *x = 1.0);
        LstmCell {
            input_dim,
            hidden_dim,
            w_x: params.add(format!("{name}.w_x"), w_x),
            w_h: params.add(format!("{name}.w_h"), w_h),
            b: params.add(format!("{name}.b"), b),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w_x, self.w_h, self.b]
    }

    /// One recurrence step on row vectors `x: [1×in]`, `h_prev, c_prev: [1×hidden]`.
    pub fn step(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        x: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var)> {
        if tape.shape(x) != [1, self.input_dim] {
            return Err(Error::shape("lstm_step", tape.shape(x), &[1, self.input_dim]));
        }
        let w_x = tape.param(params, self.w_x);
        let b = tape.param(params, self.b);
        let xw = tape.matmul(x, w_x)?;
        let proj = tape.add_row(xw, b)?;
        self.step_projected(tape, params, proj, h_prev, c_prev)
    }

    /// Step given the precomputed input projection `x·W_x + b`.
    fn step_projected(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        proj: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var)> {
        let h = self.hidden_dim;
        for v in [h_prev, c_prev] {
            if tape.shape(v) != [1, h] {
                return Err(Error::shape("lstm_step", tape.shape(v), &[1, h]));
            }
        }
        let w_h = tape.param(params, self.w_h);
        let hw = tape.matmul(h_prev, w_h)?;
        let z = tape.add(proj, hw)?;
        let zi = tape.narrow(z, 1, 0, h)?;
        let zf = tape.narrow(z, 1, h, h)?;
        let zg = tape.narrow(z, 1, 2 * h, h)?;
        let zo = tape.narrow(z, 1, 3 * h, h)?;
        let i = tape.sigmoid(zi)?;
        let f = tape.sigmoid(zf)?;
        let g = tape.tanh(zg)?;
        let o = tape.sigmoid(zo)?;
        let fc = tape.mul(f, c_prev)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c)?;
        let h_new = tape.mul(o, tc)?;
        Ok((h_new, c))
    }

    /// Runs the cell over the rows of `x: [n×in]`, right to left when
    /// `reverse`. Returns hidden states in input order.
    pub fn run(&self, tape: &mut Tape, params: &ParamStore, x: Var, reverse: bool, ctx: &mut Ctx) -> Result<Vec<Var>> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::shape("lstm", &shape, &[0, self.input_dim]));
        }
        let n = shape[0];
        let w_x = tape.param(params, self.w_x);
        let b = tape.param(params, self.b);
        let xw = tape.matmul(x, w_x)?;
        let proj = tape.add_row(xw, b)?;
        let mut h = tape.constant(Tensor::zeros(&[1, self.hidden_dim]));
        let mut c = tape.constant(Tensor::zeros(&[1, self.hidden_dim]));
        // one variational mask per sequence
        let rmask = ctx.recurrent_mask(&[1, self.hidden_dim]);
        let mut out = vec![h; n];
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let p = tape.row(proj, t)?;
            let h_in = match &rmask {
                Some(m) => tape.mul_const(h, m.clone())?,
                None => h,
            };
            let (h2, c2) = self.step_projected(tape, params, p, h_in, c)?;
            h = h2;
            c = c2;
            out[t] = h;
        }
        Ok(out)
    }
}

/// Per-position concatenation `[h_fwd(t); h_bwd(t)]` over a sequence of
/// `[1×in]` rows.
pub fn bilstm(
    tape: &mut Tape,
    params: &ParamStore,
    fwd: &LstmCell,
    bwd: &LstmCell,
    sequence: &[Var],
    ctx: &mut Ctx,
) -> Result<Vec<Var>> {
    if sequence.is_empty() {
        return Err(Error::Invalid("bilstm over an empty sequence".into()));
    }
    let x = tape.concat(sequence, 0)?;
    let hf = fwd.run(tape, params, x, false, ctx)?;
    let hb = bwd.run(tape, params, x, true, ctx)?;
    hf.into_iter()
        .zip(hb)
        .map(|(f, b)| tape.concat(&[f, b], 1))
        .collect()
}

/// Bidirectional LSTM layer over a `[n×in]` matrix, producing `[n×2h]`.
/// Input dropout is applied when training.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl BiLstm {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        init: InitScheme,
        rng: &mut impl Rng,
    ) -> Self {
        BiLstm {
            fwd: LstmCell::new(params, &format!("{name}.fwd"), input_dim, hidden_dim, init, rng),
            bwd: LstmCell::new(params, &format!("{name}.bwd"), input_dim, hidden_dim, init, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fwd.input_dim
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden_dim
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: Var, ctx: &mut Ctx) -> Result<Var> {
        let x = ctx.dropout(tape, x)?;
        let hf = self.fwd.run(tape, params, x, false, ctx)?;
        let hb = self.bwd.run(tape, params, x, true, ctx)?;
        let f = tape.concat(&hf, 0)?;
        let b = tape.concat(&hb, 0)?;
        tape.concat(&[f, b], 1)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = self.fwd.param_ids();
        v.extend(self.bwd.param_ids());
        v
    }
}
