use rand::Rng;

use super::conv_lstm::forget_biased;
use super::{glorot, ParamId, ParamSet, Pass, Role};
use crate::tensor::{Tensor, Var};
use crate::{Error, Real, Result};

/// Plain LSTM over `(batch, time, input)`; gates packed as input, forget,
/// output, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// `(input, 4 * units)`
    pub w_x: ParamId,
    /// `(units, 4 * units)`
    pub w_h: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub units: usize,
}

impl Lstm {
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        input: usize,
        units: usize,
        rng: &mut R,
    ) -> Self {
        let g = 4 * units;
        let w_x = params.add(alloc::format!("{name}.w_x"), glorot(&[input, g], input, units, rng), Role::Weight);
        let w_h = params.add(alloc::format!("{name}.w_h"), glorot(&[units, g], units, units, rng), Role::Weight);
        let bias = params.add(alloc::format!("{name}.bias"), forget_biased::<T>(units), Role::Weight);
        Lstm { w_x, w_h, bias, input, units }
    }

    /// Last hidden state `(batch, units)` after consuming `seq`, optionally
    /// in reversed time order.
    pub fn last_hidden<T: Real>(&self, pass: &Pass<'_, T>, seq: Var, reverse: bool) -> Result<Var> {
        let t = pass.tape();
        let shape = t.shape(seq);
        if shape.len() != 3 || shape[2] != self.input {
            return Err(Error::shapes("lstm", &shape, &[self.input, 4 * self.units]));
        }
        let (batch, steps, u) = (shape[0], shape[1], self.units);
        if steps == 0 {
            return Err(Error::shape("lstm", "empty sequence"));
        }
        let xg_all = t.matmul(seq, pass.var(self.w_x))?;
        let (w_h, bias) = (pass.var(self.w_h), pass.var(self.bias));
        let mut state = t.constant(Tensor::zeros(&[batch, 2 * u]));
        let mut h = None;
        for k in 0..steps {
            let step = if reverse { steps - 1 - k } else { k };
            let xg = t.reshape(t.slice(xg_all, 1, step, 1)?, &[batch, 4 * u])?;
            let hg = match h {
                Some(h) => Some(t.matmul(h, w_h)?),
                None => None,
            };
            state = t.lstm_cell(xg, hg, bias, state, None)?;
            h = Some(t.slice(state, 1, 0, u)?);
        }
        let h = h.expect("at least one step");
        Ok(h)
    }
}

/// Forward and time-reversed LSTMs; output `concat(forward last, backward
/// last)` of width `2 * units`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        input: usize,
        units: usize,
        rng: &mut R,
    ) -> Self {
        let forward = Lstm::new(params, &alloc::format!("{name}.fwd"), input, units, rng);
        let backward = Lstm::new(params, &alloc::format!("{name}.bwd"), input, units, rng);
        BiLstm { forward, backward }
    }

    pub fn units(&self) -> usize {
        self.forward.units
    }

    pub fn output_width(&self) -> usize {
        2 * self.forward.units
    }

    /// `seq: (batch, time, input)` to `(batch, 2 * units)`.
    pub fn forward<T: Real>(&self, pass: &Pass<'_, T>, seq: Var) -> Result<Var> {
        let f = self.forward.last_hidden(pass, seq, false)?;
        let b = self.backward.last_hidden(pass, seq, true)?;
        pass.tape().concat(&[f, b], 1)
    }
}
