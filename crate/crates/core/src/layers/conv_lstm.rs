use rand::Rng;

use super::{glorot, ParamId, ParamSet, Pass, Role};
use crate::tensor::{conv1d_out_len, Tape, Tensor, Var};
use crate::{Error, Real, Result};

/// 1-D convolutional LSTM with Hadamard peepholes.
///
/// Gates are packed along the last axis of every kernel in the order
/// input, forget, output, candidate. The input transition is a valid strided
/// convolution; the state transition is a stride-1 convolution with "same"
/// padding so the state keeps its spatial length.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstm1d {
    /// `(kernel, in_channels, 4 * filters)`
    pub w_x: ParamId,
    /// `(kernel, filters, 4 * filters)`
    pub w_h: ParamId,
    /// `(4 * filters,)`
    pub bias: ParamId,
    /// Peepholes `(out_len, filters)` for the input, forget and output gates.
    pub w_ci: ParamId,
    pub w_cf: ParamId,
    pub w_co: ParamId,
    pub in_len: usize,
    pub in_channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_len: usize,
}

/// Recurrent state: hidden `h` and the packed `[h | c]` tensor, both with
/// leading `(batch, out_len)` axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLstmState {
    pub h: Var,
    pub packed: Var,
    /// Set for the all-zero initial state, whose recurrent term vanishes.
    zero: bool,
}

impl ConvLstmState {
    pub fn from_parts<T: Real>(tape: &Tape<T>, h: Var, c: Var) -> Result<Self> {
        Ok(ConvLstmState { h, packed: tape.concat(&[h, c], 2)?, zero: false })
    }

    /// Cell state `(batch, out_len, filters)`.
    pub fn cell<T: Real>(&self, tape: &Tape<T>) -> Result<Var> {
        let f = tape.shape(self.h)[2];
        tape.slice(self.packed, 2, f, f)
    }
}

impl ConvLstm1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        in_len: usize,
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(alloc::format!("{name}: kernel {kernel} must be odd")));
        }
        if filters == 0 || in_channels == 0 {
            return Err(Error::Config(alloc::format!("{name}: filters and channels must be positive")));
        }
        let out_len = conv1d_out_len(in_len, kernel, stride)
            .ok_or_else(|| Error::Config(alloc::format!("{name}: length {in_len} shorter than kernel {kernel}")))?;
        let g = 4 * filters;
        let w_x = params.add(
            alloc::format!("{name}.w_x"),
            glorot(&[kernel, in_channels, g], kernel * in_channels, kernel * filters, rng),
            Role::Weight,
        );
        let w_h = params.add(
            alloc::format!("{name}.w_h"),
            glorot(&[kernel, filters, g], kernel * filters, kernel * filters, rng),
            Role::Weight,
        );
        let bias = params.add(alloc::format!("{name}.bias"), forget_biased::<T>(filters), Role::Weight);
        let mut peephole = |gate: &str| {
            params.add(alloc::format!("{name}.w_c{gate}"), Tensor::zeros(&[out_len, filters]), Role::Weight)
        };
        let (w_ci, w_cf, w_co) = (peephole("i"), peephole("f"), peephole("o"));
        Ok(ConvLstm1d { w_x, w_h, bias, w_ci, w_cf, w_co, in_len, in_channels, filters, kernel, stride, out_len })
    }

    pub fn zero_state<T: Real>(&self, pass: &Pass<'_, T>, batch: usize) -> ConvLstmState {
        let tape = pass.tape();
        ConvLstmState {
            h: tape.constant(Tensor::zeros(&[batch, self.out_len, self.filters])),
            packed: tape.constant(Tensor::zeros(&[batch, self.out_len, 2 * self.filters])),
            zero: true,
        }
    }

    /// One recurrence step for `x_t: (batch, in_len, in_channels)`.
    pub fn step<T: Real>(&self, pass: &Pass<'_, T>, x_t: Var, state: ConvLstmState) -> Result<ConvLstmState> {
        let shape = pass.tape().shape(x_t);
        if shape.len() != 3 || shape[1] != self.in_len || shape[2] != self.in_channels {
            return Err(Error::shapes("conv_lstm_step", &shape, &[self.in_len, self.in_channels]));
        }
        let xg = pass.tape().conv1d(x_t, pass.var(self.w_x), self.stride, 0)?;
        self.step_gates(pass, xg, state)
    }

    /// Step from precomputed input contributions `xg: (batch, out_len, 4F)`.
    fn step_gates<T: Real>(&self, pass: &Pass<'_, T>, xg: Var, state: ConvLstmState) -> Result<ConvLstmState> {
        let t = pass.tape();
        let want = [t.shape(xg)[0], self.out_len, self.filters];
        if t.shape(state.h) != want {
            return Err(Error::shapes("conv_lstm_step", &t.shape(state.h), &want));
        }
        let hg = if state.zero { None } else { Some(t.conv1d(state.h, pass.var(self.w_h), 1, self.kernel / 2)?) };
        let peep = [pass.var(self.w_ci), pass.var(self.w_cf), pass.var(self.w_co)];
        let packed = t.lstm_cell(xg, hg, pass.var(self.bias), state.packed, Some(peep))?;
        let h = t.slice(packed, 2, 0, self.filters)?;
        Ok(ConvLstmState { h, packed, zero: false })
    }

    /// Runs the recurrence from a zero state over `seq: (batch, time, in_len,
    /// in_channels)` and returns every hidden state, `(batch, time, out_len, filters)`.
    pub fn forward<T: Real>(&self, pass: &Pass<'_, T>, seq: Var) -> Result<Var> {
        let t = pass.tape();
        let shape = t.shape(seq);
        if shape.len() != 4 || shape[2] != self.in_len || shape[3] != self.in_channels {
            return Err(Error::shapes("conv_lstm_forward", &shape, &[self.in_len, self.in_channels]));
        }
        let (batch, steps) = (shape[0], shape[1]);
        if steps == 0 {
            return Err(Error::shape("conv_lstm_forward", "empty sequence"));
        }
        let g = 4 * self.filters;
        let flat = t.reshape(seq, &[batch * steps, self.in_len, self.in_channels])?;
        let xg_all = t.conv1d(flat, pass.var(self.w_x), self.stride, 0)?;
        let xg_all = t.reshape(xg_all, &[batch, steps, self.out_len * g])?;
        let mut state = self.zero_state(pass, batch);
        let mut hidden = alloc::vec::Vec::with_capacity(steps);
        for step in 0..steps {
            let xg = t.reshape(t.slice(xg_all, 1, step, 1)?, &[batch, self.out_len, g])?;
            state = self.step_gates(pass, xg, state)?;
            hidden.push(t.reshape(state.h, &[batch, 1, self.out_len, self.filters])?);
        }
        t.concat(&hidden, 1)
    }
}

/// Zero gate biases except +1 on the forget gate.
pub(crate) fn forget_biased<T: Real>(units: usize) -> Tensor<T> {
    Tensor::from_fn(&[4 * units], |i| if (units..2 * units).contains(&i) { T::one() } else { T::zero() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{testutil, Mode};
    use crate::tensor::Tape;
    use alloc::vec::Vec;

    fn layer(ps: &mut ParamSet<f64>, len: usize, ch: usize, f: usize, k: usize, s: usize) -> ConvLstm1d {
        ConvLstm1d::new(ps, "cl", len, ch, f, k, s, &mut testutil::rng(11)).unwrap()
    }

    fn zero_all(ps: &mut ParamSet<f64>) {
        for id in ps.ids().collect::<Vec<_>>() {
            let shape = ps.value(id).shape().to_vec();
            ps.set(id, Tensor::zeros(&shape)).unwrap();
        }
    }

    #[test]
    fn zero_weights_halve_the_cell() {
        let mut ps = ParamSet::new();
        let cl = layer(&mut ps, 7, 2, 3, 3, 2);
        zero_all(&mut ps);
        let tape = Tape::new();
        let pass = Pass::new(&tape, &ps, Mode::Eval);
        let mut rng = testutil::rng(1);
        let x = tape.constant(testutil::uniform(&[1, 7, 2], 1.0, &mut rng));
        let h0 = tape.constant(testutil::uniform(&[1, 3, 3], 1.0, &mut rng));
        let c0v = testutil::uniform::<f64>(&[1, 3, 3], 2.0, &mut rng);
        let c0 = tape.constant(c0v.clone());
        let st = cl.step(&pass, x, ConvLstmState::from_parts(&tape, h0, c0).unwrap()).unwrap();
        let c1 = st.cell(&tape).unwrap();
        for ((&c, &h), &prev) in tape.value(c1).data().iter().zip(tape.value(st.h).data()).zip(c0v.data()) {
            assert!((c - 0.5 * prev).abs() < 1e-15);
            assert!((h - 0.5 * c.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_weights_zero_state_stay_zero() {
        let mut ps = ParamSet::new();
        let cl = layer(&mut ps, 5, 1, 2, 3, 1);
        zero_all(&mut ps);
        let tape = Tape::new();
        let pass = Pass::new(&tape, &ps, Mode::Eval);
        let x = tape.constant(testutil::uniform(&[2, 5, 1], 1.0, &mut testutil::rng(2)));
        let st = cl.step(&pass, x, cl.zero_state(&pass, 2)).unwrap();
        assert!(tape.value(st.h).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(st.packed).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_cell_matches_scalar_recurrence() {
        // one filter, one channel, kernel 1: every gate is a scalar equation
        let mut ps = ParamSet::new();
        let cl = layer(&mut ps, 1, 1, 1, 1, 1);
        let mut rng = testutil::rng(5);
        testutil::randomize(&mut ps, 1.0, &mut rng);
        let v = |id: ParamId| ps.value(id).data().to_vec();
        let (wx, wh, b) = (v(cl.w_x), v(cl.w_h), v(cl.bias));
        let (pi, pf, po) = (v(cl.w_ci)[0], v(cl.w_cf)[0], v(cl.w_co)[0]);
        let xs = [0.3, -1.2, 0.8, 0.05];
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let (mut h, mut c) = (0.0f64, 0.0f64);
        let mut want = Vec::new();
        for &x in &xs {
            let i = sig(wx[0] * x + wh[0] * h + pi * c + b[0]);
            let f = sig(wx[1] * x + wh[1] * h + pf * c + b[1]);
            let g = (wx[3] * x + wh[3] * h + b[3]).tanh();
            c = f * c + i * g;
            let o = sig(wx[2] * x + wh[2] * h + po * c + b[2]);
            h = o * c.tanh();
            want.push(h);
        }
        let tape = Tape::new();
        let pass = Pass::new(&tape, &ps, Mode::Eval);
        let seq = tape.constant(Tensor::new(&[1, 4, 1, 1], xs.to_vec()).unwrap());
        let out = cl.forward(&pass, seq).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn default_stack_shapes() {
        let mut ps = ParamSet::<f32>::new();
        let mut rng = testutil::rng(0);
        let l1 = ConvLstm1d::new(&mut ps, "l1", 73, 1, 64, 3, 3, &mut rng).unwrap();
        let l2 = ConvLstm1d::new(&mut ps, "l2", 24, 64, 32, 3, 2, &mut rng).unwrap();
        assert_eq!((l1.out_len, l2.out_len), (24, 11));
        let tape = Tape::new();
        let pass = Pass::new(&tape, &ps, Mode::Eval);
        let x = tape.constant(Tensor::zeros(&[1, 4, 73, 1]));
        let y = l1.forward(&pass, x).unwrap();
        assert_eq!(tape.shape(y), [1, 4, 24, 64]);
        let z = l2.forward(&pass, y).unwrap();
        assert_eq!(tape.shape(z), [1, 4, 11, 32]);
    }

    #[test]
    fn single_timestep_equals_one_step() {
        let mut ps = ParamSet::new();
        let cl = layer(&mut ps, 6, 2, 2, 3, 1);
        testutil::randomize(&mut ps, 0.5, &mut testutil::rng(8));
        let tape = Tape::new();
        let pass = Pass::new(&tape, &ps, Mode::Eval);
        let xv = testutil::uniform::<f64>(&[1, 6, 2], 1.0, &mut testutil::rng(9));
        let x = tape.constant(xv.clone());
        let st = cl.step(&pass, x, cl.zero_state(&pass, 1)).unwrap();
        let seq = tape.constant(xv.reshape(&[1, 1, 6, 2]).unwrap());
        let out = cl.forward(&pass, seq).unwrap();
        assert_eq!(tape.value(out).data(), tape.value(st.h).data());
    }

    #[test]
    fn state_length_mismatch_is_shape_error() {
        let mut ps = ParamSet::new();
        let cl = layer(&mut ps, 6, 1, 2, 3, 1);
        let tape = Tape::new();
        let pass = Pass::new(&tape, &ps, Mode::Eval);
        let x = tape.constant(Tensor::zeros(&[1, 6, 1]));
        let bad = tape.constant(Tensor::zeros(&[1, 3, 2]));
        let st = ConvLstmState::from_parts(&tape, bad, bad).unwrap();
        assert!(matches!(cl.step(&pass, x, st), Err(Error::Shape { .. })));
    }

    #[test]
    fn even_kernel_rejected() {
        let mut ps = ParamSet::<f32>::new();
        assert!(matches!(
            ConvLstm1d::new(&mut ps, "x", 8, 1, 2, 2, 1, &mut testutil::rng(0)),
            Err(Error::Config(_))
        ));
    }
}
