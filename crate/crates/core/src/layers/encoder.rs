use alloc::vec::Vec;

use rand::Rng;

use super::{Activation, Dense, LayerNorm, MultiHeadAttention, ParamSet, Pass};
use crate::tensor::{Tensor, Var};
use crate::{Real, Result};

/// Post-norm transformer encoder block without a leading normalization:
/// `h = LN(x + MHA(x))`, `out = LN(h + W2 relu(W1 h + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff_in: Dense,
    pub ff_out: Dense,
    pub norm2: LayerNorm,
}

impl EncoderBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        head_dim: usize,
        ff_units: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let attention = MultiHeadAttention::new(params, &alloc::format!("{name}.attn"), d_model, heads, head_dim, rng)?;
        let norm1 = LayerNorm::new(params, &alloc::format!("{name}.ln1"), d_model);
        let ff_in = Dense::new(params, &alloc::format!("{name}.ff1"), d_model, ff_units, Activation::Relu, rng);
        let ff_out = Dense::new(params, &alloc::format!("{name}.ff2"), ff_units, d_model, Activation::Linear, rng);
        let norm2 = LayerNorm::new(params, &alloc::format!("{name}.ln2"), d_model);
        Ok(EncoderBlock { attention, norm1, ff_in, ff_out, norm2 })
    }

    pub fn forward<T: Real>(&self, pass: &Pass<'_, T>, x: Var) -> Result<Var> {
        let t = pass.tape();
        let h = self.norm1.forward(pass, t.add(x, self.attention.forward(pass, x)?)?)?;
        let ff = self.ff_out.forward(pass, self.ff_in.forward(pass, h)?)?;
        self.norm2.forward(pass, t.add(h, ff)?)
    }
}

/// Sinusoidal position table `(tokens, width)`: even columns `sin`, odd
/// columns `cos`, wavelength base 10000.
pub fn positional_encoding<T: Real>(tokens: usize, width: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(tokens * width);
    for pos in 0..tokens {
        for i in 0..width {
            let pair = (i / 2 * 2) as f64;
            let angle = pos as f64 / num_traits::Float::powf(10000.0f64, pair / width as f64);
            data.push(T::of(if i % 2 == 0 { num_traits::Float::sin(angle) } else { num_traits::Float::cos(angle) }));
        }
    }
    Tensor::new(&[tokens, width], data).expect("table length matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{testutil, Mode};
    use crate::tensor::Tape;

    #[test]
    fn zero_sublayer_outputs_reduce_to_double_norm() {
        let mut ps = ParamSet::<f64>::new();
        let enc = EncoderBlock::new(&mut ps, "e", 4, 2, 3, 8, &mut testutil::rng(0)).unwrap();
        testutil::randomize(&mut ps, 0.5, &mut testutil::rng(1));
        for id in [enc.attention.w_o, enc.ff_out.weight, enc.ff_out.bias] {
            let s = ps.value(id).shape().to_vec();
            ps.set(id, Tensor::zeros(&s)).unwrap();
        }
        let tape = Tape::new();
        let pass = Pass::new(&tape, &ps, Mode::Eval);
        let x = tape.constant(testutil::uniform(&[5, 4], 2.0, &mut testutil::rng(2)));
        let got = enc.forward(&pass, x).unwrap();
        let want = enc.norm2.forward(&pass, enc.norm1.forward(&pass, x).unwrap()).unwrap();
        assert_eq!(tape.shape(got), [5, 4]);
        for (a, b) in tape.value(got).data().iter().zip(tape.value(want).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_blocks_stack() {
        let mut ps = ParamSet::<f32>::new();
        let mut rng = testutil::rng(0);
        let blocks: Vec<_> = (0..2).map(|i| EncoderBlock::new(&mut ps, &alloc::format!("e{i}"), 16, 8, 64, 128, &mut rng).unwrap()).collect();
        let tape = Tape::new();
        let pass = Pass::new(&tape, &ps, Mode::Eval);
        let mut x = tape.constant(testutil::uniform(&[2, 16, 16], 1.0, &mut testutil::rng(1)));
        for b in &blocks {
            x = b.forward(&pass, x).unwrap();
        }
        assert_eq!(tape.shape(x), [2, 16, 16]);
        assert!(tape.value(x).all_finite());
    }

    #[test]
    fn positional_table_first_rows() {
        let pe = positional_encoding::<f64>(2, 4);
        assert_eq!(&pe.data()[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.data()[4] - 1f64.sin()).abs() < 1e-15);
        assert!((pe.data()[6] - (0.01f64).sin()).abs() < 1e-15);
    }
}
