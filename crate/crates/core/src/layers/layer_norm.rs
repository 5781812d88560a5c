use super::{ParamId, ParamSet, Pass, Role};
use crate::tensor::{Tensor, Var};
use crate::{Real, Result};

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Normalization across the last axis with learned gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub width: usize,
}

impl LayerNorm {
    pub fn new<T: Real>(params: &mut ParamSet<T>, name: &str, width: usize) -> Self {
        let gain = params.add(alloc::format!("{name}.gain"), Tensor::full(&[width], T::one()), Role::Weight);
        let bias = params.add(alloc::format!("{name}.bias"), Tensor::zeros(&[width]), Role::Weight);
        LayerNorm { gain, bias, width }
    }

    pub fn forward<T: Real>(&self, pass: &Pass<'_, T>, x: Var) -> Result<Var> {
        pass.tape().layer_norm(x, pass.var(self.gain), pass.var(self.bias), T::of(LAYER_NORM_EPS))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::tensor::Tape;

    fn run(x: &[f64]) -> alloc::vec::Vec<f64> {
        let mut ps = ParamSet::<f64>::new();
        let ln = LayerNorm::new(&mut ps, "ln", x.len());
        let tape = Tape::new();
        let pass = Pass::new(&tape, &ps, Mode::Eval);
        let v = tape.constant(Tensor::new(&[x.len()], x.to_vec()).unwrap());
        let y = ln.forward(&pass, v).unwrap();
        let out = tape.value(y).data().to_vec();
        out
    }

    #[test]
    fn three_element_example() {
        let y = run(&[1.0, 2.0, 3.0]);
        let s = libm_sqrt(2.0 / 3.0 + 1e-6);
        let want = [-1.0 / s, 0.0, 1.0 / s];
        for (a, b) in y.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((y[2] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn constant_input_gives_zeros() {
        assert!(run(&[4.0; 6]).iter().all(|&v| v == 0.0));
    }

    fn libm_sqrt(v: f64) -> f64 {
        num_traits::Float::sqrt(v)
    }
}
