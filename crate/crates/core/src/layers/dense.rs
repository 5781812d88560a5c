use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot, ParamId, ParamSet, Pass, Role};
use crate::tensor::{Tensor, Var};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
}

/// Affine map over the last axis, `y = act(x W + b)` with `W: (in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let weight = params.add(alloc::format!("{name}.weight"), glorot(&[input, output], input, output, rng), Role::Weight);
        let bias = params.add(alloc::format!("{name}.bias"), Tensor::zeros(&[output]), Role::Weight);
        Dense { weight, bias, input, output, activation }
    }

    pub fn forward<T: Real>(&self, pass: &Pass<'_, T>, x: Var) -> Result<Var> {
        let tape = pass.tape();
        if tape.shape(x).last() != Some(&self.input) {
            return Err(Error::shapes("dense", &tape.shape(x), &[self.input, self.output]));
        }
        let y = tape.matmul(x, pass.var(self.weight))?;
        let y = tape.add_bias(y, pass.var(self.bias))?;
        match self.activation {
            Activation::Linear => Ok(y),
            Activation::Relu => tape.relu(y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{testutil, Mode};
    use crate::tensor::Tape;

    #[test]
    fn matches_hand_affine_map() {
        let mut ps = ParamSet::<f64>::new();
        let d = Dense::new(&mut ps, "d", 2, 3, Activation::Relu, &mut testutil::rng(0));
        ps.set(d.weight, Tensor::new(&[2, 3], vec![1.0, -1.0, 0.5, 2.0, 0.0, -0.5]).unwrap()).unwrap();
        ps.set(d.bias, Tensor::new(&[3], vec![0.0, 0.5, -1.0]).unwrap()).unwrap();
        let tape = Tape::new();
        let pass = Pass::new(&tape, &ps, Mode::Eval);
        let x = tape.constant(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
        let y = d.forward(&pass, x).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, 0.0, 0.0]);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let mut ps = ParamSet::<f32>::new();
        let d = Dense::new(&mut ps, "d", 4, 3, Activation::Linear, &mut testutil::rng(0));
        let tape = Tape::new();
        let pass = Pass::new(&tape, &ps, Mode::Eval);
        let x = tape.constant(Tensor::zeros(&[2, 5]));
        assert!(matches!(d.forward(&pass, x), Err(Error::Shape { .. })));
    }
}
