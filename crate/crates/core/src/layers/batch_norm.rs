use super::{ParamId, ParamSet, Pass, Role};
use crate::tensor::{Tensor, Var};
use crate::{Error, Real, Result};

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.9;

/// Per-channel normalization over every axis but the last.
///
/// Batch statistics are used only when the pass trains this layer; the
/// running statistics are then blended as
/// `running = momentum * running + (1 - momentum) * batch`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new<T: Real>(params: &mut ParamSet<T>, name: &str, channels: usize) -> Self {
        let scale = params.add(alloc::format!("{name}.scale"), Tensor::full(&[channels], T::one()), Role::Weight);
        let shift = params.add(alloc::format!("{name}.shift"), Tensor::zeros(&[channels]), Role::Weight);
        let running_mean = params.add(alloc::format!("{name}.running_mean"), Tensor::zeros(&[channels]), Role::Buffer);
        let running_var = params.add(alloc::format!("{name}.running_var"), Tensor::full(&[channels], T::one()), Role::Buffer);
        BatchNorm1d {
            scale,
            shift,
            running_mean,
            running_var,
            channels,
            momentum: BATCH_NORM_MOMENTUM,
            eps: BATCH_NORM_EPS,
        }
    }

    pub fn forward<T: Real>(&self, pass: &Pass<'_, T>, x: Var) -> Result<Var> {
        let tape = pass.tape();
        if tape.shape(x).last() != Some(&self.channels) {
            return Err(Error::shapes("batch_norm", &tape.shape(x), &[self.channels]));
        }
        let (scale, shift) = (pass.var(self.scale), pass.var(self.shift));
        let eps = T::of(self.eps);
        if !pass.trains(self.scale) {
            let ps = pass.params();
            let running = (ps.value(self.running_mean).data(), ps.value(self.running_var).data());
            return Ok(tape.batch_norm(x, scale, shift, Some(running), eps)?.0);
        }
        let (y, stats) = tape.batch_norm(x, scale, shift, None, eps)?;
        if let Some((mean, var)) = stats {
            let ps = pass.params();
            let m = T::of(self.momentum);
            let blend = |run: &Tensor<T>, batch: &[T]| {
                Tensor::from_fn(&[self.channels], |i| m * run.data()[i] + (T::one() - m) * batch[i])
            };
            pass.record_update(self.running_mean, blend(ps.value(self.running_mean), &mean));
            pass.record_update(self.running_var, blend(ps.value(self.running_var), &var));
        }
        Ok(y)
    }
}
