use alloc::string::ToString;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::layers::ParamSet;
use crate::tensor::Tensor;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of `param` in place; `t` is the 1-based
/// step index after increment.
pub fn adam_update<T: Real>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], t: u64, lr: f64, hp: &AdamHyper) {
    let (b1, b2) = (T::of(hp.beta1), T::of(hp.beta2));
    let one = T::one();
    let c1 = one / (one - T::of(powu(hp.beta1, t)));
    let c2 = one / (one - T::of(powu(hp.beta2, t)));
    let (lr, eps) = (T::of(lr), T::of(hp.eps));
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] * c1;
        let v_hat = v[i] * c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

fn powu(base: f64, exp: u64) -> f64 {
    num_traits::Float::powf(base, exp as f64)
}

/// First and second moment estimates for every parameter of a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>, hyper: AdamHyper) -> Self {
        let zeros = || params.iter().map(|(_, p)| alloc::vec![T::zero(); p.value.len()]).collect();
        AdamState { m: zeros(), v: zeros(), t: 0, hyper }
    }

    /// Applies one step to every parameter that has a gradient.
    ///
    /// Gradients are validated before any parameter moves; a non-finite
    /// entry aborts with the parameter's name.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::ParamMismatch(alloc::format!(
                "{} gradients / {} moments for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            if let Some(g) = g {
                if g.shape() != params.value(id).shape() {
                    return Err(Error::shapes("adam_step", g.shape(), params.value(id).shape()));
                }
                if !g.all_finite() {
                    return Err(Error::NonFiniteGradient { param: params.get(id).name.to_string() });
                }
            }
        }
        self.t += 1;
        for (id, g) in params.ids().collect::<Vec<_>>().into_iter().zip(grads) {
            let Some(g) = g else { continue };
            let i = id.index();
            let p = &mut params.get_mut(id).value;
            adam_update(p.data_mut(), g.data(), &mut self.m[i], &mut self.v[i], self.t, lr, &self.hyper);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_sign_scaled() {
        let hp = AdamHyper::default();
        let g = [0.5f64, -2.0, 1e-3];
        let mut p = [1.0f64, 1.0, 1.0];
        let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
        adam_update(&mut p, &g, &mut m, &mut v, 1, 0.01, &hp);
        for i in 0..3 {
            let want = 1.0 - 0.01 * g[i] / (g[i].abs() + 1e-8);
            assert!((p[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let hp = AdamHyper::default();
        let mut p = [0.3f32, -0.7];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        for t in 1..=5 {
            adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, t, 0.1, &hp);
        }
        assert_eq!(p, [0.3, -0.7]);
    }

    #[test]
    fn memoryless_moments_repeat_first_step() {
        let hp = AdamHyper { beta1: 0.0, beta2: 0.0, eps: 1e-8 };
        let mut p = [0.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        for (t, g) in [(1, 0.2), (2, -3.0), (3, 0.05)] {
            let before = p[0];
            adam_update(&mut p, &[g], &mut m, &mut v, t, 0.1, &hp);
            assert!((p[0] - (before - 0.1 * g / (g.abs() + 1e-8))).abs() < 1e-12);
        }
    }
}
