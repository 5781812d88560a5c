//! Central-difference verification of tape gradients.

use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::{Error, Real, Result};

/// Outcome of a finite-difference check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `max |a - n| / max(1, |a|, |n|)` over all coordinates.
    pub max_error: f64,
    /// (input index, coordinate) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coords: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_error < tol
    }
}

fn eval_scalar<T: Real, F>(f: &F, points: &[Tensor<T>]) -> Result<f64>
where
    F: Fn(&Tape<T>, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::shape("finite_diff_check", "function must return a scalar"));
    }
    Ok(v.data()[0].as_f64())
}

/// Compares reverse-mode gradients of the scalar function `f` at `points`
/// against central differences `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`.
pub fn finite_diff_check<T: Real, F>(f: F, points: &[Tensor<T>], eps: T) -> Result<GradCheck>
where
    F: Fn(&Tape<T>, &[Var]) -> Result<Var>,
{
    finite_diff_check_with(f, points, eps, |_, _| {})
}

/// Like [`finite_diff_check`], but `tamper` may rewrite each analytic
/// gradient (by input index) before comparison. Used to prove the check
/// catches a wrong gradient.
pub fn finite_diff_check_with<T: Real, F, G>(f: F, points: &[Tensor<T>], eps: T, mut tamper: G) -> Result<GradCheck>
where
    F: Fn(&Tape<T>, &[Var]) -> Result<Var>,
    G: FnMut(usize, &mut Tensor<T>),
{
    let tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&tape, &vars)?;
    let mut grads = tape.backward(loss)?;
    drop(tape);
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(points)
        .enumerate()
        .map(|(i, (v, p))| {
            let mut g = grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape()));
            tamper(i, &mut g);
            g
        })
        .collect();

    let mut report = GradCheck { max_error: 0.0, worst: None, analytic: 0.0, numeric: 0.0, coords: 0 };
    let mut work: Vec<Tensor<T>> = points.to_vec();
    let two_eps = 2.0 * eps.as_f64();
    for (i, g) in analytic.iter().enumerate() {
        for j in 0..points[i].len() {
            let orig = points[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let fp = eval_scalar(&f, &work)?;
            work[i].data_mut()[j] = orig - eps;
            let fm = eval_scalar(&f, &work)?;
            work[i].data_mut()[j] = orig;
            // the perturbation actually applied, after rounding to T
            let step = (orig + eps).as_f64() - (orig - eps).as_f64();
            let numeric = (fp - fm) / if step > 0.0 { step } else { two_eps };
            let a = g.data()[j].as_f64();
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.coords += 1;
            if err > report.max_error || report.worst.is_none() {
                report.max_error = err;
                report.worst = Some((i, j));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::<f64>::new(&[4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let r = finite_diff_check(
            |t, v| {
                let s = t.scale(v[0], 3.0)?;
                t.sum(s)
            },
            &[x],
            1e-3,
        )
        .unwrap();
        assert!(r.max_error < 1e-10, "{r:?}");
    }

    #[test]
    fn doubled_gradient_is_caught() {
        let x = Tensor::<f64>::new(&[3], vec![0.9, -0.8, 1.1]).unwrap();
        let f = |t: &Tape<f64>, v: &[Var]| {
            let s = t.scale(v[0], 2.0)?;
            t.sum(s)
        };
        let r = finite_diff_check_with(f, &[x], 1e-3, |_, g| g.data_mut().iter_mut().for_each(|v| *v *= 2.0)).unwrap();
        assert!((r.max_error - 0.5).abs() < 1e-9, "{r:?}");
    }
}
