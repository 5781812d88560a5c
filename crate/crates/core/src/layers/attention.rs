use rand::Rng;

use super::{glorot, ParamId, ParamSet, Pass, Role};
use crate::tensor::{Tape, Var};
use crate::{Error, Real, Result};

/// Scaled dot-product attention, `softmax(Q K^T / sqrt(d_k)) V`.
///
/// Accepts `(tokens, d)` operands or a leading group axis `(G, tokens, d)`.
pub fn attention<T: Real>(tape: &Tape<T>, q: Var, k: Var, v: Var) -> Result<Var> {
    let (qs, ks, vs) = (tape.shape(q), tape.shape(k), tape.shape(v));
    let rank = qs.len();
    if !(2..=3).contains(&rank) || ks.len() != rank || vs.len() != rank {
        return Err(Error::shapes("attention", &qs, &ks));
    }
    let dk = qs[rank - 1];
    if ks[rank - 1] != dk || ks[rank - 2] != vs[rank - 2] || qs[..rank - 2] != ks[..rank - 2] || ks[..rank - 2] != vs[..rank - 2] {
        return Err(Error::shapes("attention", &qs, &ks));
    }
    if qs[rank - 2] == 0 || ks[rank - 2] == 0 || dk == 0 {
        return Err(Error::shape("attention", "zero-token input"));
    }
    let lift = |x: Var, s: &[usize]| if rank == 2 { tape.reshape(x, &[1, s[0], s[1]]) } else { Ok(x) };
    let (q3, k3, v3) = (lift(q, &qs)?, lift(k, &ks)?, lift(v, &vs)?);
    let scores = tape.batch_matmul(q3, k3, true)?;
    let scores = tape.scale(scores, T::one() / T::of(dk as f64).sqrt())?;
    let weights = tape.softmax(scores)?;
    let out = tape.batch_matmul(weights, v3, false)?;
    if rank == 2 {
        tape.reshape(out, &[qs[0], vs[1]])
    } else {
        Ok(out)
    }
}

/// Multi-head self-attention with per-head projections of width `head_dim`
/// packed column-wise into `(d_model, heads * head_dim)` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    /// `(heads * head_dim, d_model)`
    pub w_o: ParamId,
    pub d_model: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        head_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if d_model == 0 || heads == 0 || head_dim == 0 {
            return Err(Error::Config(alloc::format!("{name}: attention sizes must be positive")));
        }
        let inner = heads * head_dim;
        let mut proj = |p: &str, rows: usize, cols: usize, rng: &mut R| {
            params.add(alloc::format!("{name}.{p}"), glorot(&[rows, cols], rows, cols, rng), Role::Weight)
        };
        let w_q = proj("w_q", d_model, inner, rng);
        let w_k = proj("w_k", d_model, inner, rng);
        let w_v = proj("w_v", d_model, inner, rng);
        let w_o = proj("w_o", inner, d_model, rng);
        Ok(MultiHeadAttention { w_q, w_k, w_v, w_o, d_model, heads, head_dim })
    }

    /// `x: (tokens, d_model)` or `(batch, tokens, d_model)`; same shape out.
    pub fn forward<T: Real>(&self, pass: &Pass<'_, T>, x: Var) -> Result<Var> {
        let t = pass.tape();
        let shape = t.shape(x);
        let (batch, tokens) = match shape[..] {
            [n, d] if d == self.d_model => (1, n),
            [b, n, d] if d == self.d_model => (b, n),
            _ => return Err(Error::shapes("multi_head_attention", &shape, &[self.d_model])),
        };
        let (h, dk) = (self.heads, self.head_dim);
        let split = |w: ParamId| -> Result<Var> {
            let p = t.reshape(t.matmul(x, pass.var(w))?, &[batch, tokens, h, dk])?;
            t.reshape(t.permute(p, &[0, 2, 1, 3])?, &[batch * h, tokens, dk])
        };
        let (q, k, v) = (split(self.w_q)?, split(self.w_k)?, split(self.w_v)?);
        let heads = t.reshape(attention(t, q, k, v)?, &[batch, h, tokens, dk])?;
        let joined = t.reshape(t.permute(heads, &[0, 2, 1, 3])?, &[batch, tokens, h * dk])?;
        let out = t.matmul(joined, pass.var(self.w_o))?;
        t.reshape(out, &shape)
    }
}
