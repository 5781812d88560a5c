//! Differentiable layers and the parameter store they draw from.
//!
//! Layers do not own tensors. Each one registers its parameters in a shared
//! [`ParamSet`] at construction and keeps [`ParamId`]s; a forward call goes
//! through a [`Pass`], which binds parameters onto a tape on first use.

mod attention;
mod batch_norm;
mod conv_lstm;
mod dense;
mod encoder;
mod layer_norm;
mod lstm;

use alloc::string::String;
use alloc::vec::Vec;
use core::cell::RefCell;

use rand::Rng;

pub use attention::{attention, MultiHeadAttention};
pub use batch_norm::BatchNorm1d;
pub use conv_lstm::{ConvLstm1d, ConvLstmState};
pub use dense::{Activation, Dense};
pub use encoder::{positional_encoding, EncoderBlock};
pub use layer_norm::LayerNorm;
pub use lstm::{BiLstm, Lstm};

use crate::tensor::{Gradients, Tape, Tensor, Var};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Optimized by gradient descent.
    Weight,
    /// State updated outside the optimizer (batch-norm running statistics).
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub role: Role,
    pub frozen: bool,
}

/// Ordered, named parameter storage for one model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    entries: Vec<Param<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, role: Role) -> ParamId {
        self.entries.push(Param { name: name.into(), value, role, frozen: false });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total scalar count of all weights and buffers.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        let p = &self.entries[id.0];
        p.role == Role::Weight && !p.frozen
    }

    pub fn set_frozen_all(&mut self, frozen: bool) {
        self.entries.iter_mut().for_each(|p| p.frozen = frozen);
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), role: p.role, frozen: p.frozen })
                .collect(),
        }
    }

    /// Replaces the value of `id` with a tensor of any shape.
    pub fn replace(&mut self, id: ParamId, value: Tensor<T>) {
        self.entries[id.0].value = value;
    }

    /// Replaces the value of `id`, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.entries[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::ParamMismatch(alloc::format!(
                "{}: shape {:?} != {:?}",
                p.name,
                value.shape(),
                p.value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward evaluation: a tape plus lazily bound parameters.
pub struct Pass<'a, T: Real> {
    tape: &'a Tape<T>,
    params: &'a ParamSet<T>,
    mode: Mode,
    bound: RefCell<Vec<Option<Var>>>,
    updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
}

impl<'a, T: Real> Pass<'a, T> {
    pub fn new(tape: &'a Tape<T>, params: &'a ParamSet<T>, mode: Mode) -> Self {
        Pass {
            tape,
            params,
            mode,
            bound: RefCell::new(alloc::vec![None; params.len()]),
            updates: RefCell::new(Vec::new()),
        }
    }

    pub fn tape(&self) -> &'a Tape<T> {
        self.tape
    }

    pub fn params(&self) -> &'a ParamSet<T> {
        self.params
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Whether `id` receives a gradient in this pass.
    pub fn trains(&self, id: ParamId) -> bool {
        self.mode == Mode::Train && self.params.is_trainable(id)
    }

    /// Tape handle for a parameter, binding it on first use.
    pub fn var(&self, id: ParamId) -> Var {
        if let Some(v) = self.bound.borrow()[id.0] {
            return v;
        }
        let value = self.params.value(id).clone();
        let v = if self.trains(id) { self.tape.param(value) } else { self.tape.constant(value) };
        self.bound.borrow_mut()[id.0] = Some(v);
        v
    }

    /// Uses `var` for parameter `id` instead of binding its stored value.
    pub fn bind(&self, id: ParamId, var: Var) {
        self.bound.borrow_mut()[id.0] = Some(var);
    }

    pub fn record_update(&self, id: ParamId, value: Tensor<T>) {
        self.updates.borrow_mut().push((id, value));
    }

    /// Buffer updates (running statistics) produced during the pass.
    pub fn take_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        core::mem::take(&mut *self.updates.borrow_mut())
    }

    /// Gradients aligned with the parameter set; `None` for parameters that
    /// were not trained in this pass.
    pub fn param_grads(&self, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.bound
            .borrow()
            .iter()
            .enumerate()
            .map(|(i, v)| match v {
                Some(v) if self.trains(ParamId(i)) => {
                    Some(grads.take(*v).unwrap_or_else(|| Tensor::zeros(self.params.value(ParamId(i)).shape())))
                }
                _ => None,
            })
            .collect()
    }
}

/// Uniform Glorot initialization, `limit = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let limit = num_traits::Float::sqrt(6.0 / (fan_in + fan_out).max(1) as f64);
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-limit..=limit)))
}
