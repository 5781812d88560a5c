//! Mobile recording-device identification.
//!
//! The crate is `no_std` (with `alloc`) and carries everything that is pure
//! computation: the tandem MFCC front end, a small reverse-mode autodiff
//! engine, the ConvLSTM / BiLSTM / transformer-encoder layers, the model
//! topologies, training and evaluation, and a synthetic device corpus.
//! File formats, WAV IO and the command line live in the `devid` crate.
//!
//! Enable the `std` feature (default) for runtime SIMD dispatch in the matrix
//! kernels, and `parallel` to split large matrix products across a rayon pool.
#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_op_in_unsafe_fn)]

extern crate alloc;

pub mod audio;
mod error;
pub mod featkit;
pub mod layers;
pub mod model;
mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod verify;

pub use audio::{segment, AudioClip};
pub use error::{Error, Result};
pub use featkit::{extract_tandem, FrameSpec, TandemFeature, Window};
pub use model::{ablation_config, DeviceIdModel, ModelConfig, TokenScheme};

pub use scalar::Real;
pub use tensor::{conv1d_out_len, finite_diff_check, Gradients, Tape, Tensor, Var};
