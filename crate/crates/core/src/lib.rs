//! Priority-aware semantic image transmission over time-varying fading channels.
//!
//! A learned convolutional codec maps an image to a stack of feature maps. Each
//! feature map is sent on its own block-fading slot. The transmitter scores
//! features by importance and robustness, forecasts the next slots' channel
//! gains with an LSTM, and places the highest-priority features on the
//! strongest predicted slots. The receiver undoes the permutation before
//! decoding.
//!
//! Modules, bottom up:
//! - [`tensor`], [`tape`], [`nn`], [`params`]: dense tensors, reverse-mode
//!   differentiation, layers and Adam.
//! - [`codec`]: encoder/decoder, symbol mapping, loss and training.
//! - [`channel`]: sum-of-sinusoids Rayleigh fading, AWGN, equalization.
//! - [`predictor`]: LSTM rolling forecast of channel coefficients.
//! - [`priority`]: gradient importance, adversarial robustness, priority.
//! - [`distill`]: student networks that approximate the priority teachers.
//! - [`arrange`]: slot assignment and its inverse.
//! - [`data`], [`eval`]: datasets, scheme matrix, sweeps and reports.

pub mod arrange;
pub mod channel;
pub mod codec;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kernels;
pub mod nn;
pub mod params;
pub mod predictor;
pub mod priority;
pub mod rng;
pub mod stats;
pub mod tape;
pub mod tensor;

pub use channel::{CsiSequence, Equalizer, SosChannel, SosConfig};
pub use codec::{Codec, FeatureTensor, Geometry, Image, SymbolVector};
pub use error::{Error, Result};
pub use params::ParamSet;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
