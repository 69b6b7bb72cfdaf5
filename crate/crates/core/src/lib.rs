//! Joint training of a masking speech-enhancement front-end with a
//! Conformer CTC/attention recognizer, on a synthetic radio-channel corpus.
//!
//! Everything here is self-contained: a reverse-mode autodiff tape
//! ([`tensor`]), deterministic DSP kernels ([`signal`]), the neural building
//! blocks ([`layers`]), the enhancement and recognition networks ([`se`],
//! [`asr`]), corpus synthesis ([`corpus`]), training modes ([`train`]) and
//! scoring ([`eval`]).
//!
//! Core math is generic over the scalar type: `f64` is used by the test and
//! oracle suites, `f32` by the training paths. Concrete aliases for the most
//! common instantiations live at the crate root.

pub mod asr;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod scalar;
pub mod se;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training-precision tensor.
pub type Tensor32 = tensor::Tensor<f32>;
/// Test/oracle-precision tensor.
pub type Tensor64 = tensor::Tensor<f64>;
/// Training-precision tape.
pub type Tape32 = tensor::Tape<f32>;
/// Test/oracle-precision tape.
pub type Tape64 = tensor::Tape<f64>;
/// Training-precision waveform.
pub type Waveform32 = signal::Waveform<f32>;
/// Test/oracle-precision waveform.
pub type Waveform64 = signal::Waveform<f64>;
