//! Desk-scale digital twin of a power side-channel threat detector for AI
//! accelerators.
//!
//! The pipeline simulates victim-model inference on an int8 accelerator,
//! converts the per-cycle operand traffic into supply-voltage drop through a
//! PDN model, samples it with a time-to-digital converter, and classifies the
//! resulting traces as benign / adversarial / backdoor / model-extraction.
//! A black-box NES evasion attack stress-tests the detector.
//!
//! The crate is `no_std`-compatible (`alloc` required); IO, file formats and
//! the CLI live in the companion `powertrace-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(feature = "std")]
extern crate std;

pub mod avoidance;
pub mod batch;
pub mod detector;
pub mod gradcheck;
pub mod layers;
pub mod leakage;
pub mod loss;
pub mod network;
pub mod quant;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod synth;
pub mod tdc;
pub mod tensor;
pub mod train;
pub mod victim;

pub mod attacks;

pub use network::Network;
pub use rng::Rng;
pub use tensor::Tensor;
