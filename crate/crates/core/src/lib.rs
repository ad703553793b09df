//! Numerical core for unrolled-optimization CSI feedback.
//!
//! The crate is `no_std` (it needs `alloc`) and carries no I/O. It covers
//! the whole pipeline a user equipment and base station run for downlink
//! CSI feedback:
//!
//! - [`channel`]: single-bounce spherical-wave geometric channel synthesis.
//! - [`transform`]: spatial-frequency to truncated angular-delay CSI and back.
//! - [`ista`]: the classical shrinkage-thresholding baseline.
//! - [`lora`]: linear encoder plus unrolled decoder blocks sharing one MLP
//!   that stands in for the regularizer gradient, with hand-written
//!   reverse-mode gradients.
//! - [`quant`]: uniform quantizer, bit packing and straight-through /
//!   learnable scale and zero-point gradients.
//! - [`train`]: loss, NMSE, AWGN corruption, ADAM and the end-to-end trainer.
//!
//! Enable the `std` feature for runtime CPU detection in the GEMM kernels.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod channel;
mod error;
pub mod ista;
pub mod linalg;
pub mod lora;
pub mod quant;
pub mod rng;
pub mod train;
pub mod transform;

pub use error::{Error, Result};
