//! End-to-end stimulus optimization for a simulated retinal prosthesis.
//!
//! A phosphene renderer ([`phosphene`]) acts as ground truth for a
//! differentiable surrogate implant model. A convolutional encoder is then
//! trained through the frozen surrogate and a frozen digit classifier
//! ([`train`]) and scored with the analyses in [`eval`].

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod phosphene;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
