//! Core of the attune testbed: a dual-encoder speech-text model with
//! prompt-scaled low-rank adaptation, trained by a two-stage curriculum on
//! synthetic symbolic tasks.
//!
//! Everything numerical lives here, behind a small tape-based reverse-mode
//! autodiff substrate ([`tensor`]):
//!
//! - [`encoders`]: frozen synthetic semantic/acoustic encoders and the
//!   learnable layer-weighted sum over acoustic layers
//! - [`adapters`]: conv-downsample + bottleneck modality adapters and the
//!   concat-then-project fusion into the backbone embedding space
//! - [`backbone`]: a frozen decoder-only transformer with LoRA injected on
//!   the attention q/k/v/o projections
//! - [`prompt_adapter`]: the attention-pooled bottleneck network mapping
//!   prompt hidden states to a per-dimension LoRA scaling vector
//! - [`model`]: the assembled pipeline (template rendering to loss/greedy
//!   generation)
//! - [`taskforge`]: deterministic symbolic task generators, prompt banks,
//!   and the chat template
//! - [`trainer`]: two-stage curriculum loop with Adam, warmup/decay schedule,
//!   parameter freezing, and loss masking
//! - [`evalsuite`]: WER/BLEU/ROUGE/accuracy/IFR metrics, robustness and
//!   CoT comparisons, scaling-vector export with PCA
//!
//! The crate is `no_std` (alloc required); all IO, file formats, and the
//! command-line driver live in the companion `attune-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod adapters;
pub mod backbone;
pub mod config;
pub mod encoders;
pub mod error;
pub mod evalsuite;
pub mod math;
pub mod model;
pub mod params;
pub mod prompt_adapter;
pub mod rng;
pub mod taskforge;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
