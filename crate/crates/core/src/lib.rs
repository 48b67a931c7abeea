//! A small CPU neural-network engine built around explicit computation
//! graphs, with the building blocks needed for multi-scale pose models:
//! dense NCHW tensors and their forward/backward kernels, reverse-mode
//! differentiation with per-node branch-degree bookkeeping, branch-aware
//! weight initialization, pyramid residual modules, stacked-hourglass
//! assembly, Monte-Carlo variance probes, and a synthetic articulated
//! figure generator.
//!
//! The crate is `no_std` + `alloc`; everything that touches the file
//! system (CLI, dataset layout, checkpoints, CSV reports) lives in the
//! companion `pyranet` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod graph;
pub mod init;
pub mod pose;
pub mod prm;
pub mod real;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod varlab;

pub use error::{Error, Result};
pub use real::{Dtype, Real};
pub use tensor::{Shape, Tensor};
