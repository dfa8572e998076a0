//! FLOPs-constrained filter pruning driven by weight-conditioned gates.
//!
//! The crate is layered bottom-up: [`tensor`] and [`autodiff`] provide a small
//! reverse-mode engine, [`graph`] builds gated networks on top of it, [`flops`]
//! prices a gate assignment, [`dagger`] generates gates from weights, and
//! [`pruner`] runs the constrained prune/finetune loop. [`data`] covers
//! datasets, checkpoints and reports; [`cli`] wires everything to the
//! `dagger` binary.

pub mod autodiff;
pub mod cli;
pub mod dagger;
pub mod data;
pub mod error;
pub mod flops;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod pruner;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
