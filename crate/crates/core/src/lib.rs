//! Multi-hop knowledge-graph reasoning over sparse graphs.
//!
//! The crate is split along the pipeline: a triple store with adjacency
//! indexes ([`kg`]), a small reverse-mode autodiff layer ([`autodiff`]),
//! embedding score models ([`kge`]), the walk environment ([`env`]), the
//! policy network with dynamic anticipation and dynamic action-space
//! completion ([`policy`]), a REINFORCE trainer ([`trainer`]), beam-search
//! inference with filtered ranking ([`eval`]), and dataset sampling tools
//! ([`sampler`]).
//!
//! Everything here is `no_std` + `alloc`: float math goes through `libm`,
//! collections are ordered, and all randomness comes from the seeded
//! [`rng::Rng`], so identical seeds give bit-identical runs. File formats,
//! checkpoints and the CLI live in the companion `kghop-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod env;
pub mod error;
pub mod eval;
pub mod kg;
pub mod kge;
pub mod policy;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Real;
pub use tensor::Tensor;
