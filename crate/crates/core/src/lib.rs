//! Hamiltonian deep neural networks.
//!
//! Residual networks obtained by forward-Euler (or Verlet) discretization of
//! Hamiltonian ODEs `ẏ = J Kᵀ tanh(K y + b)`, together with the earlier
//! marginally stable architectures they contain (MS₁, MS₂, MS₃), a plain
//! fully connected baseline, hand-written reverse-mode gradients, the
//! alternating Adam training scheme and numerical checks of the backward
//! gradient stability results.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the
//! command-line tool and thread pools live in the `hamnet` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod backprop;
pub mod convnet;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod layers;
pub mod operator;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use layers::{Architecture, NetworkParams, OutputHead, Variant};
pub use tensor::{Matrix, Vector};
