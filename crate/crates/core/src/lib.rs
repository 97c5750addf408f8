//! Lifelong policy optimization with time-conditioned Gaussian hyper-policies.
//!
//! The crate is `no_std` with `alloc`. File formats, the command line and
//! thread pools live in the `polis` companion crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod divergence;
pub mod env;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod hyper_policy;
pub mod math;
pub mod objective;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
