//! Robust predictive output-feedback safety filter.
//!
//! The crate certifies or minimally modifies arbitrary control inputs for an
//! uncertain nonlinear discrete-time system observed through noisy partial
//! measurements. Estimation error bounds come from an observer pair
//! (Luenberger-style and moving-horizon), tubes come from incremental
//! Lyapunov functions, and each step solves a small nonlinear program with
//! the built-in SQP solver.
//!
//! The crate is `no_std` with `alloc`; the `std` feature only enables
//! `std::error::Error` through `thiserror`.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod filter;
pub mod linalg;
pub mod lyapunov;
pub mod math;
pub mod model;
pub mod nlp;
pub mod observer;
pub mod sim;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
