//! Event-driven MIMO analog-forwarding precoding for networked control systems.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure computation:
//! plant discretization and LQG gains, the Rayleigh channel and the law of its
//! largest eigenchannel gain, the augmented complex Kalman filter, the closed-form
//! priority function and the precoding policies built on it, a value-iteration
//! oracle, the modified-Riccati MSE bound, and a single-episode runner.
#![no_std]

extern crate alloc;

pub mod channel;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod mdp_oracle;
pub mod plant;
pub mod precoder;
pub mod priority;
pub mod quadrature;
pub mod stability;

pub use error::{Error, Result};

pub use nalgebra::{Complex, DMatrix, DVector};

/// Complex scalar used for channel and precoder entries.
pub type C64 = Complex<f64>;
/// Real dense matrix.
pub type Mat = DMatrix<f64>;
/// Real dense vector.
pub type Vector = DVector<f64>;
/// Complex dense matrix.
pub type CMat = DMatrix<C64>;
/// Complex dense vector.
pub type CVector = DVector<C64>;
