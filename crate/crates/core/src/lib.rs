//! Rate-adaptive compressive sensing.
//!
//! A measurement matrix `Φ` (`m_max × n`) is learned jointly with a downstream
//! network so that every row prefix `Φ(1:r,:)`, `k_min ≤ r ≤ m_max`, paired with
//! its pseudoinverse decoder and one shared set of network parameters, is a
//! working sensing/inference system.
//!
//! Module map:
//! - [`tensor`], [`nn`]: a small reverse-mode layer-chain engine with Adam and
//!   finite-difference gradient checking.
//! - [`linalg`]: Cholesky right pseudoinverse, bordered row append, and the
//!   derivative of the pseudoinverse map.
//! - [`sensing`]: the measurement operator with prefix semantics.
//! - [`models`]: ReconNet, autoencoder and classifier heads.
//! - [`training`]: three-stage rate-adaptive training, the single-rate baseline,
//!   and checkpoints.
//! - [`evaluation`], [`adaptation`], [`data`]: metrics and sweeps, dynamic rate
//!   controllers, image I/O and synthetic datasets.

pub mod adaptation;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod models;
pub mod nn;
pub mod sensing;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use linalg::{Matrix, PinvState};
pub use models::ModelSpec;
pub use nn::{Network, PhiPrefix};
pub use sensing::MeasurementMatrix;
pub use tensor::{Real, Tensor};
