//! Hyperspherical energy of neuron banks and the compressive (projected)
//! energy regularizers built on it.
//!
//! * [`numkit`]: dense matrices, seeded Gaussian sampling and a reverse-mode
//!   tape with one level of nested differentiation.
//! * [`energy`]: full-space and half-space Riesz / log energies.
//! * [`projection`]: random, angle-preserving, adversarial, group and
//!   bilateral projections, plus shared projection bases.
//! * [`minimizer`]: sphere-constrained gradient descent (Thomson-style).
//! * [`theorylab`]: Monte-Carlo checks of the angle-preservation bounds.
//! * [`harness`]: a small MLP trained under each regularizer.

// `!(x >= t)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod energy;
pub mod error;
pub mod harness;
pub mod minimizer;
pub mod numkit;
pub mod projection;
pub mod theorylab;

pub use energy::{energy, energy_gradient, EnergySpec, GradientMode, NeuronBank};
pub use error::{Error, Result};
pub use numkit::{Gradient, Matrix, NodeId, Tape};
