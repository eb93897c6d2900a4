//! Dense matrices, seeded Gaussian sampling and a reverse-mode tape.

pub mod gradcheck;
mod matrix;
mod random;
mod tape;

pub use matrix::{rowwise_normalize, rowwise_normalize_with, Matrix, TAU_NORM};
pub use random::{
    derive_seed, gaussian_matrix, gaussian_matrix_with, random_unit_vector, rng_from_seed,
    rng_stream, SeededRng,
};
pub use tape::{Gradient, NodeId, Op, Tape, ARCCOS_CLAMP};
