//! Independent reference solutions: exact diagonalization and thermal curves.

pub mod ed;
pub mod thermal;

pub use ed::{ed_ground, EdProblem, EdResult};
pub use thermal::{onepolaron_thermal, toulouse_coherence, ToulouseParams};
