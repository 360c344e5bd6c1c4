pub mod ansatz;
pub mod bath;
pub mod cli;
pub mod error;
pub mod lbfgs;
pub mod observables;
pub mod optimizer;
pub mod oracles;

pub use error::{Error, Result};
