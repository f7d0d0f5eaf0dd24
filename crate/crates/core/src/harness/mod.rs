pub mod ablate;
pub mod cli;
mod error;
pub mod eval;
pub mod plot;

pub use error::HarnessError;
