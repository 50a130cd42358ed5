pub mod adaptive;
pub mod error;
pub mod fourier;
pub mod harness;
pub mod kernels;
pub mod model;
pub mod quadstat;
pub mod rng;
pub mod semiparam;
pub mod stable_index;
pub mod ustat;

pub use error::{Error, Result};
