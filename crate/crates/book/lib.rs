//! The guide's code listings, compiled and run as doc-tests.

#[doc = include_str!("../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../book/src/fourier.md")]
pub mod fourier {}
#[doc = include_str!("../../book/src/testing.md")]
pub mod testing {}
#[doc = include_str!("../../book/src/stable_index.md")]
pub mod stable_index {}
#[doc = include_str!("../../book/src/plug_in.md")]
pub mod plug_in {}
#[doc = include_str!("../../book/src/ustat.md")]
pub mod ustat {}
#[doc = include_str!("../../book/src/experiments.md")]
pub mod experiments {}
