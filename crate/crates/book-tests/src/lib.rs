//! Every code listing in the guide under `book/` runs as a doctest of this
//! crate, one module per chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/graphs.md")]
pub mod graphs {}
#[doc = include_str!("../../../book/src/counting.md")]
pub mod counting {}
#[doc = include_str!("../../../book/src/morphism.md")]
pub mod morphism {}
#[doc = include_str!("../../../book/src/hpo.md")]
pub mod hpo {}
#[doc = include_str!("../../../book/src/harness.md")]
pub mod harness {}
#[doc = include_str!("../../../book/src/scoring.md")]
pub mod scoring {}
#[doc = include_str!("../../../book/src/configuration.md")]
pub mod configuration {}
