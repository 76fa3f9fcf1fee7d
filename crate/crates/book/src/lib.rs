//! The guide in `book/` compiled as doc-tests: each chapter is attached to
//! an empty module so `cargo test` runs every Rust block it contains and a
//! failure names the chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}
#[doc = include_str!("../../../book/src/pipelines.md")]
pub mod pipelines {}
#[doc = include_str!("../../../book/src/fusion.md")]
pub mod fusion {}
#[doc = include_str!("../../../book/src/search.md")]
pub mod search {}
#[doc = include_str!("../../../book/src/conformal.md")]
pub mod conformal {}
#[doc = include_str!("../../../book/src/explain.md")]
pub mod explain {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
