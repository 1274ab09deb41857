//! The user guide, chapter by chapter. Each module includes one chapter of
//! the rendered book (`book/` at the repository root), so every fenced Rust
//! block in the guide compiles and runs as a doctest and the two can never
//! drift apart.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/smoothing.md")]
pub mod smoothing {}

#[doc = include_str!("../../../book/src/weights.md")]
pub mod weights {}

#[doc = include_str!("../../../book/src/moran.md")]
pub mod moran {}

#[doc = include_str!("../../../book/src/spca.md")]
pub mod spca {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}
