//! Runs every code sample in the book as a doc-test, chapter by chapter,
//! so `cargo test --workspace` keeps the guide honest. mdBook itself
//! cannot execute snippets against the workspace crates; including each
//! chapter as module documentation hands them to rustdoc instead.

#[doc = include_str!("../../../book/src/network-model.md")]
pub mod network_model {}

#[doc = include_str!("../../../book/src/electrical-structure.md")]
pub mod electrical_structure {}

#[doc = include_str!("../../../book/src/placement.md")]
pub mod placement {}

#[doc = include_str!("../../../book/src/scheduling.md")]
pub mod scheduling {}

#[doc = include_str!("../../../book/src/detection.md")]
pub mod detection {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
