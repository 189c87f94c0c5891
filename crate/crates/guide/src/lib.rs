//! Doc-test harness for the book.
//!
//! mdBook renders `book/src/*.md` but cannot execute the snippets, so each
//! chapter is also included here as module documentation; `cargo test
//! --doc -p guide` (and therefore `cargo test --workspace`) compiles and
//! runs every code block, keeping the book honest.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/circuits.md")]
pub mod circuits {}

#[doc = include_str!("../../../book/src/statevector.md")]
pub mod statevector {}

#[doc = include_str!("../../../book/src/tensor_networks.md")]
pub mod tensor_networks {}

#[doc = include_str!("../../../book/src/noise.md")]
pub mod noise {}

#[doc = include_str!("../../../book/src/variational.md")]
pub mod variational {}

#[doc = include_str!("../../../book/src/mitigation.md")]
pub mod mitigation {}

#[doc = include_str!("../../../book/src/benchmarking.md")]
pub mod benchmarking {}

#[doc = include_str!("../../../book/src/compilation.md")]
pub mod compilation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
