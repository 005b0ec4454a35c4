//! A small applicative language with weak-linear types.
//!
//! Data is qualified `li` (linear: consumed exactly once, removed from the
//! store at its use) or `un` (unrestricted: freely shared, never removed).
//! A third pseudoqualifier `hi` marks read-only access to a linear base-type
//! datum in operator input positions, so a linear value can be observed
//! before the use that finally consumes it.
//!
//! The crate provides:
//!
//! - [`syntax`]: abstract syntax, the qualifier order, signatures and
//!   substitution;
//! - [`surface`]: the concrete syntax (parser, printer, program files);
//! - [`typing`]: context split / pseudosplit and the algorithmic checker;
//! - [`machine`]: the store-based small-step evaluator with explicit
//!   deallocation;
//! - [`verify`]: store typing, configuration checking, and executable
//!   preservation / progress suites;
//! - [`profile`]: the memory-balance ledger and growth-rate experiments;
//! - [`corpus`]: the built-in benchmark programs in weak-linear and
//!   unrestricted variants.

pub mod corpus;
pub mod machine;
pub mod profile;
pub mod surface;
pub mod syntax;
pub mod typing;
pub mod verify;
