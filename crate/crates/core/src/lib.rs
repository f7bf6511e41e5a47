//! Trees represented by straight-line tree grammars.
//!
//! A straight-line (deterministic, acyclic) linear context-free tree grammar
//! derives exactly one tree, and can do so with exponentially fewer
//! productions than the tree has nodes.  This crate implements tree
//! canonization, rooted and unrooted unordered isomorphism, center finding,
//! re-rooting and bisimulation equivalence *directly on the grammars*,
//! without ever expanding the derived tree.  Non-linear grammars (parameter
//! copying, doubly-exponential compression) are supported through expansion
//! into node dags.
//!
//! Everything that matters is deterministic: string equality on compressed
//! traversals is decided by seeded Karp-Rabin fingerprints with an exact
//! fallback for short strings, so a fixed seed gives reproducible runs.

pub mod bisim;
pub mod canonize;
pub mod grammar;
pub mod normal;
pub mod oracle;
pub mod qbf;
pub mod slp;
pub mod st;
pub mod term;
pub mod unrooted;

mod error;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};

pub use bisim::SpinePositionSet;
pub use canonize::BlockSplit;
pub use unrooted::{CompressedPath, Expansion, MixedStats};
pub use grammar::{Grammar, GrammarBuilder, NtId, RhsTree, Symbol};
pub use normal::{GenParams, NodeStats, NormalGrammar, NormalProd};
pub use slp::{DflrSlps, EqualityPolicy, FingerprintCtx, Slp, SlpSym};
pub use term::{DeweyAddress, Label, LabelOrder, Tree};

/// Arbitrary-precision node/length counter.  Grammar-derived trees routinely
/// have more nodes than fit in a machine word.
pub type BigCount = num_bigint::BigUint;
