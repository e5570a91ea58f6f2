//! Graph-guided repository planning and test-driven code generation.
//!
//! The library is organized around a repository planning graph: a forest of
//! capability subgraphs whose nodes carry both a functional meaning (what the
//! repository should do) and a structural binding (where that capability lives
//! on disk). Planning proceeds in two levels. Proposal-level planning selects
//! a repository-specific subtree from a global feature ontology and refactors
//! it into the graph. Implementation-level planning encodes folders, files,
//! data flows, shared base abstractions, and concrete interfaces onto the
//! graph. Code generation then walks the graph in topological order,
//! localizing and editing one leaf at a time, validating every edit with
//! generated tests before it is committed.
//!
//! Every decision that would normally need a live model goes through the
//! [`oracle`] module, which renders prompt templates, parses the structured
//! response blocks, and can be backed by scripted responses so that full
//! pipeline runs are deterministic.

pub mod codegen;
pub mod design;
pub mod harness;
pub mod localization;
pub mod metrics;
pub mod sandbox;
pub mod skeleton;
pub mod embed;
pub mod graph;
pub mod ontology;
pub mod oracle;
pub mod proposal;
pub mod pysrc;
pub mod textdiff;
pub mod trajectory;
pub mod wire;
pub mod workspace;
