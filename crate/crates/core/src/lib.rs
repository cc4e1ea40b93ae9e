//! Architecture search over hierarchical motif genotypes.
//!
//! A genotype describes a single-source single-sink DAG of operations at
//! every level of a small hierarchy: level-1 operations are six fixed
//! convolutional/pooling primitives, and each higher level wires the motifs
//! of the level below into larger motifs. The top-level motif (the cell) is
//! expanded recursively into a flat primitive graph, which can be scored by
//! a cheap surrogate landscape or by actually training a small model built
//! around the cell on a synthetic image task.
//!
//! The crate provides:
//!
//! - [`genotype`]: motif graphs, hierarchy specs, validation, and the
//!   canonical text document format
//! - [`assembly`]: recursive expansion to a flat DAG, channel/shape
//!   inference, parameter counting, DOT export
//! - [`mutation`]: the uniform five-step edit action and edit classification
//! - [`search`]: diversification-based initialization, tournament selection,
//!   asynchronous controller/worker evolution, and random search
//! - [`fitness`]: the evaluator contract plus surrogate, parameter-reward,
//!   constrained, and trainer-backed back-ends
//! - [`nnexec`]: a dense f64 executor with exact reverse-mode gradients for
//!   the primitive set, model skeleton construction, and SGD training
//!
//! With the default `parallel` feature the data-parallel inner loops (batch
//! execution, population evaluation, initialization) run on rayon; without
//! it everything falls back to sequential code with identical results.

pub mod assembly;
pub mod fitness;
pub mod genotype;
pub mod mutation;
pub mod nnexec;
pub mod par;
pub mod rng;
pub mod search;

pub use assembly::{flatten, FlatArchitecture, TensorShape};
pub use genotype::{trivial_genotype, Genotype, HierarchySpec, PrimitiveOp};
pub use mutation::{classify_edit, mutate, EditClass, MutationTrace};
pub use search::{evolve, random_search, MemoryTable, SearchConfig};
