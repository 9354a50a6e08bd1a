//! Semantic task sampling and evaluation toolkit for few-shot classification.
//!
//! The pipeline has four stages, each backed by a module:
//!
//! 1. [`taxonomy`] — load and query a class taxonomy DAG with instance counts.
//! 2. [`semantics`] — Jiang–Conrath pseudo-distances between classes and the
//!    coarsity of class sets.
//! 3. [`sampler`] — reproducible testbeds of few-shot tasks, sampled either
//!    uniformly or through a semantic potential matrix with an occurrence
//!    penalty that keeps classes balanced.
//! 4. [`evalkit`] — few-shot classifiers (nearest prototype, linear finetune,
//!    prototype rectification) evaluated on a testbed from precomputed
//!    embeddings, with quartile, confidence-interval, and rolling-window
//!    reporting.
//!
//! [`synthetic`] provides deterministic desk-scale fixtures (taxonomies,
//! instance catalogs, hierarchy-correlated embeddings) and [`cli`] wires
//! everything into the `semtask` binary.

pub mod cli;
pub mod evalkit;
pub mod manifest;
pub mod sampler;
pub mod semantics;
pub mod synthetic;
pub mod taxonomy;

pub use sampler::{
    generate_testbed, InstanceCatalog, SamplerConfig, SamplerState, Strategy, TaskSpec, Testbed,
};
pub use semantics::{coarsity, distance_matrix, jc_distance, Coarsity, DistanceMatrix};
pub use taxonomy::{load_taxonomy, ConceptNode, TaxonomyError, TaxonomyGraph};
