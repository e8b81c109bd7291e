//! Experiment lab: ensembles, norm-equivalence runs, embedding and lemma
//! suites, and the flat reports they emit.

pub mod embeddings;
pub mod ensemble;
pub mod equivalence;
pub mod lemmas;
pub mod setup;
pub mod stats;
pub mod table;

pub use ensemble::{generate_ensemble, EnsembleKind, EnsembleSpec, Member};
pub use equivalence::{equivalence_experiment, EquivalenceParams, EquivalenceReport, Pairing};
pub use setup::{Setup, SetupSpec};
