//! Knowledge-graph link prediction via Tucker-style tensor scoring.
//!
//! The crate implements two closely related scoring models over a shared
//! `d x k x d` core tensor:
//!
//! - **TuckER**: the fully linear score `W x1 e_h x2 w_r x3 e_t`.
//! - **NePTuNe**: the nonlinear variant `e_t . f_act(W x1 e_h x2 w_r)`,
//!   which collapses to TuckER when the activation is the identity.
//!
//! Training uses 1-N binary cross-entropy (all tails of a `(head, relation)`
//! query scored in one pass), inverse-relation augmentation, batch
//! normalization, dropout, and a from-scratch Adam optimizer with
//! hand-derived analytic gradients. Evaluation reports filtered MRR and
//! Hits@{1,3,10} with pessimistic tie-breaking.
//!
//! Modules:
//! - [`tensor`]: dense 3-mode tensor / matrix primitives (n-mode products).
//! - [`data`]: triple file ingestion, vocabularies, inverse augmentation,
//!   filter index.
//! - [`model`]: parameters, initialization, batch norm, dropout, scoring.
//! - [`train`]: 1-N BCE loss, analytic backprop, Adam, training loop.
//! - [`checkpoint`]: binary checkpoint save/load.
//! - [`eval`]: filtered ranking metrics.
//! - [`manifest`]: key-value config files and run manifests for the CLI.

pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod manifest;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use data::{KnowledgeGraph, Triple};
pub use eval::{evaluate, rank_triple, RankingReport, ScoreOpts, Split};
pub use model::{Activation, BatchNormState, ModelParams};
pub use train::{train, AdamState, GradientSet, LossBatch, TrainConfig, TrainRun};
