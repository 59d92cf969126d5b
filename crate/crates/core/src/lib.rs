//! Social-footprint classification of influence-operation accounts.
//!
//! The crate is organised around the stages of the pipeline:
//!
//! * [`corpus`] streams tweet archives into a [`corpus::Dataset`].
//! * [`labeling`] produces seed categories from coded files, description
//!   rules and hashtag footprints.
//! * [`propagation`] spreads categories to hashed accounts through
//!   per-subspan cosine similarity of hashtag vectors.
//! * [`features`] builds behavioural feature vectors, screens them by
//!   Pearson correlation and L1-normalises them.
//! * [`classifiers`] holds the random forest and the baseline models.
//! * [`evaluation`] runs stratified cross-validation, metrics, depth sweeps
//!   and cross-dataset agreement.
//! * [`synthgen`] generates synthetic archives with planted categories.
//! * [`pipeline`] orchestrates everything from a single configuration.

pub mod classifiers;
pub mod corpus;
pub mod evaluation;
pub mod features;
pub mod labeling;
pub mod pipeline;
pub mod propagation;
pub mod synthgen;

pub use labeling::Category;
