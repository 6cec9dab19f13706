//! Slow-motion enhanced weakly supervised temporal action localization.
//!
//! The pipeline: a small CAS-generation [`backbone`] trained with the
//! multiple-instance [`losses`]; a frozen miner that runs on sub-sampled
//! features and turns its activations into a binary slow-motion mask
//! ([`mining`]); a two-branch [`localizer`] whose second branch trains on
//! masked features; [`proposals`] with NMS; and [`metrics`] for mAP at a
//! grid of t-IoU thresholds. [`synthgen`] provides a seeded synthetic corpus
//! and [`dataio`] the on-disk formats.

pub mod backbone;
pub mod dataio;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod localizer;
pub mod losses;
pub mod metrics;
pub mod mining;
pub mod proposals;
pub mod synthgen;
pub mod tensorseq;
pub mod trainer;

pub use error::{Error, Result};
pub use tensorseq::{AttentionTriple, Branch, Cas, FeatureSequence, Matrix, VideoLabel};
