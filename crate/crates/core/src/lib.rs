//! Mining of UI design-pattern usage from mobile app view hierarchies and
//! screenshots, and its relationship to marketplace quality signals.
//!
//! The pipeline runs in stages:
//!
//! 1. [`ingest`] parses per-screen hierarchies, joins marketplace metadata and
//!    applies the exclusion list.
//! 2. [`detector`] finds candidate components by relaxed keyword matching.
//! 3. [`heatmap`] records where candidates appear on screen.
//! 4. [`crop`] cuts candidate crops and mines negatives at the most probable
//!    location.
//! 5. [`verifier`] trains per-kind classifiers and keeps an app's component
//!    if any of its candidate crops verifies.
//! 6. [`analytics`] splits, rates, percentile curves and correlations.
//! 7. [`report`] renders CSV/JSON tables and charts; [`pipeline`] drives the
//!    stages from the command line.
//!
//! [`synth`] generates corpora with known ground truth.

pub mod crop;
pub mod detector;
pub mod geometry;
pub mod heatmap;
pub mod ingest;
pub mod verifier;
pub mod analytics;
pub mod synth;
pub mod report;
pub mod pipeline;
