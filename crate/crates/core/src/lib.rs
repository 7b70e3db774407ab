//! Adversarial attacks on multi-label classifiers that respect a label
//! taxonomy, plus the consistency checks that catch the ones that don't.
//!
//! The pipeline: build a [`hierarchy::LabelGraph`] over the label set, train a
//! small differentiable classifier ([`model`]), pick target labels to flip,
//! expand them into the full set of flips the taxonomy forces
//! ([`expansion`]), run a projected-gradient attack ([`attack`]), and measure
//! how often local/global consistency verification ([`consistency`]) detects
//! the result ([`eval`]).
//!
//! [`oracle`] holds deliberately naive brute-force reimplementations used to
//! cross-check the production code paths; it shares data types with the rest
//! of the crate but no logic.

pub mod attack;
pub mod consistency;
pub mod eval;
pub mod expansion;
pub mod fixtures;
pub mod hierarchy;
pub mod model;
pub mod oracle;

pub use consistency::LabelState;
pub use hierarchy::{LabelGraph, LabelId};
