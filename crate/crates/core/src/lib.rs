//! Bias evaluation harness for vision-language models.
//!
//! The crate is organized around the stages of an evaluation run:
//!
//! - [`corpus`] builds the action-based, bias-bleached profession corpus
//!   (generation, quality filtering, subject substitution, image sets).
//! - [`probekit`] renders bit-exact probe prompts and option lists for every
//!   (direction, dimension, info mode, style) coordinate.
//! - [`modelgate`] is the uniform gateway to chat, image-generation,
//!   image-edit, and attribute-classification endpoints, with caching,
//!   retries, rate limiting, and a deterministic offline simulator.
//! - [`outcome`] normalizes raw model text into category labels.
//! - [`biasmath`] computes AG, ΔAG, Neutrality, ΔN, and accuracy over
//!   count tables.
//! - [`report`] and [`pipeline`] orchestrate runs and emit count tables,
//!   metric reports, heatmap matrices, and census comparisons.

pub mod biasmath;
pub mod config;
pub mod corpus;
pub mod modelgate;
pub mod outcome;
pub mod pipeline;
pub mod probekit;
pub mod report;

pub use outcome::{Label, Outcome};
pub use probekit::{CultureSet, Dimension, Direction, InfoMode, ProbeSpec, RenderedProbe, Style};
