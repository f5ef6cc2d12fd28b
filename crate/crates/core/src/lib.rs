//! Measuring how far ERC-20 activity has moved from plain assets into their
//! wrapped derivatives.
//!
//! The pipeline decodes `Transfer` logs ([`chain_model`]), caches them by
//! block range ([`ingestion`]), builds the graph of wrapped tokens and their
//! composition distance to each root asset ([`derivation_graph`]), and counts
//! plain versus composed transfers per time bucket ([`classification`]).
//! [`synthetic_chain`] generates seeded log streams with exact expected
//! results for all of the above, and [`pipeline`] chains the stages.

pub mod chain_model;
pub mod classification;
pub mod derivation_graph;
pub mod ingestion;
pub mod pipeline;
pub mod synthetic_chain;
