//! Certified generation-risk bounds for retrieval-augmented generation.
//!
//! The crate turns per-sample bounded risk scores collected on a calibration
//! set into high-probability upper bounds on the risk of a generation
//! pipeline, searches configuration grids for sets that provably stay below a
//! target risk level, and extends both guarantees to test distributions that
//! lie within a Hellinger ball around the calibration distribution.
//!
//! Modules:
//! - [`risk_bounds`]: Bernoulli KL, exact binomial tails, Hoeffding–Bentkus
//!   bounds and p-values.
//! - [`shift_bounds`]: Gramian expectation bound and the shift-corrected
//!   conformal risk.
//! - [`config_search`]: Bonferroni and graph-based family-wise error control.
//! - [`rag_theory`]: closed-form retrieval and RAG-benefit bounds.
//! - [`rag_protocol`]: constrained generation over an in-memory knowledge base
//!   and the ROUGE-L risk.
//! - [`simulation`]: risk tables, sampling protocols and Monte Carlo harnesses.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config_search;
pub mod error;
pub mod rag_protocol;
pub mod rag_theory;
pub mod risk_bounds;
pub mod shift_bounds;
pub mod simulation;

pub use error::{Error, Result};
