//! Harm-anticipation studies over a stakeholder × bias grid.
//!
//! The crate covers the whole study workflow for one application domain:
//! stakeholder generation and curation, factorial vignette construction,
//! harm annotation (human CSV imports, the survey service, or an LLM
//! annotator), consensus aggregation into a descriptive ethical matrix, and
//! the categorical inference (χ² homogeneity, Cramér's V, adjusted
//! standardized residuals) that refines it into an inferential matrix.

pub mod aggregation;
pub mod annotation;
pub mod error;
pub mod fixtures;
pub mod genai;
pub mod inference;
pub mod reporting;
pub mod service;
pub mod stakeholder;
pub mod stats;
pub mod study;
pub mod taxonomy;
pub mod vignette;

pub use error::{Error, Result};
