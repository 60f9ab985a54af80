//! Memorization diagnostics for code-intelligence models.
//!
//! The crate covers the whole pipeline of a noise study: a normalized
//! multi-task [`corpus`] schema, seeded output- and input-noise injection
//! ([`noising`]), a per-sample [`telemetry`] stream, the metric suite
//! ([`metrics`]), critical-sample probing by variable renaming ([`csr`]),
//! a small bag-of-sub-tokens classifier to train at desk scale
//! ([`refmodel`]), CSV/SVG rendering ([`report`]) and the study driver
//! ([`study`]) used by the `memgauge` binary.

pub mod corpus;
pub mod subtoken;
pub mod noising;
pub mod rng;
pub mod telemetry;
pub mod metrics;
pub mod refmodel;
pub mod synth;
pub mod csr;
pub mod report;
pub mod study;
