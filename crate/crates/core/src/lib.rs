//! Analysis engine for rolling-horizon collaborative forecast data.
//!
//! The pipeline reads a [`panel::DialoguePanel`] of forecasts, supplier
//! responses and shipments, normalizes it ([`preprocess`]), infers the
//! directed information-flow network with expanding-window graphical lasso
//! ([`ewggm`], [`glasso`]), splits every event into propagated and new
//! information ([`decompose`]) and summarizes the forecast and response blocks
//! with continuum canonical correlation ([`ccc`]). [`synth`] generates panels
//! with planted structure for recovery experiments.

// Negated comparisons are used so that NaN fails validity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ccc;
pub mod decompose;
pub mod ewggm;
pub mod glasso;
pub mod linalg;
pub mod panel;
pub mod preprocess;
pub mod synth;

pub use panel::{DialoguePanel, EventId, EventKind, EventSequence};
