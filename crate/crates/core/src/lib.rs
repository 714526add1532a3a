//! Scribble-supervised camouflaged object detection.
//!
//! Stage one turns scribbles into point prompts ([`prompting`]), asks a
//! promptable segmenter for candidate masks and filters them through an
//! agent debate ([`debate`]). Stage two trains [`fadenet::FadeNet`] on the
//! resulting pseudo masks mixed with scribble evidence ([`losses`]), and
//! [`metrics`] scores the predictions. [`pipeline`] wires the stages to files.

pub mod debate;
pub mod error;
pub mod fadenet;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod prompting;
pub mod raster;

pub use error::{BackendError, Error, Result};
