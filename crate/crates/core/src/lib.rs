//! Heart-rate, HRV and facial-temperature features from remote
//! photoplethysmography and thermal ROI traces, with multimodal
//! classifiers and Shapley attribution on top.
//!
//! The processing chain is:
//!
//! ```text
//! RGB patch traces ──► rppg::pos_bvp ──► rppg::estimate_hr ──► rppg::clean_hr ──► hrv::segment_metrics ─┐
//! thermal traces ────► thermal::segment_delta / thermal::segment_means ────────────────────────────────┤
//! reference ECG ─────► ecgref::detect_r_peaks ──► ecgref::agreement_sweep                              │
//!                                                       ml::assemble ◄──────────────────────────────────┘
//!                                                         │
//!                              ml::grid_search_cv / ml::late_fuse ──► attribution::shapley_*
//! ```
//!
//! Data-parallel loops (per patch, per window, per tree, per grid point,
//! per permutation) run on rayon when the `parallel` feature is enabled
//! (the default) and sequentially otherwise. Results are identical either
//! way: every random stream is derived from the master seed and the work
//! index, never from the thread that executes it.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attribution;
pub mod dataio;
pub mod ecgref;
pub mod error;
pub mod hrv;
pub mod ml;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod rppg;
pub mod spectral;
pub mod stats;
pub mod synthgen;
pub mod thermal;

pub use error::{Error, Result};
