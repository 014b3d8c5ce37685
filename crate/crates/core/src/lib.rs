//! Combine out-of-distribution detector scores into calibrated p-values.
//!
//! Raw scores from any number of detectors are quantile-normalized against
//! in-distribution reference scores ([`ecdf`]), combined with a p-value
//! meta-analysis rule corrected for inter-detector correlation
//! ([`combiners`]), and used for per-sample decisions, window-level shift
//! tests and sliding-window monitoring ([`window`]).

pub mod adapters;
pub mod bench;
pub mod combiners;
pub mod ecdf;
pub mod error;
pub mod exec;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod numerics;
pub mod window;

pub use combiners::{
    calibrate, calibrate_split, combined_confidence, decide, BrownParams, Calibration, CombinerKind, HartungParams,
};
pub use ecdf::{Ecdf, PValueVector};
pub use error::{Error, ErrorClass, Result};
pub use exec::Execution;
pub use matrix::ScoreMatrix;
pub use metrics::{auroc, fpr_at_tpr, EvalReport, Label, LabeledScores, Orientation};
pub use window::{ks_two_sample, MonitorState, WindowConfig, WindowVerdict};
