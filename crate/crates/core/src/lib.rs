//! Multivariate time-series anomaly detection over a dynamic bipartite event
//! graph: series are linked to recurring shape events per window, a temporal
//! graph model learns to forecast those links, and anomaly scores come from
//! forecast mismatch and residual surprisal.

pub mod catalog;
pub mod config;
pub mod density;
pub mod dtw;
pub mod error;
pub mod eval;
pub mod model;
pub mod motif;
pub mod pipeline;
pub mod plot;
pub mod scoring;
pub mod series;
pub mod spot;
pub mod stream;
pub mod synth;

pub use error::{Error, Result};
