//! Decentralization of block production in proof-of-work chains.
//!
//! Blocks are attributed to producers ([`block`]), grouped into fixed
//! calendar or sliding block-count windows ([`window`]), and each window's
//! producer tally is scored with the Gini coefficient, Shannon entropy and
//! Nakamoto coefficient ([`metrics`]). [`pipeline`] ties these together into
//! a [`pipeline::MetricSeries`]; [`synth`] generates streams with known
//! share distributions for testing.

pub mod block;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod window;

pub use block::{
    parse_stream, tally, write_stream, AttributionPolicy, BlockRecord, ProducerTally, StreamFormat,
};
pub use metrics::{compute_all, gini, nakamoto, shannon_entropy, MetricValue, DEFAULT_THRESHOLD};
pub use pipeline::{flag_anomalies, run, summarize, MetricPoint, MetricSeries, RunParams, Summary};
pub use window::{fixed_windows, sliding_windows, ChainPreset, Granularity, Window, WindowSpec};
