//! Decentralization metrics over a [`ProducerTally`].
//!
//! All three metrics depend only on the multiset of credits, so they are
//! invariant under relabeling producers and under scaling every credit by
//! the same positive factor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::ProducerTally;

/// Collusion threshold used by the Nakamoto coefficient unless overridden.
pub const DEFAULT_THRESHOLD: f64 = 0.51;

/// Relative slack when comparing a cumulative share against the threshold,
/// so that exact ties such as 51 of 100 equal producers are not lost to
/// rounding in `0.51 * total`.
const THRESHOLD_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum MetricError {
    #[error("tally has no producers")]
    EmptyTally,
    #[error("tally has zero total credit")]
    ZeroTotalCredit,
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub gini: f64,
    pub entropy_bits: f64,
    pub nakamoto: usize,
    pub producer_count: usize,
    pub total_credit: f64,
}

fn checked_total(tally: &ProducerTally) -> Result<f64, MetricError> {
    if tally.is_empty() {
        return Err(MetricError::EmptyTally);
    }
    let total = tally.total();
    if total <= 0.0 {
        return Err(MetricError::ZeroTotalCredit);
    }
    Ok(total)
}

/// Gini coefficient: the ordered-pair mean absolute difference of credits
/// divided by twice their mean.
///
/// Evaluated in O(n log n) as `sum_i (2i - n - 1) x_(i) / (n * sum x)` over
/// credits sorted ascending (1-based `i`), which equals the pairwise form.
pub fn gini(tally: &ProducerTally) -> Result<f64, MetricError> {
    let total = checked_total(tally)?;
    let mut xs: Vec<f64> = tally.credits().collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let weighted: f64 = xs
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x)
        .sum();
    Ok((weighted / (n * total)).max(0.0))
}

/// Base-2 Shannon entropy of the producers' credit shares.
pub fn shannon_entropy(tally: &ProducerTally) -> Result<f64, MetricError> {
    let total = checked_total(tally)?;
    let h: f64 = tally
        .credits()
        .map(|c| c / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.log2())
        .sum();
    Ok(h.max(0.0))
}

/// Smallest number of producers whose combined share reaches `threshold`.
///
/// Taking shares largest first is optimal: any k-subset sums to at most
/// the k largest shares.
pub fn nakamoto(tally: &ProducerTally, threshold: f64) -> Result<usize, MetricError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(MetricError::InvalidThreshold(threshold));
    }
    let total = checked_total(tally)?;
    let mut xs: Vec<f64> = tally.credits().collect();
    xs.sort_by(|a, b| b.total_cmp(a));
    let target = threshold * total * (1.0 - THRESHOLD_SLACK);
    let mut acc = 0.0;
    for (k, x) in xs.iter().enumerate() {
        acc += x;
        if acc >= target {
            return Ok(k + 1);
        }
    }
    // Only reachable through rounding when threshold == 1.
    Ok(xs.len())
}

pub fn compute_all(tally: &ProducerTally, threshold: f64) -> Result<MetricValue, MetricError> {
    let nakamoto = nakamoto(tally, threshold)?;
    Ok(MetricValue {
        gini: gini(tally)?,
        entropy_bits: shannon_entropy(tally)?,
        nakamoto,
        producer_count: tally.len(),
        total_credit: tally.total(),
    })
}
