//! Synthetic block streams drawn from known mining-power shares.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{BlockRecord, ProducerTally};
use crate::metrics::{self, MetricError, MetricValue};

/// Active shares must sum to one within this tolerance.
pub const SHARE_TOLERANCE: f64 = 1e-9;

/// 2019-01-01T00:00:00Z
pub const DEFAULT_START_TIMESTAMP: i64 = 1_546_300_800;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("active shares at block position {position} sum to {sum}, expected 1")]
    InvalidShares { position: usize, sum: f64 },
    #[error("profile {0:?}: share must lie in (0, 1]")]
    ShareOutOfRange(String),
    #[error("profile {0:?}: empty id or start after end")]
    InvalidProfile(String),
    #[error("profiles with active intervals have no single expected distribution")]
    NonStationary,
    #[error("total_blocks and block_interval_secs must be positive")]
    InvalidStream,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("cannot read profile file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed profile file: {0}")]
    Json(#[from] serde_json::Error),
}

/// One miner's share of the block production, optionally restricted to an
/// inclusive range of block positions. A miner id may appear in several
/// profiles with disjoint intervals to model share changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinerProfile {
    pub id: String,
    pub share: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<usize>,
}

impl MinerProfile {
    pub fn new(id: impl Into<String>, share: f64) -> Self {
        Self {
            id: id.into(),
            share,
            start: None,
            end: None,
        }
    }

    pub fn during(mut self, start: usize, end: usize) -> Self {
        self.start = Some(start);
        self.end = Some(end);
        self
    }

    pub fn is_active(&self, position: usize) -> bool {
        self.start.is_none_or(|s| position >= s) && self.end.is_none_or(|e| position <= e)
    }

    fn is_stationary(&self) -> bool {
        self.start.is_none() && self.end.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamConfig {
    pub total_blocks: usize,
    pub block_interval_secs: i64,
    pub start_timestamp: i64,
    pub start_height: u64,
    pub seed: u64,
}

impl StreamConfig {
    pub fn new(total_blocks: usize, block_interval_secs: i64, seed: u64) -> Self {
        Self {
            total_blocks,
            block_interval_secs,
            start_timestamp: DEFAULT_START_TIMESTAMP,
            start_height: 0,
            seed,
        }
    }
}

pub fn load_profiles(path: impl AsRef<Path>) -> Result<Vec<MinerProfile>, SynthError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn validate(profiles: &[MinerProfile]) -> Result<(), SynthError> {
    for p in profiles {
        if !(p.share > 0.0 && p.share <= 1.0) {
            return Err(SynthError::ShareOutOfRange(p.id.clone()));
        }
        if p.id.trim().is_empty() || matches!((p.start, p.end), (Some(s), Some(e)) if s > e) {
            return Err(SynthError::InvalidProfile(p.id.clone()));
        }
    }
    Ok(())
}

/// Draws each block's producer independently from the shares active at its
/// position. Block `i` gets height `start_height + i` and timestamp
/// `start_timestamp + i * block_interval_secs`.
///
/// Uses ChaCha8 seeded from `seed` so the same inputs give the same stream
/// on every platform.
pub fn generate(
    profiles: &[MinerProfile],
    config: &StreamConfig,
) -> Result<Vec<BlockRecord>, SynthError> {
    if config.total_blocks == 0 || config.block_interval_secs <= 0 {
        return Err(SynthError::InvalidStream);
    }
    validate(profiles)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut active: Vec<&MinerProfile> = Vec::new();
    let mut active_key: Vec<bool> = Vec::new();
    let mut cumulative: Vec<f64> = Vec::new();
    let mut out = Vec::with_capacity(config.total_blocks);

    for pos in 0..config.total_blocks {
        let key: Vec<bool> = profiles.iter().map(|p| p.is_active(pos)).collect();
        if key != active_key {
            active = profiles.iter().filter(|p| p.is_active(pos)).collect();
            let sum: f64 = active.iter().map(|p| p.share).sum();
            if (sum - 1.0).abs() > SHARE_TOLERANCE {
                return Err(SynthError::InvalidShares { position: pos, sum });
            }
            cumulative = active
                .iter()
                .scan(0.0, |acc, p| {
                    *acc += p.share;
                    Some(*acc)
                })
                .collect();
            active_key = key;
        }
        let u: f64 = rng.gen();
        let pick = cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(active.len() - 1);
        out.push(BlockRecord {
            height: config.start_height + pos as u64,
            timestamp: config.start_timestamp + pos as i64 * config.block_interval_secs,
            producers: vec![active[pick].id.clone()],
        });
    }
    Ok(out)
}

/// Metrics of the true share distribution of stationary profiles.
pub fn expected_metrics(
    profiles: &[MinerProfile],
    threshold: f64,
) -> Result<MetricValue, SynthError> {
    if profiles.iter().any(|p| !p.is_stationary()) {
        return Err(SynthError::NonStationary);
    }
    validate(profiles)?;
    let sum: f64 = profiles.iter().map(|p| p.share).sum();
    if (sum - 1.0).abs() > SHARE_TOLERANCE {
        return Err(SynthError::InvalidShares { position: 0, sum });
    }
    let tally = ProducerTally::from_credits(profiles.iter().map(|p| (p.id.clone(), p.share)))
        .map_err(|_| SynthError::ShareOutOfRange(String::new()))?;
    Ok(metrics::compute_all(&tally, threshold)?)
}

/// Two "weeks" of 2016 blocks each, five minutes apart, starting Monday
/// 2019-01-07 UTC. Ten miners share power uniformly except for positions
/// 1512..=2519, where miner `D` holds 90% and the ten share the rest.
pub fn straddle_profiles() -> Vec<MinerProfile> {
    let mut profiles = vec![MinerProfile::new("D", 0.9).during(1512, 2519)];
    for i in 0..10 {
        let id = format!("m{i}");
        profiles.push(MinerProfile::new(&id, 0.1).during(0, 1511));
        profiles.push(MinerProfile::new(&id, 0.01).during(1512, 2519));
        profiles.push(MinerProfile {
            id,
            share: 0.1,
            start: Some(2520),
            end: None,
        });
    }
    profiles
}

/// Monday 2019-01-07T00:00:00Z.
pub const STRADDLE_START_TIMESTAMP: i64 = 1_546_819_200;

pub fn straddle_config(seed: u64) -> StreamConfig {
    StreamConfig {
        total_blocks: 4032,
        block_interval_secs: 300,
        start_timestamp: STRADDLE_START_TIMESTAMP,
        start_height: 0,
        seed,
    }
}
