//! Fixed calendar windows and block-count sliding windows.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Days, Months, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::BlockRecord;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WindowError {
    #[error("window size {size} exceeds stream length {blocks}")]
    WindowLargerThanStream { size: usize, blocks: usize },
    #[error("invalid sliding configuration: size {size}, step {step} (need 1 <= step <= size)")]
    InvalidSliding { size: usize, step: usize },
    #[error("timestamp {0} is outside the supported calendar range")]
    TimestampOutOfRange(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Day,
    Week,
    Month,
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "day" => Ok(Self::Day),
            "week" => Ok(Self::Week),
            "month" => Ok(Self::Month),
            other => Err(format!("unknown granularity {other:?}")),
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Day => "day",
            Self::Week => "week",
            Self::Month => "month",
        })
    }
}

/// Named window-size presets, one block count per granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainPreset {
    /// One block per ten minutes.
    Btc,
    /// About 6000 blocks per day.
    Eth,
}

impl ChainPreset {
    pub fn window_size(self, granularity: Granularity) -> usize {
        match (self, granularity) {
            (Self::Btc, Granularity::Day) => 144,
            (Self::Btc, Granularity::Week) => 1008,
            (Self::Btc, Granularity::Month) => 4320,
            (Self::Eth, Granularity::Day) => 6_000,
            (Self::Eth, Granularity::Week) => 42_000,
            (Self::Eth, Granularity::Month) => 180_000,
        }
    }
}

impl FromStr for ChainPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "btc" => Ok(Self::Btc),
            "eth" => Ok(Self::Eth),
            other => Err(format!("unknown chain preset {other:?}")),
        }
    }
}

/// Default sliding step: half the window, at least one block.
pub fn default_step(size: usize) -> usize {
    (size / 2).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowSpec {
    FixedCalendar { granularity: Granularity },
    SlidingBlocks { size: usize, step: usize },
}

impl WindowSpec {
    pub fn sliding(size: usize, step: usize) -> Result<Self, WindowError> {
        if size == 0 || step == 0 || step > size {
            return Err(WindowError::InvalidSliding { size, step });
        }
        Ok(Self::SlidingBlocks { size, step })
    }

    pub fn preset(chain: ChainPreset, granularity: Granularity) -> Self {
        let size = chain.window_size(granularity);
        Self::SlidingBlocks {
            size,
            step: default_step(size),
        }
    }
}

#[derive(Debug, Clone)]
enum Members<'a> {
    Contiguous(&'a [BlockRecord]),
    Gathered(Vec<&'a BlockRecord>),
}

/// One measurement window over borrowed block data.
#[derive(Debug, Clone)]
pub struct Window<'a> {
    pub index: usize,
    pub label: String,
    pub first_height: u64,
    pub last_height: u64,
    members: Members<'a>,
}

impl<'a> Window<'a> {
    fn new(index: usize, label: String, members: Members<'a>) -> Self {
        let mut w = Self {
            index,
            label,
            first_height: 0,
            last_height: 0,
            members,
        };
        w.first_height = w.blocks().map(|b| b.height).min().unwrap_or(0);
        w.last_height = w.blocks().map(|b| b.height).max().unwrap_or(0);
        w
    }

    pub fn blocks(&self) -> Box<dyn Iterator<Item = &'a BlockRecord> + '_> {
        match &self.members {
            Members::Contiguous(s) => Box::new(s.iter()),
            Members::Gathered(v) => Box::new(v.iter().copied()),
        }
    }

    pub fn len(&self) -> usize {
        match &self.members {
            Members::Contiguous(s) => s.len(),
            Members::Gathered(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Windows plus what the windowing left uncovered.
#[derive(Debug, Clone)]
pub struct Windowing<'a> {
    pub windows: Vec<Window<'a>>,
    /// Labels of empty calendar buckets between the first and last window.
    pub gaps: Vec<String>,
    /// Trailing blocks not covered by a full sliding window.
    pub dropped_blocks: usize,
}

pub fn windows<'a>(
    blocks: &'a [BlockRecord],
    spec: &WindowSpec,
) -> Result<Windowing<'a>, WindowError> {
    match *spec {
        WindowSpec::FixedCalendar { granularity } => fixed_windows(blocks, granularity),
        WindowSpec::SlidingBlocks { size, step } => sliding_windows(blocks, size, step),
    }
}

fn utc_date(timestamp: i64) -> Result<NaiveDate, WindowError> {
    DateTime::from_timestamp(timestamp, 0)
        .map(|dt| dt.date_naive())
        .ok_or(WindowError::TimestampOutOfRange(timestamp))
}

/// First day of the calendar bucket that contains `date`.
fn bucket_start(date: NaiveDate, granularity: Granularity) -> NaiveDate {
    match granularity {
        Granularity::Day => date,
        Granularity::Week => date - Days::new(u64::from(date.weekday().num_days_from_monday())),
        Granularity::Month => date.with_day(1).expect("day 1 exists"),
    }
}

fn next_bucket(start: NaiveDate, granularity: Granularity) -> NaiveDate {
    match granularity {
        Granularity::Day => start + Days::new(1),
        Granularity::Week => start + Days::new(7),
        Granularity::Month => start + Months::new(1),
    }
}

fn bucket_label(start: NaiveDate, granularity: Granularity) -> String {
    match granularity {
        Granularity::Day => start.format("%Y-%m-%d").to_string(),
        Granularity::Week => {
            let iso = start.iso_week();
            format!("{}-W{:02}", iso.year(), iso.week())
        }
        Granularity::Month => start.format("%Y-%m").to_string(),
    }
}

/// Buckets blocks by the UTC calendar day, ISO week or month of their
/// timestamp. Buckets come out in chronological order; within a bucket
/// blocks keep stream order.
pub fn fixed_windows(
    blocks: &[BlockRecord],
    granularity: Granularity,
) -> Result<Windowing<'_>, WindowError> {
    let mut buckets: BTreeMap<NaiveDate, Vec<usize>> = BTreeMap::new();
    for (i, b) in blocks.iter().enumerate() {
        let start = bucket_start(utc_date(b.timestamp)?, granularity);
        buckets.entry(start).or_default().push(i);
    }

    let mut gaps = Vec::new();
    let mut windows = Vec::with_capacity(buckets.len());
    let mut expected: Option<NaiveDate> = None;
    for (start, positions) in buckets {
        if let Some(mut cursor) = expected {
            while cursor < start {
                gaps.push(bucket_label(cursor, granularity));
                cursor = next_bucket(cursor, granularity);
            }
        }
        expected = Some(next_bucket(start, granularity));
        let first = positions[0];
        let unbroken = positions.iter().enumerate().all(|(k, &p)| p == first + k);
        let members = if unbroken {
            Members::Contiguous(&blocks[first..first + positions.len()])
        } else {
            Members::Gathered(positions.iter().map(|&p| &blocks[p]).collect())
        };
        windows.push(Window::new(
            windows.len(),
            bucket_label(start, granularity),
            members,
        ));
    }
    Ok(Windowing {
        windows,
        gaps,
        dropped_blocks: 0,
    })
}

/// Number of full windows of `size` blocks, advancing by `step`, that fit
/// in a stream of `blocks` blocks.
pub fn sliding_window_count(blocks: usize, size: usize, step: usize) -> usize {
    if size == 0 || step == 0 || size > blocks {
        0
    } else {
        (blocks - size) / step + 1
    }
}

/// Window `i` covers block positions `[i*step, i*step + size - 1]`;
/// consecutive windows share `size - step` blocks. A short tail is dropped.
pub fn sliding_windows(
    blocks: &[BlockRecord],
    size: usize,
    step: usize,
) -> Result<Windowing<'_>, WindowError> {
    if size == 0 || step == 0 || step > size {
        return Err(WindowError::InvalidSliding { size, step });
    }
    if size > blocks.len() {
        return Err(WindowError::WindowLargerThanStream {
            size,
            blocks: blocks.len(),
        });
    }
    let count = sliding_window_count(blocks.len(), size, step);
    let windows: Vec<Window<'_>> = (0..count)
        .map(|i| {
            let slice = &blocks[i * step..i * step + size];
            let label = format!("blk:{}-{}", slice[0].height, slice[size - 1].height);
            Window::new(i, label, Members::Contiguous(slice))
        })
        .collect();
    let covered = (count - 1) * step + size;
    Ok(Windowing {
        windows,
        gaps: Vec::new(),
        dropped_blocks: blocks.len() - covered,
    })
}
