//! Block records, stream parsing and producer attribution.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator between producer ids in the CSV `producers` column.
pub const PRODUCER_SEPARATOR: char = ';';

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("height {0} does not exceed the previous height")]
    NonMonotonicHeight(u64),
    #[error("block {0} has no producers")]
    EmptyProducers(u64),
    #[error("producer id {0:?} cannot be written as CSV")]
    Unrepresentable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TallyError {
    #[error("cannot tally an empty block sequence")]
    EmptyInput,
    #[error("producer {0:?} has a non-positive or non-finite credit")]
    InvalidCredit(String),
}

/// One produced block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub height: u64,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    /// Coinbase output addresses (Bitcoin) or the miner field (Ethereum).
    pub producers: Vec<String>,
}

impl BlockRecord {
    /// Builds a record, trimming producer ids and rejecting empty ones.
    pub fn new<I, S>(height: u64, timestamp: i64, producers: I) -> Result<Self, ParseError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let producers: Vec<String> = producers
            .into_iter()
            .map(|p| p.as_ref().trim().to_string())
            .collect();
        if producers.is_empty() || producers.iter().all(String::is_empty) {
            return Err(ParseError::EmptyProducers(height));
        }
        if producers.iter().any(String::is_empty) {
            return Err(ParseError::MalformedRecord {
                line: 0,
                reason: format!("blank producer id in block {height}"),
            });
        }
        Ok(Self {
            height,
            timestamp,
            producers,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributionPolicy {
    /// A block with k producers credits 1/k to each.
    #[default]
    Split,
    /// A block with k producers credits 1 to each.
    Full,
    /// Only the first listed producer is credited.
    First,
}

impl FromStr for AttributionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "split" => Ok(Self::Split),
            "full" => Ok(Self::Full),
            "first" => Ok(Self::First),
            other => Err(format!("unknown attribution policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamFormat {
    Csv,
    Jsonl,
}

impl FromStr for StreamFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(format!("unknown stream format {other:?}")),
        }
    }
}

/// Block credit per producer within one window. Every credit is positive.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProducerTally {
    credits: BTreeMap<String, f64>,
}

impl ProducerTally {
    pub fn from_credits<I, S>(credits: I) -> Result<Self, TallyError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (id, credit) in credits {
            let id = id.into();
            if !(credit.is_finite() && credit > 0.0) {
                return Err(TallyError::InvalidCredit(id));
            }
            *map.entry(id).or_insert(0.0) += credit;
        }
        Ok(Self { credits: map })
    }

    pub fn len(&self) -> usize {
        self.credits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.credits.is_empty()
    }

    pub fn get(&self, producer: &str) -> Option<f64> {
        self.credits.get(producer).copied()
    }

    pub fn total(&self) -> f64 {
        self.credits.values().sum()
    }

    /// Credits in producer-id order.
    pub fn credits(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.credits.values().copied()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&str, f64)> + '_ {
        self.credits.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Credits every producer of every block according to `policy`.
///
/// Per producer, contributions are grouped by the producer count of the
/// crediting block and summed in ascending group order, so the result is
/// bit-identical under any permutation of `blocks`.
pub fn tally<'a, I>(blocks: I, policy: AttributionPolicy) -> Result<ProducerTally, TallyError>
where
    I: IntoIterator<Item = &'a BlockRecord>,
{
    // producer -> (producers per block -> entry count)
    let mut entries: BTreeMap<&str, BTreeMap<usize, u64>> = BTreeMap::new();
    let mut seen = false;
    for block in blocks {
        seen = true;
        match policy {
            AttributionPolicy::First => {
                *entries
                    .entry(block.producers[0].as_str())
                    .or_default()
                    .entry(1)
                    .or_default() += 1;
            }
            AttributionPolicy::Full | AttributionPolicy::Split => {
                let k = match policy {
                    AttributionPolicy::Split => block.producers.len(),
                    _ => 1,
                };
                for p in &block.producers {
                    *entries.entry(p.as_str()).or_default().entry(k).or_default() += 1;
                }
            }
        }
    }
    if !seen {
        return Err(TallyError::EmptyInput);
    }
    let credits = entries
        .into_iter()
        .map(|(id, groups)| {
            let credit: f64 = groups.into_iter().map(|(k, n)| n as f64 / k as f64).sum();
            (id.to_string(), credit)
        })
        .collect();
    Ok(ProducerTally { credits })
}

#[derive(Deserialize)]
struct JsonRecord {
    height: u64,
    timestamp: i64,
    producers: Vec<String>,
}

struct HeightGuard(Option<u64>);

impl HeightGuard {
    fn check(&mut self, height: u64) -> Result<(), ParseError> {
        if let Some(prev) = self.0 {
            if height <= prev {
                return Err(ParseError::NonMonotonicHeight(height));
            }
        }
        self.0 = Some(height);
        Ok(())
    }
}

fn with_line(err: ParseError, line: usize) -> ParseError {
    match err {
        ParseError::MalformedRecord { reason, .. } => ParseError::MalformedRecord { line, reason },
        other => other,
    }
}

/// Reads a block stream in file order. Line numbers in errors are 1-based.
pub fn parse_stream<R: BufRead>(
    source: R,
    format: StreamFormat,
    has_header: bool,
) -> Result<Vec<BlockRecord>, ParseError> {
    match format {
        StreamFormat::Csv => parse_csv(source, has_header),
        StreamFormat::Jsonl => parse_jsonl(source),
    }
}

fn parse_csv<R: BufRead>(source: R, has_header: bool) -> Result<Vec<BlockRecord>, ParseError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut guard = HeightGuard(None);
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            match e.into_kind() {
                csv::ErrorKind::Io(io) => ParseError::Io(io),
                kind => ParseError::MalformedRecord {
                    line,
                    reason: format!("{kind:?}"),
                },
            }
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let malformed = |reason: String| ParseError::MalformedRecord { line, reason };
        if row.len() != 3 {
            return Err(malformed(format!("expected 3 fields, found {}", row.len())));
        }
        let height: u64 = row[0]
            .parse()
            .map_err(|e| malformed(format!("height {:?}: {e}", &row[0])))?;
        let timestamp: i64 = row[1]
            .parse()
            .map_err(|e| malformed(format!("timestamp {:?}: {e}", &row[1])))?;
        let producers: Vec<&str> = if row[2].is_empty() {
            Vec::new()
        } else {
            row[2].split(PRODUCER_SEPARATOR).collect()
        };
        let record =
            BlockRecord::new(height, timestamp, producers).map_err(|e| with_line(e, line))?;
        guard.check(height)?;
        out.push(record);
    }
    Ok(out)
}

fn parse_jsonl<R: BufRead>(source: R) -> Result<Vec<BlockRecord>, ParseError> {
    let mut guard = HeightGuard(None);
    let mut out = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: JsonRecord =
            serde_json::from_str(&line).map_err(|e| ParseError::MalformedRecord {
                line: lineno,
                reason: e.to_string(),
            })?;
        let record = BlockRecord::new(raw.height, raw.timestamp, raw.producers)
            .map_err(|e| with_line(e, lineno))?;
        guard.check(record.height)?;
        out.push(record);
    }
    Ok(out)
}

/// Writes records in the same schema `parse_stream` reads (CSV without header).
pub fn write_stream<W: Write>(
    mut sink: W,
    records: &[BlockRecord],
    format: StreamFormat,
) -> Result<(), ParseError> {
    match format {
        StreamFormat::Csv => {
            let mut writer = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(&mut sink);
            for r in records {
                if let Some(bad) = r.producers.iter().find(|p| p.contains(PRODUCER_SEPARATOR)) {
                    return Err(ParseError::Unrepresentable(bad.clone()));
                }
                let joined = r.producers.join(&PRODUCER_SEPARATOR.to_string());
                writer
                    .write_record([r.height.to_string(), r.timestamp.to_string(), joined])
                    .map_err(|e| ParseError::Io(e.into()))?;
            }
            writer.flush()?;
        }
        StreamFormat::Jsonl => {
            for r in records {
                serde_json::to_writer(&mut sink, r).map_err(std::io::Error::from)?;
                sink.write_all(b"\n")?;
            }
        }
    }
    sink.flush()?;
    Ok(())
}

impl fmt::Display for AttributionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Split => "split",
            Self::Full => "full",
            Self::First => "first",
        })
    }
}
