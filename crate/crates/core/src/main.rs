//! `decentrality` command-line front end.
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use decentrality::block::{self, AttributionPolicy, BlockRecord, StreamFormat};
use decentrality::pipeline::{self, OutputFormat, RunParams, DEFAULT_Z_THRESHOLD};
use decentrality::synth::{self, StreamConfig, DEFAULT_START_TIMESTAMP};
use decentrality::window::{default_step, ChainPreset, Granularity, WindowSpec};
use decentrality::DEFAULT_THRESHOLD;

#[derive(Parser)]
#[command(
    name = "decentrality",
    version,
    about = "Measure block-production decentralization over fixed and sliding windows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute Gini, entropy and Nakamoto coefficient per window
    Analyze(AnalyzeArgs),
    /// Write a synthetic block stream drawn from a miner profile file
    Generate(GenerateArgs),
    /// Summary statistics of a previously written metric series
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Block stream file(s), read in the order given
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Input format; inferred from the extension when omitted
    #[arg(long)]
    format: Option<StreamFormat>,
    /// CSV input starts with a header row
    #[arg(long)]
    header: bool,
    /// Chain preset for --sliding window sizes
    #[arg(long)]
    preset: Option<ChainPreset>,
    /// Non-overlapping calendar windows
    #[arg(long, value_name = "GRANULARITY")]
    fixed: Option<Granularity>,
    /// Sliding windows sized from --preset
    #[arg(long, value_name = "GRANULARITY")]
    sliding: Option<Granularity>,
    /// Explicit sliding window size in blocks
    #[arg(long, value_name = "N")]
    window_size: Option<usize>,
    /// Sliding step in blocks (default: half the window)
    #[arg(long, value_name = "M")]
    step: Option<usize>,
    #[arg(long, default_value_t = AttributionPolicy::Split)]
    attribution: AttributionPolicy,
    /// Nakamoto collusion threshold
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Anomaly z-score threshold
    #[arg(long, default_value_t = DEFAULT_Z_THRESHOLD)]
    z: f64,
    /// Series output path (stdout when omitted)
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    out_format: OutputFormat,
    /// Worker threads (default: available parallelism)
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON array of {id, share, start?, end?}
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: StreamFormat,
    /// Seconds between consecutive blocks
    #[arg(long, default_value_t = 600)]
    interval: i64,
    #[arg(long, default_value_t = DEFAULT_START_TIMESTAMP)]
    start_timestamp: i64,
    #[arg(long, default_value_t = 0)]
    start_height: u64,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Series file written by `analyze`
    #[arg(long)]
    input: PathBuf,
    /// Series format; inferred from the extension when omitted
    #[arg(long)]
    format: Option<OutputFormat>,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(args) => analyze(args),
        Command::Generate(args) => generate(args),
        Command::Summarize(args) => summarize(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn window_spec(args: &AnalyzeArgs) -> Result<WindowSpec> {
    let modes = [
        args.fixed.is_some(),
        args.sliding.is_some(),
        args.window_size.is_some(),
    ];
    match modes.iter().filter(|m| **m).count() {
        0 => bail!("config: choose one of --fixed, --sliding or --window-size"),
        1 => {}
        _ => bail!("config: --fixed, --sliding and --window-size are mutually exclusive"),
    }
    if let Some(granularity) = args.fixed {
        if args.preset.is_some() || args.step.is_some() {
            bail!("config: --preset and --step only apply to sliding windows");
        }
        return Ok(WindowSpec::FixedCalendar { granularity });
    }
    let size = match (args.sliding, args.window_size, args.preset) {
        (Some(g), None, Some(preset)) => preset.window_size(g),
        (Some(_), None, None) => bail!("config: --sliding requires --preset"),
        (None, Some(_), Some(_)) => {
            bail!("config: --preset and --window-size are mutually exclusive")
        }
        (None, Some(n), None) => n,
        _ => unreachable!("exactly one sliding mode is set"),
    };
    let step = args.step.unwrap_or_else(|| default_step(size));
    WindowSpec::sliding(size, step).map_err(|e| anyhow!("config: {e}"))
}

fn read_blocks(args: &AnalyzeArgs) -> Result<Vec<BlockRecord>> {
    let mut blocks: Vec<BlockRecord> = Vec::new();
    for path in &args.input {
        let format = args.format.unwrap_or(if has_extension(path, "jsonl") {
            StreamFormat::Jsonl
        } else {
            StreamFormat::Csv
        });
        let file =
            File::open(path).with_context(|| format!("parse: cannot open {}", path.display()))?;
        let records = block::parse_stream(BufReader::new(file), format, args.header)
            .with_context(|| format!("parse: {}", path.display()))?;
        if let (Some(last), Some(first)) = (blocks.last(), records.first()) {
            if first.height <= last.height {
                bail!(
                    "parse: {}: height {} does not exceed the previous file's last height {}",
                    path.display(),
                    first.height,
                    last.height
                );
            }
        }
        blocks.extend(records);
    }
    Ok(blocks)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            Box::new(BufWriter::new(File::create(p).with_context(|| {
                format!("output: cannot create {}", p.display())
            })?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let spec = window_spec(&args)?;
    if !(args.threshold > 0.0 && args.threshold <= 1.0) {
        bail!("config: --threshold must lie in (0, 1]");
    }
    let blocks = read_blocks(&args)?;
    let params = RunParams {
        policy: args.attribution,
        window: spec,
        threshold: args.threshold,
        jobs: args.jobs,
    };
    let mut series = pipeline::run(&blocks, &params)?;

    if series.points.len() >= 3 {
        series = pipeline::flag_anomalies(series, args.z)?;
    } else {
        eprintln!(
            "note: {} window(s); anomaly flagging skipped",
            series.points.len()
        );
    }
    if !series.gaps.is_empty() {
        eprintln!(
            "gaps: {} empty window(s): {}",
            series.gaps.len(),
            series.gaps.join(", ")
        );
    }
    if series.dropped_blocks > 0 {
        eprintln!(
            "remainder: {} trailing block(s) not covered by a full window",
            series.dropped_blocks
        );
    }
    eprintln!(
        "{} blocks -> {} windows, {} anomalies",
        blocks.len(),
        series.points.len(),
        series.anomalies.len()
    );

    let mut out = open_output(args.output.as_deref())?;
    match args.out_format {
        OutputFormat::Csv => {
            pipeline::write_series_csv(&mut out, &series)?;
            out.flush().context("output")?;
            match &args.output {
                Some(path) => {
                    let mut summary_path = path.clone().into_os_string();
                    summary_path.push(".summary.json");
                    let summary_path = PathBuf::from(summary_path);
                    let file = File::create(&summary_path).with_context(|| {
                        format!("output: cannot create {}", summary_path.display())
                    })?;
                    pipeline::write_summary_json(BufWriter::new(file), &series.summary)?;
                }
                None => pipeline::write_summary_json(io::stderr().lock(), &series.summary)?,
            }
        }
        OutputFormat::Json => {
            pipeline::write_series_json(&mut out, &series)?;
            out.flush().context("output")?;
        }
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let profiles = synth::load_profiles(&args.profile)
        .with_context(|| format!("profile: {}", args.profile.display()))?;
    let config = StreamConfig {
        total_blocks: args.count,
        block_interval_secs: args.interval,
        start_timestamp: args.start_timestamp,
        start_height: args.start_height,
        seed: args.seed,
    };
    let blocks = synth::generate(&profiles, &config).context("profile")?;
    let out = open_output(args.output.as_deref())?;
    block::write_stream(out, &blocks, args.format).context("output")?;
    Ok(())
}

fn summarize(args: SummarizeArgs) -> Result<()> {
    let format = args
        .format
        .unwrap_or(if has_extension(&args.input, "json") {
            OutputFormat::Json
        } else {
            OutputFormat::Csv
        });
    let file = File::open(&args.input)
        .with_context(|| format!("parse: cannot open {}", args.input.display()))?;
    let points = pipeline::read_series(BufReader::new(file), format).context("parse")?;
    let summary = pipeline::summarize(&points)?;
    let out = open_output(args.output.as_deref())?;
    pipeline::write_summary_json(out, &summary)?;
    Ok(())
}
