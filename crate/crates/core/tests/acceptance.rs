//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The real-data criterion runs only when `DECENTRALITY_BTC2019` points at a
//! block stream (CSV or JSONL, no header) covering 2019.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use decentrality::block::{self, AttributionPolicy, ProducerTally, StreamFormat};
use decentrality::metrics::{self, DEFAULT_THRESHOLD};
use decentrality::pipeline::{self, RunParams};
use decentrality::synth::{self, MinerProfile, StreamConfig};
use decentrality::window::{self, Granularity, WindowSpec};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Outcome::{Fail, Pass, Skip};

type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn tally_of(credits: &[f64]) -> ProducerTally {
    ProducerTally::from_credits(
        credits
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("p{i}"), *c)),
    )
    .unwrap()
}

/// Credits in (0, 100].
fn random_credits(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| 100.0 * (1.0 - rng.gen::<f64>())).collect()
}

fn gini_pairwise(xs: &[f64]) -> f64 {
    let total: f64 = xs.iter().sum();
    let diff: f64 = xs
        .iter()
        .flat_map(|a| xs.iter().map(move |b| (a - b).abs()))
        .sum();
    diff / (2.0 * xs.len() as f64 * total)
}

/// Smallest subset (by size) whose share reaches the threshold, found by
/// enumerating every subset sum.
fn nakamoto_exhaustive(xs: &[f64], threshold: f64) -> usize {
    let n = xs.len();
    let total: f64 = xs.iter().sum();
    let mut sums = vec![0.0f64; 1 << n];
    let mut best = n;
    for mask in 1usize..(1 << n) {
        let low = mask.trailing_zeros() as usize;
        sums[mask] = sums[mask & (mask - 1)] + xs[low];
        let k = mask.count_ones() as usize;
        if k < best && sums[mask] / total >= threshold {
            best = k;
        }
    }
    best
}

fn gini_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let len = rng.gen_range(1..=100);
        let xs = random_credits(&mut rng, len);
        let fast = metrics::gini(&tally_of(&xs)).unwrap();
        worst = worst.max((fast - gini_pairwise(&xs)).abs());
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-12 && elapsed < Duration::from_secs(5),
        format!("1000 tallies, max |fast - pairwise| = {worst:.3e}, {elapsed:.2?}"),
    )
}

fn nakamoto_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..500 {
        let len = rng.gen_range(1..=15);
        let xs = random_credits(&mut rng, len);
        if metrics::nakamoto(&tally_of(&xs), 0.51).unwrap() != nakamoto_exhaustive(&xs, 0.51) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        mismatches == 0 && elapsed < Duration::from_secs(10),
        format!("500 tallies, {mismatches} mismatches, {elapsed:.2?}"),
    )
}

fn entropy_exactness() -> Outcome {
    let mut worst = 0.0f64;
    for n in [1usize, 2, 4, 8, 16, 1024] {
        let h = metrics::shannon_entropy(&tally_of(&vec![3.0; n])).unwrap();
        worst = worst.max((h - (n as f64).log2()).abs());
    }
    let single: Vec<f64> = [0.5, 1.0, 7.0, 1e6]
        .iter()
        .map(|&c| metrics::shannon_entropy(&tally_of(&[c])).unwrap())
        .collect();
    check(
        worst < 1e-12 && single.iter().all(|&h| h == 0.0),
        format!("max |H - log2 n| = {worst:.3e}, single-producer H = {single:?}"),
    )
}

fn window_count() -> Outcome {
    let blocks: Vec<_> = (0..200u64)
        .map(|h| block::BlockRecord::new(h, 1_546_300_800 + h as i64 * 600, ["m"]).unwrap())
        .collect();
    let mut triples = 0usize;
    let mut failures = Vec::new();
    for s in 1..=200usize {
        let stream = &blocks[..s];
        for n in 1..=s {
            for m in 1..=n {
                triples += 1;
                let w = window::sliding_windows(stream, n, m).unwrap();
                let expected = (s - n) / m + 1;
                let mut ok = w.windows.len() == expected;
                for (i, win) in w.windows.iter().enumerate() {
                    // heights equal positions, so a window of n blocks spanning n heights is contiguous
                    ok &= win.len() == n
                        && win.first_height == (i * m) as u64
                        && win.last_height - win.first_height + 1 == n as u64;
                }
                for pair in w.windows.windows(2) {
                    let overlap = (pair[0].last_height + 1).saturating_sub(pair[1].first_height);
                    ok &= overlap == (n - m) as u64;
                }
                if !ok && failures.len() < 5 {
                    failures.push((s, n, m));
                }
            }
        }
    }
    check(
        failures.is_empty(),
        format!("{triples} (S, N, M) triples, failures {failures:?}"),
    )
}

fn invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut nakamoto_changes = 0;
    for _ in 0..200 {
        let len = rng.gen_range(1..=100);
        let xs = random_credits(&mut rng, len);
        let base = metrics::compute_all(&tally_of(&xs), DEFAULT_THRESHOLD).unwrap();

        let c = 10f64.powf(rng.gen_range(-3.0..3.0));
        let scaled: Vec<f64> = xs.iter().map(|x| x * c).collect();
        let mut labels: Vec<usize> = (0..len).collect();
        labels.shuffle(&mut rng);
        let relabeled =
            ProducerTally::from_credits(labels.iter().zip(&xs).map(|(l, x)| (format!("q{l}"), *x)))
                .unwrap();

        for t in [tally_of(&scaled), relabeled] {
            let v = metrics::compute_all(&t, DEFAULT_THRESHOLD).unwrap();
            worst = worst
                .max((v.gini - base.gini).abs())
                .max((v.entropy_bits - base.entropy_bits).abs());
            nakamoto_changes += usize::from(v.nakamoto != base.nakamoto);
        }
    }
    check(
        worst < 1e-12 && nakamoto_changes == 0,
        format!("200 tallies, max drift {worst:.3e}, nakamoto changes {nakamoto_changes}"),
    )
}

fn boundary_straddle() -> Outcome {
    let start = Instant::now();
    let seed = 2019;
    let measure = || {
        let blocks =
            synth::generate(&synth::straddle_profiles(), &synth::straddle_config(seed)).unwrap();
        let weekly = pipeline::run(
            &blocks,
            &RunParams::new(WindowSpec::FixedCalendar {
                granularity: Granularity::Week,
            }),
        )
        .unwrap();
        let sliding = pipeline::run(
            &blocks,
            &RunParams::new(WindowSpec::sliding(2016, 1008).unwrap()),
        )
        .unwrap();
        let d_share = window::sliding_windows(&blocks, 2016, 1008)
            .unwrap()
            .windows
            .iter()
            .map(|w| w.blocks().filter(|b| b.producers[0] == "D").count() as f64 / w.len() as f64)
            .fold(0.0, f64::max);
        (weekly, sliding, d_share)
    };
    let (weekly, sliding, d_share) = measure();
    let (weekly2, sliding2, _) = measure();
    let elapsed = start.elapsed();

    let weekly_n: Vec<usize> = weekly.points.iter().map(|p| p.nakamoto).collect();
    let sliding_n: Vec<usize> = sliding.points.iter().map(|p| p.nakamoto).collect();
    let ok = weekly.points.len() == 2
        && weekly_n.iter().all(|&n| n >= 2)
        && sliding_n.contains(&1)
        && weekly == weekly2
        && sliding == sliding2
        && elapsed < Duration::from_secs(1);
    check(
        ok,
        format!(
            "weekly nakamoto {weekly_n:?}, sliding N=2016 M=1008 nakamoto {sliding_n:?}, \
             max D share in any sliding window {d_share:.3}, {elapsed:.2?}"
        ),
    )
}

fn convergence() -> Outcome {
    let profiles: Vec<MinerProfile> = [0.4, 0.3, 0.2, 0.1]
        .iter()
        .enumerate()
        .map(|(i, &s)| MinerProfile::new(format!("m{i}"), s))
        .collect();
    let expected = synth::expected_metrics(&profiles, DEFAULT_THRESHOLD).unwrap();
    let (mut worst_h, mut worst_g, mut nakamoto_hits) = (0.0f64, 0.0f64, 0);
    for seed in 0..20 {
        let blocks = synth::generate(&profiles, &StreamConfig::new(10_000, 600, seed)).unwrap();
        let t = block::tally(&blocks, AttributionPolicy::Split).unwrap();
        let v = metrics::compute_all(&t, DEFAULT_THRESHOLD).unwrap();
        worst_h = worst_h.max((v.entropy_bits - expected.entropy_bits).abs());
        worst_g = worst_g.max((v.gini - expected.gini).abs());
        nakamoto_hits += usize::from(v.nakamoto == expected.nakamoto);
    }
    check(
        worst_h < 0.05 && worst_g < 0.02 && nakamoto_hits >= 19 && expected.nakamoto == 2,
        format!(
            "analytic H={:.4} G={:.4} N={}; max |dH|={worst_h:.4}, max |dG|={worst_g:.4}, nakamoto hits {nakamoto_hits}/20",
            expected.entropy_bits, expected.gini, expected.nakamoto
        ),
    )
}

fn parallel_determinism() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let profiles: Vec<MinerProfile> = (0..25)
        .map(|i| MinerProfile::new(format!("pool{i}"), 0.04))
        .collect();
    let blocks = synth::generate(&profiles, &StreamConfig::new(50_000, 600, 77)).unwrap();
    let input = dir.path().join("stream.csv");
    block::write_stream(
        std::fs::File::create(&input).unwrap(),
        &blocks,
        StreamFormat::Csv,
    )
    .unwrap();

    let analyze = |jobs: &str, out_format: &str| -> Option<Vec<u8>> {
        let out_path = dir.path().join(format!("series-{jobs}.{out_format}"));
        let status = Command::new(env!("CARGO_BIN_EXE_decentrality"))
            .args(["analyze", "--input"])
            .arg(&input)
            .args([
                "--preset",
                "btc",
                "--sliding",
                "day",
                "--jobs",
                jobs,
                "--out-format",
                out_format,
                "--output",
            ])
            .arg(&out_path)
            .output()
            .ok()?;
        status
            .status
            .success()
            .then(|| std::fs::read(&out_path).ok())?
    };
    let mut details = Vec::new();
    let mut ok = true;
    for fmt in ["csv", "json"] {
        let (one, eight) = (analyze("1", fmt), analyze("8", fmt));
        let same = one.is_some() && one == eight;
        ok &= same;
        details.push(format!(
            "{fmt}: {} bytes, identical={same}",
            one.map_or(0, |b| b.len())
        ));
    }
    check(
        ok,
        format!("50000 blocks, --jobs 1 vs 8; {}", details.join("; ")),
    )
}

fn real_bitcoin_2019() -> Outcome {
    let Ok(path) = std::env::var("DECENTRALITY_BTC2019") else {
        return Skip("set DECENTRALITY_BTC2019 to a 2019 Bitcoin block stream to run".into());
    };
    let path = Path::new(&path);
    let format = if path.extension().is_some_and(|e| e == "jsonl") {
        StreamFormat::Jsonl
    } else {
        StreamFormat::Csv
    };
    let file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) => return Fail(format!("cannot open {}: {e}", path.display())),
    };
    let blocks = match block::parse_stream(std::io::BufReader::new(file), format, false) {
        Ok(b) => b,
        Err(e) => return Fail(format!("parse: {e}")),
    };
    let fixed = |granularity| {
        pipeline::run(
            &blocks,
            &RunParams {
                policy: AttributionPolicy::Full,
                ..RunParams::new(WindowSpec::FixedCalendar { granularity })
            },
        )
    };
    let (Ok(daily), Ok(weekly), Ok(monthly)) = (
        fixed(Granularity::Day),
        fixed(Granularity::Week),
        fixed(Granularity::Month),
    ) else {
        return Fail("pipeline failed on the supplied data".into());
    };
    let Some(day14) = daily.points.iter().find(|p| p.window_label == "2019-01-14") else {
        return Fail("no window for 2019-01-14".into());
    };
    let (g_d, g_w, g_m) = (
        daily.summary.gini.mean,
        weekly.summary.gini.mean,
        monthly.summary.gini.mean,
    );
    check(
        (day14.gini - 0.34).abs() <= 0.02 && (day14.entropy_bits - 6.2).abs() <= 0.1 && g_m > g_w && g_w > g_d,
        format!(
            "2019-01-14: gini {:.3}, entropy {:.3}; mean gini day {g_d:.3} < week {g_w:.3} < month {g_m:.3}",
            day14.gini, day14.entropy_bits
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("gini matches pairwise oracle", gini_oracle),
        ("nakamoto matches subset enumeration", nakamoto_oracle),
        ("entropy exact on uniform tallies", entropy_exactness),
        ("sliding window count and overlap", window_count),
        ("scale and permutation invariance", invariance),
        ("boundary-straddle scenario", boundary_straddle),
        ("convergence to analytic metrics", convergence),
        ("determinism under parallelism", parallel_determinism),
        ("real 2019 Bitcoin data (optional)", real_bitcoin_2019),
    ];
    let mut failed = 0;
    for (name, criterion) in criteria {
        match criterion() {
            Pass(d) => println!("PASS  {name}: {d}"),
            Skip(d) => println!("SKIP  {name}: {d}"),
            Fail(d) => {
                failed += 1;
                println!("FAIL  {name}: {d}");
            }
        }
    }
    println!("acceptance: {} criteria, {failed} failed", criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
