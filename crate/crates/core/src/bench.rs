//! Wall-clock profiling of attack runs: per-phase times, phase shares, and
//! throughput, reported as machine-readable CSV or a human-readable table.
//!
//! Each configuration is run `repetitions` times on a monotonic clock and
//! the medians are reported. In the CSV the precision column carries the
//! storage width code (4 = single, 8 = double) so every field is numeric.

use std::io::{self, Write};
use std::time::Instant;

use thiserror::Error;

use crate::engine::{attack_with_details, AttackConfig, AttackError};
use crate::synth::{generate_dataset, SynthConfig, SynthError};
use crate::trace::{CiphertextSet, Precision, TraceSet};

/// What to benchmark: an existing dataset or one generated on the spot.
pub enum BenchData<'a> {
    Dataset {
        traces: &'a TraceSet,
        ciphertexts: &'a CiphertextSet,
    },
    Synth(SynthConfig),
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

/// Timing summary for one (dataset, worker count) configuration.
#[derive(Clone, Debug)]
pub struct BenchReport {
    pub n: usize,
    pub m: usize,
    pub workers: usize,
    pub precision: Precision,
    /// Median seconds per phase.
    pub phase_seconds: [f64; 4],
    /// Median wall seconds for the whole attack call.
    pub total_seconds: f64,
    /// Raw wall seconds of every repetition.
    pub rep_totals: Vec<f64>,
    /// Trace-samples processed per second of median wall time.
    pub throughput: f64,
}

impl BenchReport {
    /// Phase shares of the summed phase time, in percent (sums to 100).
    pub fn phase_percentages(&self) -> [f64; 4] {
        let sum: f64 = self.phase_seconds.iter().sum();
        if sum <= 0.0 {
            return [0.0; 4];
        }
        self.phase_seconds.map(|s| 100.0 * s / sum)
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3}",
            self.n,
            self.m,
            self.workers,
            self.precision.code(),
            self.phase_seconds[0],
            self.phase_seconds[1],
            self.phase_seconds[2],
            self.phase_seconds[3],
            self.total_seconds,
            self.throughput,
        )
    }
}

pub const CSV_HEADER: &str =
    "n,m,workers,precision,phase1_s,phase2_s,phase3_s,phase4_s,total_s,throughput";

/// Benchmark results plus the untimed setup cost (generation or none).
pub struct BenchRun {
    /// Seconds spent producing the dataset, reported separately from the
    /// attack phases.
    pub prepare_seconds: f64,
    pub reports: Vec<BenchReport>,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Runs the attack at each worker count, `repetitions` times each, and
/// reports median timings per configuration.
pub fn run_benchmark(
    data: BenchData,
    base: &AttackConfig,
    worker_counts: &[usize],
    repetitions: usize,
) -> Result<BenchRun, BenchError> {
    let reps = repetitions.max(1);
    let generated;
    let prepare_seconds;
    let (ts, cts): (&TraceSet, &CiphertextSet) = match data {
        BenchData::Dataset {
            traces,
            ciphertexts,
        } => {
            prepare_seconds = 0.0;
            (traces, ciphertexts)
        }
        BenchData::Synth(cfg) => {
            let t = Instant::now();
            generated = generate_dataset(&cfg)?;
            prepare_seconds = t.elapsed().as_secs_f64();
            (&generated.0, &generated.1)
        }
    };

    let mut reports = Vec::with_capacity(worker_counts.len());
    for &workers in worker_counts {
        let cfg = AttackConfig {
            workers,
            ..base.clone()
        };
        let mut phase_samples: [Vec<f64>; 4] = Default::default();
        let mut rep_totals = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t = Instant::now();
            let out = attack_with_details(ts, cts, &cfg)?;
            rep_totals.push(t.elapsed().as_secs_f64());
            for (acc, s) in phase_samples.iter_mut().zip(out.timings.seconds()) {
                acc.push(s);
            }
        }
        let total_seconds = median(&rep_totals);
        reports.push(BenchReport {
            n: ts.n(),
            m: ts.m(),
            workers,
            precision: cfg.precision,
            phase_seconds: [
                median(&phase_samples[0]),
                median(&phase_samples[1]),
                median(&phase_samples[2]),
                median(&phase_samples[3]),
            ],
            total_seconds,
            rep_totals,
            throughput: (ts.n() * ts.m()) as f64 / total_seconds,
        });
    }
    Ok(BenchRun {
        prepare_seconds,
        reports,
    })
}

/// Writes the reports as CSV with the fixed header.
pub fn write_csv<W: Write>(reports: &[BenchReport], mut w: W) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Human-readable table with phase shares.
pub fn render_table(reports: &[BenchReport]) -> String {
    let mut out = String::new();
    out.push_str(
        "     n      m  workers  prec    phase1_s    phase2_s    phase3_s    phase4_s     total_s  p2_share\n",
    );
    for r in reports {
        let pct = r.phase_percentages();
        out.push_str(&format!(
            "{:6} {:6} {:8}  {:>6} {:>11.4} {:>11.4} {:>11.4} {:>11.6} {:>11.4} {:>8.1}%\n",
            r.n,
            r.m,
            r.workers,
            r.precision.to_string(),
            r.phase_seconds[0],
            r.phase_seconds[1],
            r.phase_seconds[2],
            r.phase_seconds[3],
            r.total_seconds,
            pct[1],
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::MasterKey;

    fn key() -> MasterKey {
        MasterKey::from_hex("000102030405060708090a0b0c0d0e0f").unwrap()
    }

    #[test]
    fn phase_times_account_for_the_total() {
        let cfg = SynthConfig::new(key(), 100, 1000, 1.0, 1).unwrap();
        let run = run_benchmark(BenchData::Synth(cfg), &AttackConfig::default(), &[1], 1).unwrap();
        assert_eq!(run.reports.len(), 1);
        let r = &run.reports[0];
        assert!(r.phase_seconds.iter().all(|&s| s >= 0.0));
        let sum: f64 = r.phase_seconds.iter().sum();
        assert!(
            (sum - r.total_seconds).abs() <= 0.05 * r.total_seconds,
            "phases {sum} vs total {}",
            r.total_seconds
        );
        let pct: f64 = r.phase_percentages().iter().sum();
        assert!((pct - 100.0).abs() <= 0.1);
        assert!(r.throughput > 0.0);
    }

    #[test]
    fn parallel_run_is_not_slower_than_serial() {
        let cfg = SynthConfig::new(key(), 1000, 750, 1.0, 2).unwrap();
        let run =
            run_benchmark(BenchData::Synth(cfg), &AttackConfig::default(), &[1, 0], 1).unwrap();
        assert_eq!(run.reports.len(), 2);
        let serial = run.reports[0].total_seconds;
        let parallel = run.reports[1].total_seconds;
        assert!(
            parallel <= serial,
            "parallel {parallel}s slower than serial {serial}s"
        );
    }

    #[test]
    fn median_of_repetitions_is_ordered() {
        let cfg = SynthConfig::new(key(), 60, 64, 1.0, 3).unwrap();
        let run = run_benchmark(BenchData::Synth(cfg), &AttackConfig::default(), &[0], 5).unwrap();
        let r = &run.reports[0];
        assert_eq!(r.rep_totals.len(), 5);
        let min = r.rep_totals.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = r.rep_totals.iter().cloned().fold(0.0, f64::max);
        assert!(min <= r.total_seconds && r.total_seconds <= max);
    }

    #[test]
    fn csv_schema_is_stable_and_numeric() {
        let cfg = SynthConfig::new(key(), 30, 32, 1.0, 4).unwrap();
        let run =
            run_benchmark(BenchData::Synth(cfg), &AttackConfig::default(), &[1, 0], 1).unwrap();
        let mut buf = Vec::new();
        write_csv(&run.reports, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 2);
        for row in rows {
            let fields: Vec<&str> = row.split(',').collect();
            assert_eq!(fields.len(), 10);
            for f in fields {
                let v: f64 = f.parse().expect("numeric field");
                assert!(v.is_finite());
            }
        }
    }

    #[test]
    fn median_helper() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }
}
