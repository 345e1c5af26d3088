//! Command-line driver: simulate datasets, run attacks, benchmark, export
//! correlation curves, and inspect dataset headers.
//!
//! Data goes to stdout or files; diagnostics go to stderr. Exit status is 0
//! exactly when the operation completed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cpakit::bench::{run_benchmark, write_csv, BenchData};
use cpakit::engine::{
    attack_with_details, correlation_curves, AttackConfig, AttackOutput, TableMode,
};
use cpakit::synth::{generate_dataset, SynthConfig};
use cpakit::trace::{
    load_ciphertexts, load_traces, read_binary_header, save_ciphertexts, save_traces, FileFormat,
    Precision,
};
use cpakit::MasterKey;

#[derive(Parser)]
#[command(
    name = "cpakit",
    version,
    about = "Correlation power analysis toolkit for AES-128"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Recover the AES-128 key from power traces and ciphertexts
    Attack(AttackArgs),
    /// Generate a synthetic dataset from a known key
    Simulate(SimulateArgs),
    /// Profile the attack phases over synthetic data
    Bench(BenchArgs),
    /// Write correlation-vs-sample curves for each byte's winning subkey
    ExportCurves(ExportCurvesArgs),
    /// Print dataset header metadata
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Binary,
    Csv,
}

impl From<FormatArg> for FileFormat {
    fn from(f: FormatArg) -> FileFormat {
        match f {
            FormatArg::Binary => FileFormat::Binary,
            FormatArg::Csv => FileFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Single,
    Double,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Precision {
        match p {
            PrecisionArg::Single => Precision::Single,
            PrecisionArg::Double => Precision::Double,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TableModeArg {
    Materialized,
    OnTheFly,
}

impl From<TableModeArg> for TableMode {
    fn from(t: TableModeArg) -> TableMode {
        match t {
            TableModeArg::Materialized => TableMode::Materialized,
            TableModeArg::OnTheFly => TableMode::OnTheFly,
        }
    }
}

#[derive(Args)]
struct EngineOpts {
    /// Trace storage precision for the run
    #[arg(long, value_enum, default_value = "double")]
    precision: PrecisionArg,
    /// Samples per streamed chunk
    #[arg(long, default_value_t = 4096)]
    chunk: usize,
    /// Worker threads (0 = all available)
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Selection-table storage
    #[arg(long, value_enum, default_value = "materialized")]
    table_mode: TableModeArg,
}

impl EngineOpts {
    fn config(&self) -> AttackConfig {
        AttackConfig {
            precision: self.precision.into(),
            chunk_size: self.chunk,
            workers: self.workers,
            table_mode: self.table_mode.into(),
        }
    }
}

#[derive(Args)]
struct AttackArgs {
    /// Trace dataset path
    #[arg(long)]
    traces: PathBuf,
    /// Ciphertext file path (32 hex chars per line)
    #[arg(long)]
    ciphertexts: PathBuf,
    /// Trace file format
    #[arg(long, value_enum, default_value = "binary")]
    format: FormatArg,
    #[command(flatten)]
    engine: EngineOpts,
    /// Also write the winners' correlation curves to this CSV
    #[arg(long)]
    export_curves: Option<PathBuf>,
    /// Emit the result as one JSON document instead of a table
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Master key as 32 hex characters
    #[arg(long)]
    key: String,
    /// Number of traces
    #[arg(long)]
    n: usize,
    /// Samples per trace (at least 16)
    #[arg(long)]
    m: usize,
    /// Gaussian noise sigma
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    /// Leakage amplitude per Hamming-distance unit
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Constant trace baseline
    #[arg(long, default_value_t = 0.0)]
    baseline: f64,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix: writes `<prefix>.traces` and `<prefix>.ct`
    #[arg(long)]
    out_prefix: String,
}

#[derive(Args)]
struct BenchArgs {
    /// Traces in the generated dataset
    #[arg(long, default_value_t = 1000)]
    synth_n: usize,
    /// Samples per generated trace
    #[arg(long, default_value_t = 1024)]
    synth_m: usize,
    /// Noise sigma for the generated dataset
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated worker counts (0 = all available)
    #[arg(long, value_delimiter = ',', default_value = "0")]
    workers: Vec<usize>,
    /// Timing repetitions per configuration (median reported)
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Write the CSV report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trace storage precision for the run
    #[arg(long, value_enum, default_value = "double")]
    precision: PrecisionArg,
    /// Samples per streamed chunk
    #[arg(long, default_value_t = 4096)]
    chunk: usize,
}

#[derive(Args)]
struct ExportCurvesArgs {
    /// Trace dataset path
    #[arg(long)]
    traces: PathBuf,
    /// Ciphertext file path
    #[arg(long)]
    ciphertexts: PathBuf,
    /// Trace file format
    #[arg(long, value_enum, default_value = "binary")]
    format: FormatArg,
    #[command(flatten)]
    engine: EngineOpts,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// Binary trace dataset path
    #[arg(long)]
    traces: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Attack(args) => cmd_attack(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Bench(args) => cmd_bench(args),
        Command::ExportCurves(args) => cmd_export_curves(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_dataset(
    traces: &Path,
    ciphertexts: &Path,
    format: FileFormat,
) -> Result<(cpakit::TraceSet, cpakit::CiphertextSet)> {
    let ts = load_traces(traces, format)
        .with_context(|| format!("loading traces from {}", traces.display()))?;
    let cts = load_ciphertexts(ciphertexts)
        .with_context(|| format!("loading ciphertexts from {}", ciphertexts.display()))?;
    Ok((ts, cts))
}

fn cmd_attack(args: AttackArgs) -> Result<()> {
    let cfg = args.engine.config();
    let (ts, cts) = load_dataset(&args.traces, &args.ciphertexts, args.format.into())?;
    let out = attack_with_details(&ts, &cts, &cfg)?;

    if args.json {
        println!("{}", serde_json::to_string_pretty(&out.result)?);
    } else {
        println!("byte  subkey  max|rho|   margin");
        for (b, ranking) in out.result.bytes.iter().enumerate() {
            let (k, rho) = ranking.best();
            println!("{b:>4}    0x{k:02x}  {rho:.6}  {:.6}", ranking.margin);
        }
        println!("round-10 key: {}", out.result.round10_key.to_hex());
        println!("master key:   {}", out.result.master_key.to_hex());
    }

    if let Some(path) = args.export_curves {
        write_curves_csv(&ts, &cts, &cfg, &out, &path)?;
        eprintln!("curves written to {}", path.display());
    }
    Ok(())
}

fn write_curves_csv(
    ts: &cpakit::TraceSet,
    cts: &cpakit::CiphertextSet,
    cfg: &AttackConfig,
    out: &AttackOutput,
    path: &Path,
) -> Result<()> {
    let pairs: Vec<(u8, usize)> = out
        .result
        .bytes
        .iter()
        .enumerate()
        .map(|(b, ranking)| (ranking.best().0, b))
        .collect();
    let curves = correlation_curves(ts, cts, cfg, &pairs)?;
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "byte,subkey,sample,rho")?;
    for (p, &(k, b)) in pairs.iter().enumerate() {
        for (j, rho) in curves[p].iter().enumerate() {
            writeln!(w, "{b},{k},{j},{rho}")?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let key = MasterKey::from_hex(&args.key).context("parsing --key")?;
    let mut cfg = SynthConfig::new(key, args.n, args.m, args.sigma, args.seed)?;
    cfg.signal_scale = args.scale;
    cfg.baseline = args.baseline;
    cfg.validate()?;

    let (ts, cts) = generate_dataset(&cfg)?;
    let trace_path = PathBuf::from(format!("{}.traces", args.out_prefix));
    let ct_path = PathBuf::from(format!("{}.ct", args.out_prefix));
    save_traces(&ts, &trace_path, FileFormat::Binary)
        .with_context(|| format!("writing {}", trace_path.display()))?;
    save_ciphertexts(&cts, &ct_path).with_context(|| format!("writing {}", ct_path.display()))?;
    eprintln!(
        "wrote {} ({} traces x {} samples) and {}",
        trace_path.display(),
        args.n,
        args.m,
        ct_path.display()
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let key = MasterKey::from_hex("000102030405060708090a0b0c0d0e0f").unwrap();
    let synth = SynthConfig::new(key, args.synth_n, args.synth_m, args.sigma, args.seed)?;
    let base = AttackConfig {
        precision: args.precision.into(),
        chunk_size: args.chunk,
        workers: 0,
        table_mode: TableMode::Materialized,
    };
    let run = run_benchmark(BenchData::Synth(synth), &base, &args.workers, args.reps)?;
    eprintln!("dataset generation: {:.3}s", run.prepare_seconds);
    eprint!("{}", cpakit::bench::render_table(&run.reports));
    match args.out {
        Some(path) => {
            let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            write_csv(&run.reports, BufWriter::new(f))?;
            eprintln!("report written to {}", path.display());
        }
        None => write_csv(&run.reports, std::io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_export_curves(args: ExportCurvesArgs) -> Result<()> {
    let cfg = args.engine.config();
    let (ts, cts) = load_dataset(&args.traces, &args.ciphertexts, args.format.into())?;
    let out = attack_with_details(&ts, &cts, &cfg)?;
    write_curves_csv(&ts, &cts, &cfg, &out, &args.out)?;
    eprintln!("curves written to {}", args.out.display());
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let header = read_binary_header(&args.traces)
        .with_context(|| format!("reading {}", args.traces.display()))?;
    println!("n: {}", header.n);
    println!("m: {}", header.m);
    println!("precision: {}", header.precision);
    println!("layout: {}", header.layout);
    Ok(())
}
