//! Trace and ciphertext datasets: the in-memory flat layout and the on-disk
//! binary, CSV, and hex-line formats.
//!
//! Binary format: magic `CPA1`, little-endian `u32` trace count, `u32`
//! samples per trace, one precision code byte (4 = single, 8 = double), one
//! layout code byte (0 = trace-major, 1 = sample-major), two reserved zero
//! bytes, then the raw little-endian IEEE-754 samples. The 16-byte header
//! makes payload-length checks exact.
//!
//! CSV is one trace per row, comma-separated decimals. Ciphertexts are one
//! 32-hex-character line per trace, aligned index-for-index with the traces.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

const MAGIC: &[u8; 4] = b"CPA1";
const HEADER_LEN: u64 = 16;

/// Sample storage width.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn code(self) -> u8 {
        match self {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }

    pub fn byte_width(self) -> usize {
        self.code() as usize
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            4 => Some(Precision::Single),
            8 => Some(Precision::Double),
            _ => None,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Single => "single",
            Precision::Double => "double",
        })
    }
}

/// Storage order of the flat sample array.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Layout {
    /// Each trace contiguous (the canonical on-disk order).
    TraceMajor,
    /// Each sample point contiguous across traces (the engine's order).
    SampleMajor,
}

impl Layout {
    pub fn code(self) -> u8 {
        match self {
            Layout::TraceMajor => 0,
            Layout::SampleMajor => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Layout::TraceMajor),
            1 => Some(Layout::SampleMajor),
            _ => None,
        }
    }

    pub fn flipped(self) -> Layout {
        match self {
            Layout::TraceMajor => Layout::SampleMajor,
            Layout::SampleMajor => Layout::TraceMajor,
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::TraceMajor => "trace-major",
            Layout::SampleMajor => "sample-major",
        })
    }
}

/// File format selector for trace datasets.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FileFormat {
    Binary,
    Csv,
}

/// Flat sample storage in the declared precision.
#[derive(Clone, Debug, PartialEq)]
pub enum Samples {
    Single(Vec<f32>),
    Double(Vec<f64>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::Single(v) => v.len(),
            Samples::Double(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn get(&self, idx: usize) -> f64 {
        match self {
            Samples::Single(v) => v[idx] as f64,
            Samples::Double(v) => v[idx],
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("length mismatch: expected {expected} bytes of payload, found {actual}")]
    LengthMismatch { expected: u64, actual: u64 },
    #[error("non-finite sample at trace {trace}, sample {sample}")]
    NonFinite { trace: usize, sample: usize },
    #[error("invalid shape: n={n}, m={m} (need n >= 1, m >= 1, samples length n*m)")]
    InvalidShape { n: usize, m: usize },
    #[error("line {line}: expected 32 hex characters, got {len}")]
    BadLineLength { line: usize, len: usize },
    #[error("line {line}: invalid hex")]
    BadHex { line: usize },
    #[error("line {line}: {reason}")]
    BadCsv { line: usize, reason: String },
}

/// N power traces of M samples each, as one flat array with a declared
/// layout and precision.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    n: usize,
    m: usize,
    layout: Layout,
    samples: Samples,
}

impl TraceSet {
    pub fn from_f64(
        n: usize,
        m: usize,
        layout: Layout,
        samples: Vec<f64>,
    ) -> Result<Self, DatasetError> {
        Self::validate(n, m, samples.len(), layout, |idx| samples[idx].is_finite())?;
        Ok(TraceSet {
            n,
            m,
            layout,
            samples: Samples::Double(samples),
        })
    }

    pub fn from_f32(
        n: usize,
        m: usize,
        layout: Layout,
        samples: Vec<f32>,
    ) -> Result<Self, DatasetError> {
        Self::validate(n, m, samples.len(), layout, |idx| samples[idx].is_finite())?;
        Ok(TraceSet {
            n,
            m,
            layout,
            samples: Samples::Single(samples),
        })
    }

    fn validate(
        n: usize,
        m: usize,
        len: usize,
        layout: Layout,
        finite_at: impl Fn(usize) -> bool,
    ) -> Result<(), DatasetError> {
        if n == 0 || m == 0 || len != n * m {
            return Err(DatasetError::InvalidShape { n, m });
        }
        for idx in 0..len {
            if !finite_at(idx) {
                let (trace, sample) = match layout {
                    Layout::TraceMajor => (idx / m, idx % m),
                    Layout::SampleMajor => (idx % n, idx / n),
                };
                return Err(DatasetError::NonFinite { trace, sample });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn precision(&self) -> Precision {
        match self.samples {
            Samples::Single(_) => Precision::Single,
            Samples::Double(_) => Precision::Double,
        }
    }

    #[inline]
    fn flat_index(&self, trace: usize, sample: usize) -> usize {
        match self.layout {
            Layout::TraceMajor => trace * self.m + sample,
            Layout::SampleMajor => sample * self.n + trace,
        }
    }

    /// Layout-independent element accessor: sample `j` of trace `i`.
    #[inline]
    pub fn get(&self, trace: usize, sample: usize) -> f64 {
        assert!(trace < self.n && sample < self.m);
        self.samples.get(self.flat_index(trace, sample))
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    /// Same logical matrix, opposite storage order; `get` reads identically
    /// before and after.
    pub fn transpose_layout(&self) -> TraceSet {
        let flipped = self.layout.flipped();
        let out_index = |i: usize, j: usize| match flipped {
            Layout::TraceMajor => i * self.m + j,
            Layout::SampleMajor => j * self.n + i,
        };
        let samples = match &self.samples {
            Samples::Single(v) => {
                let mut out = vec![0f32; v.len()];
                for i in 0..self.n {
                    for j in 0..self.m {
                        out[out_index(i, j)] = v[self.flat_index(i, j)];
                    }
                }
                Samples::Single(out)
            }
            Samples::Double(v) => {
                let mut out = vec![0f64; v.len()];
                for i in 0..self.n {
                    for j in 0..self.m {
                        out[out_index(i, j)] = v[self.flat_index(i, j)];
                    }
                }
                Samples::Double(out)
            }
        };
        TraceSet {
            n: self.n,
            m: self.m,
            layout: flipped,
            samples,
        }
    }

    /// Converts storage to the requested precision. Narrowing to single
    /// rounds each sample to `f32`; widening back is exact.
    pub fn to_precision(&self, precision: Precision) -> TraceSet {
        if self.precision() == precision {
            return self.clone();
        }
        let samples = match (&self.samples, precision) {
            (Samples::Double(v), Precision::Single) => {
                Samples::Single(v.iter().map(|&x| x as f32).collect())
            }
            (Samples::Single(v), Precision::Double) => {
                Samples::Double(v.iter().map(|&x| x as f64).collect())
            }
            _ => unreachable!("precision already matched"),
        };
        TraceSet {
            n: self.n,
            m: self.m,
            layout: self.layout,
            samples,
        }
    }
}

/// N 16-byte ciphertexts, row `i` belonging to trace `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CiphertextSet {
    n: usize,
    bytes: Vec<u8>,
}

impl CiphertextSet {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, DatasetError> {
        if !bytes.len().is_multiple_of(16) {
            return Err(DatasetError::InvalidShape {
                n: bytes.len() / 16,
                m: 16,
            });
        }
        Ok(CiphertextSet {
            n: bytes.len() / 16,
            bytes,
        })
    }

    pub fn from_blocks(blocks: &[[u8; 16]]) -> Self {
        let mut bytes = Vec::with_capacity(blocks.len() * 16);
        for b in blocks {
            bytes.extend_from_slice(b);
        }
        CiphertextSet {
            n: blocks.len(),
            bytes,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn ciphertext(&self, i: usize) -> &[u8; 16] {
        self.bytes[i * 16..i * 16 + 16]
            .try_into()
            .expect("16-byte row")
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

/// Writes a trace set in the chosen format.
pub fn save_traces(ts: &TraceSet, path: &Path, format: FileFormat) -> Result<(), DatasetError> {
    match format {
        FileFormat::Binary => save_binary(ts, path),
        FileFormat::Csv => save_csv(ts, path),
    }
}

/// Loads a trace set, rejecting malformed headers, payload-length
/// disagreements, and non-finite samples.
pub fn load_traces(path: &Path, format: FileFormat) -> Result<TraceSet, DatasetError> {
    match format {
        FileFormat::Binary => load_binary(path),
        FileFormat::Csv => load_csv(path),
    }
}

/// Header metadata of a binary trace file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceHeader {
    pub n: usize,
    pub m: usize,
    pub precision: Precision,
    pub layout: Layout,
}

/// Reads and validates just the 16-byte header (including the payload
/// length check) without loading samples.
pub fn read_binary_header(path: &Path) -> Result<TraceHeader, DatasetError> {
    let file = File::open(path)?;
    let file_len = file.metadata()?.len();
    let mut r = BufReader::new(file);
    let header = parse_header(&mut r, file_len)?;
    Ok(header)
}

fn parse_header<R: Read>(r: &mut R, file_len: u64) -> Result<TraceHeader, DatasetError> {
    if file_len < HEADER_LEN {
        return Err(DatasetError::MalformedHeader(format!(
            "file too short for header ({file_len} bytes)"
        )));
    }
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[0..4] != MAGIC {
        return Err(DatasetError::MalformedHeader("bad magic".into()));
    }
    let n = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let m = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let precision = Precision::from_code(header[12]).ok_or_else(|| {
        DatasetError::MalformedHeader(format!("unknown precision code {}", header[12]))
    })?;
    let layout = Layout::from_code(header[13]).ok_or_else(|| {
        DatasetError::MalformedHeader(format!("unknown layout code {}", header[13]))
    })?;
    if header[14] != 0 || header[15] != 0 {
        return Err(DatasetError::MalformedHeader(
            "reserved bytes must be zero".into(),
        ));
    }
    if n == 0 || m == 0 {
        return Err(DatasetError::InvalidShape { n, m });
    }
    let expected = (n as u64) * (m as u64) * precision.byte_width() as u64;
    let actual = file_len - HEADER_LEN;
    if expected != actual {
        return Err(DatasetError::LengthMismatch { expected, actual });
    }
    Ok(TraceHeader {
        n,
        m,
        precision,
        layout,
    })
}

fn save_binary(ts: &TraceSet, path: &Path) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(ts.n as u32).to_le_bytes())?;
    w.write_all(&(ts.m as u32).to_le_bytes())?;
    w.write_all(&[ts.precision().code(), ts.layout.code(), 0, 0])?;
    match &ts.samples {
        Samples::Single(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Samples::Double(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn load_binary(path: &Path) -> Result<TraceSet, DatasetError> {
    let file = File::open(path)?;
    let file_len = file.metadata()?.len();
    let mut r = BufReader::new(file);
    let TraceHeader {
        n,
        m,
        precision,
        layout,
    } = parse_header(&mut r, file_len)?;

    let count = n * m;
    match precision {
        Precision::Single => {
            let mut buf = vec![0u8; count * 4];
            r.read_exact(&mut buf)?;
            let samples: Vec<f32> = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            TraceSet::from_f32(n, m, layout, samples)
        }
        Precision::Double => {
            let mut buf = vec![0u8; count * 8];
            r.read_exact(&mut buf)?;
            let samples: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            TraceSet::from_f64(n, m, layout, samples)
        }
    }
}

fn save_csv(ts: &TraceSet, path: &Path) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..ts.n {
        let mut line = String::new();
        for j in 0..ts.m {
            if j > 0 {
                line.push(',');
            }
            // Shortest round-trip decimal form of the f64 image of the
            // stored sample.
            line.push_str(&format!("{}", ts.get(i, j)));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn load_csv(path: &Path) -> Result<TraceSet, DatasetError> {
    let r = BufReader::new(File::open(path)?);
    let mut samples: Vec<f64> = Vec::new();
    let mut m = 0usize;
    let mut n = 0usize;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| DatasetError::BadCsv {
            line: lineno + 1,
            reason: e.to_string(),
        })?;
        if n == 0 {
            m = row.len();
        } else if row.len() != m {
            return Err(DatasetError::BadCsv {
                line: lineno + 1,
                reason: format!("expected {m} fields, got {}", row.len()),
            });
        }
        samples.extend_from_slice(&row);
        n += 1;
    }
    TraceSet::from_f64(n, m, Layout::TraceMajor, samples)
}

/// Loads ciphertexts from a file of 32-hex-character lines.
pub fn load_ciphertexts(path: &Path) -> Result<CiphertextSet, DatasetError> {
    let r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.len() != 32 {
            return Err(DatasetError::BadLineLength {
                line: lineno + 1,
                len: line.len(),
            });
        }
        let row = hex::decode(line).map_err(|_| DatasetError::BadHex { line: lineno + 1 })?;
        bytes.extend_from_slice(&row);
    }
    CiphertextSet::from_bytes(bytes)
}

/// Writes ciphertexts as lowercase hex lines.
pub fn save_ciphertexts(cs: &CiphertextSet, path: &Path) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..cs.n() {
        writeln!(w, "{}", hex::encode(cs.ciphertext(i)))?;
    }
    w.flush()?;
    Ok(())
}
