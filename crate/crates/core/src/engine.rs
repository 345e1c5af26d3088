//! The four-phase correlation pipeline.
//!
//! Phase 1 computes selection-function statistics per (subkey, byte position)
//! over the 256x16 hypothesis grid. Phase 2 computes trace statistics per
//! (subkey, byte position, sample point): the per-sample sums and the cross
//! sums against the selection values from Phase 1. Phase 3 reduces each
//! hypothesis to its maximum absolute correlation over all sample points, and
//! Phase 4 ranks subkeys per byte position and inverts the key schedule.
//!
//! The correlation estimate for sample `j` under one hypothesis is the
//! factored one-pass form
//!
//! ```text
//! rho = (n*sum(W*H) - sum(W)*sum(H))
//!       / (sqrt(n*sum(W^2) - sum(W)^2) * sqrt(n*sum(H^2) - sum(H)^2))
//! ```
//!
//! so all phases exchange nothing but sums. Work items are independent grid
//! cells; every per-cell sum runs over traces in a fixed ascending order, so
//! results are bit-identical for any worker count and any sample-chunk
//! partition. The per-sample sums are computed once and shared across all
//! 4096 hypotheses, and `sum_wh` is stored hypothesis-major with contiguous
//! sample runs, which is what the per-hypothesis Phase 3 scans want.

use std::ops::Range;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::aes::{invert_key_schedule, selection_value, MasterKey, RoundKey};
use crate::trace::{CiphertextSet, Layout, Precision, Samples, TraceSet};

/// Possible values of one subkey byte.
pub const SUBKEYS: usize = 256;
/// Attacked byte positions of the round key.
pub const KEY_BYTES: usize = 16;
/// Size of the full hypothesis grid.
pub const GRID: usize = SUBKEYS * KEY_BYTES;

/// Samples per inner block of the Phase 2 kernel; eight independent
/// accumulators per hypothesis keep the trace loop vectorizable without
/// reordering any per-cell sum.
const LANES: usize = 8;

const VAR_EPS_REL: f64 = 1e-12;
const VAR_EPS_FLOOR: f64 = 1e-30;

#[inline]
fn cell_index(k: usize, b: usize) -> usize {
    k * KEY_BYTES + b
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AttackError {
    #[error("trace count {traces} does not match ciphertext count {ciphertexts}")]
    CountMismatch { traces: usize, ciphertexts: usize },
    #[error("need at least 2 traces for a correlation estimate, got {n}")]
    TooFewTraces { n: usize },
}

/// Storage strategy for the selection-value table.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum TableMode {
    /// One byte per (trace, subkey, byte position): fastest, n*4096 bytes.
    #[default]
    Materialized,
    /// Recompute selection values on demand; for trace counts where the
    /// table would not fit memory.
    OnTheFly,
}

/// Selection-function values H for every (trace, subkey, byte position),
/// either materialized or recomputed on access.
pub struct SelectionTable<'a> {
    cts: &'a CiphertextSet,
    n: usize,
    /// Hypothesis-major, trace-minor: `values[cell*n + i]`.
    values: Option<Vec<u8>>,
}

/// Builds the Phase 1 input table over all hypotheses.
pub fn build_selection_table(cts: &CiphertextSet, mode: TableMode) -> SelectionTable<'_> {
    SelectionTable::build(cts, mode)
}

impl<'a> SelectionTable<'a> {
    pub fn build(cts: &'a CiphertextSet, mode: TableMode) -> Self {
        let n = cts.n();
        assert!(n >= 1, "selection table needs at least one ciphertext");
        let values = match mode {
            TableMode::OnTheFly => None,
            TableMode::Materialized => {
                let mut v = vec![0u8; GRID * n];
                v.par_chunks_mut(n).enumerate().for_each(|(cell, col)| {
                    let k = (cell / KEY_BYTES) as u8;
                    let b = cell % KEY_BYTES;
                    for (i, out) in col.iter_mut().enumerate() {
                        *out = selection_value(cts.ciphertext(i), b, k);
                    }
                });
                Some(v)
            }
        };
        SelectionTable { cts, n, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> TableMode {
        if self.values.is_some() {
            TableMode::Materialized
        } else {
            TableMode::OnTheFly
        }
    }

    /// H for trace `i` under hypothesis (subkey `k`, byte position `b`).
    #[inline]
    pub fn value(&self, i: usize, b: usize, k: u8) -> u8 {
        match &self.values {
            Some(v) => v[cell_index(k as usize, b) * self.n + i],
            None => selection_value(self.cts.ciphertext(i), b, k),
        }
    }

    fn column_slice(&self, cell: usize) -> Option<&[u8]> {
        self.values
            .as_ref()
            .map(|v| &v[cell * self.n..(cell + 1) * self.n])
    }

    fn fill_column(&self, cell: usize, out: &mut [u8]) {
        match self.column_slice(cell) {
            Some(col) => out.copy_from_slice(col),
            None => {
                let k = (cell / KEY_BYTES) as u8;
                let b = cell % KEY_BYTES;
                for (i, o) in out.iter_mut().enumerate() {
                    *o = selection_value(self.cts.ciphertext(i), b, k);
                }
            }
        }
    }
}

/// Phase 1 output: sum(H) and sum(H^2) per hypothesis, integer-exact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelStats {
    n: usize,
    sum_h: Vec<u64>,
    sum_h2: Vec<u64>,
}

impl ModelStats {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sum_h(&self, k: usize, b: usize) -> u64 {
        self.sum_h[cell_index(k, b)]
    }

    pub fn sum_h2(&self, k: usize, b: usize) -> u64 {
        self.sum_h2[cell_index(k, b)]
    }

    /// n*sum(H^2) - sum(H)^2, the H-side variance term of the correlation.
    pub fn variance_term(&self, k: usize, b: usize) -> u128 {
        let cell = cell_index(k, b);
        self.n as u128 * self.sum_h2[cell] as u128 - (self.sum_h[cell] as u128).pow(2)
    }
}

/// Finding power model statistics: per-hypothesis selection sums.
pub fn phase1_model_stats(st: &SelectionTable) -> ModelStats {
    let n = st.n();
    let mut sum_h = vec![0u64; GRID];
    let mut sum_h2 = vec![0u64; GRID];
    sum_h
        .par_iter_mut()
        .zip(sum_h2.par_iter_mut())
        .enumerate()
        .for_each(|(cell, (sh, sh2))| {
            let (mut s, mut s2) = (0u64, 0u64);
            match st.column_slice(cell) {
                Some(col) => {
                    for &h in col {
                        s += h as u64;
                        s2 += (h as u64) * (h as u64);
                    }
                }
                None => {
                    let k = (cell / KEY_BYTES) as u8;
                    let b = cell % KEY_BYTES;
                    for i in 0..n {
                        let h = selection_value(st.cts.ciphertext(i), b, k) as u64;
                        s += h;
                        s2 += h * h;
                    }
                }
            }
            *sh = s;
            *sh2 = s2;
        });
    ModelStats { n, sum_h, sum_h2 }
}

/// Phase 2 output for one sample chunk: per-sample trace sums plus the cross
/// sums against every hypothesis, all accumulated in double precision.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceStats {
    n: usize,
    j0: usize,
    j1: usize,
    sum_w: Vec<f64>,
    sum_w2: Vec<f64>,
    /// Hypothesis-major, sample-minor: `sum_wh[cell*width + (j - j0)]`.
    sum_wh: Vec<f64>,
}

impl TraceStats {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Absolute sample range this chunk covers.
    pub fn sample_range(&self) -> Range<usize> {
        self.j0..self.j1
    }

    #[inline]
    fn local(&self, j: usize) -> usize {
        assert!(j >= self.j0 && j < self.j1, "sample {j} outside chunk");
        j - self.j0
    }

    pub fn sum_w(&self, j: usize) -> f64 {
        self.sum_w[self.local(j)]
    }

    pub fn sum_w2(&self, j: usize) -> f64 {
        self.sum_w2[self.local(j)]
    }

    pub fn sum_wh(&self, k: usize, b: usize, j: usize) -> f64 {
        self.sum_wh[cell_index(k, b) * (self.j1 - self.j0) + self.local(j)]
    }
}

/// Gathers samples `j0..j1` into lane-padded blocks: block `t` holds samples
/// `j0+t*LANES ..` trace-major with LANES contiguous lanes per trace, padded
/// with zeros past `j1`. One layout for every storage precision and order.
fn gather_lane_blocks(ts: &TraceSet, j0: usize, j1: usize) -> Vec<f64> {
    let n = ts.n();
    let m = ts.m();
    let width = j1 - j0;
    let nblocks = width.div_ceil(LANES);
    let mut out = vec![0.0f64; nblocks * n * LANES];
    out.par_chunks_mut(n * LANES)
        .enumerate()
        .for_each(|(t, blk)| {
            let jstart = j0 + t * LANES;
            let lanes = (j1 - jstart).min(LANES);
            match (ts.layout(), ts.samples()) {
                (Layout::TraceMajor, Samples::Double(v)) => {
                    for i in 0..n {
                        let row = &v[i * m + jstart..][..lanes];
                        let dst = &mut blk[i * LANES..][..lanes];
                        dst.copy_from_slice(row);
                    }
                }
                (Layout::TraceMajor, Samples::Single(v)) => {
                    for i in 0..n {
                        let row = &v[i * m + jstart..][..lanes];
                        let dst = &mut blk[i * LANES..][..lanes];
                        for (d, &s) in dst.iter_mut().zip(row) {
                            *d = s as f64;
                        }
                    }
                }
                (Layout::SampleMajor, Samples::Double(v)) => {
                    for l in 0..lanes {
                        let col = &v[(jstart + l) * n..][..n];
                        for (i, &s) in col.iter().enumerate() {
                            blk[i * LANES + l] = s;
                        }
                    }
                }
                (Layout::SampleMajor, Samples::Single(v)) => {
                    for l in 0..lanes {
                        let col = &v[(jstart + l) * n..][..n];
                        for (i, &s) in col.iter().enumerate() {
                            blk[i * LANES + l] = s as f64;
                        }
                    }
                }
            }
        });
    out
}

struct BlockSums {
    tile: Vec<f64>,
    sum_w: [f64; LANES],
    sum_w2: [f64; LANES],
}

fn phase2_materialized(ts: &TraceSet, st: &SelectionTable, j0: usize, j1: usize) -> TraceStats {
    let n = ts.n();
    let width = j1 - j0;
    let nblocks = width.div_ceil(LANES);
    let wblk = gather_lane_blocks(ts, j0, j1);

    let blocks: Vec<BlockSums> = (0..nblocks)
        .into_par_iter()
        .map(|t| {
            let w = &wblk[t * n * LANES..][..n * LANES];

            let mut sum_w = [0.0f64; LANES];
            let mut sum_w2 = [0.0f64; LANES];
            for row in w.chunks_exact(LANES) {
                for l in 0..LANES {
                    sum_w[l] += row[l];
                    sum_w2[l] += row[l] * row[l];
                }
            }

            let mut tile = vec![0.0f64; GRID * LANES];
            for cell in 0..GRID {
                let h = st
                    .column_slice(cell)
                    .expect("materialized kernel needs a materialized table");
                let mut acc = [0.0f64; LANES];
                for (&hv, row) in h.iter().zip(w.chunks_exact(LANES)) {
                    let hv = hv as f64;
                    for l in 0..LANES {
                        acc[l] += hv * row[l];
                    }
                }
                tile[cell * LANES..][..LANES].copy_from_slice(&acc);
            }
            BlockSums {
                tile,
                sum_w,
                sum_w2,
            }
        })
        .collect();

    let mut sum_w = vec![0.0f64; width];
    let mut sum_w2 = vec![0.0f64; width];
    for (t, blk) in blocks.iter().enumerate() {
        let lanes = (width - t * LANES).min(LANES);
        sum_w[t * LANES..][..lanes].copy_from_slice(&blk.sum_w[..lanes]);
        sum_w2[t * LANES..][..lanes].copy_from_slice(&blk.sum_w2[..lanes]);
    }

    let mut sum_wh = vec![0.0f64; GRID * width];
    sum_wh
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(cell, run)| {
            for (t, blk) in blocks.iter().enumerate() {
                let lanes = (width - t * LANES).min(LANES);
                run[t * LANES..][..lanes].copy_from_slice(&blk.tile[cell * LANES..][..lanes]);
            }
        });

    TraceStats {
        n,
        j0,
        j1,
        sum_w,
        sum_w2,
        sum_wh,
    }
}

/// Per-trace row accumulation `out[j-j0] += h_i * W[i][j]`, traces ascending;
/// the memory-light kernel for the on-the-fly table.
fn accumulate_rows(ts: &TraceSet, h: &[u8], j0: usize, out: &mut [f64]) {
    let n = ts.n();
    let m = ts.m();
    let width = out.len();
    match (ts.layout(), ts.samples()) {
        (Layout::TraceMajor, Samples::Double(v)) => {
            for i in 0..n {
                let hv = h[i] as f64;
                let row = &v[i * m + j0..][..width];
                for (o, &w) in out.iter_mut().zip(row) {
                    *o += hv * w;
                }
            }
        }
        (Layout::TraceMajor, Samples::Single(v)) => {
            for i in 0..n {
                let hv = h[i] as f64;
                let row = &v[i * m + j0..][..width];
                for (o, &w) in out.iter_mut().zip(row) {
                    *o += hv * w as f64;
                }
            }
        }
        (Layout::SampleMajor, Samples::Double(v)) => {
            for i in 0..n {
                let hv = h[i] as f64;
                for (jl, o) in out.iter_mut().enumerate() {
                    *o += hv * v[(j0 + jl) * n + i];
                }
            }
        }
        (Layout::SampleMajor, Samples::Single(v)) => {
            for i in 0..n {
                let hv = h[i] as f64;
                for (jl, o) in out.iter_mut().enumerate() {
                    *o += hv * v[(j0 + jl) * n + i] as f64;
                }
            }
        }
    }
}

fn phase2_on_the_fly(ts: &TraceSet, st: &SelectionTable, j0: usize, j1: usize) -> TraceStats {
    let n = ts.n();
    let width = j1 - j0;

    // Per-sample sums, shared across hypotheses; traces ascending per sample.
    let mut sum_w = vec![0.0f64; width];
    let mut sum_w2 = vec![0.0f64; width];
    sum_w
        .par_iter_mut()
        .zip(sum_w2.par_iter_mut())
        .enumerate()
        .for_each(|(jl, (sw, sw2))| {
            let (mut s, mut s2) = (0.0f64, 0.0f64);
            for i in 0..n {
                let w = ts.get(i, j0 + jl);
                s += w;
                s2 += w * w;
            }
            *sw = s;
            *sw2 = s2;
        });

    let mut sum_wh = vec![0.0f64; GRID * width];
    sum_wh
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(cell, run)| {
            let mut h = vec![0u8; n];
            st.fill_column(cell, &mut h);
            accumulate_rows(ts, &h, j0, run);
        });

    TraceStats {
        n,
        j0,
        j1,
        sum_w,
        sum_w2,
        sum_wh,
    }
}

/// Finding power trace statistics for one sample chunk.
pub fn phase2_trace_stats(
    ts: &TraceSet,
    st: &SelectionTable,
    sample_chunk: Range<usize>,
) -> Result<TraceStats, AttackError> {
    if ts.n() != st.n() {
        return Err(AttackError::CountMismatch {
            traces: ts.n(),
            ciphertexts: st.n(),
        });
    }
    let (j0, j1) = (sample_chunk.start, sample_chunk.end);
    assert!(
        j0 < j1 && j1 <= ts.m(),
        "chunk {j0}..{j1} out of 0..{}",
        ts.m()
    );
    Ok(match st.mode() {
        TableMode::Materialized => phase2_materialized(ts, st, j0, j1),
        TableMode::OnTheFly => phase2_on_the_fly(ts, st, j0, j1),
    })
}

#[derive(Clone, Copy)]
struct HSide {
    sum_h: f64,
    var_term: f64,
}

fn h_side(ms: &ModelStats, cell: usize) -> HSide {
    let sum_h = ms.sum_h[cell];
    let sum_h2 = ms.sum_h2[cell];
    let var = ms.n as u128 * sum_h2 as u128 - (sum_h as u128) * (sum_h as u128);
    HSide {
        sum_h: sum_h as f64,
        var_term: var as f64,
    }
}

#[inline]
fn rho_from_sums(n: f64, sum_wh: f64, sum_w: f64, sum_w2: f64, h: HSide) -> f64 {
    let var_w = n * sum_w2 - sum_w * sum_w;
    let threshold = (VAR_EPS_REL * n * sum_w2).max(VAR_EPS_FLOOR);
    if var_w <= threshold || h.var_term <= 0.0 {
        return 0.0;
    }
    let rho = (n * sum_wh - sum_w * h.sum_h) / (var_w.sqrt() * h.var_term.sqrt());
    rho.clamp(-1.0, 1.0)
}

/// The correlation estimate at sample `j` for hypothesis (subkey `k`, byte
/// position `b`), from shared sums over `n` traces. Degenerate variance on
/// either side yields 0; the result is clamped to `[-1, 1]`.
pub fn correlation_at(
    j: usize,
    k: usize,
    b: usize,
    ms: &ModelStats,
    tstats: &TraceStats,
    n: usize,
) -> f64 {
    debug_assert_eq!(ms.n(), n);
    debug_assert_eq!(tstats.n(), n);
    rho_from_sums(
        n as f64,
        tstats.sum_wh(k, b, j),
        tstats.sum_w(j),
        tstats.sum_w2(j),
        h_side(ms, cell_index(k, b)),
    )
}

/// Maximum absolute correlation per hypothesis and the sample index that
/// attains it (ties broken toward the lowest sample index).
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationSurface {
    rho: Vec<f64>,
    argmax: Vec<usize>,
}

impl CorrelationSurface {
    /// A fold identity: any real correlation beats it.
    pub fn empty() -> Self {
        CorrelationSurface {
            rho: vec![-1.0; GRID],
            argmax: vec![usize::MAX; GRID],
        }
    }

    pub fn rho(&self, k: usize, b: usize) -> f64 {
        self.rho[cell_index(k, b)]
    }

    pub fn argmax_sample(&self, k: usize, b: usize) -> usize {
        self.argmax[cell_index(k, b)]
    }

    /// Bit-level equality, for determinism checks.
    pub fn bitwise_eq(&self, other: &CorrelationSurface) -> bool {
        self.argmax == other.argmax
            && self
                .rho
                .iter()
                .zip(&other.rho)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn quantize_single(&mut self) {
        for r in &mut self.rho {
            *r = *r as f32 as f64;
        }
    }
}

/// Finding maximum correlation: folds one chunk's statistics into `running`,
/// so chunks can stream in ascending sample order.
pub fn phase3_max_correlation(
    ms: &ModelStats,
    tstats: &TraceStats,
    running: CorrelationSurface,
) -> CorrelationSurface {
    let mut surface = running;
    let n = ms.n() as f64;
    let range = tstats.sample_range();
    let width = range.len();
    surface
        .rho
        .par_iter_mut()
        .zip(surface.argmax.par_iter_mut())
        .enumerate()
        .for_each(|(cell, (best, arg))| {
            let h = h_side(ms, cell);
            let run = &tstats.sum_wh[cell * width..][..width];
            for (jl, &swh) in run.iter().enumerate() {
                let rho = rho_from_sums(n, swh, tstats.sum_w[jl], tstats.sum_w2[jl], h).abs();
                if rho > *best {
                    *best = rho;
                    *arg = range.start + jl;
                }
            }
        });
    surface
}

/// Subkeys for one byte position, sorted by descending max correlation
/// (ties toward the lower subkey value).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ByteRanking {
    /// All 256 (subkey, max absolute correlation) pairs, best first.
    pub ranking: Vec<(u8, f64)>,
    /// Best minus second-best correlation.
    pub margin: f64,
    /// Sample index where the winner peaked.
    pub best_sample: usize,
}

impl ByteRanking {
    pub fn best(&self) -> (u8, f64) {
        self.ranking[0]
    }
}

/// Outcome of the attack: the recovered keys and the per-byte evidence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackResult {
    pub round10_key: RoundKey,
    pub master_key: MasterKey,
    pub bytes: Vec<ByteRanking>,
}

/// Deriving the round key: rank subkeys per byte position and invert the
/// schedule from round 10.
pub fn phase4_derive_round_key(cs: &CorrelationSurface) -> AttackResult {
    let mut bytes = Vec::with_capacity(KEY_BYTES);
    let mut rk = [0u8; KEY_BYTES];
    for (b, rk_byte) in rk.iter_mut().enumerate() {
        let mut ranking: Vec<(u8, f64)> = (0..SUBKEYS).map(|k| (k as u8, cs.rho(k, b))).collect();
        ranking.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        let (best_k, best_rho) = ranking[0];
        let margin = best_rho - ranking[1].1;
        *rk_byte = best_k;
        bytes.push(ByteRanking {
            best_sample: cs.argmax_sample(best_k as usize, b),
            ranking,
            margin,
        });
    }
    let round10_key = RoundKey(rk);
    let master_key = invert_key_schedule(&round10_key, 10);
    AttackResult {
        round10_key,
        master_key,
        bytes,
    }
}

/// Attack configuration; the default matches the CLI defaults.
#[derive(Clone, Debug)]
pub struct AttackConfig {
    /// Trace storage precision used for the run; accumulation is always
    /// double, so this affects stored samples and reported correlations.
    pub precision: Precision,
    /// Samples per streamed chunk, bounding cross-sum memory at
    /// 4096 * chunk doubles.
    pub chunk_size: usize,
    /// Worker threads; 0 means all available.
    pub workers: usize,
    pub table_mode: TableMode,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            precision: Precision::Double,
            chunk_size: 4096,
            workers: 0,
            table_mode: TableMode::Materialized,
        }
    }
}

/// Wall time spent in each phase.
#[derive(Clone, Copy, Debug, Default)]
pub struct PhaseTimings {
    pub phase1: Duration,
    pub phase2: Duration,
    pub phase3: Duration,
    pub phase4: Duration,
}

impl PhaseTimings {
    pub fn total(&self) -> Duration {
        self.phase1 + self.phase2 + self.phase3 + self.phase4
    }

    pub fn seconds(&self) -> [f64; 4] {
        [
            self.phase1.as_secs_f64(),
            self.phase2.as_secs_f64(),
            self.phase3.as_secs_f64(),
            self.phase4.as_secs_f64(),
        ]
    }
}

/// Attack output with the full correlation surface and phase timings kept.
#[derive(Clone, Debug)]
pub struct AttackOutput {
    pub result: AttackResult,
    pub surface: CorrelationSurface,
    pub timings: PhaseTimings,
}

/// Runs the full pipeline and returns just the result.
pub fn attack(
    ts: &TraceSet,
    cts: &CiphertextSet,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    attack_with_details(ts, cts, cfg).map(|out| out.result)
}

/// Runs the full pipeline: Phase 1, then Phase 2 and Phase 3 streamed over
/// sample chunks, then Phase 4. Deterministic for fixed inputs and config,
/// independent of worker count.
pub fn attack_with_details(
    ts: &TraceSet,
    cts: &CiphertextSet,
    cfg: &AttackConfig,
) -> Result<AttackOutput, AttackError> {
    if ts.n() != cts.n() {
        return Err(AttackError::CountMismatch {
            traces: ts.n(),
            ciphertexts: cts.n(),
        });
    }
    if ts.n() < 2 {
        return Err(AttackError::TooFewTraces { n: ts.n() });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .expect("building attack thread pool");
    pool.install(|| run_phases(ts, cts, cfg))
}

fn run_phases(
    ts: &TraceSet,
    cts: &CiphertextSet,
    cfg: &AttackConfig,
) -> Result<AttackOutput, AttackError> {
    let converted;
    let ts = if ts.precision() != cfg.precision {
        converted = ts.to_precision(cfg.precision);
        &converted
    } else {
        ts
    };
    let m = ts.m();
    let chunk = cfg.chunk_size.clamp(1, m);

    let mut timings = PhaseTimings::default();
    let t = Instant::now();
    let table = SelectionTable::build(cts, cfg.table_mode);
    let ms = phase1_model_stats(&table);
    timings.phase1 = t.elapsed();

    let mut surface = CorrelationSurface::empty();
    let mut j0 = 0;
    while j0 < m {
        let j1 = (j0 + chunk).min(m);
        let t = Instant::now();
        let stats = phase2_trace_stats(ts, &table, j0..j1)?;
        timings.phase2 += t.elapsed();
        let t = Instant::now();
        surface = phase3_max_correlation(&ms, &stats, surface);
        timings.phase3 += t.elapsed();
        j0 = j1;
    }

    if cfg.precision == Precision::Single {
        surface.quantize_single();
    }

    let t = Instant::now();
    let result = phase4_derive_round_key(&surface);
    timings.phase4 = t.elapsed();

    Ok(AttackOutput {
        result,
        surface,
        timings,
    })
}

/// Full correlation-vs-sample curves for the given (subkey, byte position)
/// pairs, e.g. the winners of an attack. Recomputes only those hypotheses;
/// values match `correlation_at` over the same data exactly.
pub fn correlation_curves(
    ts: &TraceSet,
    cts: &CiphertextSet,
    cfg: &AttackConfig,
    pairs: &[(u8, usize)],
) -> Result<Vec<Vec<f64>>, AttackError> {
    if ts.n() != cts.n() {
        return Err(AttackError::CountMismatch {
            traces: ts.n(),
            ciphertexts: cts.n(),
        });
    }
    if ts.n() < 2 {
        return Err(AttackError::TooFewTraces { n: ts.n() });
    }
    let converted;
    let ts = if ts.precision() != cfg.precision {
        converted = ts.to_precision(cfg.precision);
        &converted
    } else {
        ts
    };
    let n = ts.n();
    let m = ts.m();
    let nf = n as f64;

    let columns: Vec<Vec<u8>> = pairs
        .iter()
        .map(|&(k, b)| {
            (0..n)
                .map(|i| selection_value(cts.ciphertext(i), b, k))
                .collect()
        })
        .collect();
    let sides: Vec<HSide> = columns
        .iter()
        .map(|col| {
            let (mut s, mut s2) = (0u64, 0u64);
            for &h in col {
                s += h as u64;
                s2 += (h as u64) * (h as u64);
            }
            let var = n as u128 * s2 as u128 - (s as u128) * (s as u128);
            HSide {
                sum_h: s as f64,
                var_term: var as f64,
            }
        })
        .collect();

    let npairs = pairs.len();
    let mut flat = vec![0.0f64; m * npairs];
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .expect("building curve thread pool");
    pool.install(|| {
        flat.par_chunks_mut(npairs)
            .enumerate()
            .for_each(|(j, out)| {
                let (mut sw, mut sw2) = (0.0f64, 0.0f64);
                for i in 0..n {
                    let w = ts.get(i, j);
                    sw += w;
                    sw2 += w * w;
                }
                for (p, o) in out.iter_mut().enumerate() {
                    let mut swh = 0.0f64;
                    for (i, &h) in columns[p].iter().enumerate() {
                        swh += h as f64 * ts.get(i, j);
                    }
                    let mut rho = rho_from_sums(nf, swh, sw, sw2, sides[p]);
                    if cfg.precision == Precision::Single {
                        rho = rho as f32 as f64;
                    }
                    *o = rho;
                }
            });
    });

    Ok((0..npairs)
        .map(|p| (0..m).map(|j| flat[j * npairs + p]).collect())
        .collect())
}

/// Independent two-pass Pearson estimate: means first, then centered
/// products. The reference the factored one-pass form is checked against.
pub fn pearson_oracle(w: &[f64], h: &[f64]) -> f64 {
    assert_eq!(w.len(), h.len());
    let n = w.len();
    assert!(n >= 2, "pearson needs at least 2 points");
    let mean_w = w.iter().sum::<f64>() / n as f64;
    let mean_h = h.iter().sum::<f64>() / n as f64;
    let (mut cov, mut var_w, mut var_h) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in w.iter().zip(h) {
        let dx = x - mean_w;
        let dy = y - mean_h;
        cov += dx * dy;
        var_w += dx * dx;
        var_h += dy * dy;
    }
    if var_w <= 0.0 || var_h <= 0.0 {
        return 0.0;
    }
    cov / (var_w.sqrt() * var_h.sqrt())
}
