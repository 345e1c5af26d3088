//! Synthetic trace generation with the Hamming-distance leakage model.
//!
//! Each trace records one encryption of a uniform random plaintext under a
//! known key. At the designated leak sample for byte position `b` the trace
//! carries `baseline + scale * HD(round9, ciphertext)` for that register
//! byte, plus Gaussian noise; everywhere else it is baseline plus noise.
//! Randomness is ChaCha8 keyed by the seed with one stream per trace index,
//! so generation is reproducible bit-for-bit at any worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::aes::{encrypt_with_states, expand_key, shiftrows_source_index, MasterKey};
use crate::trace::{CiphertextSet, Layout, TraceSet};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("trace count must be at least 1")]
    ZeroTraces,
    #[error("need at least 16 samples for 16 distinct leak positions, got {m}")]
    TooFewSamples { m: usize },
    #[error("leak position {pos} for byte {byte} is out of range (m = {m})")]
    LeakOutOfRange { byte: usize, pos: usize, m: usize },
    #[error("leak positions for bytes {a} and {b} collide at sample {pos}")]
    DuplicateLeak { a: usize, b: usize, pos: usize },
    #[error("signal scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("noise sigma must be non-negative, got {0}")]
    NegativeSigma(f64),
}

/// Generator configuration; see [`SynthConfig::new`] for the default leak
/// placement.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub key: MasterKey,
    pub n: usize,
    pub m: usize,
    /// One leak sample per byte position, all distinct.
    pub leak_positions: [usize; 16],
    pub signal_scale: f64,
    pub noise_sigma: f64,
    pub baseline: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Config with leak positions spread evenly: byte `b` leaks at sample
    /// `b * (m / 16)`. Requires `m >= 16`.
    pub fn new(
        key: MasterKey,
        n: usize,
        m: usize,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self, SynthError> {
        if m < 16 {
            return Err(SynthError::TooFewSamples { m });
        }
        let spacing = m / 16;
        let cfg = SynthConfig {
            key,
            n,
            m,
            leak_positions: core::array::from_fn(|b| b * spacing),
            signal_scale: 1.0,
            noise_sigma,
            baseline: 0.0,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n == 0 {
            return Err(SynthError::ZeroTraces);
        }
        for (b, &pos) in self.leak_positions.iter().enumerate() {
            if pos >= self.m {
                return Err(SynthError::LeakOutOfRange {
                    byte: b,
                    pos,
                    m: self.m,
                });
            }
            for (a, &prev) in self.leak_positions.iter().enumerate().take(b) {
                if prev == pos {
                    return Err(SynthError::DuplicateLeak { a, b, pos });
                }
            }
        }
        if !self.signal_scale.is_finite() || self.signal_scale <= 0.0 {
            return Err(SynthError::NonPositiveScale(self.signal_scale));
        }
        if self.noise_sigma < 0.0 {
            return Err(SynthError::NegativeSigma(self.noise_sigma));
        }
        Ok(())
    }
}

/// Deterministic standard-normal stream: ChaCha8 keyed by `seed` on stream
/// `stream`, shaped by the ziggurat sampler.
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NoiseStream { rng }
    }

    pub fn next_standard(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

impl Iterator for NoiseStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.next_standard())
    }
}

fn trace_rng(seed: u64, trace: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trace as u64);
    rng
}

/// Generates the trace/ciphertext pair for an attack run.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<(TraceSet, CiphertextSet), SynthError> {
    generate_dataset_full(cfg).map(|(ts, cts, _)| (ts, cts))
}

/// Like [`generate_dataset`] but also returns the plaintexts, for checking
/// ciphertexts against an independent AES.
pub fn generate_dataset_full(
    cfg: &SynthConfig,
) -> Result<(TraceSet, CiphertextSet, Vec<[u8; 16]>), SynthError> {
    cfg.validate()?;
    let n = cfg.n;
    let m = cfg.m;

    // sample index -> leaking byte position
    let mut leak_at = vec![usize::MAX; m];
    for (b, &pos) in cfg.leak_positions.iter().enumerate() {
        leak_at[pos] = b;
    }

    let mut samples = vec![0.0f64; n * m];
    let mut cts = vec![[0u8; 16]; n];
    let mut pts = vec![[0u8; 16]; n];

    samples
        .par_chunks_mut(m)
        .zip(cts.par_iter_mut())
        .zip(pts.par_iter_mut())
        .enumerate()
        .for_each(|(i, ((row, ct), pt))| {
            let mut rng = trace_rng(cfg.seed, i);
            rng.fill(&mut pt[..]);
            let st = encrypt_with_states(pt, &cfg.key);
            *ct = st.ciphertext;
            for (j, out) in row.iter_mut().enumerate() {
                let mut v = cfg.baseline;
                let b = leak_at[j];
                if b != usize::MAX {
                    let src = shiftrows_source_index(b);
                    let hd = (st.round9_state[src] ^ st.ciphertext[src]).count_ones();
                    v += cfg.signal_scale * hd as f64;
                }
                if cfg.noise_sigma > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    v += cfg.noise_sigma * z;
                }
                *out = v;
            }
        });

    let ts = TraceSet::from_f64(n, m, Layout::TraceMajor, samples)
        .expect("generated samples are finite and sized n*m");
    Ok((ts, CiphertextSet::from_blocks(&cts), pts))
}

/// The round-10 key the attack should recover for this config.
pub fn expected_round10_key(cfg: &SynthConfig) -> crate::aes::RoundKey {
    expand_key(&cfg.key)[10]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aes::selection_value;
    use crate::engine::{attack_with_details, AttackConfig};
    use aes::cipher::{BlockEncrypt, KeyInit};

    fn test_key() -> MasterKey {
        MasterKey::from_hex("2b7e151628aed2a6abf7158809cf4f3c").unwrap()
    }

    #[test]
    fn noiseless_traces_carry_exact_selection_values() {
        let cfg = SynthConfig::new(test_key(), 50, 64, 0.0, 99).unwrap();
        let (ts, cts) = generate_dataset(&cfg).unwrap();
        let rk10 = expected_round10_key(&cfg);
        for i in 0..cfg.n {
            for (b, &pos) in cfg.leak_positions.iter().enumerate() {
                let v = ts.get(i, pos);
                assert_eq!(v.fract(), 0.0);
                assert!((0.0..=8.0).contains(&v));
                let h = selection_value(cts.ciphertext(i), b, rk10.0[b]);
                assert_eq!(v, h as f64);
            }
            // non-leak samples are exactly the baseline
            assert_eq!(ts.get(i, 1), 0.0);
        }
    }

    #[test]
    fn same_seed_is_bit_identical_any_worker_count() {
        let cfg = SynthConfig::new(test_key(), 40, 32, 1.5, 7).unwrap();
        let (a_ts, a_cts) = generate_dataset(&cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let (b_ts, b_cts) = pool.install(|| generate_dataset(&cfg)).unwrap();
        assert_eq!(a_ts, b_ts);
        assert_eq!(a_cts, b_cts);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_dataset(&SynthConfig::new(test_key(), 5, 16, 1.0, 1).unwrap()).unwrap();
        let b = generate_dataset(&SynthConfig::new(test_key(), 5, 16, 1.0, 2).unwrap()).unwrap();
        assert_ne!(a.0, b.0);
        assert_ne!(a.1, b.1);
    }

    #[test]
    fn ciphertexts_agree_with_reference_aes() {
        let cfg = SynthConfig::new(test_key(), 64, 16, 0.5, 3).unwrap();
        let (_, cts, pts) = generate_dataset_full(&cfg).unwrap();
        let cipher = aes::Aes128::new((&test_key().0).into());
        for (i, pt) in pts.iter().enumerate() {
            let mut block = aes::Block::clone_from_slice(pt);
            cipher.encrypt_block(&mut block);
            let expected: [u8; 16] = block.into();
            assert_eq!(cts.ciphertext(i), &expected);
        }
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        assert_eq!(
            SynthConfig::new(test_key(), 0, 16, 1.0, 0).unwrap_err(),
            SynthError::ZeroTraces
        );
        assert_eq!(
            SynthConfig::new(test_key(), 1, 15, 1.0, 0).unwrap_err(),
            SynthError::TooFewSamples { m: 15 }
        );
        let mut cfg = SynthConfig::new(test_key(), 1, 32, 1.0, 0).unwrap();
        cfg.leak_positions[5] = 32;
        assert_eq!(
            cfg.validate().unwrap_err(),
            SynthError::LeakOutOfRange {
                byte: 5,
                pos: 32,
                m: 32
            }
        );
        let mut cfg = SynthConfig::new(test_key(), 1, 32, 1.0, 0).unwrap();
        cfg.leak_positions[5] = cfg.leak_positions[4];
        assert!(matches!(
            cfg.validate().unwrap_err(),
            SynthError::DuplicateLeak { a: 4, b: 5, .. }
        ));
        let mut cfg = SynthConfig::new(test_key(), 1, 32, 1.0, 0).unwrap();
        cfg.signal_scale = 0.0;
        assert!(matches!(
            cfg.validate().unwrap_err(),
            SynthError::NonPositiveScale(_)
        ));
        let mut cfg = SynthConfig::new(test_key(), 1, 32, 1.0, 0).unwrap();
        cfg.noise_sigma = -0.1;
        assert!(matches!(
            cfg.validate().unwrap_err(),
            SynthError::NegativeSigma(_)
        ));
    }

    #[test]
    fn noise_stream_first_values_are_pinned() {
        // Frozen output of NoiseStream::new(0xC0FFEE, 0); guards against the
        // generator drifting between runs or platforms.
        let expected: [f64; 10] = [
            1.9006764576375215,
            0.6912599156187713,
            -0.9597311804785948,
            -1.3169154219646142,
            0.12342211428163916,
            0.20158885838534793,
            -0.2627543436063135,
            -0.9964396846000716,
            -0.17224661439644487,
            2.5585915996019097,
        ];
        let got: Vec<f64> = NoiseStream::new(0xC0FFEE, 0).take(10).collect();
        for (g, e) in got.iter().zip(&expected) {
            assert_eq!(g.to_bits(), e.to_bits(), "{g} vs {e}");
        }
    }

    #[test]
    fn noise_stream_moments_are_standard_normal() {
        let mut stream = NoiseStream::new(0xABCDEF, 1);
        let count = 1_000_000usize;
        let (mut sum, mut sum2) = (0.0f64, 0.0f64);
        for _ in 0..count {
            let z = stream.next_standard();
            sum += z;
            sum2 += z * z;
        }
        let mean = sum / count as f64;
        let var = sum2 / count as f64 - mean * mean;
        assert!(mean.abs() <= 0.005, "mean {mean}");
        assert!((0.99..=1.01).contains(&var), "variance {var}");
    }

    #[test]
    fn noiseless_attack_recovers_key_with_unit_correlation() {
        let cfg = SynthConfig::new(test_key(), 200, 64, 0.0, 5).unwrap();
        let (ts, cts) = generate_dataset(&cfg).unwrap();
        let out = attack_with_details(&ts, &cts, &AttackConfig::default()).unwrap();
        assert_eq!(out.result.master_key, cfg.key);
        let rk10 = expected_round10_key(&cfg);
        for b in 0..16 {
            let k = rk10.0[b] as usize;
            assert!((out.surface.rho(k, b) - 1.0).abs() <= 1e-9);
            assert_eq!(out.surface.argmax_sample(k, b), cfg.leak_positions[b]);
        }
    }

    #[test]
    fn attack_success_is_monotone_in_trace_count() {
        // Pinned seed; verified during calibration that the small run fails
        // and both large runs succeed, a (non-strictly) monotone pattern.
        let success = |n: usize| {
            let cfg = SynthConfig::new(test_key(), n, 64, 2.5, 20260810).unwrap();
            let (ts, cts) = generate_dataset(&cfg).unwrap();
            let out = attack_with_details(&ts, &cts, &AttackConfig::default()).unwrap();
            out.result.master_key == cfg.key
        };
        let outcomes = [success(12), success(2000), success(4000)];
        for pair in outcomes.windows(2) {
            assert!(pair[0] <= pair[1], "success not monotone: {outcomes:?}");
        }
        assert!(outcomes[2], "largest run must succeed");
    }
}
