//! Shared fixtures for the criterion benches.

use cpakit::synth::{generate_dataset, SynthConfig};
use cpakit::trace::{CiphertextSet, TraceSet};
use cpakit::MasterKey;

/// Synthetic dataset with the default leak placement and a fixed key.
pub fn dataset(n: usize, m: usize, sigma: f64, seed: u64) -> (TraceSet, CiphertextSet) {
    let key = MasterKey::from_hex("2b7e151628aed2a6abf7158809cf4f3c").unwrap();
    let cfg = SynthConfig::new(key, n, m, sigma, seed).expect("valid bench config");
    generate_dataset(&cfg).expect("bench dataset generates")
}
