//! Correlation power analysis toolkit for AES-128.
//!
//! Recovers the round-10 key (and from it the master key) from a set of
//! power traces and their ciphertexts by correlating a Hamming-distance
//! leakage prediction against every sample point, one (subkey, byte
//! position) hypothesis at a time. Includes a synthetic trace generator so
//! the whole attack is verifiable end to end against a known key.

pub mod aes;
pub mod bench;
pub mod engine;
pub mod synth;
pub mod trace;

pub use aes::{MasterKey, RoundKey};
pub use engine::{attack, AttackConfig, AttackResult, TableMode};
pub use synth::SynthConfig;
pub use trace::{CiphertextSet, Layout, Precision, TraceSet};
