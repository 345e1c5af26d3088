//! AES-128 primitives for the last-round attack: the S-box pair, the ShiftRows
//! source map, key expansion and its inversion, the Hamming-distance selection
//! function, and an instrumented encryptor exposing the state entering the
//! final round.
//!
//! State bytes are indexed column-major (byte index = row + 4*column), so a
//! flat 16-byte block is the state in its natural order and ciphertext byte
//! `i` is state byte `i`.

use thiserror::Error;

/// FIPS-197 forward S-box.
pub const SBOX: [u8; 256] = [
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
];

/// FIPS-197 inverse S-box.
pub const INV_SBOX: [u8; 256] = [
    0x52, 0x09, 0x6a, 0xd5, 0x30, 0x36, 0xa5, 0x38, 0xbf, 0x40, 0xa3, 0x9e, 0x81, 0xf3, 0xd7, 0xfb,
    0x7c, 0xe3, 0x39, 0x82, 0x9b, 0x2f, 0xff, 0x87, 0x34, 0x8e, 0x43, 0x44, 0xc4, 0xde, 0xe9, 0xcb,
    0x54, 0x7b, 0x94, 0x32, 0xa6, 0xc2, 0x23, 0x3d, 0xee, 0x4c, 0x95, 0x0b, 0x42, 0xfa, 0xc3, 0x4e,
    0x08, 0x2e, 0xa1, 0x66, 0x28, 0xd9, 0x24, 0xb2, 0x76, 0x5b, 0xa2, 0x49, 0x6d, 0x8b, 0xd1, 0x25,
    0x72, 0xf8, 0xf6, 0x64, 0x86, 0x68, 0x98, 0x16, 0xd4, 0xa4, 0x5c, 0xcc, 0x5d, 0x65, 0xb6, 0x92,
    0x6c, 0x70, 0x48, 0x50, 0xfd, 0xed, 0xb9, 0xda, 0x5e, 0x15, 0x46, 0x57, 0xa7, 0x8d, 0x9d, 0x84,
    0x90, 0xd8, 0xab, 0x00, 0x8c, 0xbc, 0xd3, 0x0a, 0xf7, 0xe4, 0x58, 0x05, 0xb8, 0xb3, 0x45, 0x06,
    0xd0, 0x2c, 0x1e, 0x8f, 0xca, 0x3f, 0x0f, 0x02, 0xc1, 0xaf, 0xbd, 0x03, 0x01, 0x13, 0x8a, 0x6b,
    0x3a, 0x91, 0x11, 0x41, 0x4f, 0x67, 0xdc, 0xea, 0x97, 0xf2, 0xcf, 0xce, 0xf0, 0xb4, 0xe6, 0x73,
    0x96, 0xac, 0x74, 0x22, 0xe7, 0xad, 0x35, 0x85, 0xe2, 0xf9, 0x37, 0xe8, 0x1c, 0x75, 0xdf, 0x6e,
    0x47, 0xf1, 0x1a, 0x71, 0x1d, 0x29, 0xc5, 0x89, 0x6f, 0xb7, 0x62, 0x0e, 0xaa, 0x18, 0xbe, 0x1b,
    0xfc, 0x56, 0x3e, 0x4b, 0xc6, 0xd2, 0x79, 0x20, 0x9a, 0xdb, 0xc0, 0xfe, 0x78, 0xcd, 0x5a, 0xf4,
    0x1f, 0xdd, 0xa8, 0x33, 0x88, 0x07, 0xc7, 0x31, 0xb1, 0x12, 0x10, 0x59, 0x27, 0x80, 0xec, 0x5f,
    0x60, 0x51, 0x7f, 0xa9, 0x19, 0xb5, 0x4a, 0x0d, 0x2d, 0xe5, 0x7a, 0x9f, 0x93, 0xc9, 0x9c, 0xef,
    0xa0, 0xe0, 0x3b, 0x4d, 0xae, 0x2a, 0xf5, 0xb0, 0xc8, 0xeb, 0xbb, 0x3c, 0x83, 0x53, 0x99, 0x61,
    0x17, 0x2b, 0x04, 0x7e, 0xba, 0x77, 0xd6, 0x26, 0xe1, 0x69, 0x14, 0x63, 0x55, 0x21, 0x0c, 0x7d,
];

/// ShiftRows output position `b` reads input position `SHIFTROWS_SRC[b]`
/// (row `r` is rotated left by `r`).
pub const SHIFTROWS_SRC: [usize; 16] = [0, 5, 10, 15, 4, 9, 14, 3, 8, 13, 2, 7, 12, 1, 6, 11];

const RCON: [u8; 10] = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1b, 0x36];

/// Error from parsing a 32-hex-character key string.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyParseError {
    #[error("key must be 32 hex characters, got {0}")]
    BadLength(usize),
    #[error("key contains a non-hex character")]
    BadDigit,
}

fn parse_key_hex(s: &str) -> Result<[u8; 16], KeyParseError> {
    if s.len() != 32 {
        return Err(KeyParseError::BadLength(s.len()));
    }
    let bytes = hex::decode(s).map_err(|_| KeyParseError::BadDigit)?;
    Ok(bytes.try_into().expect("32 hex chars decode to 16 bytes"))
}

/// A 16-byte AES-128 master key.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct MasterKey(pub [u8; 16]);

impl serde::Serialize for MasterKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl MasterKey {
    pub fn from_hex(s: &str) -> Result<Self, KeyParseError> {
        parse_key_hex(s).map(MasterKey)
    }

    /// Lowercase hex, no separators.
    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }
}

/// One 16-byte round key of the AES-128 schedule.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct RoundKey(pub [u8; 16]);

impl serde::Serialize for RoundKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl RoundKey {
    pub fn from_hex(s: &str) -> Result<Self, KeyParseError> {
        parse_key_hex(s).map(RoundKey)
    }

    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }
}

/// Ciphertext plus the state entering the final round (output of round 9).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct StateTrace {
    pub ciphertext: [u8; 16],
    pub round9_state: [u8; 16],
}

#[inline]
pub fn sbox(x: u8) -> u8 {
    SBOX[x as usize]
}

#[inline]
pub fn inv_sbox(x: u8) -> u8 {
    INV_SBOX[x as usize]
}

/// Pre-ShiftRows position feeding output position `b`.
#[inline]
pub fn shiftrows_source_index(b: usize) -> usize {
    assert!(b < 16, "byte position out of range: {b}");
    SHIFTROWS_SRC[b]
}

fn rot_word(w: [u8; 4]) -> [u8; 4] {
    [w[1], w[2], w[3], w[0]]
}

fn sub_word(w: [u8; 4]) -> [u8; 4] {
    [sbox(w[0]), sbox(w[1]), sbox(w[2]), sbox(w[3])]
}

fn xor_word(a: [u8; 4], b: [u8; 4]) -> [u8; 4] {
    [a[0] ^ b[0], a[1] ^ b[1], a[2] ^ b[2], a[3] ^ b[3]]
}

/// AES-128 key schedule; round 0 equals the master key.
pub fn expand_key(key: &MasterKey) -> [RoundKey; 11] {
    let mut w = [[0u8; 4]; 44];
    for (i, word) in w.iter_mut().take(4).enumerate() {
        word.copy_from_slice(&key.0[4 * i..4 * i + 4]);
    }
    for i in 4..44 {
        let mut t = w[i - 1];
        if i % 4 == 0 {
            t = sub_word(rot_word(t));
            t[0] ^= RCON[i / 4 - 1];
        }
        w[i] = xor_word(w[i - 4], t);
    }
    let mut rks = [RoundKey([0u8; 16]); 11];
    for (r, rk) in rks.iter_mut().enumerate() {
        for j in 0..4 {
            rk.0[4 * j..4 * j + 4].copy_from_slice(&w[4 * r + j]);
        }
    }
    rks
}

/// Runs the schedule backwards from the round key at `round_index` to the
/// master key. The AES-128 schedule is invertible, so the preimage is unique.
pub fn invert_key_schedule(rk: &RoundKey, round_index: usize) -> MasterKey {
    assert!(round_index <= 10, "round index out of range: {round_index}");
    let mut cur = [[0u8; 4]; 4];
    for (j, word) in cur.iter_mut().enumerate() {
        word.copy_from_slice(&rk.0[4 * j..4 * j + 4]);
    }
    for round in (1..=round_index).rev() {
        let w3 = xor_word(cur[3], cur[2]);
        let w2 = xor_word(cur[2], cur[1]);
        let w1 = xor_word(cur[1], cur[0]);
        let mut t = sub_word(rot_word(w3));
        t[0] ^= RCON[round - 1];
        let w0 = xor_word(cur[0], t);
        cur = [w0, w1, w2, w3];
    }
    let mut key = [0u8; 16];
    for (j, word) in cur.iter().enumerate() {
        key[4 * j..4 * j + 4].copy_from_slice(word);
    }
    MasterKey(key)
}

/// Last-round Hamming-distance selection function: the predicted round-9
/// register byte for a key guess, against the ciphertext byte that replaces
/// it in the same register position. Always in `0..=8`.
#[inline]
pub fn selection_value(cipher: &[u8; 16], byte_pos: usize, key_guess: u8) -> u8 {
    let predicted = inv_sbox(cipher[byte_pos] ^ key_guess);
    (predicted ^ cipher[shiftrows_source_index(byte_pos)]).count_ones() as u8
}

fn sub_bytes(state: &mut [u8; 16]) {
    for b in state.iter_mut() {
        *b = sbox(*b);
    }
}

fn shift_rows(state: &mut [u8; 16]) {
    let prev = *state;
    for b in 0..16 {
        state[b] = prev[SHIFTROWS_SRC[b]];
    }
}

#[inline]
fn xtime(a: u8) -> u8 {
    (a << 1) ^ (((a >> 7) & 1) * 0x1b)
}

fn mix_columns(state: &mut [u8; 16]) {
    for c in 0..4 {
        let col: [u8; 4] = state[4 * c..4 * c + 4].try_into().unwrap();
        state[4 * c] = xtime(col[0]) ^ xtime(col[1]) ^ col[1] ^ col[2] ^ col[3];
        state[4 * c + 1] = col[0] ^ xtime(col[1]) ^ xtime(col[2]) ^ col[2] ^ col[3];
        state[4 * c + 2] = col[0] ^ col[1] ^ xtime(col[2]) ^ xtime(col[3]) ^ col[3];
        state[4 * c + 3] = xtime(col[0]) ^ col[0] ^ col[1] ^ col[2] ^ xtime(col[3]);
    }
}

fn add_round_key(state: &mut [u8; 16], rk: &RoundKey) {
    for (b, k) in state.iter_mut().zip(rk.0.iter()) {
        *b ^= k;
    }
}

/// Full AES-128 encryption that also returns the state entering the final
/// round, the register transition the leakage model is built on.
pub fn encrypt_with_states(plaintext: &[u8; 16], key: &MasterKey) -> StateTrace {
    let rks = expand_key(key);
    let mut state = *plaintext;
    add_round_key(&mut state, &rks[0]);
    for rk in rks.iter().take(10).skip(1) {
        sub_bytes(&mut state);
        shift_rows(&mut state);
        mix_columns(&mut state);
        add_round_key(&mut state, rk);
    }
    let round9_state = state;
    sub_bytes(&mut state);
    shift_rows(&mut state);
    add_round_key(&mut state, &rks[10]);
    StateTrace {
        ciphertext: state,
        round9_state,
    }
}

/// Plain AES-128 encryption.
pub fn encrypt(plaintext: &[u8; 16], key: &MasterKey) -> [u8; 16] {
    encrypt_with_states(plaintext, key).ciphertext
}
