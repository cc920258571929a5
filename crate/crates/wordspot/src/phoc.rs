//! Pyramidal histogram-of-characters (PHOC) string embedding.
//!
//! A word is embedded as a binary attribute vector. The string is split
//! pyramidally: level 1 is the whole word, level 2 its two halves, level
//! n its n equal regions. A character at 0-based index `i` of a word of
//! length `L` occupies the unit-interval segment `[i/L, (i+1)/L]`; region
//! `r` of level `n` occupies `[r/n, (r+1)/n]`. The bit for
//! (level, region, character) is set iff some occurrence of the character
//! overlaps the region by at least `overlap_threshold` of the character's
//! own extent (`1/L`), inclusive at exact ties.
//!
//! Ties are decided exactly: the overlap test is evaluated in integer
//! arithmetic (all interval endpoints are rationals with denominators
//! `L` and `n`), so no float rounding can flip a boundary bit.
//!
//! Bit layout is fixed so descriptors and checkpoints stay portable:
//! level-major (in the configured level order), then region, then
//! alphabet position. See [`PhocConfig::bit_index`] / [`PhocConfig::decode_index`].

use std::collections::HashMap;

use sha2::{Digest, Sha256};

/// Default alphabet: lowercase a-z followed by digits 0-9.
pub const DEFAULT_ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz0123456789";

/// Default pyramid levels.
pub const DEFAULT_LEVELS: &[usize] = &[1, 2, 4, 8];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PhocError {
    #[error("word is empty after normalization")]
    EmptyWord,
    #[error("alphabet is empty")]
    EmptyAlphabet,
    #[error("duplicate alphabet character {0:?}")]
    DuplicateAlphabetChar(char),
    #[error("levels must be a non-empty strictly increasing list of positive integers")]
    InvalidLevels,
    #[error("overlap threshold {0} is outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("character {0:?} is not in the alphabet (normalize the word first)")]
    CharacterNotInAlphabet(char),
}

/// Configuration of the PHOC embedding: alphabet, pyramid levels and the
/// overlap threshold deciding region membership.
#[derive(Debug, Clone)]
pub struct PhocConfig {
    alphabet: Vec<char>,
    levels: Vec<usize>,
    overlap_threshold: f64,
    // exact dyadic representation of the threshold, fixed at construction
    threshold_num: i128,
    threshold_den: i128,
    positions: HashMap<char, usize>,
    level_offsets: Vec<usize>,
    dim: usize,
    id: u64,
}

impl Default for PhocConfig {
    fn default() -> Self {
        Self::new(DEFAULT_ALPHABET.chars(), DEFAULT_LEVELS.to_vec(), 0.5)
            .expect("default PHOC configuration is valid")
    }
}

impl PhocConfig {
    pub fn new(
        alphabet: impl IntoIterator<Item = char>,
        levels: Vec<usize>,
        overlap_threshold: f64,
    ) -> Result<Self, PhocError> {
        let alphabet: Vec<char> = alphabet.into_iter().collect();
        if alphabet.is_empty() {
            return Err(PhocError::EmptyAlphabet);
        }
        let mut positions = HashMap::with_capacity(alphabet.len());
        for (i, &c) in alphabet.iter().enumerate() {
            if positions.insert(c, i).is_some() {
                return Err(PhocError::DuplicateAlphabetChar(c));
            }
        }
        if levels.is_empty() || levels[0] == 0 || levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PhocError::InvalidLevels);
        }
        let (threshold_num, threshold_den) = dyadic_ratio(overlap_threshold)
            .ok_or(PhocError::InvalidThreshold(overlap_threshold))?;

        let mut level_offsets = Vec::with_capacity(levels.len());
        let mut offset = 0;
        for &n in &levels {
            level_offsets.push(offset);
            offset += n * alphabet.len();
        }
        let dim = offset;

        let mut hasher = Sha256::new();
        for c in &alphabet {
            hasher.update((*c as u32).to_le_bytes());
        }
        hasher.update([0xff]);
        for n in &levels {
            hasher.update((*n as u64).to_le_bytes());
        }
        hasher.update(overlap_threshold.to_bits().to_le_bytes());
        let digest = hasher.finalize();
        let id = u64::from_le_bytes(digest[..8].try_into().unwrap());

        Ok(Self {
            alphabet,
            levels,
            overlap_threshold,
            threshold_num,
            threshold_den,
            positions,
            level_offsets,
            dim,
            id,
        })
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn overlap_threshold(&self) -> f64 {
        self.overlap_threshold
    }

    /// Embedding dimension: `|alphabet| * sum(levels)`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Stable identifier of this configuration; embedded in every
    /// [`PhocVector`] so vectors from different configurations cannot be
    /// mixed up silently.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Lowercase `raw` and drop every character that is not in the
    /// alphabet. The empty result is allowed here; [`PhocConfig::encode`]
    /// rejects it.
    pub fn normalize(&self, raw: &str) -> String {
        raw.chars()
            .flat_map(char::to_lowercase)
            .filter(|c| self.positions.contains_key(c))
            .collect()
    }

    /// Flat bit index of (level index, region, alphabet position).
    pub fn bit_index(&self, level_idx: usize, region: usize, char_pos: usize) -> usize {
        debug_assert!(level_idx < self.levels.len());
        debug_assert!(region < self.levels[level_idx]);
        debug_assert!(char_pos < self.alphabet.len());
        self.level_offsets[level_idx] + region * self.alphabet.len() + char_pos
    }

    /// Inverse of [`PhocConfig::bit_index`].
    pub fn decode_index(&self, index: usize) -> (usize, usize, usize) {
        assert!(index < self.dim, "bit index {index} out of range");
        let mut level_idx = self.levels.len() - 1;
        while self.level_offsets[level_idx] > index {
            level_idx -= 1;
        }
        let rel = index - self.level_offsets[level_idx];
        (level_idx, rel / self.alphabet.len(), rel % self.alphabet.len())
    }

    /// Encode an already-normalized, non-empty word.
    pub fn encode(&self, word: &str) -> Result<PhocVector, PhocError> {
        let chars: Vec<char> = word.chars().collect();
        if chars.is_empty() {
            return Err(PhocError::EmptyWord);
        }
        let word_len = chars.len() as i128;
        let mut bits = vec![0u8; self.dim];
        for (i, c) in chars.iter().enumerate() {
            let char_pos = *self
                .positions
                .get(c)
                .ok_or(PhocError::CharacterNotInAlphabet(*c))?;
            let i = i as i128;
            for (level_idx, &n) in self.levels.iter().enumerate() {
                let n = n as i128;
                for r in 0..n {
                    // Overlap of [i/L, (i+1)/L] with [r/n, (r+1)/n], scaled
                    // by L*n so everything stays integral.
                    let hi = (n * (i + 1)).min(word_len * (r + 1));
                    let lo = (n * i).max(word_len * r);
                    let overlap = hi - lo;
                    // overlap/(L*n) >= t/L  <=>  overlap * t_den >= t_num * n
                    if overlap > 0 && overlap * self.threshold_den >= self.threshold_num * n {
                        bits[self.bit_index(level_idx, r as usize, char_pos)] = 1;
                    }
                }
            }
        }
        Ok(PhocVector {
            bits,
            config_id: self.id,
        })
    }

    /// Normalize and encode in one step.
    pub fn encode_raw(&self, raw: &str) -> Result<PhocVector, PhocError> {
        self.encode(&self.normalize(raw))
    }
}

/// Exact dyadic (num/den, den a power of two) representation of a float
/// in (0, 1]. Every finite f64 in that range with at most 63 fractional
/// bits is representable; returns `None` otherwise.
fn dyadic_ratio(x: f64) -> Option<(i128, i128)> {
    if !x.is_finite() || x <= 0.0 || x > 1.0 {
        return None;
    }
    let mut num = x;
    let mut den: i128 = 1;
    for _ in 0..63 {
        if num.fract() == 0.0 {
            return Some((num as i128, den));
        }
        num *= 2.0;
        den *= 2;
    }
    if num.fract() == 0.0 {
        Some((num as i128, den))
    } else {
        None
    }
}

/// Binary PHOC attribute vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhocVector {
    bits: Vec<u8>,
    config_id: u64,
}

impl PhocVector {
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn config_id(&self) -> u64 {
        self.config_id
    }

    /// Indices of the set bits.
    pub fn set_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| (b == 1).then_some(i))
            .collect()
    }

    /// The bits as 0.0/1.0 values, the form consumed as a training target
    /// and as a query descriptor.
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }
}
