//! Hiding bits in token choices.
//!
//! Every leaf of the tree gets a canonical codeword. The encoder reads the
//! payload as a root-to-leaf walk and, on reaching a leaf, emits one token
//! drawn from that leaf's set in proportion to its probability. The decoder
//! maps each token back to its leaf and concatenates the codewords.
//!
//! The stream starts with a 32-bit big-endian payload length and the last
//! walk is padded with zeros, so decoding knows where to stop.

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distribution::TokenDistribution;
use crate::error::{Result, TppError};
use crate::solver::Solution;
use crate::tree::{canonical_codes, HeightVector, Partition};

pub const HEADER_BITS: usize = 32;

#[derive(Clone, Debug)]
pub struct Codec {
    heights: HeightVector,
    /// Codeword per leaf, `(value, length)`.
    codes: Vec<(u128, u32)>,
    /// `(length, codeword) -> leaf`.
    table: HashMap<(u32, u128), usize>,
    /// Original token ids per leaf.
    members: Vec<Vec<usize>>,
    samplers: Vec<WeightedIndex<f64>>,
    token_to_leaf: HashMap<usize, usize>,
}

impl Codec {
    /// `partition` holds sorted positions of `dist`, as in [`Solution`].
    pub fn new(
        heights: HeightVector,
        partition: &Partition,
        dist: &TokenDistribution,
    ) -> Result<Self> {
        if partition.len() != heights.len() {
            return Err(TppError::LengthMismatch {
                expected: heights.len(),
                found: partition.len(),
            });
        }
        if heights.len() < 2 {
            return Err(TppError::InvalidParameter(
                "a single-leaf tree carries no bits".into(),
            ));
        }
        let ids = dist.token_ids();
        let probs = dist.probs();
        let mut members = Vec::with_capacity(heights.len());
        let mut samplers = Vec::with_capacity(heights.len());
        let mut token_to_leaf = HashMap::new();
        for (leaf, set) in partition.sets().iter().enumerate() {
            if set.is_empty() {
                return Err(TppError::EmptyLeaf { leaf });
            }
            for &i in set {
                if i >= probs.len() {
                    return Err(TppError::LeafOutOfRange {
                        leaf: i,
                        leaves: probs.len(),
                    });
                }
                if token_to_leaf.insert(ids[i], leaf).is_some() {
                    return Err(TppError::InvalidParameter(format!(
                        "token {} appears in more than one leaf",
                        ids[i]
                    )));
                }
            }
            members.push(set.iter().map(|&i| ids[i]).collect());
            let weights = set.iter().map(|&i| probs[i]);
            samplers
                .push(WeightedIndex::new(weights).map_err(|e| {
                    TppError::InvalidParameter(format!("leaf {leaf} weights: {e}"))
                })?);
        }

        let codes = canonical_codes(&heights);
        let table: HashMap<(u32, u128), usize> = codes
            .iter()
            .enumerate()
            .map(|(leaf, &(code, len))| ((len, code), leaf))
            .collect();
        debug_assert!(prefix_free(&codes));
        Ok(Self {
            heights,
            codes,
            table,
            members,
            samplers,
            token_to_leaf,
        })
    }

    pub fn heights(&self) -> &HeightVector {
        &self.heights
    }

    pub fn path_label(&self, leaf: usize) -> String {
        let (code, len) = self.codes[leaf];
        (0..len)
            .rev()
            .map(|b| if (code >> b) & 1 == 1 { '1' } else { '0' })
            .collect()
    }

    pub fn path_labels(&self) -> Vec<String> {
        (0..self.codes.len()).map(|j| self.path_label(j)).collect()
    }

    pub fn leaf_of_token(&self, token: usize) -> Option<usize> {
        self.token_to_leaf.get(&token).copied()
    }

    /// Original token ids in `leaf`.
    pub fn members(&self, leaf: usize) -> &[usize] {
        &self.members[leaf]
    }
}

pub fn build_codec(sol: &Solution, dist: &TokenDistribution) -> Result<Codec> {
    Codec::new(sol.heights.clone(), &sol.partition, dist)
}

fn prefix_free(codes: &[(u128, u32)]) -> bool {
    codes.iter().enumerate().all(|(i, &(a, la))| {
        codes
            .iter()
            .enumerate()
            .all(|(j, &(b, lb))| i == j || la > lb || (b >> (lb - la)) != a)
    })
}

/// Emits one token per leaf visit. Token ids are the original ones.
pub fn encode(codec: &Codec, bits: &[bool], seed: u64) -> Result<Vec<usize>> {
    let len = u32::try_from(bits.len()).map_err(|_| {
        TppError::InvalidParameter(format!(
            "payload of {} bits exceeds the 32-bit header",
            bits.len()
        ))
    })?;
    let mut stream: Vec<bool> = (0..HEADER_BITS)
        .rev()
        .map(|b| (len >> b) & 1 == 1)
        .collect();
    stream.extend_from_slice(bits);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < stream.len() {
        let mut code: u128 = 0;
        let mut depth: u32 = 0;
        let leaf = loop {
            let bit = stream.get(pos).copied().unwrap_or(false);
            pos += 1;
            code = (code << 1) | bit as u128;
            depth += 1;
            if let Some(&leaf) = codec.table.get(&(depth, code)) {
                break leaf;
            }
        };
        let pick = codec.samplers[leaf].sample(&mut rng);
        tokens.push(codec.members[leaf][pick]);
    }
    Ok(tokens)
}

pub fn decode(codec: &Codec, tokens: &[usize]) -> Result<Vec<bool>> {
    let mut stream = Vec::new();
    for &token in tokens {
        let leaf = codec
            .leaf_of_token(token)
            .ok_or(TppError::UnknownToken { token })?;
        let (code, len) = codec.codes[leaf];
        stream.extend((0..len).rev().map(|b| (code >> b) & 1 == 1));
    }
    if stream.len() < HEADER_BITS {
        return Err(TppError::TruncatedStream {
            declared: HEADER_BITS,
            available: stream.len(),
        });
    }
    let declared = stream[..HEADER_BITS]
        .iter()
        .fold(0usize, |acc, &b| (acc << 1) | b as usize);
    let available = stream.len() - HEADER_BITS;
    if available < declared {
        return Err(TppError::TruncatedStream {
            declared,
            available,
        });
    }
    Ok(stream[HEADER_BITS..HEADER_BITS + declared].to_vec())
}

/// Bits of `s`, most significant bit of each byte first.
pub fn bits_from_hex(s: &str) -> Result<Vec<bool>> {
    let bytes = hex::decode(s.trim())?;
    Ok(bytes
        .iter()
        .flat_map(|&byte| (0..8).rev().map(move |b| (byte >> b) & 1 == 1))
        .collect())
}

/// Inverse of [`bits_from_hex`]; a trailing partial byte is zero-padded.
pub fn bits_to_hex(bits: &[bool]) -> String {
    let bytes: Vec<u8> = bits
        .chunks(8)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | ((b as u8) << (7 - i)))
        })
        .collect();
    hex::encode(bytes)
}
