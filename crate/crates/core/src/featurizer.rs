//! Tokenization and frozen node features.
//!
//! Tokens are lowercase alphanumeric runs. Each token is hashed with 64-bit
//! FNV-1a over its UTF-8 bytes and bucketed into `3 + hash % (vocab − 3)`;
//! ids 0, 1, 2 are reserved for PAD, EOS and UNK.
//!
//! The hashed fallback features project a node's term-frequency vector
//! through a ±1 sign matrix whose entries are derived on the fly from
//! `(seed, token id, column)` with SplitMix64, then L2-normalize.

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;

use crate::error::{Error, Result};
use crate::graph::TagGraph;
use crate::io::read_matrix_tsv;
use crate::linalg::{norm, Matrix};

pub const PAD: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;
pub const FIRST_WORD_ID: u32 = 3;

/// Token ids of one text, terminated by [`EOS`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    /// Validates the EOS placement. Trailing PAD after EOS is allowed.
    pub fn from_ids(ids: Vec<u32>) -> Result<Self> {
        let last = ids.iter().rposition(|&t| t != PAD);
        match last {
            Some(p) if ids[p] == EOS && ids.iter().filter(|&&t| t == EOS).count() == 1 => {
                Ok(TokenSequence(ids))
            }
            _ => Err(Error::validation(
                "token sequence must contain exactly one EOS at its last non-pad position",
            )),
        }
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Ids with padding dropped; always ends with EOS.
    pub fn unpadded(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().copied().filter(|&t| t != PAD)
    }

    pub fn with_padding(mut self, extra: usize) -> Self {
        self.0.extend(std::iter::repeat_n(PAD, extra));
        self
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Lowercased alphanumeric runs of `text`.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

pub fn word_id(word: &str, vocab_size: usize) -> u32 {
    let buckets = (vocab_size as u64).saturating_sub(FIRST_WORD_ID as u64).max(1);
    FIRST_WORD_ID + (fnv1a64(word.as_bytes()) % buckets) as u32
}

pub fn tokenize(text: &str, vocab_size: usize, max_len: usize) -> TokenSequence {
    let keep = max_len.saturating_sub(1);
    let mut ids: Vec<u32> = words(text).take(keep).map(|w| word_id(&w, vocab_size)).collect();
    ids.push(EOS);
    TokenSequence(ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    HashedFallback,
    ExternalFile,
}

/// Fixed (non-trained) input attributes of the graph encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenFeatures {
    pub matrix: Matrix,
    pub provenance: Provenance,
}

impl FrozenFeatures {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Fills `out` with the sign-matrix row of token `id`.
fn sign_row(seed: u64, id: u32, out: &mut [f64]) {
    let base = splitmix64(seed ^ splitmix64(id as u64));
    for (chunk_idx, chunk) in out.chunks_mut(64).enumerate() {
        let bits = splitmix64(base.wrapping_add(chunk_idx as u64));
        for (b, v) in chunk.iter_mut().enumerate() {
            *v = if (bits >> b) & 1 == 1 { 1.0 } else { -1.0 };
        }
    }
}

/// Hashed bag-of-words embedding of one text; `e₀` for texts without words.
pub fn hashed_row(text: &str, vocab_size: usize, d_in: usize, seed: u64) -> Vec<f64> {
    let mut ids: Vec<u32> = words(text).map(|w| word_id(&w, vocab_size)).collect();
    ids.sort_unstable();
    let mut row = vec![0.0; d_in];
    let mut signs = vec![0.0; d_in];
    let mut i = 0;
    while i < ids.len() {
        let id = ids[i];
        let tf = ids[i..].iter().take_while(|&&t| t == id).count();
        sign_row(seed, id, &mut signs);
        for (r, s) in row.iter_mut().zip(&signs) {
            *r += tf as f64 * s;
        }
        i += tf;
    }
    let nrm = norm(&row);
    if nrm > 0.0 {
        row.iter_mut().for_each(|v| *v /= nrm);
    } else {
        row.iter_mut().for_each(|v| *v = 0.0);
        row[0] = 1.0;
    }
    row
}

pub fn hashed_features(graph: &TagGraph, vocab_size: usize, d_in: usize, seed: u64) -> FrozenFeatures {
    assert!(d_in >= 1, "d_in must be positive");
    let mut m = Matrix::zeros(graph.node_count(), d_in);
    for v in 0..graph.node_count() {
        m.row_mut(v)
            .copy_from_slice(&hashed_row(graph.text(v), vocab_size, d_in, seed));
    }
    FrozenFeatures {
        matrix: m,
        provenance: Provenance::HashedFallback,
    }
}

/// Loads a `features.tsv` matrix and checks it against the graph.
pub fn load_external_features(path: &Path, graph: &TagGraph) -> Result<FrozenFeatures> {
    let rows = read_matrix_tsv(path)?;
    if rows.len() != graph.node_count() {
        return Err(Error::validation(format!(
            "dimension mismatch: {} feature rows for {} nodes",
            rows.len(),
            graph.node_count()
        )));
    }
    let dim = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != dim) {
        return Err(Error::validation(format!(
            "dimension mismatch: row {i} has {} columns, expected {dim}",
            rows[i].len()
        )));
    }
    if dim == 0 && graph.node_count() > 0 {
        return Err(Error::validation("dimension mismatch: zero-width features"));
    }
    Ok(FrozenFeatures {
        matrix: Matrix::from_rows(&rows),
        provenance: Provenance::ExternalFile,
    })
}
