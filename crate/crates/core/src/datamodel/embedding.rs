//! Word vectors with hashed character n-gram fallback for unknown tokens.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NUM_BUCKETS: usize = 50_000;
pub const DEFAULT_NGRAM_RANGE: (usize, usize) = (3, 5);
pub const DEFAULT_DIM: usize = 32;

/// Everything needed to rebuild an [`EmbeddingTable`] deterministically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSpec {
    pub dim: usize,
    pub num_buckets: usize,
    pub ngram_range: (usize, usize),
    pub seed: u64,
    /// Optional word-vector text file; its header overrides `dim`.
    pub file: Option<PathBuf>,
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            num_buckets: DEFAULT_NUM_BUCKETS,
            ngram_range: DEFAULT_NGRAM_RANGE,
            seed: 0,
            file: None,
        }
    }
}

impl EmbeddingSpec {
    pub fn build(&self) -> Result<EmbeddingTable> {
        match &self.file {
            Some(path) => EmbeddingTable::load_text(path, self.num_buckets, self.ngram_range, self.seed),
            None => EmbeddingTable::seeded(self.dim, self.num_buckets, self.ngram_range, self.seed),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    word_vectors: HashMap<String, Vec<f64>>,
    buckets: Vec<f64>,
    num_buckets: usize,
    ngram_range: (usize, usize),
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Character n-grams of `<token>` for every n in `range` (inclusive).
pub fn char_ngrams(token: &str, range: (usize, usize)) -> Vec<String> {
    let padded: Vec<char> = format!("<{token}>").chars().collect();
    let mut out = Vec::new();
    for n in range.0..=range.1 {
        if n == 0 || n > padded.len() {
            continue;
        }
        for w in padded.windows(n) {
            out.push(w.iter().collect());
        }
    }
    out
}

impl EmbeddingTable {
    /// A table with no word vectors whose n-gram buckets are drawn from
    /// `N(0, 1/dim)` with the given seed.
    pub fn seeded(dim: usize, num_buckets: usize, ngram_range: (usize, usize), seed: u64) -> Result<Self> {
        if dim == 0 || num_buckets == 0 {
            return Err(Error::Config("embedding dim and bucket count must be positive".into()));
        }
        if ngram_range.0 == 0 || ngram_range.0 > ngram_range.1 {
            return Err(Error::Config(format!("invalid n-gram range {ngram_range:?}")));
        }
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let buckets = (0..dim * num_buckets).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self {
            dim,
            word_vectors: HashMap::new(),
            buckets,
            num_buckets,
            ngram_range,
        })
    }

    pub fn with_defaults(seed: u64) -> Self {
        Self::seeded(DEFAULT_DIM, DEFAULT_NUM_BUCKETS, DEFAULT_NGRAM_RANGE, seed).expect("valid defaults")
    }

    /// Loads a text embedding file: a `V D` header, then `V` lines of
    /// `token v1 .. vD`. Buckets are seeded as in [`EmbeddingTable::seeded`].
    pub fn load_text(path: &Path, num_buckets: usize, ngram_range: (usize, usize), seed: u64) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let header = lines.next().ok_or_else(|| parse_err(1, "missing `V D` header".into()))??;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(1, format!("bad header: {e}")))?;
        let [vocab, dim] = dims[..] else {
            return Err(parse_err(1, format!("header must be `V D`, got `{header}`")));
        };
        let mut table = Self::seeded(dim, num_buckets, ngram_range, seed)?;
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().expect("non-empty line").to_string();
            let v: Vec<f64> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(i + 2, format!("bad value: {e}")))?;
            if v.len() != dim {
                return Err(parse_err(i + 2, format!("expected {dim} values, got {}", v.len())));
            }
            table.word_vectors.insert(token, v);
        }
        if table.word_vectors.len() != vocab {
            return Err(parse_err(1, format!("header declares {vocab} words, file has {}", table.word_vectors.len())));
        }
        Ok(table)
    }

    pub fn insert_word(&mut self, token: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Invalid(format!(
                "vector for `{token}` has length {}, table dim is {}",
                vector.len(),
                self.dim
            )));
        }
        self.word_vectors.insert(token.to_string(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ngram_range(&self) -> (usize, usize) {
        self.ngram_range
    }

    pub fn num_buckets(&self) -> usize {
        self.num_buckets
    }

    pub fn contains_word(&self, token: &str) -> bool {
        self.word_vectors.contains_key(token)
    }

    pub fn bucket_of(&self, ngram: &str) -> usize {
        (fnv1a64(ngram.as_bytes()) % self.num_buckets as u64) as usize
    }

    pub fn bucket_vector(&self, bucket: usize) -> &[f64] {
        &self.buckets[bucket * self.dim..(bucket + 1) * self.dim]
    }

    /// Stored vector for known tokens, otherwise the mean of the token's
    /// n-gram bucket vectors (zero if it has no n-grams).
    pub fn embed_token(&self, token: &str) -> Vec<f64> {
        if let Some(v) = self.word_vectors.get(token) {
            return v.clone();
        }
        let mut acc = vec![0.0; self.dim];
        let grams = char_ngrams(token, self.ngram_range);
        if grams.is_empty() {
            return acc;
        }
        for g in &grams {
            for (a, b) in acc.iter_mut().zip(self.bucket_vector(self.bucket_of(g))) {
                *a += b;
            }
        }
        let n = grams.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EmbeddingTable {
        EmbeddingTable::seeded(4, 97, (3, 5), 11).unwrap()
    }

    /// Independent enumeration: every substring of the padded token whose
    /// length lies in the range, hashed and averaged.
    fn oracle(table: &EmbeddingTable, token: &str) -> Vec<f64> {
        let padded = format!("<{token}>");
        let chars: Vec<char> = padded.chars().collect();
        let mut sum = vec![0.0; table.dim()];
        let mut count = 0;
        for start in 0..chars.len() {
            for end in start + 1..=chars.len() {
                let len = end - start;
                if len < 3 || len > 5 {
                    continue;
                }
                let gram: String = chars[start..end].iter().collect();
                let mut h: u64 = 14695981039346656037;
                for b in gram.bytes() {
                    h = (h ^ b as u64).wrapping_mul(1099511628211);
                }
                let row = (h % 97) as usize;
                for (s, v) in sum.iter_mut().zip(table.bucket_vector(row)) {
                    *s += v;
                }
                count += 1;
            }
        }
        sum.into_iter().map(|s| s / count as f64).collect()
    }

    #[test]
    fn known_token_returns_stored_vector() {
        let mut t = small();
        t.insert_word("santa", vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.embed_token("santa"), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn oov_token_matches_enumeration_oracle() {
        let t = small();
        for tok in ["sleigh", "reindeer", "zq"] {
            let got = t.embed_token(tok);
            let want = oracle(&t, tok);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{tok}");
            }
        }
    }

    #[test]
    fn single_character_oov_uses_padded_trigram() {
        let t = small();
        assert_eq!(char_ngrams("c", (3, 5)), vec!["<c>".to_string()]);
        let got = t.embed_token("c");
        let want = oracle(&t, "c");
        assert_eq!(got, want);
        assert_eq!(got, t.bucket_vector(t.bucket_of("<c>")).to_vec());
    }

    #[test]
    fn no_ngrams_gives_zero_vector() {
        let t = EmbeddingTable::seeded(4, 97, (5, 6), 1).unwrap();
        assert_eq!(t.embed_token("a"), vec![0.0; 4]);
    }

    #[test]
    fn load_text_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.txt");
        std::fs::write(&p, "2 3\nsanta 1 0 0\nelf 0 1 0.5\n").unwrap();
        let t = EmbeddingTable::load_text(&p, 10, (3, 5), 0).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.embed_token("elf"), vec![0.0, 1.0, 0.5]);
        assert_eq!(t.embed_token("reindeer").len(), 3);

        std::fs::write(&p, "2 3\nsanta 1 0\n").unwrap();
        assert!(EmbeddingTable::load_text(&p, 10, (3, 5), 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn embed_is_total_and_deterministic(tok in "[a-z0-9]{1,12}") {
            let t = small();
            let a = t.embed_token(&tok);
            proptest::prop_assert_eq!(a.len(), 4);
            proptest::prop_assert_eq!(a, t.embed_token(&tok));
        }
    }
}
