use std::collections::BTreeMap;

use jokerank_tensor::Tensor;
use sha2::{Digest, Sha256};

use crate::datamodel::{Corpus, EmbeddingTable, LabelledInstance, Timestamp, UserHistory};
use crate::error::{Error, Result};
use crate::features::clean_text;
use crate::labelling::HistoryIndex;

use super::config::DLConfig;

/// Frozen token embeddings of every corpus joke, truncated to `max_tokens`.
/// A joke with no tokens after cleaning holds one reserved pad token, whose
/// embedding is the zero vector.
#[derive(Clone, Debug)]
pub struct TokenCache {
    dim: usize,
    seqs: Vec<Vec<f64>>,
}

impl TokenCache {
    pub fn new(corpus: &Corpus, table: &EmbeddingTable, max_tokens: usize) -> Self {
        let dim = table.dim();
        let seqs = corpus
            .iter()
            .map(|joke| {
                let tokens = clean_text(&joke.text);
                if tokens.is_empty() {
                    return vec![0.0; dim];
                }
                tokens.iter().take(max_tokens).flat_map(|t| table.embed_token(t)).collect()
            })
            .collect();
        Self { dim, seqs }
    }

    /// Builds a cache from explicit `[len * dim]` embedding rows.
    pub fn from_rows(dim: usize, seqs: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 || seqs.iter().any(|s| s.is_empty() || s.len() % dim != 0) {
            return Err(Error::Invalid("token rows must be non-empty multiples of dim".into()));
        }
        Ok(Self { dim, seqs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// SHA-256 over the dimension and every stored value.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for s in &self.seqs {
            h.update((s.len() as u64).to_le_bytes());
            for x in s {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }

    pub fn num_tokens(&self, joke: usize) -> usize {
        self.seqs[joke].len() / self.dim
    }

    /// Pads the selected jokes to a common length of at least `min_len`.
    pub fn batch(&self, jokes: &[usize], min_len: usize) -> SeqBatch {
        let lengths: Vec<usize> = jokes.iter().map(|&j| self.num_tokens(j)).collect();
        let len = lengths.iter().copied().max().unwrap_or(1).max(min_len).max(1);
        let mut data = vec![0.0; jokes.len() * len * self.dim];
        for (i, &j) in jokes.iter().enumerate() {
            let src = &self.seqs[j];
            data[i * len * self.dim..i * len * self.dim + src.len()].copy_from_slice(src);
        }
        SeqBatch {
            embeddings: Tensor::new(vec![jokes.len(), len, self.dim], data).expect("consistent shape"),
            lengths,
        }
    }
}

/// Padded token embeddings `[n, len, dim]` and the true lengths.
#[derive(Clone, Debug)]
pub struct SeqBatch {
    pub embeddings: Tensor,
    pub lengths: Vec<usize>,
}

impl SeqBatch {
    pub fn n(&self) -> usize {
        self.embeddings.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.embeddings.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.n() == 0
    }
}

/// `[month/12, day/31, is_weekend]`.
pub fn time_vector(t: Timestamp) -> [f64; 3] {
    [
        f64::from(t.month()) / 12.0,
        f64::from(t.day()) / 31.0,
        if t.is_weekend() { 1.0 } else { 0.0 },
    ]
}

/// Country vocabulary; index 0 is reserved for unknown countries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountryVocab {
    codes: Vec<String>,
}

impl CountryVocab {
    pub fn new<I: IntoIterator<Item = String>>(codes: I) -> Self {
        let mut codes: Vec<String> = codes.into_iter().collect();
        codes.sort();
        codes.dedup();
        Self { codes }
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    /// Number of embedding rows, including the unknown row.
    pub fn size(&self) -> usize {
        self.codes.len() + 1
    }

    pub fn index(&self, code: &str) -> usize {
        self.codes.binary_search_by(|c| c.as_str().cmp(code)).map_or(0, |i| i + 1)
    }
}

/// One request resolved to corpus positions and model inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct DlExample {
    pub candidate: usize,
    pub liked: Vec<usize>,
    pub disliked: Vec<usize>,
    pub country: usize,
    pub time: [f64; 3],
    pub label_reuse: u8,
    pub label_return: u8,
    pub sample_weight: f64,
    pub class_weight_reuse: f64,
    pub class_weight_return: f64,
}

fn recent_positions(ids: &[String], corpus: &Corpus, max: usize) -> Result<Vec<usize>> {
    let start = ids.len().saturating_sub(max);
    ids[start..].iter().map(|id| corpus.position(id)).collect()
}

impl DlExample {
    /// Inputs for scoring `joke_id` in a request with the given history.
    pub fn for_request(
        joke_id: &str,
        t: Timestamp,
        country: &str,
        history: &UserHistory,
        corpus: &Corpus,
        countries: &CountryVocab,
        max_history: usize,
    ) -> Result<Self> {
        Ok(Self {
            candidate: corpus.position(joke_id)?,
            liked: recent_positions(&history.liked_joke_ids, corpus, max_history)?,
            disliked: recent_positions(&history.disliked_joke_ids, corpus, max_history)?,
            country: countries.index(country),
            time: time_vector(t),
            label_reuse: 0,
            label_return: 0,
            sample_weight: 1.0,
            class_weight_reuse: 1.0,
            class_weight_return: 1.0,
        })
    }

    /// Training examples with point-in-time histories. Sample weights are
    /// replaced by 1 when `cfg.use_sample_weights` is false.
    pub fn from_instances(
        instances: &[LabelledInstance],
        history: &HistoryIndex,
        corpus: &Corpus,
        countries: &CountryVocab,
        cfg: &DLConfig,
    ) -> Result<Vec<Self>> {
        instances
            .iter()
            .map(|inst| {
                let e = &inst.event;
                let hist = history.at(&e.user_id, e.timestamp, &e.country_code);
                let mut ex = Self::for_request(
                    &e.joke_id,
                    e.timestamp,
                    &e.country_code,
                    &hist,
                    corpus,
                    countries,
                    cfg.max_history,
                )?;
                ex.label_reuse = inst.label_reuse;
                ex.label_return = inst.label_return;
                ex.sample_weight = if cfg.use_sample_weights { inst.sample_weight } else { 1.0 };
                ex.class_weight_reuse = inst.class_weight_reuse;
                ex.class_weight_return = inst.class_weight_return;
                Ok(ex)
            })
            .collect()
    }
}

/// A mini-batch with its history jokes gathered into one sorted union, so
/// each distinct history joke is encoded once.
#[derive(Clone, Debug)]
pub struct BatchInput {
    pub candidates: Vec<usize>,
    pub history_jokes: Vec<usize>,
    /// `[batch, history_jokes.len()]` row-averaging matrix over liked jokes;
    /// `None` when the union is empty.
    pub liked_avg: Option<Tensor>,
    pub disliked_avg: Option<Tensor>,
    pub countries: Vec<usize>,
    pub time: Tensor,
}

fn averaging_matrix(rows: &[&Vec<usize>], slot: &BTreeMap<usize, usize>) -> Tensor {
    let n = slot.len();
    let mut data = vec![0.0; rows.len() * n];
    for (r, jokes) in rows.iter().enumerate() {
        if jokes.is_empty() {
            continue;
        }
        let w = 1.0 / jokes.len() as f64;
        for j in jokes.iter() {
            data[r * n + slot[j]] += w;
        }
    }
    Tensor::new(vec![rows.len(), n], data).expect("consistent shape")
}

impl BatchInput {
    pub fn new(examples: &[&DlExample]) -> Self {
        let mut slot = BTreeMap::new();
        for ex in examples {
            for &j in ex.liked.iter().chain(&ex.disliked) {
                slot.insert(j, 0);
            }
        }
        let history_jokes: Vec<usize> = slot.keys().copied().collect();
        for (i, v) in slot.values_mut().enumerate() {
            *v = i;
        }
        let (liked_avg, disliked_avg) = if history_jokes.is_empty() {
            (None, None)
        } else {
            let liked: Vec<&Vec<usize>> = examples.iter().map(|e| &e.liked).collect();
            let disliked: Vec<&Vec<usize>> = examples.iter().map(|e| &e.disliked).collect();
            (Some(averaging_matrix(&liked, &slot)), Some(averaging_matrix(&disliked, &slot)))
        };
        let time = examples.iter().flat_map(|e| e.time).collect();
        Self {
            candidates: examples.iter().map(|e| e.candidate).collect(),
            history_jokes,
            liked_avg,
            disliked_avg,
            countries: examples.iter().map(|e| e.country).collect(),
            time: Tensor::new(vec![examples.len(), 3], time).expect("consistent shape"),
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}
