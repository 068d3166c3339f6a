//! Transformer and CNN joke rankers trained with the two-head weighted,
//! label-smoothed loss.

pub mod check;
mod config;
mod data;
mod loss;
mod network;
mod train;

use std::path::Path;

use jokerank_tensor::{checkpoint, Graph, ParamStore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::{Corpus, EmbeddingTable, LabelChoice, LabelledInstance};
use crate::error::{Error, Result};
use crate::labelling::HistoryIndex;
use crate::ranking::{RequestContext, Scorer};

pub use config::{DLConfig, EncoderKind, ModelVariant};
pub use data::{time_vector, BatchInput, CountryVocab, DlExample, SeqBatch, TokenCache};
pub use loss::{one_hot, smooth_labels, total_loss, total_loss_graph, LossTargets};
pub use network::{positional_encoding, BatchEncoding, DlNetwork, HeadOutputs, HEAD_INIT_SCALE, MASK_BIAS, USER_TOKENS};
pub use train::{evaluate_loss, fit, predict, round_to_f32, selection_auc, DlTrainLog, EpochLog, INFERENCE_BATCH};

/// SHA-256 over joke ids and texts, tying a checkpoint to its corpus.
pub fn corpus_fingerprint(corpus: &Corpus) -> String {
    let mut h = Sha256::new();
    for j in corpus.iter() {
        h.update(j.joke_id.as_bytes());
        h.update([0]);
        h.update(j.text.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

/// A corpus with its frozen token embeddings.
#[derive(Clone, Debug)]
pub struct DlContext {
    pub corpus: Corpus,
    pub tokens: TokenCache,
    pub max_tokens: usize,
}

impl DlContext {
    pub fn new(corpus: Corpus, table: &EmbeddingTable, max_tokens: usize) -> Self {
        let tokens = TokenCache::new(&corpus, table, max_tokens);
        Self {
            corpus,
            tokens,
            max_tokens,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DlMeta {
    kind: String,
    config: DLConfig,
    countries: Vec<String>,
    max_tokens: usize,
    corpus_fingerprint: String,
    tokens_fingerprint: String,
}

/// A trained (or freshly initialised) DL ranker bound to its corpus.
#[derive(Clone, Debug)]
pub struct DLModel {
    name: String,
    net: DlNetwork,
    store: ParamStore,
    countries: CountryVocab,
    ctx: DlContext,
}

impl DLModel {
    /// A model with initial parameters; scores stay near 0.5.
    pub fn untrained(ctx: &DlContext, countries: CountryVocab, cfg: &DLConfig, seed: u64) -> Result<Self> {
        let net = DlNetwork::new(cfg, ctx.tokens.dim(), countries.size())?;
        let store = net.init_params(seed);
        Ok(Self {
            name: "dl".into(),
            net,
            store,
            countries,
            ctx: ctx.clone(),
        })
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn config(&self) -> &DLConfig {
        self.net.config()
    }

    pub fn network(&self) -> &DlNetwork {
        &self.net
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn countries(&self) -> &CountryVocab {
        &self.countries
    }

    pub fn context(&self) -> &DlContext {
        &self.ctx
    }

    /// Resolves labelled instances to model inputs with point-in-time histories.
    pub fn examples(&self, instances: &[LabelledInstance], history: &HistoryIndex) -> Result<Vec<DlExample>> {
        DlExample::from_instances(instances, history, &self.ctx.corpus, &self.countries, self.config())
    }

    /// Positive-class probabilities `(reuse, return)`.
    pub fn predict(&self, examples: &[DlExample]) -> Result<Vec<[f64; 2]>> {
        predict(&self.net, &self.store, &self.ctx.tokens, examples)
    }

    fn head_column(&self) -> usize {
        usize::from(self.config().selection_label == LabelChoice::Return)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = DlMeta {
            kind: "dl".into(),
            config: self.config().clone(),
            countries: self.countries.codes().to_vec(),
            max_tokens: self.ctx.max_tokens,
            corpus_fingerprint: corpus_fingerprint(&self.ctx.corpus),
            tokens_fingerprint: self.ctx.tokens.fingerprint(),
        };
        checkpoint::save(dir, &self.store, serde_json::to_value(meta)?)?;
        Ok(())
    }

    /// Loads a checkpoint; `ctx` must hold the corpus and token embeddings
    /// the model was trained with.
    pub fn load(dir: &Path, ctx: &DlContext) -> Result<Self> {
        let (store, manifest) = checkpoint::load(dir)?;
        let kind = manifest.meta.get("kind").and_then(|k| k.as_str()).unwrap_or("none");
        if kind != "dl" {
            return Err(Error::SchemaMismatch {
                expected: "dl checkpoint".into(),
                found: kind.into(),
            });
        }
        let meta: DlMeta = serde_json::from_value(manifest.meta)?;
        for (expected, found) in [
            (meta.corpus_fingerprint, corpus_fingerprint(&ctx.corpus)),
            (meta.tokens_fingerprint, ctx.tokens.fingerprint()),
            (meta.max_tokens.to_string(), ctx.max_tokens.to_string()),
        ] {
            if expected != found {
                return Err(Error::SchemaMismatch { expected, found });
            }
        }
        let ctx = ctx.clone();
        let countries = CountryVocab::new(meta.countries);
        let net = DlNetwork::new(&meta.config, ctx.tokens.dim(), countries.size())?;
        let expected = net.init_params(0);
        let names = |s: &ParamStore| s.iter().map(|(_, n, t)| (n.to_string(), t.shape().to_vec())).collect::<Vec<_>>();
        if names(&expected) != names(&store) {
            return Err(Error::SchemaMismatch {
                expected: "parameters matching the stored configuration".into(),
                found: "a different parameter set".into(),
            });
        }
        Ok(Self {
            name: "dl".into(),
            net,
            store,
            countries,
            ctx,
        })
    }
}

impl DLModel {
    fn request_examples(&self, pairs: &[(&RequestContext, &str)]) -> Result<Vec<DlExample>> {
        pairs
            .iter()
            .map(|(c, joke)| {
                DlExample::for_request(
                    joke,
                    c.timestamp,
                    &c.country_code,
                    &c.history,
                    &self.ctx.corpus,
                    &self.countries,
                    self.config().max_history,
                )
            })
            .collect()
    }

    /// Evaluation-mode encoding of each joke in its request context.
    pub fn joke_encodings(&self, pairs: &[(&RequestContext, &str)]) -> Result<Vec<Vec<f64>>> {
        let examples = self.request_examples(pairs)?;
        let refs: Vec<&DlExample> = examples.iter().collect();
        let mut g = Graph::new();
        let enc = self.net.encode_batch(&mut g, &self.store, &self.ctx.tokens, &BatchInput::new(&refs))?;
        let value = g.value(enc.candidates);
        let width = value.shape()[1];
        Ok(value.data().chunks(width).map(<[f64]>::to_vec).collect())
    }
}

impl Scorer for DLModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_pairs(&self, pairs: &[(&RequestContext, &str)]) -> Result<Vec<f64>> {
        let examples = self.request_examples(pairs)?;
        let col = self.head_column();
        Ok(self.predict(&examples)?.into_iter().map(|p| p[col]).collect())
    }
}

/// Trains one DL ranker. The country vocabulary comes from the training split.
pub fn train_dl(
    ctx: &DlContext,
    train: &[LabelledInstance],
    val: &[LabelledInstance],
    history: &HistoryIndex,
    cfg: &DLConfig,
    seed: u64,
) -> Result<(DLModel, DlTrainLog)> {
    if cfg.max_tokens != ctx.max_tokens {
        return Err(Error::Config(format!(
            "token cache built for {} tokens, config asks for {}",
            ctx.max_tokens, cfg.max_tokens
        )));
    }
    let countries = CountryVocab::new(train.iter().map(|i| i.event.country_code.clone()));
    let mut model = DLModel::untrained(ctx, countries, cfg, seed)?;
    let train_ex = model.examples(train, history)?;
    let val_ex = model.examples(val, history)?;
    let (store, log) = fit(&model.net, &ctx.tokens, &train_ex, &val_ex, seed)?;
    model.store = store;
    Ok((model, log))
}

#[cfg(test)]
mod tests;
