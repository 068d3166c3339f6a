use jokerank_tensor::{Graph, ParamStore, Tensor, Var};

use crate::error::Result;

use super::config::{DLConfig, EncoderKind};
use super::data::{BatchInput, SeqBatch, TokenCache};

/// Additive attention bias for padded keys and invalid convolution windows.
pub const MASK_BIAS: f64 = -1e9;
/// Scale applied to the xavier initialisation of the two output layers.
pub const HEAD_INIT_SCALE: f64 = 0.1;
/// Number of user-feature tokens: country, liked, disliked and time.
pub const USER_TOKENS: usize = 4;

/// Encoder outputs for a batch; every field is a graph variable.
#[derive(Clone, Copy, Debug)]
pub struct BatchEncoding {
    /// `[b, encoding_dim]` candidate encodings.
    pub candidates: Var,
    pub country: Var,
    pub liked: Var,
    pub disliked: Var,
    pub time: Var,
}

/// Log-probabilities of the two 2-way heads, each `[batch, 2]`; column 1 is
/// the positive class.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutputs {
    pub log_reuse: Var,
    pub log_return: Var,
}

/// Sinusoidal positional encoding for `len` positions of width `d`.
pub fn positional_encoding(len: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            pe[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// The joke encoder, user-feature projection and two-headed classifier.
#[derive(Clone, Debug)]
pub struct DlNetwork {
    cfg: DLConfig,
    token_dim: usize,
    num_countries: usize,
}

fn linear(g: &mut Graph, store: &ParamStore, x: Var, prefix: &str) -> Result<Var> {
    let w = g.param_named(store, &format!("{prefix}.w"))?;
    let b = g.param_named(store, &format!("{prefix}.b"))?;
    let y = g.matmul(x, w)?;
    Ok(g.add_row(y, b)?)
}

/// Applies a weight-only or weight-and-bias map to the last axis of `[n, l, k]`.
fn linear3(g: &mut Graph, store: &ParamStore, x: Var, w_name: &str, b_name: Option<&str>) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let (n, l, k) = (shape[0], shape[1], shape[2]);
    let w = g.param_named(store, w_name)?;
    let out = g.shape(w)[1];
    let flat = g.reshape(x, &[n * l, k])?;
    let mut y = g.matmul(flat, w)?;
    if let Some(b) = b_name {
        let b = g.param_named(store, b)?;
        y = g.add_row(y, b)?;
    }
    Ok(g.reshape(y, &[n, l, out])?)
}

impl DlNetwork {
    pub fn new(cfg: &DLConfig, token_dim: usize, num_countries: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            token_dim,
            num_countries,
        })
    }

    pub fn config(&self) -> &DLConfig {
        &self.cfg
    }

    pub fn token_dim(&self) -> usize {
        self.token_dim
    }

    pub fn num_countries(&self) -> usize {
        self.num_countries
    }

    fn head_input_dim(&self) -> usize {
        3 * self.cfg.encoding_dim() + self.cfg.d_model + 3 + 2
    }

    /// Creates every parameter. Names are fixed per role, so variants that
    /// share a role start from identical values for a given seed.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let cfg = &self.cfg;
        let (d, e) = (cfg.d_model, self.token_dim);
        let enc = cfg.encoding_dim();
        let mut s = ParamStore::new();
        let dense = |s: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize| {
            s.insert_xavier(&format!("{name}.w"), &[fan_in, fan_out], seed);
            s.insert_filled(&format!("{name}.b"), &[fan_out], 0.0);
        };
        let norm = |s: &mut ParamStore, name: &str| {
            s.insert_filled(&format!("{name}.gamma"), &[d], 1.0);
            s.insert_filled(&format!("{name}.beta"), &[d], 0.0);
        };
        let attention = |s: &mut ParamStore, name: &str| {
            for m in ["wq", "wk", "wv"] {
                s.insert_xavier(&format!("{name}.{m}"), &[d, d], seed);
            }
            s.insert_xavier(&format!("{name}.wo"), &[d, d], seed);
            s.insert_filled(&format!("{name}.bo"), &[d], 0.0);
        };
        match cfg.encoder {
            EncoderKind::Transformer => {
                dense(&mut s, "enc.input", e, d);
                for layer in 1..=cfg.num_layers {
                    let p = format!("enc.layer{layer}");
                    attention(&mut s, &format!("{p}.self_attn"));
                    norm(&mut s, &format!("{p}.ln_self"));
                    if cfg.user_attn_depths.contains(&layer) {
                        attention(&mut s, &format!("{p}.user_attn"));
                        norm(&mut s, &format!("{p}.ln_user"));
                    }
                    dense(&mut s, &format!("{p}.ffn1"), d, cfg.d_ff);
                    dense(&mut s, &format!("{p}.ffn2"), cfg.d_ff, d);
                    norm(&mut s, &format!("{p}.ln_ffn"));
                }
                if !cfg.user_attn_depths.is_empty() {
                    dense(&mut s, "user.liked", enc, d);
                    dense(&mut s, "user.disliked", enc, d);
                    dense(&mut s, "user.time", 3, d);
                }
            }
            EncoderKind::Cnn => {
                for &k in &cfg.cnn_filter_sizes {
                    s.insert_xavier(&format!("cnn.conv{k}.w"), &[k, e, cfg.cnn_num_filters], seed);
                    s.insert_filled(&format!("cnn.conv{k}.b"), &[cfg.cnn_num_filters], 0.0);
                }
            }
        }
        s.insert_xavier("country.emb", &[self.num_countries, d], seed);
        let mut width = self.head_input_dim();
        for (i, &h) in cfg.fc_sizes.iter().enumerate() {
            dense(&mut s, &format!("head.fc{}", i + 1), width, h);
            width = h;
        }
        for out in ["head.reuse", "head.return"] {
            dense(&mut s, out, width, 2);
            let id = s.id(&format!("{out}.w")).expect("just inserted");
            s.get_mut(id).data_mut().iter_mut().for_each(|v| *v *= HEAD_INIT_SCALE);
        }
        s
    }

    fn attention(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        name: &str,
        query: Var,
        memory: Var,
        key_bias: Option<Var>,
    ) -> Result<Var> {
        let heads = self.cfg.num_heads;
        let dk = self.cfg.d_model / heads;
        let q = linear3(g, store, query, &format!("{name}.wq"), None)?;
        let k = linear3(g, store, memory, &format!("{name}.wk"), None)?;
        let v = linear3(g, store, memory, &format!("{name}.wv"), None)?;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (g.narrow(q, 2, h * dk, dk)?, g.narrow(k, 2, h * dk, dk)?, g.narrow(v, 2, h * dk, dk)?)
            };
            let kt = g.transpose(kh)?;
            let scores = g.bmm(qh, kt)?;
            let mut scores = g.scale(scores, 1.0 / (dk as f64).sqrt())?;
            if let Some(bias) = key_bias {
                scores = g.add(scores, bias)?;
            }
            let weights = g.softmax(scores, 2)?;
            outs.push(g.bmm(weights, vh)?);
        }
        let merged = if heads == 1 { outs[0] } else { g.concat(&outs, 2)? };
        linear3(g, store, merged, &format!("{name}.wo"), Some(&format!("{name}.bo")))
    }

    fn residual_norm(&self, g: &mut Graph, store: &ParamStore, x: Var, sub: Var, ln: &str) -> Result<Var> {
        let sub = g.dropout(sub, self.cfg.keep_prob)?;
        let sum = g.add(x, sub)?;
        let gamma = g.param_named(store, &format!("{ln}.gamma"))?;
        let beta = g.param_named(store, &format!("{ln}.beta"))?;
        Ok(g.layer_norm(sum, gamma, beta)?)
    }

    /// Transformer encoding `[n, d_model]` of a padded batch. `user` is the
    /// `[n, USER_TOKENS, d_model]` sequence read by the user-context
    /// sub-layers; without it those sub-layers are skipped.
    pub fn encode_transformer(&self, g: &mut Graph, store: &ParamStore, seqs: &SeqBatch, user: Option<Var>) -> Result<Var> {
        let cfg = &self.cfg;
        let (n, l, d) = (seqs.n(), seqs.len(), cfg.d_model);
        let tokens = g.constant(seqs.embeddings.clone());
        let x = linear3(g, store, tokens, "enc.input.w", Some("enc.input.b"))?;
        let pe: Vec<f64> = positional_encoding(l, d).repeat(n);
        let pe = g.constant(Tensor::new(vec![n, l, d], pe)?);
        let mut x = g.add(x, pe)?;
        let key_bias = if seqs.lengths.iter().all(|&len| len == l) {
            None
        } else {
            let mut bias = vec![0.0; n * l * l];
            for (i, &len) in seqs.lengths.iter().enumerate() {
                for q in 0..l {
                    bias[(i * l + q) * l + len..(i * l + q + 1) * l].fill(MASK_BIAS);
                }
            }
            Some(g.constant(Tensor::new(vec![n, l, l], bias)?))
        };
        for layer in 1..=cfg.num_layers {
            let p = format!("enc.layer{layer}");
            let sa = self.attention(g, store, &format!("{p}.self_attn"), x, x, key_bias)?;
            x = self.residual_norm(g, store, x, sa, &format!("{p}.ln_self"))?;
            if let Some(u) = user.filter(|_| cfg.user_attn_depths.contains(&layer)) {
                let ua = self.attention(g, store, &format!("{p}.user_attn"), x, u, None)?;
                x = self.residual_norm(g, store, x, ua, &format!("{p}.ln_user"))?;
            }
            let h = linear3(g, store, x, &format!("{p}.ffn1.w"), Some(&format!("{p}.ffn1.b")))?;
            let h = g.relu(h)?;
            let h = linear3(g, store, h, &format!("{p}.ffn2.w"), Some(&format!("{p}.ffn2.b")))?;
            x = self.residual_norm(g, store, x, h, &format!("{p}.ln_ffn"))?;
        }
        let mut pool = vec![0.0; n * l];
        for (i, &len) in seqs.lengths.iter().enumerate() {
            pool[i * l..i * l + len].fill(1.0 / len as f64);
        }
        let pool = g.constant(Tensor::new(vec![n, 1, l], pool)?);
        let pooled = g.bmm(pool, x)?;
        Ok(g.reshape(pooled, &[n, d])?)
    }

    /// CNN encoding `[n, filters * num_filters]`: per filter size a valid
    /// convolution, relu and max over the windows that start inside the
    /// (reserved-token padded) joke.
    pub fn encode_cnn(&self, g: &mut Graph, store: &ParamStore, seqs: &SeqBatch) -> Result<Var> {
        let cfg = &self.cfg;
        let (n, l) = (seqs.n(), seqs.len());
        let max_k = cfg.min_tokens();
        let tokens = g.constant(seqs.embeddings.clone());
        let mut pooled = Vec::with_capacity(cfg.cnn_filter_sizes.len());
        for &k in &cfg.cnn_filter_sizes {
            let w = g.param_named(store, &format!("cnn.conv{k}.w"))?;
            let b = g.param_named(store, &format!("cnn.conv{k}.b"))?;
            let conv = g.conv1d(tokens, w, b)?;
            let act = g.relu(conv)?;
            let windows = l - k + 1;
            let f = cfg.cnn_num_filters;
            let act = if seqs.lengths.iter().all(|&len| len.max(max_k) == l) {
                act
            } else {
                let mut bias = vec![0.0; n * windows * f];
                for (i, &len) in seqs.lengths.iter().enumerate() {
                    let valid = len.max(max_k) - k + 1;
                    bias[(i * windows + valid) * f..(i + 1) * windows * f].fill(MASK_BIAS);
                }
                let bias = g.constant(Tensor::new(vec![n, windows, f], bias)?);
                g.add(act, bias)?
            };
            pooled.push(g.max_axis(act, 1)?);
        }
        if pooled.len() == 1 {
            Ok(pooled[0])
        } else {
            Ok(g.concat(&pooled, 1)?)
        }
    }

    pub fn encode(&self, g: &mut Graph, store: &ParamStore, seqs: &SeqBatch, user: Option<Var>) -> Result<Var> {
        match self.cfg.encoder {
            EncoderKind::Transformer => self.encode_transformer(g, store, seqs, user),
            EncoderKind::Cnn => self.encode_cnn(g, store, seqs),
        }
    }

    /// Projects country, liked summary, disliked summary and time features
    /// into a `[b, USER_TOKENS, d_model]` sequence.
    pub fn user_tokens(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        country: Var,
        liked: Var,
        disliked: Var,
        time: Var,
    ) -> Result<Var> {
        let b = g.shape(country)[0];
        let d = self.cfg.d_model;
        let parts = [
            country,
            linear(g, store, liked, "user.liked")?,
            linear(g, store, disliked, "user.disliked")?,
            linear(g, store, time, "user.time")?,
        ];
        let mut rows = Vec::with_capacity(USER_TOKENS);
        for p in parts {
            rows.push(g.reshape(p, &[b, 1, d])?);
        }
        Ok(g.concat(&rows, 1)?)
    }

    /// Candidate encodings in their request contexts, with the context inputs
    /// the prediction head also sees.
    pub fn encode_batch(&self, g: &mut Graph, store: &ParamStore, tokens: &TokenCache, batch: &BatchInput) -> Result<BatchEncoding> {
        let cfg = &self.cfg;
        let b = batch.len();
        let enc = cfg.encoding_dim();
        let min_len = cfg.min_tokens();
        let (liked, disliked) = match (&batch.liked_avg, &batch.disliked_avg) {
            (Some(la), Some(da)) => {
                let hist = self.encode(g, store, &tokens.batch(&batch.history_jokes, min_len), None)?;
                let la = g.constant(la.clone());
                let da = g.constant(da.clone());
                (g.matmul(la, hist)?, g.matmul(da, hist)?)
            }
            _ => {
                let zeros = Tensor::zeros(&[b, enc]);
                (g.constant(zeros.clone()), g.constant(zeros))
            }
        };
        let table = g.param_named(store, "country.emb")?;
        let country = g.embedding_lookup(table, &batch.countries)?;
        let time = g.constant(batch.time.clone());
        let user = if cfg.encoder == EncoderKind::Transformer && !cfg.user_attn_depths.is_empty() {
            Some(self.user_tokens(g, store, country, liked, disliked, time)?)
        } else {
            None
        };
        let cand = self.encode(g, store, &tokens.batch(&batch.candidates, min_len), user)?;
        Ok(BatchEncoding {
            candidates: cand,
            country,
            liked,
            disliked,
            time,
        })
    }

    /// Full forward pass for a batch.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, tokens: &TokenCache, batch: &BatchInput) -> Result<HeadOutputs> {
        let cfg = &self.cfg;
        let BatchEncoding {
            candidates: cand,
            country,
            liked,
            disliked,
            time,
        } = self.encode_batch(g, store, tokens, batch)?;
        let cos_liked = g.cosine_rows(cand, liked)?;
        let cos_disliked = g.cosine_rows(cand, disliked)?;
        let mut z = g.concat(&[cand, country, liked, disliked, time, cos_liked, cos_disliked], 1)?;
        for i in 1..=cfg.fc_layers {
            z = linear(g, store, z, &format!("head.fc{i}"))?;
            z = g.relu(z)?;
            z = g.dropout(z, cfg.keep_prob)?;
        }
        let reuse = linear(g, store, z, "head.reuse")?;
        let ret = linear(g, store, z, "head.return")?;
        Ok(HeadOutputs {
            log_reuse: g.log_softmax(reuse, 1)?,
            log_return: g.log_softmax(ret, 1)?,
        })
    }
}
