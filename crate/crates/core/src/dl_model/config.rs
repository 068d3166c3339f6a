use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::datamodel::LabelChoice;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Transformer,
    Cnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DLConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    /// 1-based layer indices that get the user-context attention sub-layer.
    pub user_attn_depths: BTreeSet<usize>,
    pub d_ff: usize,
    pub fc_layers: usize,
    /// Width of each hidden fully connected layer; length equals `fc_layers`.
    pub fc_sizes: Vec<usize>,
    pub keep_prob: f64,
    pub epsilon_smooth: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// `(w_reuse, w_return)`.
    pub loss_weights: (f64, f64),
    pub use_sample_weights: bool,
    pub encoder: EncoderKind,
    pub cnn_filter_sizes: Vec<usize>,
    pub cnn_num_filters: usize,
    pub max_tokens: usize,
    /// Most recent liked (and, separately, disliked) jokes kept per user.
    pub max_history: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Label whose validation AUC selects the checkpoint and whose head scores.
    pub selection_label: LabelChoice,
}

impl Default for DLConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            num_heads: 2,
            num_layers: 2,
            user_attn_depths: BTreeSet::from([1, 2]),
            d_ff: 64,
            fc_layers: 2,
            fc_sizes: vec![64, 32],
            keep_prob: 0.8,
            epsilon_smooth: 0.1,
            batch_size: 64,
            learning_rate: 1e-3,
            loss_weights: (0.5, 0.5),
            use_sample_weights: true,
            encoder: EncoderKind::Transformer,
            cnn_filter_sizes: vec![2, 3, 4],
            cnn_num_filters: 32,
            max_tokens: 64,
            max_history: 30,
            max_epochs: 10,
            patience: 3,
            selection_label: LabelChoice::Return,
        }
    }
}

impl DLConfig {
    /// Structural invariants every runnable configuration must satisfy.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.num_heads == 0 || self.num_layers == 0 || self.d_ff == 0 {
            return bad("d_model, num_heads, num_layers and d_ff must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return bad(format!("d_model {} is not divisible by num_heads {}", self.d_model, self.num_heads));
        }
        if let Some(d) = self.user_attn_depths.iter().find(|&&d| d == 0 || d > self.num_layers) {
            return bad(format!("user_attn_depths entry {d} outside 1..={}", self.num_layers));
        }
        if self.fc_sizes.len() != self.fc_layers || self.fc_sizes.contains(&0) {
            return bad(format!("fc_sizes must list {} positive widths", self.fc_layers));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return bad(format!("keep_prob {} outside (0, 1]", self.keep_prob));
        }
        if !(0.0..1.0).contains(&self.epsilon_smooth) {
            return bad(format!("epsilon_smooth {} outside [0, 1)", self.epsilon_smooth));
        }
        let (wr, wt) = self.loss_weights;
        if wr < 0.0 || wt < 0.0 || !(wr + wt > 0.0) {
            return bad("loss_weights must be non-negative and not both zero".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.max_tokens == 0 {
            return bad("batch_size, max_epochs and max_tokens must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive".into());
        }
        if self.encoder == EncoderKind::Cnn {
            if self.cnn_filter_sizes.is_empty() || self.cnn_filter_sizes.contains(&0) || self.cnn_num_filters == 0 {
                return bad("cnn_filter_sizes must be non-empty and positive, cnn_num_filters positive".into());
            }
            if !self.user_attn_depths.is_empty() {
                return bad("the CNN encoder has no user-context attention; user_attn_depths must be empty".into());
            }
        }
        Ok(())
    }

    /// The hyperparameter ranges searched by random search.
    pub fn check_search_ranges(&self) -> Result<()> {
        self.validate()?;
        let within = |name: &str, v: f64, lo: f64, hi: f64| {
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} {v} outside [{lo}, {hi}]")))
            }
        };
        within("num_heads", self.num_heads as f64, 2.0, 6.0)?;
        within("num_layers", self.num_layers as f64, 1.0, 6.0)?;
        within("fc_layers", self.fc_layers as f64, 2.0, 5.0)?;
        for &s in &self.fc_sizes {
            within("fc_sizes", s as f64, 16.0, 256.0)?;
        }
        within("keep_prob", self.keep_prob, 0.5, 0.8)?;
        within("epsilon_smooth", self.epsilon_smooth, 0.1, 0.3)?;
        within("batch_size", self.batch_size as f64, 32.0, 256.0)?;
        within("learning_rate", self.learning_rate, 1e-5, 1e-3)?;
        if self.encoder == EncoderKind::Cnn {
            for &k in &self.cnn_filter_sizes {
                within("cnn_filter_sizes", k as f64, 2.0, 32.0)?;
            }
            within("cnn_num_filters", self.cnn_num_filters as f64, 16.0, 128.0)?;
        }
        Ok(())
    }

    /// Width of the joke encoding.
    pub fn encoding_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::Transformer => self.d_model,
            EncoderKind::Cnn => self.cnn_filter_sizes.len() * self.cnn_num_filters,
        }
    }

    pub fn min_tokens(&self) -> usize {
        match self.encoder {
            EncoderKind::Transformer => 1,
            EncoderKind::Cnn => self.cnn_filter_sizes.iter().copied().max().unwrap_or(1),
        }
    }
}

/// The ranker variants compared offline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelVariant {
    #[serde(rename = "dl-t")]
    DlT,
    #[serde(rename = "dl-t-noatt")]
    DlTNoAtt,
    #[serde(rename = "dl-t-basic")]
    DlTBasic,
    #[serde(rename = "dl-cnn")]
    DlCnn,
    #[serde(rename = "lr")]
    Lr,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] = [
        ModelVariant::DlT,
        ModelVariant::DlTNoAtt,
        ModelVariant::DlTBasic,
        ModelVariant::DlCnn,
        ModelVariant::Lr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::DlT => "dl-t",
            ModelVariant::DlTNoAtt => "dl-t-noatt",
            ModelVariant::DlTBasic => "dl-t-basic",
            ModelVariant::DlCnn => "dl-cnn",
            ModelVariant::Lr => "lr",
        }
    }

    /// Row label used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelVariant::DlT => "DL-T",
            ModelVariant::DlTNoAtt => "DL-T-noAtt",
            ModelVariant::DlTBasic => "DL-T-basic",
            ModelVariant::DlCnn => "DL-CNN",
            ModelVariant::Lr => "LR",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model `{s}` (expected dl-t, dl-t-noatt, dl-t-basic, dl-cnn or lr)")))
    }

    /// Applies this variant's ablation to a base DL configuration; `None`
    /// for the LR model.
    pub fn dl_config(self, base: &DLConfig) -> Option<DLConfig> {
        let mut cfg = base.clone();
        match self {
            ModelVariant::DlT => {
                if cfg.user_attn_depths.is_empty() {
                    cfg.user_attn_depths = (1..=cfg.num_layers).collect();
                }
            }
            ModelVariant::DlTNoAtt => cfg.user_attn_depths.clear(),
            ModelVariant::DlTBasic => {
                cfg.user_attn_depths.clear();
                cfg.epsilon_smooth = 0.0;
                cfg.use_sample_weights = false;
            }
            ModelVariant::DlCnn => {
                cfg.encoder = EncoderKind::Cnn;
                cfg.user_attn_depths.clear();
            }
            ModelVariant::Lr => return None,
        }
        if self != ModelVariant::DlCnn {
            cfg.encoder = EncoderKind::Transformer;
        }
        Some(cfg)
    }
}
