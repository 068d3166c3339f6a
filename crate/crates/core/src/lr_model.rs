//! Elastic-net logistic regression trained by proximal gradient descent.

use std::path::Path;

use jokerank_tensor::{checkpoint, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::datamodel::{EventCalendar, InteractionEvent, LabelChoice, LabelledInstance, UserHistory};
use crate::error::{Error, Result};
use crate::evaluation::auc_roc;
use crate::features::{assemble_lr_features, FeatureSchema, FeatureVector, JokeProfiles, Normalizer};
use crate::labelling::HistoryIndex;
use crate::ranking::{RequestContext, Scorer};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LRConfig {
    pub l1_ratio: f64,
    pub reg_strength: f64,
    pub fit_intercept: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    pub label_choice: LabelChoice,
}

impl Default for LRConfig {
    fn default() -> Self {
        Self {
            l1_ratio: 0.1,
            reg_strength: 1e-3,
            fit_intercept: true,
            learning_rate: 0.05,
            epochs: 300,
            label_choice: LabelChoice::Return,
        }
    }
}

impl LRConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.01..=0.5).contains(&self.l1_ratio) {
            return Err(Error::Config(format!("l1_ratio {} outside [0.01, 0.5]", self.l1_ratio)));
        }
        if !(1e-3..=10.0).contains(&self.reg_strength) {
            return Err(Error::Config(format!("reg_strength {} outside [1e-3, 10]", self.reg_strength)));
        }
        self.validate_optimizer()
    }

    fn validate_optimizer(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Row-major design matrix with per-row label and loss multipliers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LrData {
    pub x: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<u8>,
    pub sample_weights: Vec<f64>,
    pub class_weights: Vec<f64>,
}

impl LrData {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<u8>, sample_weights: Vec<f64>, class_weights: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let n = rows.len();
        if labels.len() != n || sample_weights.len() != n || class_weights.len() != n {
            return Err(Error::Invalid("rows, labels and weights differ in length".into()));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Invalid("feature rows differ in length".into()));
        }
        Ok(Self {
            x: rows.into_iter().flatten().collect(),
            dim,
            labels,
            sample_weights,
            class_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Weighted mean cross-entropy of the data.
pub fn data_loss(w: &[f64], b: f64, data: &LrData) -> f64 {
    let n = data.len() as f64;
    (0..data.len())
        .map(|i| {
            let z = dot(w, data.row(i)) + b;
            let ce = if data.labels[i] == 1 { softplus(-z) } else { softplus(z) };
            data.sample_weights[i] * data.class_weights[i] * ce
        })
        .sum::<f64>()
        / n
}

/// Gradient of [`data_loss`] with respect to `(w, b)`.
pub fn data_gradient(w: &[f64], b: f64, data: &LrData) -> (Vec<f64>, f64) {
    let n = data.len() as f64;
    let mut gw = vec![0.0; data.dim];
    let mut gb = 0.0;
    for i in 0..data.len() {
        let row = data.row(i);
        let r = data.sample_weights[i] * data.class_weights[i] * (sigmoid(dot(w, row) + b) - f64::from(data.labels[i])) / n;
        gw.iter_mut().zip(row).for_each(|(g, x)| *g += r * x);
        gb += r;
    }
    (gw, gb)
}

/// Data loss plus `reg * (l1_ratio * |w|_1 + (1 - l1_ratio) * |w|^2 / 2)`.
pub fn objective(w: &[f64], b: f64, data: &LrData, cfg: &LRConfig) -> f64 {
    let l1: f64 = w.iter().map(|x| x.abs()).sum();
    let l2: f64 = w.iter().map(|x| x * x).sum::<f64>() / 2.0;
    data_loss(w, b, data) + cfg.reg_strength * (cfg.l1_ratio * l1 + (1.0 - cfg.l1_ratio) * l2)
}

/// Gradient of the smooth part of [`objective`] (data term and L2 penalty).
pub fn smooth_gradient(w: &[f64], b: f64, data: &LrData, cfg: &LRConfig) -> (Vec<f64>, f64) {
    let (mut gw, gb) = data_gradient(w, b, data);
    let l2 = cfg.reg_strength * (1.0 - cfg.l1_ratio);
    gw.iter_mut().zip(w).for_each(|(g, x)| *g += l2 * x);
    (gw, gb)
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LRModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub fingerprint: String,
}

impl LRModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.intercept
    }

    /// `sigmoid(w.x + b)` for a vector produced under the same schema.
    pub fn predict_proba(&self, x: &[f64], fingerprint: &str) -> Result<f64> {
        if fingerprint != self.fingerprint {
            return Err(Error::SchemaMismatch {
                expected: self.fingerprint.clone(),
                found: fingerprint.to_string(),
            });
        }
        if x.len() != self.weights.len() {
            return Err(Error::SchemaMismatch {
                expected: format!("{} features", self.weights.len()),
                found: format!("{} features", x.len()),
            });
        }
        Ok(sigmoid(self.decision(x)))
    }
}

/// Per-epoch objective values of a training run (before each update, then final).
pub type LrTrainLog = Vec<f64>;

/// Full-batch proximal gradient descent from zero.
pub fn train_lr(data: &LrData, cfg: &LRConfig, fingerprint: &str) -> Result<(LRModel, LrTrainLog)> {
    cfg.validate_optimizer()?;
    if data.is_empty() {
        return Err(Error::Degenerate("no training rows".into()));
    }
    if !data.labels.contains(&0) || !data.labels.contains(&1) {
        return Err(Error::Degenerate("training labels contain one class".into()));
    }
    let mut w = vec![0.0; data.dim];
    let mut b = 0.0;
    let mut log = Vec::with_capacity(cfg.epochs + 1);
    let shrink = cfg.learning_rate * cfg.reg_strength * cfg.l1_ratio;
    for epoch in 0..cfg.epochs {
        let loss = objective(&w, b, data, cfg);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, batch: 0 });
        }
        log.push(loss);
        let (gw, gb) = smooth_gradient(&w, b, data, cfg);
        for (wi, g) in w.iter_mut().zip(gw) {
            *wi = soft_threshold(*wi - cfg.learning_rate * g, shrink);
        }
        if cfg.fit_intercept {
            b -= cfg.learning_rate * gb;
        }
    }
    let loss = objective(&w, b, data, cfg);
    if !loss.is_finite() {
        return Err(Error::Diverged {
            epoch: cfg.epochs,
            batch: 0,
        });
    }
    log.push(loss);
    Ok((
        LRModel {
            weights: w,
            intercept: b,
            fingerprint: fingerprint.to_string(),
        },
        log,
    ))
}

/// One grid-search trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridTrial {
    pub config: LRConfig,
    pub validation_auc: f64,
}

pub const GRID_L1_RATIOS: [f64; 3] = [0.01, 0.1, 0.5];
pub const GRID_REG_STRENGTHS: [f64; 5] = [1e-3, 1e-2, 1e-1, 1.0, 10.0];

/// Exhaustive search over the elastic-net grid and intercept choice,
/// keeping the highest validation AUC (first wins on ties).
pub fn grid_search(
    train: &LrData,
    val: &LrData,
    base: &LRConfig,
    fingerprint: &str,
) -> Result<(LRModel, LRConfig, Vec<GridTrial>)> {
    let mut best: Option<(LRModel, LRConfig, f64)> = None;
    let mut trials = Vec::new();
    for &l1_ratio in &GRID_L1_RATIOS {
        for &reg_strength in &GRID_REG_STRENGTHS {
            for fit_intercept in [true, false] {
                let cfg = LRConfig {
                    l1_ratio,
                    reg_strength,
                    fit_intercept,
                    ..*base
                };
                let (model, _) = match train_lr(train, &cfg, fingerprint) {
                    Ok(m) => m,
                    Err(Error::Diverged { .. }) => continue,
                    Err(e) => return Err(e),
                };
                let scores: Vec<f64> = (0..val.len()).map(|i| sigmoid(model.decision(val.row(i)))).collect();
                let auc = auc_roc(&scores, &val.labels)?;
                log::debug!("lr grid l1={l1_ratio} reg={reg_strength} intercept={fit_intercept}: auc {auc:.4}");
                trials.push(GridTrial {
                    config: cfg,
                    validation_auc: auc,
                });
                if best.as_ref().is_none_or(|(_, _, a)| auc > *a) {
                    best = Some((model, cfg, auc));
                }
            }
        }
    }
    let (model, cfg, _) = best.ok_or(Error::Diverged { epoch: 0, batch: 0 })?;
    Ok((model, cfg, trials))
}

/// Writes weights, intercept and normalization statistics as a tensor
/// checkpoint; `meta` carries schema and config.
pub fn save_lr(dir: &Path, model: &LRModel, mean: &[f64], std: &[f64], meta: serde_json::Value) -> Result<()> {
    let mut store = ParamStore::new();
    store.insert("weights", Tensor::from_vec(model.weights.clone()));
    store.insert("intercept", Tensor::scalar(model.intercept));
    store.insert("norm.mean", Tensor::from_vec(mean.to_vec()));
    store.insert("norm.std", Tensor::from_vec(std.to_vec()));
    let mut meta = meta;
    meta["kind"] = "lr".into();
    meta["fingerprint"] = model.fingerprint.clone().into();
    checkpoint::save(dir, &store, meta)?;
    Ok(())
}

/// Loaded LR checkpoint: model, normalization mean and std, and metadata.
pub type LoadedLr = (LRModel, Vec<f64>, Vec<f64>, serde_json::Value);

pub fn load_lr(dir: &Path) -> Result<LoadedLr> {
    let (store, manifest) = checkpoint::load(dir)?;
    if manifest.meta.get("kind").and_then(|k| k.as_str()) != Some("lr") {
        return Err(Error::SchemaMismatch {
            expected: "lr checkpoint".into(),
            found: manifest.meta.get("kind").map_or("none".into(), |k| k.to_string()),
        });
    }
    let fingerprint = manifest
        .meta
        .get("fingerprint")
        .and_then(|f| f.as_str())
        .ok_or_else(|| Error::Invalid("lr checkpoint lacks a fingerprint".into()))?
        .to_string();
    let model = LRModel {
        weights: store.by_name("weights")?.data().to_vec(),
        intercept: store.by_name("intercept")?.data()[0],
        fingerprint,
    };
    let mean = store.by_name("norm.mean")?.data().to_vec();
    let std = store.by_name("norm.std")?.data().to_vec();
    Ok((model, mean, std, manifest.meta))
}

fn round_to_f32(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = f64::from(*v as f32));
}

/// An LR model with everything needed to score `(context, joke)` pairs.
#[derive(Clone, Debug)]
pub struct LrRanker {
    pub model: LRModel,
    pub schema: FeatureSchema,
    pub normalizer: Normalizer,
    profiles: JokeProfiles,
    calendar: EventCalendar,
}

/// Result of fitting an LR ranker: the ranker, the chosen configuration
/// and the grid-search trials.
pub type FittedLr = (LrRanker, LRConfig, Vec<GridTrial>);

/// Unnormalized LR features with each user's history as known at the request.
pub fn feature_rows(
    instances: &[LabelledInstance],
    history: &HistoryIndex,
    schema: &FeatureSchema,
    profiles: &JokeProfiles,
    cal: &EventCalendar,
) -> Result<Vec<FeatureVector>> {
    instances
        .iter()
        .map(|inst| {
            let e = &inst.event;
            let hist = history.at(&e.user_id, e.timestamp, &e.country_code);
            assemble_lr_features(schema, e, &hist, profiles, cal)
        })
        .collect()
}

fn lr_data(rows: Vec<FeatureVector>, instances: &[LabelledInstance], choice: LabelChoice) -> Result<LrData> {
    LrData::new(
        rows.into_iter().map(|r| r.values).collect(),
        instances.iter().map(|i| i.label(choice)).collect(),
        instances.iter().map(|i| i.sample_weight).collect(),
        instances.iter().map(|i| i.class_weight(choice)).collect(),
    )
}

impl LrRanker {
    /// Builds features with point-in-time histories, fits the normalizer on
    /// the training rows and grid-searches the regularization on validation AUC.
    /// Normalization statistics and the chosen model are held at checkpoint
    /// (f32) precision, so a saved ranker reloads bit-exactly.
    pub fn fit(
        train: &[LabelledInstance],
        val: &[LabelledInstance],
        history: &HistoryIndex,
        profiles: &JokeProfiles,
        cal: &EventCalendar,
        base: &LRConfig,
    ) -> Result<FittedLr> {
        let events: Vec<&InteractionEvent> = train.iter().map(|i| &i.event).collect();
        let schema = FeatureSchema::from_data(&events, profiles, cal);
        let mut train_rows = feature_rows(train, history, &schema, profiles, cal)?;
        let mut val_rows = feature_rows(val, history, &schema, profiles, cal)?;
        let mut normalizer = Normalizer::fit(&schema, &train_rows)?;
        round_to_f32(&mut normalizer.mean);
        round_to_f32(&mut normalizer.std);
        for r in train_rows.iter_mut().chain(val_rows.iter_mut()) {
            normalizer.apply(r)?;
        }
        let train_data = lr_data(train_rows, train, base.label_choice)?;
        let val_data = lr_data(val_rows, val, base.label_choice)?;
        let (mut model, cfg, trials) = grid_search(&train_data, &val_data, base, &schema.fingerprint())?;
        round_to_f32(&mut model.weights);
        model.intercept = f64::from(model.intercept as f32);
        let ranker = Self {
            model,
            schema,
            normalizer,
            profiles: profiles.clone(),
            calendar: cal.clone(),
        };
        Ok((ranker, cfg, trials))
    }

    pub fn score_event(&self, event: &InteractionEvent, hist: &UserHistory) -> Result<f64> {
        let mut fv = assemble_lr_features(&self.schema, event, hist, &self.profiles, &self.calendar)?;
        self.normalizer.apply(&mut fv)?;
        self.model.predict_proba(&fv.values, &fv.fingerprint)
    }

    pub fn save(&self, dir: &Path, config: &LRConfig) -> Result<()> {
        let meta = serde_json::json!({
            "schema": self.schema,
            "config": config,
        });
        save_lr(dir, &self.model, &self.normalizer.mean, &self.normalizer.std, meta)
    }

    /// Loads a checkpoint; its schema must match `profiles` and `cal`.
    pub fn load(dir: &Path, profiles: &JokeProfiles, cal: &EventCalendar) -> Result<(Self, LRConfig)> {
        let (model, mean, std, meta) = load_lr(dir)?;
        let schema: FeatureSchema = serde_json::from_value(meta.get("schema").cloned().unwrap_or_default())?;
        let config: LRConfig = serde_json::from_value(meta.get("config").cloned().unwrap_or_default())?;
        if schema.fingerprint() != model.fingerprint {
            return Err(Error::SchemaMismatch {
                expected: model.fingerprint,
                found: schema.fingerprint(),
            });
        }
        let normalizer = Normalizer {
            fingerprint: schema.fingerprint(),
            mean,
            std,
        };
        let ranker = Self {
            model,
            schema,
            normalizer,
            profiles: profiles.clone(),
            calendar: cal.clone(),
        };
        Ok((ranker, config))
    }
}

impl Scorer for LrRanker {
    fn name(&self) -> &str {
        "lr"
    }

    fn score_pairs(&self, pairs: &[(&RequestContext, &str)]) -> Result<Vec<f64>> {
        pairs
            .iter()
            .map(|(c, joke)| {
                let event = InteractionEvent {
                    user_id: c.user_id.clone(),
                    joke_id: joke.to_string(),
                    timestamp: c.timestamp,
                    country_code: c.country_code.clone(),
                };
                self.score_event(&event, &c.history)
            })
            .collect()
    }
}
