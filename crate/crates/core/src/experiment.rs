//! End-to-end runs: synthetic world, weak labels, time split, model training
//! and the evaluation report.

use serde::{Deserialize, Serialize};

use crate::datamodel::{Corpus, EmbeddingSpec, EmbeddingTable, EventCalendar, Joke, LabelChoice, LabelledInstance};
use crate::dl_model::{train_dl, DLConfig, DLModel, DlContext, DlTrainLog, ModelVariant};
use crate::error::{Error, Result};
use crate::evaluation::{EvalOptions, EvalReport, Evaluator, ModelMetrics, PopularityScorer, SplitSpec, Splits};
use crate::features::{JokeProfiles, SenseInventory};
use crate::labelling::{assign_class_weights, label_all, HistoryIndex, LabelConfig, SampleWeightConfig};
use crate::lr_model::{LRConfig, LrRanker};
use crate::ranking::{RequestContext, Scorer};
use crate::simgen::{generate_world, GroundTruth, OracleScorer, World, WorldConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub labels: LabelConfig,
    pub weights: SampleWeightConfig,
    /// Label that sorts past requests into liked and disliked.
    pub history_label: LabelChoice,
    pub embedding: EmbeddingSpec,
    pub lr: LRConfig,
    pub dl: DLConfig,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    /// Drop requests whose return window reaches past the last logged request,
    /// since their labels are not final.
    pub drop_censored: bool,
    pub eval: EvalOptions,
    /// Seed for model initialisation and batch order.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            labels: LabelConfig::default(),
            weights: SampleWeightConfig::default(),
            history_label: LabelChoice::Reuse,
            embedding: EmbeddingSpec::default(),
            lr: LRConfig::default(),
            dl: DLConfig::default(),
            train_fraction: 0.6,
            validation_fraction: 0.2,
            drop_censored: true,
            eval: EvalOptions::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Same settings with the world and model seeds both set to `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.world.seed = seed;
        self.seed = seed;
        self
    }
}

/// Keeps the requests whose return window closes by the last logged request.
pub fn drop_censored(instances: Vec<LabelledInstance>, labels: &LabelConfig) -> Vec<LabelledInstance> {
    let Some(end) = instances.iter().map(|i| i.event.timestamp.unix()).max() else {
        return instances;
    };
    let horizon = labels.horizon(LabelChoice::Return).max(labels.horizon(LabelChoice::Reuse));
    instances.into_iter().filter(|i| i.event.timestamp.unix() + horizon <= end).collect()
}

/// Labelled instances split in time, with the shared lookups every model needs.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub calendar: EventCalendar,
    /// Like-probabilities, known only for simulated worlds.
    pub truth: Option<GroundTruth>,
    pub splits: Splits,
    pub history: HistoryIndex,
    pub profiles: JokeProfiles,
    pub dl_context: DlContext,
}

impl Prepared {
    /// Labels, splits and indexes a simulated world. Unless `cfg.embedding`
    /// names a file, the world's word vectors extend the seeded table.
    pub fn from_world(cfg: &ExperimentConfig, world: World, calendar: EventCalendar) -> Result<Self> {
        let instances = label_all(&world.events, &cfg.labels, &cfg.weights)?;
        let table = if cfg.embedding.file.is_some() {
            cfg.embedding.build()?
        } else {
            world.embedding_table(&cfg.embedding)?
        };
        Self::from_parts(cfg, world.corpus, calendar, instances, &table, Some(world.truth))
    }

    /// Splits labelled instances in time and builds the lookups over `corpus`.
    pub fn from_parts(
        cfg: &ExperimentConfig,
        corpus: Vec<Joke>,
        calendar: EventCalendar,
        mut instances: Vec<LabelledInstance>,
        table: &EmbeddingTable,
        truth: Option<GroundTruth>,
    ) -> Result<Self> {
        if cfg.drop_censored {
            instances = drop_censored(instances, &cfg.labels);
        }
        instances.sort_by(|a, b| (a.event.timestamp, &a.event.user_id).cmp(&(b.event.timestamp, &b.event.user_id)));
        let spec = SplitSpec::from_fractions(&instances, cfg.train_fraction, cfg.validation_fraction)?;
        let mut splits = spec.split(&instances)?;
        assign_class_weights(&mut splits.train)?;
        let history = HistoryIndex::new(&instances, cfg.history_label, &cfg.labels);
        let corpus = Corpus::new(corpus)?;
        let profiles = JokeProfiles::new(corpus.clone(), &calendar, table, &SenseInventory::bundled());
        let dl_context = DlContext::new(corpus, table, cfg.dl.max_tokens);
        Ok(Self {
            calendar,
            truth,
            splits,
            history,
            profiles,
            dl_context,
        })
    }

    /// Generates the world from `cfg.world` with the bundled calendar.
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        let calendar = EventCalendar::default_calendar();
        let world = generate_world(&cfg.world, &calendar)?;
        Self::from_world(cfg, world, calendar)
    }

    pub fn corpus(&self) -> &Corpus {
        self.profiles.corpus()
    }

    pub fn popularity(&self, label: LabelChoice) -> PopularityScorer {
        PopularityScorer::fit(&self.splits.train, label)
    }

    pub fn evaluator(&self, opts: &EvalOptions) -> Result<Evaluator> {
        Evaluator::new(&self.splits.test, &self.history, self.corpus(), opts)
    }

    pub fn train_lr(&self, base: &LRConfig) -> Result<(LrRanker, LRConfig)> {
        let (ranker, cfg, _) = LrRanker::fit(
            &self.splits.train,
            &self.splits.validation,
            &self.history,
            &self.profiles,
            &self.calendar,
            base,
        )?;
        Ok((ranker, cfg))
    }

    pub fn train_dl(&self, cfg: &DLConfig, seed: u64) -> Result<(DLModel, DlTrainLog)> {
        train_dl(&self.dl_context, &self.splits.train, &self.splits.validation, &self.history, cfg, seed)
    }

    /// Trains one variant; DL variants are presets over `base_dl`.
    pub fn train_variant(
        &self,
        variant: ModelVariant,
        base_lr: &LRConfig,
        base_dl: &DLConfig,
        seed: u64,
    ) -> Result<TrainedRanker> {
        match variant.dl_config(base_dl) {
            Some(cfg) => {
                let (model, log) = self.train_dl(&cfg, seed)?;
                Ok(TrainedRanker::Dl(Box::new(model.with_name(variant.as_str())), log))
            }
            None => {
                let (ranker, cfg) = self.train_lr(base_lr)?;
                Ok(TrainedRanker::Lr(Box::new(ranker), cfg))
            }
        }
    }
}

/// A trained LR or DL ranker with its training record.
#[derive(Clone, Debug)]
pub enum TrainedRanker {
    Lr(Box<LrRanker>, LRConfig),
    Dl(Box<DLModel>, DlTrainLog),
}

impl Scorer for TrainedRanker {
    fn name(&self) -> &str {
        match self {
            TrainedRanker::Lr(m, _) => m.name(),
            TrainedRanker::Dl(m, _) => m.name(),
        }
    }

    fn score_pairs(&self, pairs: &[(&RequestContext, &str)]) -> Result<Vec<f64>> {
        match self {
            TrainedRanker::Lr(m, _) => m.score_pairs(pairs),
            TrainedRanker::Dl(m, _) => m.score_pairs(pairs),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: EvalReport,
    pub trained: Vec<(ModelVariant, TrainedRanker)>,
}

/// Trains each variant on one prepared world and evaluates it, the
/// popularity baseline and, when `with_oracle` is set, the ground truth.
pub fn run_prepared(
    prep: &Prepared,
    cfg: &ExperimentConfig,
    variants: &[ModelVariant],
    with_oracle: bool,
) -> Result<ExperimentOutcome> {
    if variants.is_empty() && !with_oracle {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let evaluator = prep.evaluator(&cfg.eval)?;
    let popularity = evaluator.evaluate("popularity", &prep.popularity(cfg.eval.label))?;
    let mut rows: Vec<ModelMetrics> = Vec::new();
    let mut trained = Vec::new();
    for &variant in variants {
        log::info!("training {}", variant.display_name());
        let ranker = prep.train_variant(variant, &cfg.lr, &cfg.dl, cfg.seed)?;
        rows.push(evaluator.evaluate(variant.display_name(), &ranker)?);
        trained.push((variant, ranker));
    }
    if with_oracle {
        let truth = prep
            .truth
            .as_ref()
            .ok_or_else(|| Error::Config("the oracle needs ground truth".into()))?;
        rows.push(evaluator.evaluate("oracle", &OracleScorer { truth, calendar: &prep.calendar })?);
    }
    let report = EvalReport::new(&cfg.eval, popularity, rows)?;
    Ok(ExperimentOutcome { report, trained })
}

pub fn run_experiment(cfg: &ExperimentConfig, variants: &[ModelVariant], with_oracle: bool) -> Result<ExperimentOutcome> {
    run_prepared(&Prepared::generate(cfg)?, cfg, variants, with_oracle)
}
