//! The `jokerank` command line: simulate, label, featurize, train, evaluate, rank.

pub mod config;
pub mod error;
pub mod manifest;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use jokerank::datamodel::{load_corpus, load_events, load_labelled, save_corpus, save_events, save_labelled, Timestamp};
use jokerank::dl_model::{DLModel, ModelVariant};
use jokerank::evaluation::{EvalReport, Metric};
use jokerank::experiment::{Prepared, TrainedRanker};
use jokerank::features::{write_feature_csv, FeatureSchema};
use jokerank::labelling::label_all;
use jokerank::lr_model::{feature_rows, LrRanker};
use jokerank::ranking::{rank_candidates, RequestContext, Scorer};
use jokerank::simgen::{generate_world, save_word_vectors, GroundTruth, OracleScorer};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, EXIT_CODES_HELP};
use crate::manifest::RunManifest;

pub const MODEL_NAMES: [&str; 5] = ["lr", "dl-t", "dl-t-noatt", "dl-t-basic", "dl-cnn"];

#[derive(Debug, Parser)]
#[command(name = "jokerank", version, about = "Personalised joke ranking from implicit feedback", after_help = EXIT_CODES_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus, request log, ground truth and word vectors.
    Simulate(Common),
    /// Attach reuse/return labels and sample weights to a request log.
    Label(Common),
    /// Write the LR feature matrices of the time-split instances.
    Featurize(Common),
    /// Train one ranker and write its checkpoint to OUT/MODEL.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = MODEL_NAMES)]
        model: String,
    },
    /// Evaluate checkpoints from paths.checkpoints against popularity.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated model names; `oracle` needs paths.ground_truth.
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<String>,
        /// Comma-separated subset of auc, accuracy, top1.
        #[arg(long, value_delimiter = ',', required = true)]
        metrics: Vec<String>,
    },
    /// Rank candidate jokes for one user.
    Rank {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        user: String,
        /// Comma-separated joke ids.
        #[arg(long, value_delimiter = ',', required = true)]
        candidates: Vec<String>,
        /// Checkpoint under paths.checkpoints to rank with.
        #[arg(long, default_value = "dl-t", value_parser = MODEL_NAMES)]
        model: String,
        /// Request time (YYYY/MM/DD-HH:MM:SS); one second after the last logged request by default.
        #[arg(long)]
        at: Option<String>,
        /// Country for users without logged requests.
        #[arg(long)]
        country: Option<String>,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(c) => simulate(&c),
        Command::Label(c) => label(&c),
        Command::Featurize(c) => featurize(&c),
        Command::Train { common, model } => train(&common, &model),
        Command::Evaluate {
            common,
            models,
            metrics,
        } => evaluate(&common, &models, &metrics),
        Command::Rank {
            common,
            user,
            candidates,
            model,
            at,
            country,
        } => rank(&common, &user, &candidates, &model, at.as_deref(), country.as_deref()),
    }
}

fn start(common: &Common, command: &str) -> Result<(RunConfig, RunManifest), CliError> {
    let cfg = RunConfig::load(&common.config)?;
    create_dir(&common.out)?;
    let mut manifest = RunManifest::new(command, cfg.hash(), cfg.seed);
    manifest.input(&common.config)?;
    if let Some(p) = &cfg.paths.calendar {
        manifest.input(p)?;
    }
    Ok((cfg, manifest))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::new(error::ExitKind::Internal, e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn simulate(common: &Common) -> Result<(), CliError> {
    let (cfg, manifest) = start(common, "simulate")?;
    let world = generate_world(&cfg.experiment.world, &cfg.calendar()?)?;
    let out = &common.out;
    save_corpus(&out.join("corpus.jsonl"), &world.corpus)?;
    save_events(&out.join("events.jsonl"), &world.events)?;
    world.truth.save(&out.join("ground_truth.jsonl"))?;
    save_word_vectors(&out.join("embeddings.txt"), &world.word_vectors)?;
    log::info!("simulated {} requests over {} jokes", world.events.len(), world.corpus.len());
    manifest.write(out)
}

fn label(common: &Common) -> Result<(), CliError> {
    let (cfg, mut manifest) = start(common, "label")?;
    let events_path = cfg.require(&cfg.paths.events, "events")?;
    manifest.input(events_path)?;
    let events = load_events(events_path)?;
    let instances = label_all(&events, &cfg.experiment.labels, &cfg.experiment.weights)?;
    save_labelled(&common.out.join("labelled.jsonl"), &instances)?;
    manifest.write(&common.out)
}

/// Corpus, labelled instances and embeddings loaded and split as configured.
struct Loaded {
    prep: Prepared,
    /// Time and country of each user's latest request.
    last_request: std::collections::BTreeMap<String, (Timestamp, String)>,
}

fn load(cfg: &RunConfig, manifest: &mut RunManifest, with_truth: bool) -> Result<Loaded, CliError> {
    let corpus_path = cfg.require(&cfg.paths.corpus, "corpus")?;
    let labelled_path = cfg.require(&cfg.paths.labelled, "labelled")?;
    manifest.input(corpus_path)?;
    manifest.input(labelled_path)?;
    if let Some(p) = &cfg.experiment.embedding.file {
        manifest.input(p)?;
    }
    let truth = match (&cfg.paths.ground_truth, with_truth) {
        (Some(p), true) => {
            manifest.input(p)?;
            Some(GroundTruth::load(p)?)
        }
        (None, true) => return Err(CliError::config("the oracle needs `paths.ground_truth` in the config")),
        _ => None,
    };
    let corpus = load_corpus(corpus_path)?;
    let instances = load_labelled(labelled_path)?;
    let mut last_request = std::collections::BTreeMap::new();
    for i in &instances {
        let e = &i.event;
        let entry = last_request
            .entry(e.user_id.clone())
            .or_insert((e.timestamp, e.country_code.clone()));
        if e.timestamp >= entry.0 {
            *entry = (e.timestamp, e.country_code.clone());
        }
    }
    let table = cfg.experiment.embedding.build()?;
    let prep = Prepared::from_parts(&cfg.experiment, corpus, cfg.calendar()?, instances, &table, truth)?;
    Ok(Loaded { prep, last_request })
}

fn featurize(common: &Common) -> Result<(), CliError> {
    let (cfg, mut manifest) = start(common, "featurize")?;
    let Loaded { prep, .. } = load(&cfg, &mut manifest, false)?;
    let splits = &prep.splits;
    let events: Vec<_> = splits.train.iter().map(|i| &i.event).collect();
    let schema = FeatureSchema::from_data(&events, &prep.profiles, &prep.calendar);
    for (name, part) in [("train", &splits.train), ("validation", &splits.validation), ("test", &splits.test)] {
        let rows = feature_rows(part, &prep.history, &schema, &prep.profiles, &prep.calendar)?;
        write_feature_csv(&common.out.join(format!("features_{name}.csv")), &schema, &rows)?;
    }
    write_json(
        &common.out.join("feature_schema.json"),
        &serde_json::json!({ "fingerprint": schema.fingerprint(), "schema": schema }),
    )?;
    manifest.write(&common.out)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    model: &'a str,
    seed: u64,
    /// Configuration the variant actually trained with.
    config: serde_json::Value,
    log: Option<&'a jokerank::dl_model::DlTrainLog>,
}

fn train(common: &Common, model: &str) -> Result<(), CliError> {
    let (cfg, mut manifest) = start(common, "train")?;
    manifest.argument("model", model);
    let variant = ModelVariant::parse(model)?;
    let Loaded { prep, .. } = load(&cfg, &mut manifest, false)?;
    let exp = &cfg.experiment;
    let dir = common.out.join(model);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| CliError::io(format!("cannot replace {}: {e}", dir.display())))?;
    }
    let summary = match prep.train_variant(variant, &exp.lr, &exp.dl, cfg.seed)? {
        TrainedRanker::Lr(ranker, lr_cfg) => {
            ranker.save(&dir, &lr_cfg)?;
            TrainSummary {
                model,
                seed: cfg.seed,
                config: serde_json::to_value(lr_cfg).expect("config serializes"),
                log: None,
            }
            .to_file(&dir)?
        }
        TrainedRanker::Dl(net, log) => {
            net.save(&dir)?;
            TrainSummary {
                model,
                seed: cfg.seed,
                config: serde_json::to_value(net.config()).expect("config serializes"),
                log: Some(&log),
            }
            .to_file(&dir)?
        }
    };
    log::info!("trained {model}: {summary}");
    manifest.write(&dir)
}

impl TrainSummary<'_> {
    fn to_file(&self, dir: &Path) -> Result<String, CliError> {
        write_json(&dir.join("train_summary.json"), self)?;
        Ok(self.log.map_or("no epochs".into(), |l| format!("best epoch {} of {}", l.best_epoch, l.epochs.len())))
    }
}

fn load_scorer(cfg: &RunConfig, prep: &Prepared, manifest: &mut RunManifest, name: &str) -> Result<Box<dyn Scorer>, CliError> {
    let variant = ModelVariant::parse(name)?;
    let dir = cfg.require(&cfg.paths.checkpoints, "checkpoints")?.join(name);
    manifest.input(&dir)?;
    Ok(match variant {
        ModelVariant::Lr => Box::new(LrRanker::load(&dir, &prep.profiles, &prep.calendar)?.0),
        _ => Box::new(DLModel::load(&dir, &prep.dl_context)?.with_name(variant.display_name())),
    })
}

fn evaluate(common: &Common, models: &[String], metrics: &[String]) -> Result<(), CliError> {
    let (mut cfg, mut manifest) = start(common, "evaluate")?;
    manifest.argument("models", models.join(","));
    manifest.argument("metrics", metrics.join(","));
    cfg.experiment.eval.metrics = metrics.iter().map(|m| Metric::parse(m)).collect::<Result<_, _>>()?;
    let with_oracle = models.iter().any(|m| m == "oracle");
    let Loaded { prep, .. } = load(&cfg, &mut manifest, with_oracle)?;
    let opts = &cfg.experiment.eval;
    let evaluator = prep.evaluator(opts)?;
    let popularity = evaluator.evaluate("popularity", &prep.popularity(opts.label))?;
    let mut rows = Vec::new();
    for name in models {
        let row = if name == "oracle" {
            let truth = prep.truth.as_ref().expect("loaded with ground truth");
            evaluator.evaluate("oracle", &OracleScorer { truth, calendar: &prep.calendar })?
        } else {
            let scorer = load_scorer(&cfg, &prep, &mut manifest, name)?;
            evaluator.evaluate(ModelVariant::parse(name)?.display_name(), scorer.as_ref())?
        };
        rows.push(row);
    }
    let report = EvalReport::new(opts, popularity, rows)?;
    std::fs::write(common.out.join("eval_report.json"), report.to_json()? + "\n")
        .map_err(|e| CliError::io(format!("cannot write report: {e}")))?;
    print!("{}", report.to_table());
    manifest.write(&common.out)
}

#[derive(Serialize)]
struct Ranked<'a> {
    joke_id: &'a str,
    score: f64,
}

fn rank(
    common: &Common,
    user: &str,
    candidates: &[String],
    model: &str,
    at: Option<&str>,
    country: Option<&str>,
) -> Result<(), CliError> {
    let (cfg, mut manifest) = start(common, "rank")?;
    manifest.argument("user", user);
    manifest.argument("candidates", candidates.join(","));
    manifest.argument("model", model);
    let Loaded { prep, last_request } = load(&cfg, &mut manifest, false)?;
    let scorer = load_scorer(&cfg, &prep, &mut manifest, model)?;
    let latest = last_request.values().map(|(t, _)| *t).max().expect("labelled instances are not empty");
    let timestamp = match at {
        Some(s) => Timestamp::parse(s)?,
        None => latest.plus_seconds(1),
    };
    manifest.argument("at", timestamp.to_string());
    let country_code = match (country, last_request.get(user)) {
        (Some(c), _) => c.to_string(),
        (None, Some((_, c))) => c.clone(),
        (None, None) => {
            return Err(CliError::new(
                error::ExitKind::Data,
                format!("user `{user}` has no logged requests; pass --country"),
            ))
        }
    };
    let ctx = RequestContext {
        user_id: user.to_string(),
        timestamp,
        history: prep.history.at(user, timestamp, &country_code),
        country_code,
    };
    let ranked = rank_candidates(scorer.as_ref(), &ctx, candidates)?;
    let rows: Vec<Ranked> = ranked.iter().map(|(j, s)| Ranked { joke_id: j, score: *s }).collect();
    write_json(&common.out.join("ranking.json"), &rows)?;
    for r in &rows {
        println!("{}\t{:.6}", r.joke_id, r.score);
    }
    manifest.write(&common.out)
}
