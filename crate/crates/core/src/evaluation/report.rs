use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{fnv1a64, Corpus, LabelChoice, LabelledInstance};
use crate::error::{Error, Result};
use crate::labelling::HistoryIndex;
use crate::ranking::{order_scored, RequestContext, Scorer};

use super::metrics::{auc_roc, overall_accuracy, relative_change};

pub const DEFAULT_K_NEGATIVES: usize = 9;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Rows that lead every report, in this order.
pub const REPORT_ORDER: [&str; 5] = ["DL-T", "DL-T-noAtt", "DL-T-basic", "DL-CNN", "LR"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    AucRoc,
    OverallAccuracy,
    Top1Accuracy,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::AucRoc, Metric::OverallAccuracy, Metric::Top1Accuracy];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "auc" | "auc_roc" => Ok(Metric::AucRoc),
            "accuracy" | "overall_accuracy" => Ok(Metric::OverallAccuracy),
            "top1" | "top1_accuracy" => Ok(Metric::Top1Accuracy),
            _ => Err(Error::Config(format!("unknown metric `{s}` (expected auc, accuracy or top1)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub label: LabelChoice,
    pub k_negatives: usize,
    pub seed: u64,
    pub threshold: f64,
    pub metrics: Vec<Metric>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            label: LabelChoice::Return,
            k_negatives: DEFAULT_K_NEGATIVES,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            metrics: Metric::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub auc_roc: Option<f64>,
    pub overall_accuracy: Option<f64>,
    pub top1_accuracy: Option<f64>,
}

impl ModelMetrics {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::AucRoc => self.auc_roc,
            Metric::OverallAccuracy => self.overall_accuracy,
            Metric::Top1Accuracy => self.top1_accuracy,
        }
    }
}

/// One positive test request with its sampled candidate set; the true
/// joke is `candidates[0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub context: RequestContext,
    pub candidates: Vec<String>,
}

fn context_of(inst: &LabelledInstance, history: &HistoryIndex) -> RequestContext {
    let e = &inst.event;
    RequestContext {
        user_id: e.user_id.clone(),
        timestamp: e.timestamp,
        country_code: e.country_code.clone(),
        history: history.at(&e.user_id, e.timestamp, &e.country_code),
    }
}

/// Candidate sets for every positive test instance: the requested joke
/// plus `k` distinct jokes the user never requested, sampled with `seed`.
pub fn top1_candidates(
    test: &[LabelledInstance],
    history: &HistoryIndex,
    corpus: &Corpus,
    label: LabelChoice,
    k: usize,
    seed: u64,
) -> Result<Vec<CandidateSet>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sets = Vec::new();
    for inst in test.iter().filter(|i| i.label(label) == 1) {
        let user = &inst.event.user_id;
        let heard: HashSet<&str> = history.heard(user).into_iter().chain([inst.event.joke_id.as_str()]).collect();
        let unheard: Vec<&str> = corpus.iter().map(|j| j.joke_id.as_str()).filter(|j| !heard.contains(j)).collect();
        if unheard.len() < k {
            return Err(Error::InsufficientNegatives {
                user: user.clone(),
                needed: k,
                available: unheard.len(),
            });
        }
        let mut candidates = vec![inst.event.joke_id.clone()];
        candidates.extend(unheard.choose_multiple(&mut rng, k).map(|j| j.to_string()));
        sets.push(CandidateSet {
            context: context_of(inst, history),
            candidates,
        });
    }
    if sets.is_empty() {
        return Err(Error::Degenerate("no positive test instances for top-1 accuracy".into()));
    }
    Ok(sets)
}

/// Fraction of candidate sets whose true joke ranks first.
pub fn top1_from_candidates(scorer: &dyn Scorer, sets: &[CandidateSet]) -> Result<f64> {
    let pairs: Vec<(&RequestContext, &str)> = sets
        .iter()
        .flat_map(|s| s.candidates.iter().map(move |c| (&s.context, c.as_str())))
        .collect();
    let scores = scorer.score_pairs(&pairs)?;
    let mut offset = 0;
    let mut hits = 0;
    for s in sets {
        let n = s.candidates.len();
        let scored = s.candidates.iter().cloned().zip(scores[offset..offset + n].iter().copied()).collect();
        offset += n;
        if order_scored(scored)[0].0 == s.candidates[0] {
            hits += 1;
        }
    }
    Ok(f64::from(hits) / sets.len() as f64)
}

pub fn top1_accuracy(
    scorer: &dyn Scorer,
    test: &[LabelledInstance],
    history: &HistoryIndex,
    corpus: &Corpus,
    label: LabelChoice,
    k: usize,
    seed: u64,
) -> Result<f64> {
    top1_from_candidates(scorer, &top1_candidates(test, history, corpus, label, k, seed)?)
}

/// Uniform pseudo-random scores from a hash of the seed, request and joke.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RandomScorer {
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn name(&self) -> &str {
        "random"
    }

    fn score_pairs(&self, pairs: &[(&RequestContext, &str)]) -> Result<Vec<f64>> {
        Ok(pairs
            .iter()
            .map(|(c, j)| {
                let key = format!("{}\u{1f}{}\u{1f}{}\u{1f}{j}", self.seed, c.user_id, c.timestamp.unix());
                // splitmix finaliser spreads the FNV bits before taking the top 53
                let mut z = fnv1a64(key.as_bytes());
                z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
                z ^= z >> 31;
                (z >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect())
    }
}

/// Test-set contexts and top-1 candidate sets, computed once and shared by
/// every evaluated scorer.
#[derive(Clone, Debug)]
pub struct Evaluator {
    opts: EvalOptions,
    contexts: Vec<RequestContext>,
    jokes: Vec<String>,
    labels: Vec<u8>,
    candidate_sets: Option<Vec<CandidateSet>>,
}

impl Evaluator {
    pub fn new(test: &[LabelledInstance], history: &HistoryIndex, corpus: &Corpus, opts: &EvalOptions) -> Result<Self> {
        let candidate_sets = if opts.metrics.contains(&Metric::Top1Accuracy) {
            Some(top1_candidates(test, history, corpus, opts.label, opts.k_negatives, opts.seed)?)
        } else {
            None
        };
        Ok(Self {
            opts: opts.clone(),
            contexts: test.iter().map(|i| context_of(i, history)).collect(),
            jokes: test.iter().map(|i| i.event.joke_id.clone()).collect(),
            labels: test.iter().map(|i| i.label(opts.label)).collect(),
            candidate_sets,
        })
    }

    pub fn options(&self) -> &EvalOptions {
        &self.opts
    }

    pub fn candidate_sets(&self) -> Option<&[CandidateSet]> {
        self.candidate_sets.as_deref()
    }

    pub fn evaluate(&self, name: &str, scorer: &dyn Scorer) -> Result<ModelMetrics> {
        let wants = |m| self.opts.metrics.contains(&m);
        let mut out = ModelMetrics {
            model: name.to_string(),
            auc_roc: None,
            overall_accuracy: None,
            top1_accuracy: None,
        };
        if wants(Metric::AucRoc) || wants(Metric::OverallAccuracy) {
            let pairs: Vec<(&RequestContext, &str)> =
                self.contexts.iter().zip(&self.jokes).map(|(c, j)| (c, j.as_str())).collect();
            let scores = scorer.score_pairs(&pairs)?;
            if wants(Metric::AucRoc) {
                out.auc_roc = Some(auc_roc(&scores, &self.labels)?);
            }
            if wants(Metric::OverallAccuracy) {
                out.overall_accuracy = Some(overall_accuracy(&scores, &self.labels, self.opts.threshold)?);
            }
        }
        if let Some(sets) = &self.candidate_sets {
            out.top1_accuracy = Some(top1_from_candidates(scorer, sets)?);
        }
        Ok(out)
    }
}

/// Relative change of each metric against the popularity baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeChange {
    pub model: String,
    pub auc_roc: Option<f64>,
    pub overall_accuracy: Option<f64>,
    pub top1_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: LabelChoice,
    pub k_negatives: usize,
    pub seed: u64,
    pub threshold: f64,
    pub popularity: ModelMetrics,
    /// Model rows; the five ranker variants lead in their fixed order.
    pub models: Vec<ModelMetrics>,
    /// One row per model plus a final popularity row.
    pub relative_change: Vec<RelativeChange>,
}

fn rank_of(name: &str) -> usize {
    REPORT_ORDER.iter().position(|n| *n == name).unwrap_or(REPORT_ORDER.len())
}

/// `None` when either metric is missing or the baseline is zero.
fn change(m: Option<f64>, base: Option<f64>) -> Result<Option<f64>> {
    match (m, base) {
        (Some(m), Some(b)) if b != 0.0 => relative_change(m, b).map(Some),
        _ => Ok(None),
    }
}

impl EvalReport {
    pub fn new(opts: &EvalOptions, popularity: ModelMetrics, mut models: Vec<ModelMetrics>) -> Result<Self> {
        models.sort_by_key(|m| rank_of(&m.model));
        let mut relative = Vec::with_capacity(models.len() + 1);
        for m in models.iter().chain([&popularity]) {
            relative.push(RelativeChange {
                model: m.model.clone(),
                auc_roc: change(m.auc_roc, popularity.auc_roc)?,
                overall_accuracy: change(m.overall_accuracy, popularity.overall_accuracy)?,
                top1_accuracy: change(m.top1_accuracy, popularity.top1_accuracy)?,
            });
        }
        Ok(Self {
            label: opts.label,
            k_negatives: opts.k_negatives,
            seed: opts.seed,
            threshold: opts.threshold,
            popularity,
            models,
            relative_change: relative,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn model(&self, name: &str) -> Option<&ModelMetrics> {
        self.models.iter().find(|m| m.model == name)
    }

    /// Plain-text grid of relative changes in percent.
    pub fn to_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:+.2}%", 100.0 * x));
        let mut out = String::new();
        let _ = writeln!(out, "{:<14} {:>12} {:>12} {:>12}", "model", "AUC-ROC", "accuracy", "top-1");
        for r in &self.relative_change {
            let _ = writeln!(
                out,
                "{:<14} {:>12} {:>12} {:>12}",
                r.model,
                cell(r.auc_roc),
                cell(r.overall_accuracy),
                cell(r.top1_accuracy)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{InteractionEvent, Joke, Timestamp};
    use crate::labelling::LabelConfig;

    fn corpus(n: usize) -> Corpus {
        Corpus::new(
            (0..n)
                .map(|i| Joke {
                    joke_id: format!("j{i:03}"),
                    text: format!("joke number {i}"),
                    category: "misc".into(),
                    joke_type: "pun".into(),
                    event_tags: Default::default(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn inst(user: usize, joke: usize, t: i64, ret: u8) -> LabelledInstance {
        LabelledInstance {
            event: InteractionEvent {
                user_id: format!("u{user}"),
                joke_id: format!("j{joke:03}"),
                timestamp: Timestamp::from_unix(t),
                country_code: "US".into(),
            },
            label_reuse: 0,
            label_return: ret,
            sample_weight: 1.0,
            class_weight_reuse: 1.0,
            class_weight_return: 1.0,
        }
    }

    fn setup(n: usize) -> (Corpus, Vec<LabelledInstance>, HistoryIndex) {
        let test: Vec<LabelledInstance> = (0..n).map(|i| inst(i % 50, i % 7, i as i64 * 10, 1)).collect();
        let history = HistoryIndex::new(&test, LabelChoice::Return, &LabelConfig::default());
        (corpus(30), test, history)
    }

    struct Truth;

    impl Scorer for Truth {
        fn name(&self) -> &str {
            "truth"
        }

        fn score_pairs(&self, pairs: &[(&RequestContext, &str)]) -> Result<Vec<f64>> {
            // the true joke of a request at t is j(t/10 mod 7)
            Ok(pairs
                .iter()
                .map(|(c, j)| f64::from(u8::from(*j == format!("j{:03}", (c.timestamp.unix() / 10) % 7))))
                .collect())
        }
    }

    struct Inverse;

    impl Scorer for Inverse {
        fn name(&self) -> &str {
            "inverse"
        }

        fn score_pairs(&self, pairs: &[(&RequestContext, &str)]) -> Result<Vec<f64>> {
            Ok(Truth.score_pairs(pairs)?.into_iter().map(|s| 1.0 - s).collect())
        }
    }

    #[test]
    fn perfect_and_inverse_scorers() {
        let (c, test, h) = setup(100);
        assert_eq!(top1_accuracy(&Truth, &test, &h, &c, LabelChoice::Return, 9, 1).unwrap(), 1.0);
        assert_eq!(top1_accuracy(&Inverse, &test, &h, &c, LabelChoice::Return, 9, 1).unwrap(), 0.0);
        assert_eq!(top1_accuracy(&Inverse, &test, &h, &c, LabelChoice::Return, 0, 1).unwrap(), 1.0);
    }

    #[test]
    fn random_scorer_near_one_in_ten() {
        let (c, test, h) = setup(2000);
        let acc = top1_accuracy(&RandomScorer { seed: 3 }, &test, &h, &c, LabelChoice::Return, 9, 2).unwrap();
        assert!((acc - 0.1).abs() < 0.03, "{acc}");
    }

    #[test]
    fn candidate_sets_are_unheard_and_seeded() {
        let (c, test, h) = setup(60);
        let a = top1_candidates(&test, &h, &c, LabelChoice::Return, 9, 5).unwrap();
        let b = top1_candidates(&test, &h, &c, LabelChoice::Return, 9, 5).unwrap();
        assert_eq!(a, b);
        for s in &a {
            let heard = h.heard(&s.context.user_id);
            assert_eq!(s.candidates.len(), 10);
            assert!(s.candidates[1..].iter().all(|j| !heard.contains(&j.as_str())));
        }
        let err = top1_candidates(&test, &h, &c, LabelChoice::Return, 29, 5).unwrap_err();
        assert!(matches!(err, Error::InsufficientNegatives { .. }));
    }

    #[test]
    fn report_rows_and_relative_changes() {
        let m = |name: &str, v: f64| ModelMetrics {
            model: name.into(),
            auc_roc: Some(v),
            overall_accuracy: Some(v),
            top1_accuracy: None,
        };
        let opts = EvalOptions::default();
        let models = ["LR", "oracle", "DL-CNN", "DL-T-basic", "DL-T", "DL-T-noAtt"].map(|n| m(n, 0.66)).to_vec();
        let report = EvalReport::new(&opts, m("popularity", 0.5), models).unwrap();
        let names: Vec<&str> = report.models.iter().map(|r| r.model.as_str()).collect();
        assert_eq!(names, ["DL-T", "DL-T-noAtt", "DL-T-basic", "DL-CNN", "LR", "oracle"]);
        assert!((report.relative_change[0].auc_roc.unwrap() - 0.32).abs() < 1e-12);
        let pop = report.relative_change.last().unwrap();
        assert_eq!((pop.model.as_str(), pop.auc_roc), ("popularity", Some(0.0)));
        assert!(report.to_table().contains("+32.00%"));
        let zero = EvalReport::new(&opts, m("popularity", 0.0), vec![m("LR", 0.2)]).unwrap();
        assert_eq!(zero.relative_change[0].auc_roc, None);
    }
}
