//! Seeded synthetic world: a templated joke corpus, users with latent humor
//! preferences, and request logs whose timing depends on whether each joke
//! was liked.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    read_jsonl, write_jsonl, EmbeddingSpec, EmbeddingTable, EventCalendar, InteractionEvent, Joke, Timestamp, DEFAULT_DIM,
};
use crate::features::clean_text;
use crate::error::{Error, Result};
use crate::ranking::{order_scored, RequestContext, Scorer};

const TOPICS: [(&str, [&str; 10]); 8] = [
    ("animals", ["dog", "cat", "parrot", "cow", "horse", "penguin", "duck", "bear", "owl", "goat"]),
    ("sports", ["ball", "goal", "coach", "team", "referee", "golf", "tennis", "pitch", "bat", "match"]),
    ("sci-fi", ["robot", "alien", "rocket", "planet", "laser", "spaceship", "android", "galaxy", "star", "moon"]),
    ("food", ["pizza", "cheese", "bread", "soup", "banana", "cookie", "bacon", "pasta", "onion", "toast"]),
    ("tech", ["computer", "mouse", "keyboard", "code", "bug", "server", "laptop", "password", "cloud", "network"]),
    ("music", ["guitar", "drum", "piano", "band", "song", "note", "violin", "trumpet", "singer", "concert"]),
    ("school", ["teacher", "student", "homework", "exam", "pencil", "ruler", "library", "math", "lesson", "class"]),
    ("work", ["boss", "office", "meeting", "manager", "salary", "desk", "printer", "email", "deadline", "bank"]),
];

const VERBS: [&str; 10] = ["cross", "chase", "borrow", "paint", "fix", "call", "eat", "throw", "hide", "sell"];
const ADJECTIVES: [&str; 8] = ["tired", "tiny", "angry", "lazy", "shiny", "funny", "sleepy", "brave"];
const COUNTRIES: [&str; 6] = ["US", "GB", "CA", "AU", "IE", "NZ"];

/// `(joke_type, template)`; `{a}`..`{c}` are topic words, `{v}` a verb, `{j}` an adjective.
const TEMPLATES: [(&str, &str); 6] = [
    ("riddle", "Why did the {a} {v} the {b}? Because the {c} was {j}."),
    ("pun", "What do you call a {j} {a}? A {b} {c}."),
    ("one-liner", "A {a} walks into a {b} and asks for a {c}."),
    ("story", "I told my {a} a joke about the {b}, but the {c} did not laugh."),
    ("knock-knock", "Knock knock. Who is there? {A}. {A} who? {A} will {v} your {b}!"),
    ("limerick", "There once was a {j} {a} from the {b}, who would {v} a {c} all day."),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub num_users: usize,
    pub num_jokes: usize,
    pub num_days: u32,
    pub seed: u64,
    pub latent_dim: usize,
    /// 0 gives every user the same taste, 1 makes taste fully personal.
    pub user_conditioning_strength: f64,
    pub event_joke_fraction: f64,
    /// Organic sessions per user per day once a return window has lapsed.
    pub base_request_rate: f64,
    pub num_countries: usize,
    pub start: Timestamp,
    /// Logit multiplier turning affinity into like-probability.
    pub preference_scale: f64,
    /// Weight of the user-joke dot product inside the personal affinity.
    pub personal_sharpness: f64,
    /// Share of a user's latent vector inherited from their country.
    pub country_share: f64,
    /// Probability of another request within five minutes after a liked joke.
    pub continue_prob_liked: f64,
    pub continue_prob_disliked: f64,
    /// Probability of coming back within 1-25 hours, scaled by the session's liked fraction.
    pub return_prob: f64,
    pub max_session_len: usize,
    /// Affinity added to an event joke near its event and subtracted elsewhere.
    pub event_effect: f64,
    /// When set, generation fails unless reuse and return positive rates land
    /// within 0.1 of 0.5 and 0.2.
    pub calibration_check: bool,
    /// Dimension of the emitted word vectors.
    pub embedding_dim: usize,
    /// Spread of a topic word around its topic centroid, relative to the centroid norm.
    pub word_vector_spread: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_users: 500,
            num_jokes: 200,
            num_days: 30,
            seed: 7,
            latent_dim: 8,
            user_conditioning_strength: 0.8,
            event_joke_fraction: 0.1,
            base_request_rate: 0.75,
            num_countries: 4,
            start: Timestamp::from_ymd_hms(2019, 5, 1, 0, 0, 0).expect("valid date"),
            preference_scale: 6.0,
            personal_sharpness: 4.0,
            country_share: 0.7,
            continue_prob_liked: 0.9,
            continue_prob_disliked: 0.1,
            return_prob: 0.45,
            max_session_len: 8,
            event_effect: 0.3,
            calibration_check: false,
            embedding_dim: DEFAULT_DIM,
            word_vector_spread: 0.5,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_users == 0 || self.num_jokes == 0 || self.num_days == 0 || self.latent_dim == 0 {
            return bad("num_users, num_jokes, num_days and latent_dim must be positive".into());
        }
        for (name, v) in [
            ("user_conditioning_strength", self.user_conditioning_strength),
            ("event_joke_fraction", self.event_joke_fraction),
            ("country_share", self.country_share),
            ("continue_prob_liked", self.continue_prob_liked),
            ("continue_prob_disliked", self.continue_prob_disliked),
            ("return_prob", self.return_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.base_request_rate > 0.0 && self.base_request_rate.is_finite()) {
            return bad("base_request_rate must be positive".into());
        }
        if self.num_countries == 0 || self.num_countries > COUNTRIES.len() {
            return bad(format!("num_countries must lie in 1..={}", COUNTRIES.len()));
        }
        if self.max_session_len == 0 {
            return bad("max_session_len must be positive".into());
        }
        if !(self.preference_scale > 0.0) || self.personal_sharpness < 0.0 {
            return bad("preference_scale must be positive and personal_sharpness non-negative".into());
        }
        if self.embedding_dim == 0 || !(self.word_vector_spread >= 0.0 && self.word_vector_spread.is_finite()) {
            return bad("embedding_dim must be positive and word_vector_spread non-negative".into());
        }
        if self.num_days < 2 {
            return bad("num_days must be at least 2 so one-day returns can be observed".into());
        }
        Ok(())
    }
}

/// Latent like-probability of every (user, joke) pair, away from event
/// windows and, for event jokes, while their event is active.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    users: Vec<String>,
    jokes: Vec<String>,
    probs: Vec<f64>,
    joke_events: Vec<Option<String>>,
    event_probs: Vec<f64>,
    user_index: HashMap<String, usize>,
    joke_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TruthRow {
    user_id: String,
    joke_id: String,
    like_probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    event_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    event_like_probability: Option<f64>,
}

fn check_probs(probs: &[f64]) -> Result<()> {
    if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::Invalid(format!("like-probability {p} outside (0, 1)")));
    }
    Ok(())
}

impl GroundTruth {
    pub fn new(users: Vec<String>, jokes: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != users.len() * jokes.len() {
            return Err(Error::Invalid("ground truth size mismatch".into()));
        }
        check_probs(&probs)?;
        let user_index = users.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        let joke_index = jokes.iter().enumerate().map(|(i, j)| (j.clone(), i)).collect();
        Ok(Self {
            joke_events: vec![None; jokes.len()],
            event_probs: probs.clone(),
            users,
            jokes,
            probs,
            user_index,
            joke_index,
        })
    }

    /// Adds each joke's event and the pair probabilities while that event is
    /// active; pairs of jokes without an event keep their base probability.
    pub fn with_events(mut self, joke_events: Vec<Option<String>>, event_probs: Vec<f64>) -> Result<Self> {
        if joke_events.len() != self.jokes.len() || event_probs.len() != self.probs.len() {
            return Err(Error::Invalid("ground truth event size mismatch".into()));
        }
        check_probs(&event_probs)?;
        let n = self.jokes.len();
        if let Some(i) = (0..event_probs.len()).find(|&i| joke_events[i % n].is_none() && event_probs[i] != self.probs[i]) {
            return Err(Error::Invalid(format!("joke `{}` has no event but an event probability", self.jokes[i % n])));
        }
        self.joke_events = joke_events;
        self.event_probs = event_probs;
        Ok(self)
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn jokes(&self) -> &[String] {
        &self.jokes
    }

    fn index(&self, user: &str, joke: &str) -> Result<(usize, usize)> {
        let u = self
            .user_index
            .get(user)
            .ok_or_else(|| Error::Invalid(format!("user `{user}` not in ground truth")))?;
        let j = self.joke_index.get(joke).ok_or_else(|| Error::UnknownJoke(joke.to_string()))?;
        Ok((*u, *j))
    }

    /// Like-probability away from the joke's event window.
    pub fn probability(&self, user: &str, joke: &str) -> Result<f64> {
        let (u, j) = self.index(user, joke)?;
        Ok(self.probs[u * self.jokes.len() + j])
    }

    /// Like-probability of a request at `t` from `country`.
    pub fn probability_at(&self, user: &str, joke: &str, t: Timestamp, country: &str, cal: &EventCalendar) -> Result<f64> {
        let (u, j) = self.index(user, joke)?;
        let k = u * self.jokes.len() + j;
        Ok(match &self.joke_events[j] {
            Some(ev) if cal.active_events(t, country).contains(ev) => self.event_probs[k],
            _ => self.probs[k],
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut rows = Vec::with_capacity(self.probs.len());
        for (ui, u) in self.users.iter().enumerate() {
            for (ji, j) in self.jokes.iter().enumerate() {
                let k = ui * self.jokes.len() + ji;
                let event_id = self.joke_events[ji].clone();
                rows.push(TruthRow {
                    user_id: u.clone(),
                    joke_id: j.clone(),
                    like_probability: self.probs[k],
                    event_like_probability: event_id.as_ref().map(|_| self.event_probs[k]),
                    event_id,
                });
            }
        }
        write_jsonl(path, &rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<TruthRow> = read_jsonl(path)?;
        let mut users: Vec<String> = Vec::new();
        let mut jokes: Vec<String> = Vec::new();
        for r in &rows {
            if users.last() != Some(&r.user_id) {
                users.push(r.user_id.clone());
            }
            if users.len() == 1 {
                jokes.push(r.joke_id.clone());
            }
        }
        for (i, r) in rows.iter().enumerate() {
            if jokes.is_empty() || r.joke_id != jokes[i % jokes.len()] || r.user_id != users[i / jokes.len()] {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "ground truth rows must form a full user-major grid".into(),
                });
            }
        }
        let joke_events: Vec<Option<String>> = rows[..jokes.len()].iter().map(|r| r.event_id.clone()).collect();
        let mut event_probs = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            let expected = &joke_events[i % jokes.len()];
            if &r.event_id != expected || r.event_id.is_some() != r.event_like_probability.is_some() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "event_id and event_like_probability must agree for every row of a joke".into(),
                });
            }
            event_probs.push(r.event_like_probability.unwrap_or(r.like_probability));
        }
        Self::new(users, jokes, rows.into_iter().map(|r| r.like_probability).collect())?.with_events(joke_events, event_probs)
    }
}

/// Candidates by descending latent like-probability away from event
/// windows, ties by joke id.
pub fn oracle_rank(truth: &GroundTruth, user: &str, candidates: &[String]) -> Result<Vec<(String, f64)>> {
    let scored = candidates
        .iter()
        .map(|c| truth.probability(user, c).map(|p| (c.clone(), p)))
        .collect::<Result<Vec<_>>>()?;
    Ok(order_scored(scored))
}

/// Ground truth exposed as a scorer: the like-probability at the request's
/// time and country.
pub struct OracleScorer<'a> {
    pub truth: &'a GroundTruth,
    pub calendar: &'a EventCalendar,
}

impl Scorer for OracleScorer<'_> {
    fn name(&self) -> &str {
        "oracle"
    }

    fn score_pairs(&self, pairs: &[(&RequestContext, &str)]) -> Result<Vec<f64>> {
        pairs
            .iter()
            .map(|(c, j)| {
                self.truth
                    .probability_at(&c.user_id, j, c.timestamp, &c.country_code, self.calendar)
            })
            .collect()
    }
}

/// A generated corpus, its request log (sorted by user then time), the
/// latent preferences behind it and word vectors for the corpus vocabulary.
#[derive(Clone, Debug)]
pub struct World {
    pub corpus: Vec<Joke>,
    pub events: Vec<InteractionEvent>,
    pub truth: GroundTruth,
    pub word_vectors: Vec<(String, Vec<f64>)>,
}

impl World {
    /// Builds the embedding table described by `spec` and adds the world's word vectors.
    pub fn embedding_table(&self, spec: &EmbeddingSpec) -> Result<EmbeddingTable> {
        let mut table = spec.build()?;
        for (w, v) in &self.word_vectors {
            table.insert_word(w, v.clone())?;
        }
        Ok(table)
    }
}

/// Writes word vectors in the `V D` text format read by [`EmbeddingTable::load_text`].
pub fn save_word_vectors(path: &Path, vectors: &[(String, Vec<f64>)]) -> Result<()> {
    let dim = vectors.first().map_or(0, |(_, v)| v.len());
    let mut out = format!("{} {dim}\n", vectors.len());
    for (w, v) in vectors {
        out.push_str(w);
        for x in v {
            out.push(' ');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Word vectors in which the words of one topic, or of one calendar event,
/// cluster around a shared centroid; all other corpus words are isotropic noise.
fn word_vectors(cfg: &WorldConfig, cal: &EventCalendar, corpus: &[Joke]) -> Vec<(String, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let dim = cfg.embedding_dim;
    let scale = 1.0 / (dim as f64).sqrt();
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { normal_vec(rng, dim).into_iter().map(|x| x * scale).collect() };
    let mut groups: Vec<Vec<String>> = TOPICS.iter().map(|(_, w)| w.iter().map(|s| s.to_string()).collect()).collect();
    groups.extend(cal.entries.iter().map(|e| e.keywords.iter().map(|k| k.to_lowercase()).collect()));
    let mut vectors: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for words in &groups {
        let centroid = draw(&mut rng);
        for w in words {
            let noise = draw(&mut rng);
            let v = centroid.iter().zip(noise).map(|(c, n)| c + cfg.word_vector_spread * n).collect();
            vectors.entry(w.clone()).or_insert(v);
        }
    }
    let vocab: BTreeSet<String> = corpus.iter().flat_map(|j| clean_text(&j.text)).collect();
    for w in &vocab {
        if !vectors.contains_key(w) {
            let v = draw(&mut rng);
            vectors.insert(w.clone(), v);
        }
    }
    vectors.into_iter().filter(|(w, _)| vocab.contains(w)).collect()
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

fn joke_text(rng: &mut ChaCha8Rng, template: &str, words: &[&str]) -> String {
    let verb = VERBS[rng.gen_range(0..VERBS.len())];
    let adj = ADJECTIVES[rng.gen_range(0..ADJECTIVES.len())];
    template
        .replace("{A}", &capitalize(words[0]))
        .replace("{a}", words[0])
        .replace("{b}", words[1])
        .replace("{c}", words[2])
        .replace("{v}", verb)
        .replace("{j}", adj)
}

struct JokeSpec {
    latent: Vec<f64>,
    quality: f64,
    event: Option<String>,
}

fn generate_corpus(cfg: &WorldConfig, cal: &EventCalendar, rng: &mut ChaCha8Rng) -> (Vec<Joke>, Vec<JokeSpec>) {
    let topic_vecs: Vec<Vec<f64>> = (0..TOPICS.len()).map(|_| normal_vec(rng, cfg.latent_dim)).collect();
    let type_effect: Vec<f64> = (0..TEMPLATES.len()).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    let num_event = (cfg.event_joke_fraction * cfg.num_jokes as f64).round() as usize;
    let width = cfg.num_jokes.to_string().len().max(4);
    let mut jokes = Vec::with_capacity(cfg.num_jokes);
    let mut specs = Vec::with_capacity(cfg.num_jokes);
    for i in 0..cfg.num_jokes {
        let topic = rng.gen_range(0..TOPICS.len());
        let kind = rng.gen_range(0..TEMPLATES.len());
        let mut words: Vec<&str> = TOPICS[topic].1.choose_multiple(rng, 3).copied().collect();
        let event = if i < num_event && !cal.entries.is_empty() {
            let entry = &cal.entries[rng.gen_range(0..cal.entries.len())];
            let kw = &entry.keywords[rng.gen_range(0..entry.keywords.len())];
            words[1] = kw.as_str();
            Some(entry.event_id.clone())
        } else {
            None
        };
        let text = joke_text(rng, TEMPLATES[kind].1, &words);
        let mut latent: Vec<f64> = topic_vecs[topic]
            .iter()
            .map(|t| t + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        normalize(&mut latent);
        let quality = type_effect[kind] + rng.sample::<f64, _>(StandardNormal);
        jokes.push(Joke {
            joke_id: format!("j{i:0width$}"),
            text,
            category: TOPICS[topic].0.to_string(),
            joke_type: TEMPLATES[kind].0.to_string(),
            event_tags: BTreeSet::new(),
        });
        specs.push(JokeSpec {
            latent,
            quality,
            event,
        });
    }
    // event jokes sit at the front; shuffle so position carries no signal
    let mut paired: Vec<(Joke, JokeSpec)> = jokes.into_iter().zip(specs).collect();
    paired.shuffle(rng);
    paired
        .into_iter()
        .enumerate()
        .map(|(i, (mut j, s))| {
            j.joke_id = format!("j{i:0width$}");
            (j, s)
        })
        .unzip()
}

/// Builds the corpus, users, request logs and ground truth for `cfg`.
pub fn generate_world(cfg: &WorldConfig, cal: &EventCalendar) -> Result<World> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (corpus, specs) = generate_corpus(cfg, cal, &mut rng);
    let country_vecs: Vec<Vec<f64>> = (0..cfg.num_countries).map(|_| normal_vec(&mut rng, cfg.latent_dim)).collect();
    let s = cfg.user_conditioning_strength;
    let width = cfg.num_users.to_string().len().max(4);

    let mut users = Vec::with_capacity(cfg.num_users);
    let mut user_country = Vec::with_capacity(cfg.num_users);
    let mut probs = Vec::with_capacity(cfg.num_users * cfg.num_jokes);
    let mut event_probs = Vec::with_capacity(cfg.num_users * cfg.num_jokes);
    let mut affinity = Vec::with_capacity(cfg.num_users * cfg.num_jokes);
    for u in 0..cfg.num_users {
        let c = rng.gen_range(0..cfg.num_countries);
        let mut v: Vec<f64> = normal_vec(&mut rng, cfg.latent_dim)
            .into_iter()
            .zip(&country_vecs[c])
            .map(|(n, cv)| n + cfg.country_share * cv)
            .collect();
        normalize(&mut v);
        for spec in &specs {
            let personal: f64 = v.iter().zip(&spec.latent).map(|(a, b)| a * b).sum();
            let mut a = (1.0 - s) * spec.quality + s * cfg.personal_sharpness * personal;
            if spec.event.is_some() {
                a -= cfg.event_effect;
            }
            let like = |a: f64| sigmoid(cfg.preference_scale * a).clamp(1e-9, 1.0 - 1e-9);
            probs.push(like(a));
            event_probs.push(if spec.event.is_some() { like(a + 2.0 * cfg.event_effect) } else { like(a) });
            affinity.push(a);
        }
        users.push(format!("u{u:0width$}"));
        user_country.push(COUNTRIES[c]);
    }

    let horizon = i64::from(cfg.num_days) * 86_400;
    let follow_gap = Exp::new(1.0 / 60.0).expect("positive rate");
    let return_gap = Exp::new(1.0 / (6.0 * 3600.0)).expect("positive rate");
    let organic_gap = Exp::new(cfg.base_request_rate / 86_400.0).expect("positive rate");
    let mut events = Vec::new();
    for (ui, user) in users.iter().enumerate() {
        let mut urng = ChaCha8Rng::seed_from_u64(cfg.seed);
        urng.set_stream(ui as u64 + 1);
        let country = user_country[ui];
        let mut unheard: Vec<usize> = (0..cfg.num_jokes).collect();
        let mut t = urng.gen_range(0..2 * 86_400_i64);
        'sessions: while t < horizon {
            let mut liked_count = 0usize;
            let mut len = 0usize;
            loop {
                if unheard.is_empty() {
                    break 'sessions;
                }
                let j = unheard.swap_remove(urng.gen_range(0..unheard.len()));
                let ts = cfg.start.plus_seconds(t);
                let mut a = affinity[ui * cfg.num_jokes + j];
                if let Some(ev) = &specs[j].event {
                    if cal.active_events(ts, country).contains(ev) {
                        a += 2.0 * cfg.event_effect;
                    }
                }
                let liked = urng.gen_bool(sigmoid(cfg.preference_scale * a));
                events.push(InteractionEvent {
                    user_id: user.clone(),
                    joke_id: corpus[j].joke_id.clone(),
                    timestamp: ts,
                    country_code: country.to_string(),
                });
                len += 1;
                liked_count += usize::from(liked);
                let p_continue = if liked {
                    cfg.continue_prob_liked
                } else {
                    cfg.continue_prob_disliked
                };
                if len >= cfg.max_session_len || !urng.gen_bool(p_continue) {
                    break;
                }
                t += 10 + (follow_gap.sample(&mut urng) as i64).min(280);
            }
            let liked_frac = liked_count as f64 / len as f64;
            if urng.gen_bool(cfg.return_prob * liked_frac) {
                t += 5400 + (return_gap.sample(&mut urng) as i64).min(77_400);
            } else {
                t += 90_000 + 3600 + organic_gap.sample(&mut urng) as i64;
            }
        }
    }
    let truth = GroundTruth::new(users, corpus.iter().map(|j| j.joke_id.clone()).collect(), probs)?
        .with_events(specs.iter().map(|s| s.event.clone()).collect(), event_probs)?;
    let word_vectors = word_vectors(cfg, cal, &corpus);
    let world = World {
        corpus,
        events,
        truth,
        word_vectors,
    };
    if cfg.calibration_check {
        check_calibration(&world)?;
    }
    Ok(world)
}

/// Positive rates of the reuse and return labels under default windows.
/// `events` must be sorted by user then time.
pub fn label_rates(events: &[InteractionEvent]) -> Result<(f64, f64)> {
    let cfg = crate::labelling::LabelConfig::default();
    let (mut reuse, mut ret) = (0usize, 0usize);
    for user in events.chunk_by(|a, b| a.user_id == b.user_id) {
        for (r, t) in crate::labelling::label_events(user, &cfg)? {
            reuse += usize::from(r);
            ret += usize::from(t);
        }
    }
    let n = events.len().max(1) as f64;
    Ok((reuse as f64 / n, ret as f64 / n))
}

fn check_calibration(world: &World) -> Result<()> {
    let (reuse, ret) = label_rates(&world.events)?;
    if (reuse - 0.5).abs() > 0.1 || (ret - 0.2).abs() > 0.1 {
        return Err(Error::Config(format!(
            "positive rates reuse {reuse:.3} / return {ret:.3} miss 0.5 / 0.2; \
             adjust continue_prob_liked/continue_prob_disliked for reuse and return_prob/base_request_rate for return"
        )));
    }
    Ok(())
}
