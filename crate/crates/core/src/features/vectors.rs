use std::collections::BTreeSet;

use super::text::{clean_text, humor_features, joke_event_tags, SenseInventory};
use crate::datamodel::{Corpus, EmbeddingTable, EventCalendar, Joke, UserHistory};
use crate::error::Result;

/// Element-wise mean and max of the token embeddings; zero vectors when
/// there are no tokens.
pub fn joke_embedding_summary(tokens: &[String], table: &EmbeddingTable) -> (Vec<f64>, Vec<f64>) {
    let dim = table.dim();
    if tokens.is_empty() {
        return (vec![0.0; dim], vec![0.0; dim]);
    }
    let mut sum = vec![0.0; dim];
    let mut max = vec![f64::NEG_INFINITY; dim];
    for t in tokens {
        for ((s, m), v) in sum.iter_mut().zip(max.iter_mut()).zip(table.embed_token(t)) {
            *s += v;
            *m = m.max(v);
        }
    }
    let n = tokens.len() as f64;
    (sum.into_iter().map(|s| s / n).collect(), max)
}

/// Cosine similarity, 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// `(sim_liked, sim_disliked)` for a candidate's average embedding.
pub fn similarity_features(candidate_avg: &[f64], liked: &[f64], disliked: &[f64]) -> (f64, f64) {
    (cosine(candidate_avg, liked), cosine(candidate_avg, disliked))
}

/// Text-derived features of one joke, computed once per corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct JokeProfile {
    pub tokens: Vec<String>,
    pub avg: Vec<f64>,
    pub max: Vec<f64>,
    pub ambiguity: f64,
    pub sense_combination: f64,
    pub event_tags: BTreeSet<String>,
}

impl JokeProfile {
    pub fn new(joke: &Joke, cal: &EventCalendar, table: &EmbeddingTable, inv: &SenseInventory) -> Self {
        let tokens = clean_text(&joke.text);
        let (avg, max) = joke_embedding_summary(&tokens, table);
        let (ambiguity, sense_combination) = humor_features(&tokens, inv);
        let mut event_tags = joke_event_tags(joke, cal);
        event_tags.extend(joke.event_tags.iter().cloned());
        Self {
            tokens,
            avg,
            max,
            ambiguity,
            sense_combination,
            event_tags,
        }
    }
}

/// A corpus together with the profile of every joke.
#[derive(Clone, Debug)]
pub struct JokeProfiles {
    corpus: Corpus,
    profiles: Vec<JokeProfile>,
    dim: usize,
}

impl JokeProfiles {
    pub fn new(corpus: Corpus, cal: &EventCalendar, table: &EmbeddingTable, inv: &SenseInventory) -> Self {
        let profiles = corpus.iter().map(|j| JokeProfile::new(j, cal, table, inv)).collect();
        Self {
            corpus,
            profiles,
            dim: table.dim(),
        }
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, joke_id: &str) -> Result<&JokeProfile> {
        Ok(&self.profiles[self.corpus.position(joke_id)?])
    }

    pub fn at(&self, position: usize) -> &JokeProfile {
        &self.profiles[position]
    }
}

fn mean_of<'a>(vectors: impl Iterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
        n += 1;
    }
    if n > 0 {
        acc.iter_mut().for_each(|a| *a /= n as f64);
    }
    acc
}

/// Mean average-embedding of the liked jokes and of the disliked jokes.
pub fn user_profile_vectors(hist: &UserHistory, profiles: &JokeProfiles) -> Result<(Vec<f64>, Vec<f64>)> {
    let liked = hist
        .liked_joke_ids
        .iter()
        .map(|j| profiles.get(j).map(|p| p.avg.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    let disliked = hist
        .disliked_joke_ids
        .iter()
        .map(|j| profiles.get(j).map(|p| p.avg.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        mean_of(liked.into_iter(), profiles.dim()),
        mean_of(disliked.into_iter(), profiles.dim()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> EmbeddingTable {
        let mut t = EmbeddingTable::seeded(2, 31, (3, 5), 3).unwrap();
        t.insert_word("up", vec![1.0, 0.0]).unwrap();
        t.insert_word("left", vec![0.0, 1.0]).unwrap();
        t
    }

    fn joke(id: &str, text: &str) -> Joke {
        Joke {
            joke_id: id.into(),
            text: text.into(),
            category: "c".into(),
            joke_type: "t".into(),
            event_tags: BTreeSet::new(),
        }
    }

    #[test]
    fn summary_examples() {
        let t = table();
        let (avg, max) = joke_embedding_summary(&["up".into()], &t);
        assert_eq!(avg, max);
        let (avg, max) = joke_embedding_summary(&["up".into(), "left".into()], &t);
        assert_eq!(avg, [0.5, 0.5]);
        assert_eq!(max, [1.0, 1.0]);
        assert_eq!(joke_embedding_summary(&[], &t), (vec![0.0; 2], vec![0.0; 2]));
    }

    #[test]
    fn similarity_examples() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(similarity_features(&[1.0, 1.0], &[0.0, 0.0], &[1.0, 1.0]).0, 0.0);
    }

    #[test]
    fn profile_vectors() {
        let t = table();
        let corpus = Corpus::new(vec![joke("a", "zebra crossing"), joke("b", "penguin waddle"), joke("c", "up")]).unwrap();
        let cal = EventCalendar::default_calendar();
        let profiles = JokeProfiles::new(corpus, &cal, &t, &SenseInventory::bundled());
        let one = UserHistory {
            user_id: "u".into(),
            liked_joke_ids: vec!["a".into()],
            disliked_joke_ids: vec![],
            country_code: "US".into(),
        };
        let (liked, disliked) = user_profile_vectors(&one, &profiles).unwrap();
        assert_eq!(liked, profiles.get("a").unwrap().avg);
        assert_eq!(disliked, vec![0.0; 2]);

        let two = UserHistory {
            liked_joke_ids: vec!["a".into(), "b".into()],
            ..one.clone()
        };
        let (liked, _) = user_profile_vectors(&two, &profiles).unwrap();
        let ta = joke_embedding_summary(&clean_text("zebra crossing"), &t).0;
        let tb = joke_embedding_summary(&clean_text("penguin waddle"), &t).0;
        for i in 0..2 {
            assert!((liked[i] - (ta[i] + tb[i]) / 2.0).abs() < 1e-15);
        }

        let bad = UserHistory {
            liked_joke_ids: vec!["missing".into()],
            ..one
        };
        assert!(user_profile_vectors(&bad, &profiles).is_err());
    }

    proptest! {
        #[test]
        fn similarity_is_scale_invariant(
            a in prop::collection::vec(-5.0f64..5.0, 4),
            b in prop::collection::vec(-5.0f64..5.0, 4),
            c in prop::collection::vec(-5.0f64..5.0, 4),
            k in 0.01f64..100.0,
        ) {
            let s = |v: &[f64]| v.iter().map(|x| x * k).collect::<Vec<_>>();
            let (l1, d1) = similarity_features(&a, &b, &c);
            let (l2, d2) = similarity_features(&s(&a), &s(&b), &s(&c));
            prop_assert!((l1 - l2).abs() < 1e-12);
            prop_assert!((d1 - d2).abs() < 1e-12);
        }
    }
}
