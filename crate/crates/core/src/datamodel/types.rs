use std::collections::{BTreeSet, HashMap};
use std::fmt;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Utc, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y/%m/%d-%H:%M:%S";

/// A UTC instant with second resolution, stored as Unix seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

impl Timestamp {
    pub fn from_unix(secs: i64) -> Self {
        Self(secs)
    }

    pub fn unix(self) -> i64 {
        self.0
    }

    /// Parses `YYYY/MM/DD-HH:MM:SS`.
    pub fn parse(s: &str) -> Result<Self> {
        NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
            .map(|dt| Self(dt.and_utc().timestamp()))
            .map_err(|_| Error::Timestamp(s.to_string()))
    }

    pub fn from_ymd_hms(y: i32, mo: u32, d: u32, h: u32, mi: u32, s: u32) -> Result<Self> {
        NaiveDate::from_ymd_opt(y, mo, d)
            .and_then(|date| date.and_hms_opt(h, mi, s))
            .map(|dt| Self(dt.and_utc().timestamp()))
            .ok_or_else(|| Error::Timestamp(format!("{y:04}/{mo:02}/{d:02}-{h:02}:{mi:02}:{s:02}")))
    }

    fn datetime(self) -> DateTime<Utc> {
        DateTime::from_timestamp(self.0, 0).expect("timestamp in chrono range")
    }

    pub fn date(self) -> NaiveDate {
        self.datetime().date_naive()
    }

    pub fn month(self) -> u32 {
        self.date().month()
    }

    pub fn day(self) -> u32 {
        self.date().day()
    }

    pub fn is_weekend(self) -> bool {
        matches!(self.date().weekday(), Weekday::Sat | Weekday::Sun)
    }

    pub fn plus_seconds(self, secs: i64) -> Self {
        Self(self.0 + secs)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.datetime().format(TIMESTAMP_FORMAT))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Timestamp::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Joke {
    pub joke_id: String,
    pub text: String,
    pub category: String,
    pub joke_type: String,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub event_tags: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub user_id: String,
    pub joke_id: String,
    pub timestamp: Timestamp,
    pub country_code: String,
}

/// Which weak label a model trains on or a history is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelChoice {
    /// Five-minute reuse.
    Reuse,
    /// One-day return.
    Return,
}

impl LabelChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelChoice::Reuse => "reuse",
            LabelChoice::Return => "return",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelledInstance {
    #[serde(flatten)]
    pub event: InteractionEvent,
    pub label_reuse: u8,
    pub label_return: u8,
    pub sample_weight: f64,
    pub class_weight_reuse: f64,
    pub class_weight_return: f64,
}

impl LabelledInstance {
    pub fn label(&self, choice: LabelChoice) -> u8 {
        match choice {
            LabelChoice::Reuse => self.label_reuse,
            LabelChoice::Return => self.label_return,
        }
    }

    pub fn class_weight(&self, choice: LabelChoice) -> f64 {
        match choice {
            LabelChoice::Reuse => self.class_weight_reuse,
            LabelChoice::Return => self.class_weight_return,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user_id: String,
    pub liked_joke_ids: Vec<String>,
    pub disliked_joke_ids: Vec<String>,
    pub country_code: String,
}

/// Jokes indexed by id.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    jokes: Vec<Joke>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(jokes: Vec<Joke>) -> Result<Self> {
        let mut index = HashMap::with_capacity(jokes.len());
        for (i, j) in jokes.iter().enumerate() {
            if j.joke_id.is_empty() {
                return Err(Error::Invalid(format!("joke at position {i} has an empty joke_id")));
            }
            if j.text.is_empty() {
                return Err(Error::Invalid(format!("joke `{}` has empty text", j.joke_id)));
            }
            if index.insert(j.joke_id.clone(), i).is_some() {
                return Err(Error::DuplicateJoke(j.joke_id.clone()));
            }
        }
        Ok(Self { jokes, index })
    }

    pub fn get(&self, joke_id: &str) -> Result<&Joke> {
        self.index
            .get(joke_id)
            .map(|&i| &self.jokes[i])
            .ok_or_else(|| Error::UnknownJoke(joke_id.to_string()))
    }

    pub fn position(&self, joke_id: &str) -> Result<usize> {
        self.index
            .get(joke_id)
            .copied()
            .ok_or_else(|| Error::UnknownJoke(joke_id.to_string()))
    }

    pub fn jokes(&self) -> &[Joke] {
        &self.jokes
    }

    pub fn len(&self) -> usize {
        self.jokes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jokes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Joke> {
        self.jokes.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_round_trips_through_text() {
        let t = Timestamp::parse("2019/05/03-17:51:10").unwrap();
        assert_eq!(t.to_string(), "2019/05/03-17:51:10");
        assert_eq!(t.month(), 5);
        assert_eq!(t.day(), 3);
        assert!(!t.is_weekend());
    }

    #[test]
    fn invalid_month_is_rejected() {
        assert!(Timestamp::parse("2019/13/01-00:00:00").is_err());
    }

    #[test]
    fn saturday_is_weekend() {
        assert!(Timestamp::parse("2019/05/04-09:00:00").unwrap().is_weekend());
    }

    #[test]
    fn corpus_rejects_duplicates() {
        let j = Joke {
            joke_id: "j1".into(),
            text: "a".into(),
            category: "c".into(),
            joke_type: "t".into(),
            event_tags: BTreeSet::new(),
        };
        let err = Corpus::new(vec![j.clone(), j]).unwrap_err();
        assert!(matches!(err, Error::DuplicateJoke(id) if id == "j1"));
    }
}
