use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use crate::datamodel::{EventCalendar, Joke};
use crate::error::{Error, Result};

const STOPWORDS: &str = include_str!("../../resources/stopwords.txt");
const SENSES: &str = include_str!("../../resources/senses.tsv");

/// The bundled English stop-word list.
pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS.lines().map(str::trim).filter(|w| !w.is_empty()).collect())
}

/// Lowercases, splits on runs of non-alphanumeric characters and drops
/// stop-words.
pub fn clean_text(text: &str) -> Vec<String> {
    let stop = stopwords();
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !stop.contains(t))
        .map(str::to_string)
        .collect()
}

/// Number of dictionary senses per token.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SenseInventory {
    sense_counts: HashMap<String, u32>,
}

impl SenseInventory {
    pub fn new(sense_counts: HashMap<String, u32>) -> Result<Self> {
        if let Some((t, _)) = sense_counts.iter().find(|(_, &c)| c == 0) {
            return Err(Error::Config(format!("sense count for `{t}` must be at least 1")));
        }
        Ok(Self { sense_counts })
    }

    pub fn bundled() -> Self {
        Self::parse(SENSES, Path::new("senses.tsv")).expect("bundled sense inventory is valid")
    }

    /// Reads `token<TAB>count` lines; `#` starts a comment line.
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut counts = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (token, count) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| err(format!("expected `token count`, got `{line}`")))?;
            let count: u32 = count.trim().parse().map_err(|e| err(format!("bad count: {e}")))?;
            counts.insert(token.to_lowercase(), count);
        }
        Self::new(counts)
    }

    /// Sense count of `token`, 1 when unknown.
    pub fn count(&self, token: &str) -> u32 {
        self.sense_counts.get(token).copied().unwrap_or(1)
    }
}

/// `(ambiguity, sense_combination)`: mean sense count and mean log sense
/// count over the tokens, both 0 for an empty list.
pub fn humor_features(tokens: &[String], inv: &SenseInventory) -> (f64, f64) {
    if tokens.is_empty() {
        return (0.0, 0.0);
    }
    let n = tokens.len() as f64;
    let (sum, log_sum) = tokens.iter().fold((0.0, 0.0), |(s, l), t| {
        let c = f64::from(inv.count(t));
        (s + c, l + c.ln())
    });
    (sum / n, log_sum / n)
}

/// Calendar events with a keyword occurring as a whole token of the cleaned text.
pub fn joke_event_tags(joke: &Joke, cal: &EventCalendar) -> BTreeSet<String> {
    let tokens: HashSet<String> = clean_text(&joke.text).into_iter().collect();
    cal.entries
        .iter()
        .filter(|e| e.keywords.iter().any(|k| tokens.contains(k)))
        .map(|e| e.event_id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn joke(text: &str) -> Joke {
        Joke {
            joke_id: "j".into(),
            text: text.into(),
            category: "c".into(),
            joke_type: "t".into(),
            event_tags: BTreeSet::new(),
        }
    }

    #[test]
    fn stopword_list_size() {
        let n = stopwords().len();
        assert!((110..=140).contains(&n), "{n}");
        for w in ["why", "did", "the", "s"] {
            assert!(stopwords().contains(w));
        }
    }

    #[test]
    fn cleaning_examples() {
        assert_eq!(clean_text("Why did the chicken cross the road?"), ["chicken", "cross", "road"]);
        assert!(clean_text("").is_empty());
        assert_eq!(clean_text("Santa's sleigh!"), ["santa", "sleigh"]);
    }

    #[test]
    fn humor_examples() {
        let inv = SenseInventory::new([("a".to_string(), 2), ("b".to_string(), 4)].into()).unwrap();
        assert_eq!(humor_features(&["zz".into(), "qq".into()], &inv), (1.0, 0.0));
        let (amb, comb) = humor_features(&["a".into(), "b".into()], &inv);
        assert_eq!(amb, 3.0);
        assert!((comb - (2f64.ln() + 4f64.ln()) / 2.0).abs() < 1e-15);
        assert_eq!(humor_features(&[], &inv), (0.0, 0.0));
    }

    #[test]
    fn zero_sense_count_rejected() {
        assert!(SenseInventory::new([("a".to_string(), 0)].into()).is_err());
    }

    #[test]
    fn bundled_inventory_loads() {
        let inv = SenseInventory::bundled();
        assert!(inv.count("bank") > 1);
        assert_eq!(inv.count("qwertyuiop"), 1);
    }

    #[test]
    fn event_tagging() {
        let cal = EventCalendar::default_calendar();
        assert_eq!(
            joke_event_tags(&joke("Santa lost his list"), &cal),
            BTreeSet::from(["christmas".to_string()])
        );
        assert!(joke_event_tags(&joke("A horse walks into a bar"), &cal).is_empty());
        assert!(joke_event_tags(&joke("I told my self a joke"), &cal).is_empty());
    }
}
