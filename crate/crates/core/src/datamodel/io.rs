use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::types::{InteractionEvent, Joke, LabelledInstance};
use crate::error::{Error, Result};

/// Reads one JSON object per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Vec<Joke>> {
    let jokes: Vec<Joke> = read_jsonl(path)?;
    let mut seen = HashSet::with_capacity(jokes.len());
    for (i, j) in jokes.iter().enumerate() {
        if j.joke_id.is_empty() || j.text.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "joke_id and text must be non-empty".into(),
            });
        }
        if !seen.insert(j.joke_id.as_str()) {
            return Err(Error::DuplicateJoke(j.joke_id.clone()));
        }
    }
    Ok(jokes)
}

pub fn save_corpus(path: &Path, jokes: &[Joke]) -> Result<()> {
    write_jsonl(path, jokes)
}

/// Loads events and stable-sorts them by `(user_id, timestamp)`.
pub fn load_events(path: &Path) -> Result<Vec<InteractionEvent>> {
    let mut events: Vec<InteractionEvent> = read_jsonl(path)?;
    for (i, e) in events.iter().enumerate() {
        if e.country_code.chars().count() != 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("country_code `{}` is not a 2-letter code", e.country_code),
            });
        }
    }
    sort_events(&mut events);
    Ok(events)
}

pub fn sort_events(events: &mut [InteractionEvent]) {
    events.sort_by(|a, b| a.user_id.cmp(&b.user_id).then(a.timestamp.cmp(&b.timestamp)));
}

pub fn save_events(path: &Path, events: &[InteractionEvent]) -> Result<()> {
    write_jsonl(path, events)
}

pub fn load_labelled(path: &Path) -> Result<Vec<LabelledInstance>> {
    read_jsonl(path)
}

pub fn save_labelled(path: &Path, instances: &[LabelledInstance]) -> Result<()> {
    write_jsonl(path, instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::Timestamp;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn corpus_two_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "c.jsonl",
            "{\"joke_id\":\"j1\",\"text\":\"a b\",\"category\":\"sports\",\"joke_type\":\"pun\"}\n\
             {\"joke_id\":\"j2\",\"text\":\"c d\",\"category\":\"sci-fi\",\"joke_type\":\"limerick\"}\n",
        );
        let jokes = load_corpus(&p).unwrap();
        assert_eq!(jokes.len(), 2);
        assert_eq!(jokes[1].category, "sci-fi");
    }

    #[test]
    fn empty_corpus_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.jsonl", "");
        assert!(load_corpus(&p).unwrap().is_empty());
    }

    #[test]
    fn duplicate_joke_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let line = "{\"joke_id\":\"j1\",\"text\":\"a\",\"category\":\"x\",\"joke_type\":\"y\"}\n";
        let p = write(dir.path(), "c.jsonl", &line.repeat(2));
        let err = load_corpus(&p).unwrap_err();
        assert!(err.to_string().contains("j1"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "c.jsonl",
            "{\"joke_id\":\"j1\",\"text\":\"a\",\"category\":\"x\",\"joke_type\":\"y\"}\n{not json\n",
        );
        match load_corpus(&p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn table_one_rows_load_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let stamps = [
            "2019/05/03-17:51:10",
            "2019/05/03-17:53:10",
            "2019/05/06-21:41:09",
            "2019/05/06-21:44:19",
            "2019/05/07-20:34:19",
        ];
        // written out of order to exercise the sort
        let body: String = [2, 0, 4, 1, 3]
            .iter()
            .map(|&i| {
                format!(
                    "{{\"user_id\":\"u1\",\"joke_id\":\"j{i}\",\"timestamp\":\"{}\",\"country_code\":\"US\"}}\n",
                    stamps[i]
                )
            })
            .collect();
        let p = write(dir.path(), "e.jsonl", &body);
        let events = load_events(&p).unwrap();
        let got: Vec<String> = events.iter().map(|e| e.timestamp.to_string()).collect();
        assert_eq!(got, stamps);
    }

    #[test]
    fn interleaved_users_are_grouped() {
        let dir = tempfile::tempdir().unwrap();
        let body = "{\"user_id\":\"b\",\"joke_id\":\"j1\",\"timestamp\":\"2019/05/03-10:00:00\",\"country_code\":\"US\"}\n\
                    {\"user_id\":\"a\",\"joke_id\":\"j2\",\"timestamp\":\"2019/05/03-12:00:00\",\"country_code\":\"GB\"}\n\
                    {\"user_id\":\"b\",\"joke_id\":\"j3\",\"timestamp\":\"2019/05/03-09:00:00\",\"country_code\":\"US\"}\n\
                    {\"user_id\":\"a\",\"joke_id\":\"j4\",\"timestamp\":\"2019/05/03-11:00:00\",\"country_code\":\"GB\"}\n";
        let p = write(dir.path(), "e.jsonl", body);
        let ids: Vec<String> = load_events(&p).unwrap().into_iter().map(|e| e.joke_id).collect();
        assert_eq!(ids, ["j4", "j2", "j3", "j1"]);
    }

    #[test]
    fn bad_timestamp_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let body = "{\"user_id\":\"b\",\"joke_id\":\"j1\",\"timestamp\":\"2019/13/01-00:00:00\",\"country_code\":\"US\"}\n";
        let p = write(dir.path(), "e.jsonl", body);
        match load_events(&p).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 1);
                assert!(message.contains("2019/13/01"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn exact_timestamp_ties_keep_input_order() {
        let dir = tempfile::tempdir().unwrap();
        let body = "{\"user_id\":\"a\",\"joke_id\":\"first\",\"timestamp\":\"2019/05/03-10:00:00\",\"country_code\":\"US\"}\n\
                    {\"user_id\":\"a\",\"joke_id\":\"second\",\"timestamp\":\"2019/05/03-10:00:00\",\"country_code\":\"US\"}\n";
        let p = write(dir.path(), "e.jsonl", body);
        let ev = load_events(&p).unwrap();
        assert_eq!(ev[0].joke_id, "first");
        assert_eq!(ev[0].timestamp, Timestamp::parse("2019/05/03-10:00:00").unwrap());
    }
}
