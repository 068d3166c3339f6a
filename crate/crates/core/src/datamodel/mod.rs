//! Corpus and event types, JSONL persistence, the sub-word embedding table
//! and the event calendar.

mod calendar;
mod embedding;
mod io;
mod types;

pub use calendar::{CalendarEntry, Countries, DateRule, EventCalendar, MAX_PROXIMITY_DAYS};
pub use embedding::{
    char_ngrams, fnv1a64, EmbeddingSpec, EmbeddingTable, DEFAULT_DIM, DEFAULT_NGRAM_RANGE, DEFAULT_NUM_BUCKETS,
};
pub use io::{
    load_corpus, load_events, load_labelled, read_jsonl, save_corpus, save_events, save_labelled, sort_events,
    write_jsonl,
};
pub use types::{
    Corpus, InteractionEvent, Joke, LabelChoice, LabelledInstance, Timestamp, UserHistory, TIMESTAMP_FORMAT,
};
