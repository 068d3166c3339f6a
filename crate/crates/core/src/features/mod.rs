//! Engineered features for the logistic-regression ranker.

mod schema;
mod text;
mod vectors;

pub use schema::{
    assemble_lr_features, time_features, write_feature_csv, FeatureSchema, FeatureVector, Normalizer, STD_FLOOR,
};
pub use text::{clean_text, humor_features, joke_event_tags, stopwords, SenseInventory};
pub use vectors::{
    cosine, joke_embedding_summary, similarity_features, user_profile_vectors, JokeProfile, JokeProfiles,
};
