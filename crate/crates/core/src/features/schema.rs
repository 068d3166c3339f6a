use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::vectors::{similarity_features, user_profile_vectors, JokeProfiles};
use crate::datamodel::{EventCalendar, InteractionEvent, Timestamp, UserHistory};
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-6;

/// `month`, `day`, `is_weekend`, then one `time_event=<id>` flag per
/// calendar entry.
pub fn time_features(t: Timestamp, country: &str, cal: &EventCalendar) -> Vec<(String, f64)> {
    let active = cal.active_events(t, country);
    let mut out = vec![
        ("month".to_string(), f64::from(t.month())),
        ("day".to_string(), f64::from(t.day())),
        ("is_weekend".to_string(), f64::from(u8::from(t.is_weekend()))),
    ];
    for e in &cal.entries {
        out.push((format!("time_event={}", e.event_id), f64::from(u8::from(active.contains(&e.event_id)))));
    }
    out
}

/// Column layout of the LR feature matrix. Vocabularies are fixed at
/// construction; unseen categorical values encode as all zeros.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub countries: Vec<String>,
    pub categories: Vec<String>,
    pub joke_types: Vec<String>,
    pub event_ids: Vec<String>,
    pub embedding_dim: usize,
}

impl FeatureSchema {
    pub fn new(
        countries: impl IntoIterator<Item = String>,
        categories: impl IntoIterator<Item = String>,
        joke_types: impl IntoIterator<Item = String>,
        cal: &EventCalendar,
        embedding_dim: usize,
    ) -> Self {
        let sorted = |it: &mut dyn Iterator<Item = String>| it.collect::<BTreeSet<_>>().into_iter().collect();
        Self {
            countries: sorted(&mut countries.into_iter()),
            categories: sorted(&mut categories.into_iter()),
            joke_types: sorted(&mut joke_types.into_iter()),
            event_ids: cal.event_ids(),
            embedding_dim,
        }
    }

    /// Vocabularies taken from the events' countries and the corpus.
    pub fn from_data(events: &[&InteractionEvent], profiles: &JokeProfiles, cal: &EventCalendar) -> Self {
        let corpus = profiles.corpus();
        Self::new(
            events.iter().map(|e| e.country_code.clone()),
            corpus.iter().map(|j| j.category.clone()),
            corpus.iter().map(|j| j.joke_type.clone()),
            cal,
            profiles.dim(),
        )
    }

    /// `(name, continuous)` for every column in order.
    pub fn columns(&self) -> Vec<(String, bool)> {
        let mut cols = Vec::new();
        cols.extend(self.countries.iter().map(|c| (format!("country={c}"), false)));
        cols.push(("month".into(), true));
        cols.push(("day".into(), true));
        cols.push(("is_weekend".into(), false));
        cols.extend(self.event_ids.iter().map(|e| (format!("time_event={e}"), false)));
        cols.extend(self.event_ids.iter().map(|e| (format!("joke_event={e}"), false)));
        cols.extend(self.event_ids.iter().map(|e| (format!("event_match={e}"), false)));
        cols.push(("ambiguity".into(), true));
        cols.push(("sense_combination".into(), true));
        cols.extend(self.categories.iter().map(|c| (format!("category={c}"), false)));
        cols.extend(self.joke_types.iter().map(|c| (format!("joke_type={c}"), false)));
        cols.extend((0..self.embedding_dim).map(|i| (format!("emb_avg_{i}"), true)));
        cols.extend((0..self.embedding_dim).map(|i| (format!("emb_max_{i}"), true)));
        cols.push(("sim_liked".into(), true));
        cols.push(("sim_disliked".into(), true));
        cols
    }

    pub fn names(&self) -> Vec<String> {
        self.columns().into_iter().map(|(n, _)| n).collect()
    }

    pub fn len(&self) -> usize {
        self.countries.len()
            + self.categories.len()
            + self.joke_types.len()
            + 3 * self.event_ids.len()
            + 2 * self.embedding_dim
            + 7
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// SHA-256 over the ordered column names.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for n in self.names() {
            h.update(n.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub fingerprint: String,
    pub normalized: bool,
}

fn one_hot(out: &mut Vec<f64>, vocab: &[String], value: &str) {
    out.extend(vocab.iter().map(|v| f64::from(u8::from(v == value))));
}

/// Raw (unnormalized) LR features of one request for one candidate joke.
pub fn assemble_lr_features(
    schema: &FeatureSchema,
    event: &InteractionEvent,
    hist: &UserHistory,
    profiles: &JokeProfiles,
    cal: &EventCalendar,
) -> Result<FeatureVector> {
    if profiles.dim() != schema.embedding_dim || cal.event_ids() != schema.event_ids {
        return Err(Error::SchemaMismatch {
            expected: format!("dim {} events {:?}", schema.embedding_dim, schema.event_ids),
            found: format!("dim {} events {:?}", profiles.dim(), cal.event_ids()),
        });
    }
    let joke = profiles.corpus().get(&event.joke_id)?;
    let profile = profiles.get(&event.joke_id)?;
    let mut v = Vec::with_capacity(schema.len());
    one_hot(&mut v, &schema.countries, &event.country_code);
    let time = time_features(event.timestamp, &event.country_code, cal);
    v.extend(time.iter().map(|(_, x)| x));
    let time_flags = &time[3..];
    let joke_flags: Vec<f64> = schema
        .event_ids
        .iter()
        .map(|e| f64::from(u8::from(profile.event_tags.contains(e))))
        .collect();
    v.extend(&joke_flags);
    v.extend(time_flags.iter().zip(&joke_flags).map(|((_, a), b)| a * b));
    v.push(profile.ambiguity);
    v.push(profile.sense_combination);
    one_hot(&mut v, &schema.categories, &joke.category);
    one_hot(&mut v, &schema.joke_types, &joke.joke_type);
    v.extend(&profile.avg);
    v.extend(&profile.max);
    let (liked, disliked) = user_profile_vectors(hist, profiles)?;
    let (sl, sd) = similarity_features(&profile.avg, &liked, &disliked);
    v.push(sl);
    v.push(sd);
    if v.len() != schema.len() {
        return Err(Error::SchemaMismatch {
            expected: format!("{} columns", schema.len()),
            found: format!("{} values", v.len()),
        });
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Invalid(format!("feature {i} is not finite")));
    }
    Ok(FeatureVector {
        values: v,
        fingerprint: schema.fingerprint(),
        normalized: false,
    })
}

/// Z-score statistics for the continuous columns, fitted on training rows.
/// Binary and one-hot columns pass through unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub fingerprint: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(schema: &FeatureSchema, rows: &[FeatureVector]) -> Result<Self> {
        let fingerprint = schema.fingerprint();
        if rows.is_empty() {
            return Err(Error::Degenerate("cannot fit normalization on zero rows".into()));
        }
        for r in rows {
            check_row(&fingerprint, r)?;
            if r.normalized {
                return Err(Error::Invalid("normalizer must be fitted on raw features".into()));
            }
        }
        let cols = schema.columns();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; cols.len()];
        let mut std = vec![1.0; cols.len()];
        for (j, (_, continuous)) in cols.iter().enumerate() {
            if !continuous {
                continue;
            }
            let m = rows.iter().map(|r| r.values[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r.values[j] - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = var.sqrt().max(STD_FLOOR);
        }
        Ok(Self { fingerprint, mean, std })
    }

    pub fn apply(&self, row: &mut FeatureVector) -> Result<()> {
        check_row(&self.fingerprint, row)?;
        if row.normalized {
            return Err(Error::Invalid("feature vector is already normalized".into()));
        }
        for ((x, m), s) in row.values.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = (*x - m) / s;
        }
        row.normalized = true;
        Ok(())
    }
}

fn check_row(fingerprint: &str, row: &FeatureVector) -> Result<()> {
    if row.fingerprint != fingerprint {
        return Err(Error::SchemaMismatch {
            expected: fingerprint.to_string(),
            found: row.fingerprint.clone(),
        });
    }
    Ok(())
}

/// Header of column names, then one CSV row per vector.
pub fn write_feature_csv(path: &Path, schema: &FeatureSchema, rows: &[FeatureVector]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Invalid(e.to_string()))?;
    let fp = schema.fingerprint();
    let io = |e: csv::Error| Error::Invalid(e.to_string());
    w.write_record(schema.names()).map_err(io)?;
    for r in rows {
        check_row(&fp, r)?;
        w.write_record(r.values.iter().map(|x| x.to_string())).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
