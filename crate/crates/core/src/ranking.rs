//! Point-wise ranking shared by every scorer.

use std::cmp::Ordering;

use crate::datamodel::{Timestamp, UserHistory};
use crate::error::{Error, Result};

/// Who is asking and when, with the history known at that moment.
#[derive(Clone, Debug, PartialEq)]
pub struct RequestContext {
    pub user_id: String,
    pub timestamp: Timestamp,
    pub country_code: String,
    pub history: UserHistory,
}

/// Anything that assigns a relevance score to a joke in a request context.
pub trait Scorer {
    fn name(&self) -> &str;

    /// Scores each `(context, joke_id)` pair; higher means more likely liked.
    fn score_pairs(&self, pairs: &[(&RequestContext, &str)]) -> Result<Vec<f64>>;
}

/// Descending score, ties by ascending joke id.
pub fn compare_scored(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0))
}

pub fn order_scored(mut scored: Vec<(String, f64)>) -> Vec<(String, f64)> {
    scored.sort_by(compare_scored);
    scored
}

/// Scores every candidate in the same context and sorts them.
pub fn rank_candidates(scorer: &dyn Scorer, ctx: &RequestContext, candidates: &[String]) -> Result<Vec<(String, f64)>> {
    if candidates.is_empty() {
        return Err(Error::Invalid("rank_candidates needs at least one candidate".into()));
    }
    let pairs: Vec<(&RequestContext, &str)> = candidates.iter().map(|c| (ctx, c.as_str())).collect();
    let scores = scorer.score_pairs(&pairs)?;
    Ok(order_scored(candidates.iter().cloned().zip(scores).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Lookup(Vec<(String, f64)>);

    impl Scorer for Lookup {
        fn name(&self) -> &str {
            "lookup"
        }

        fn score_pairs(&self, pairs: &[(&RequestContext, &str)]) -> Result<Vec<f64>> {
            Ok(pairs
                .iter()
                .map(|(_, j)| self.0.iter().find(|(k, _)| k == j).map_or(0.0, |(_, s)| *s))
                .collect())
        }
    }

    fn ctx() -> RequestContext {
        RequestContext {
            user_id: "u".into(),
            timestamp: Timestamp::from_unix(0),
            country_code: "US".into(),
            history: UserHistory::default(),
        }
    }

    #[test]
    fn single_and_tied_candidates() {
        let s = Lookup(vec![("b".into(), 0.5), ("a".into(), 0.5), ("c".into(), 0.9)]);
        let one = rank_candidates(&s, &ctx(), &["b".into()]).unwrap();
        assert_eq!(one, vec![("b".to_string(), 0.5)]);
        let ids: Vec<String> = rank_candidates(&s, &ctx(), &["b".into(), "a".into(), "c".into()])
            .unwrap()
            .into_iter()
            .map(|(j, _)| j)
            .collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert!(rank_candidates(&s, &ctx(), &[]).is_err());
    }

    proptest! {
        #[test]
        fn ranking_is_an_order_independent_permutation(
            scores in prop::collection::vec(0u8..4, 1..12),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let table: Vec<(String, f64)> =
                scores.iter().enumerate().map(|(i, s)| (format!("j{i:02}"), f64::from(*s))).collect();
            let s = Lookup(table.clone());
            let mut ids: Vec<String> = table.iter().map(|(j, _)| j.clone()).collect();
            let a = rank_candidates(&s, &ctx(), &ids).unwrap();
            ids.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = rank_candidates(&s, &ctx(), &ids).unwrap();
            prop_assert_eq!(&a, &b);
            let mut got: Vec<String> = a.into_iter().map(|(j, _)| j).collect();
            got.sort();
            ids.sort();
            prop_assert_eq!(got, ids);
        }
    }
}
