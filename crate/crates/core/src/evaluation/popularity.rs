use std::collections::HashMap;

use crate::datamodel::{LabelChoice, LabelledInstance};
use crate::error::Result;
use crate::ranking::{RequestContext, Scorer};

/// Score of a joke never seen in training.
pub const POPULARITY_PRIOR: f64 = 0.5;

/// Non-personalised scorer: the Laplace-smoothed positive rate of each joke
/// in the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct PopularityScorer {
    rates: HashMap<String, f64>,
}

impl PopularityScorer {
    pub fn fit(train: &[LabelledInstance], choice: LabelChoice) -> Self {
        let mut counts: HashMap<&str, (u64, u64)> = HashMap::new();
        for inst in train {
            let c = counts.entry(&inst.event.joke_id).or_default();
            c.0 += u64::from(inst.label(choice));
            c.1 += 1;
        }
        let rates = counts
            .into_iter()
            .map(|(j, (pos, n))| (j.to_string(), (pos as f64 + 1.0) / (n as f64 + 2.0)))
            .collect();
        Self { rates }
    }

    pub fn score(&self, joke_id: &str) -> f64 {
        self.rates.get(joke_id).copied().unwrap_or(POPULARITY_PRIOR)
    }
}

impl Scorer for PopularityScorer {
    fn name(&self) -> &str {
        "popularity"
    }

    fn score_pairs(&self, pairs: &[(&RequestContext, &str)]) -> Result<Vec<f64>> {
        Ok(pairs.iter().map(|(_, j)| self.score(j)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{InteractionEvent, Timestamp, UserHistory};

    fn inst(user: &str, joke: &str, ret: u8) -> LabelledInstance {
        LabelledInstance {
            event: InteractionEvent {
                user_id: user.into(),
                joke_id: joke.into(),
                timestamp: Timestamp::from_unix(0),
                country_code: "US".into(),
            },
            label_reuse: 0,
            label_return: ret,
            sample_weight: 1.0,
            class_weight_reuse: 1.0,
            class_weight_return: 1.0,
        }
    }

    #[test]
    fn laplace_rates_and_prior() {
        let train = vec![inst("a", "j1", 1), inst("b", "j1", 1), inst("c", "j1", 1), inst("d", "j1", 0)];
        let p = PopularityScorer::fit(&train, LabelChoice::Return);
        assert_eq!(p.score("j1"), 4.0 / 6.0);
        assert_eq!(p.score("unseen"), 0.5);
        let ctx = |u: &str| RequestContext {
            user_id: u.into(),
            timestamp: Timestamp::from_unix(0),
            country_code: "US".into(),
            history: UserHistory::default(),
        };
        let (x, y) = (ctx("a"), ctx("zz"));
        assert_eq!(p.score_pairs(&[(&x, "j1")]).unwrap(), p.score_pairs(&[(&y, "j1")]).unwrap());
    }
}
