use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dl_model::DLConfig;
use crate::error::{Error, Result};

/// One random-search trial; `validation_auc` is `None` when it diverged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrial {
    pub trial: usize,
    pub config: DLConfig,
    pub validation_auc: Option<f64>,
    pub error: Option<String>,
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo.ln()..=hi.ln()).exp().clamp(lo, hi)
}

/// Draws a configuration from the searched ranges. `d_model` is rounded up
/// to a multiple of the head count; a non-empty `user_attn_depths` in the
/// base becomes "every layer".
pub fn sample_dl_config<R: Rng>(base: &DLConfig, rng: &mut R) -> DLConfig {
    let num_heads = rng.gen_range(2..=6);
    let num_layers = rng.gen_range(1..=6);
    let fc_layers = rng.gen_range(2..=5);
    let mut filters: Vec<usize> = sample(rng, 31, base.cnn_filter_sizes.len().clamp(1, 31))
        .into_iter()
        .map(|i| i + 2)
        .collect();
    filters.sort_unstable();
    DLConfig {
        d_model: base.d_model.div_ceil(num_heads) * num_heads,
        num_heads,
        num_layers,
        user_attn_depths: if base.user_attn_depths.is_empty() {
            Default::default()
        } else {
            (1..=num_layers).collect()
        },
        fc_layers,
        fc_sizes: (0..fc_layers).map(|_| rng.gen_range(16..=256)).collect(),
        keep_prob: rng.gen_range(0.5..=0.8),
        epsilon_smooth: rng.gen_range(0.1..=0.3),
        batch_size: rng.gen_range(32..=256),
        learning_rate: log_uniform(rng, 1e-5, 1e-3),
        cnn_filter_sizes: filters,
        cnn_num_filters: rng.gen_range(16..=128),
        ..base.clone()
    }
}

/// Samples `budget` configurations, scores each with `objective` (the
/// validation AUC of a trained model) and returns the best with the full
/// trial log. Diverged trials are logged and skipped.
pub fn random_search<F>(base: &DLConfig, budget: usize, seed: u64, mut objective: F) -> Result<(DLConfig, f64, Vec<SearchTrial>)>
where
    F: FnMut(&DLConfig) -> Result<f64>,
{
    if budget == 0 {
        return Err(Error::Config("random search budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(budget);
    let mut best: Option<(DLConfig, f64)> = None;
    for trial in 0..budget {
        let config = sample_dl_config(base, &mut rng);
        let (validation_auc, error) = match objective(&config) {
            Ok(auc) => (Some(auc), None),
            Err(e @ Error::Diverged { .. }) => (None, Some(e.to_string())),
            Err(e) => return Err(e),
        };
        log::info!("search trial {trial}: {validation_auc:?}");
        if let Some(auc) = validation_auc {
            if best.as_ref().is_none_or(|(_, b)| auc > *b) {
                best = Some((config.clone(), auc));
            }
        }
        trials.push(SearchTrial {
            trial,
            config,
            validation_auc,
            error,
        });
    }
    let (config, auc) = best.ok_or_else(|| Error::Degenerate("every search trial diverged".into()))?;
    Ok((config, auc, trials))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn budget_one_returns_its_config() {
        let base = DLConfig::default();
        let (cfg, auc, trials) = random_search(&base, 1, 4, |_| Ok(0.61)).unwrap();
        assert_eq!(trials.len(), 1);
        assert_eq!(trials[0].config, cfg);
        assert_eq!(auc, 0.61);
        assert!(random_search(&base, 0, 4, |_| Ok(0.5)).is_err());
    }

    #[test]
    fn same_seed_same_trials_and_divergence_handling() {
        let base = DLConfig::default();
        let mut calls = 0;
        let objective = |c: &DLConfig| Ok(c.learning_rate);
        let (_, _, a) = random_search(&base, 5, 9, objective).unwrap();
        let (_, _, b) = random_search(&base, 5, 9, objective).unwrap();
        assert_eq!(a, b);
        let (best, _, log) = random_search(&base, 4, 1, |c| {
            calls += 1;
            if calls % 2 == 0 {
                Err(Error::Diverged { epoch: 1, batch: 1 })
            } else {
                Ok(c.keep_prob)
            }
        })
        .unwrap();
        assert_eq!(log.iter().filter(|t| t.error.is_some()).count(), 2);
        assert!(log.iter().any(|t| t.config == best));
        let all_bad = random_search(&base, 2, 1, |_| Err(Error::Diverged { epoch: 1, batch: 1 }));
        assert!(all_bad.is_err());
    }

    proptest! {
        #[test]
        fn samples_stay_in_range(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for base in [DLConfig::default(), crate::dl_model::ModelVariant::DlCnn.dl_config(&DLConfig::default()).unwrap()] {
                let c = sample_dl_config(&base, &mut rng);
                prop_assert!(c.check_search_ranges().is_ok(), "{:?}", c.check_search_ranges());
            }
        }
    }
}
