//! Weak labels from request timing, plus per-instance sample and class weights.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::datamodel::{InteractionEvent, LabelChoice, LabelledInstance, Timestamp, UserHistory};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    pub reuse_window_seconds: i64,
    pub return_min_seconds: i64,
    pub return_max_seconds: i64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            reuse_window_seconds: 300,
            return_min_seconds: 3600,
            return_max_seconds: 90_000,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reuse_window_seconds <= 0 || self.return_min_seconds <= 0 || self.return_max_seconds <= 0 {
            return Err(Error::Config("label windows must be positive".into()));
        }
        if self.return_min_seconds >= self.return_max_seconds {
            return Err(Error::Config("return_min_seconds must be below return_max_seconds".into()));
        }
        if self.reuse_window_seconds >= self.return_min_seconds {
            return Err(Error::Config("reuse_window_seconds must be below return_min_seconds".into()));
        }
        Ok(())
    }

    /// Seconds after a request at which its label under `choice` is final.
    pub fn horizon(&self, choice: LabelChoice) -> i64 {
        match choice {
            LabelChoice::Reuse => self.reuse_window_seconds,
            LabelChoice::Return => self.return_max_seconds,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleWeightConfig {
    pub a: f64,
    pub b: f64,
    pub time_unit_seconds: i64,
}

impl Default for SampleWeightConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 0.9,
            time_unit_seconds: 60,
        }
    }
}

impl SampleWeightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::Config(format!("sample weight a must be positive, got {}", self.a)));
        }
        if !(self.b > 0.0 && self.b < 1.0) {
            return Err(Error::Config(format!("sample weight b must lie in (0, 1), got {}", self.b)));
        }
        if self.time_unit_seconds <= 0 {
            return Err(Error::Config("time_unit_seconds must be positive".into()));
        }
        Ok(())
    }

    /// `a * b^(gap / unit) + 1`.
    pub fn weight_for_gap(&self, gap_seconds: i64) -> f64 {
        let units = gap_seconds as f64 / self.time_unit_seconds as f64;
        self.a * self.b.powf(units) + 1.0
    }
}

fn check_sorted(events: &[InteractionEvent]) -> Result<()> {
    if let Some(first) = events.first() {
        for (i, pair) in events.windows(2).enumerate() {
            if pair[1].user_id != first.user_id {
                return Err(Error::Invalid(format!(
                    "label_events expects one user, found `{}` and `{}`",
                    first.user_id,
                    pair[1].user_id
                )));
            }
            if pair[1].timestamp < pair[0].timestamp {
                return Err(Error::Unsorted(i + 1));
            }
        }
    }
    Ok(())
}

/// `(label_reuse, label_return)` for each request of a single user's
/// time-sorted log.
pub fn label_events(events: &[InteractionEvent], cfg: &LabelConfig) -> Result<Vec<(u8, u8)>> {
    check_sorted(events)?;
    let times: Vec<i64> = events.iter().map(|e| e.timestamp.unix()).collect();
    Ok(label_times(&times, cfg))
}

/// Labels for ascending unix times.
pub fn label_times(times: &[i64], cfg: &LabelConfig) -> Vec<(u8, u8)> {
    let mut out = Vec::with_capacity(times.len());
    let mut next_later = 0;
    let mut next_return = 0;
    for (i, &t) in times.iter().enumerate() {
        next_later = next_later.max(i);
        while next_later < times.len() && times[next_later] <= t {
            next_later += 1;
        }
        let reuse = next_later < times.len() && times[next_later] - t <= cfg.reuse_window_seconds;

        next_return = next_return.max(i);
        while next_return < times.len() && times[next_return] - t < cfg.return_min_seconds {
            next_return += 1;
        }
        let ret = next_return < times.len() && times[next_return] - t <= cfg.return_max_seconds;
        out.push((u8::from(reuse), u8::from(ret)));
    }
    out
}

/// Decay weight from the gap to the next request; the last request gets 1.0.
pub fn sample_weights(events: &[InteractionEvent], cfg: &SampleWeightConfig) -> Result<Vec<f64>> {
    check_sorted(events)?;
    let mut out: Vec<f64> = events
        .windows(2)
        .map(|p| cfg.weight_for_gap(p[1].timestamp.unix() - p[0].timestamp.unix()))
        .collect();
    if !events.is_empty() {
        out.push(1.0);
    }
    Ok(out)
}

/// Inverse-frequency weights `(w_neg, w_pos)` with `w_c = n / (2 n_c)`.
pub fn class_weights(labels: &[u8]) -> Result<(f64, f64)> {
    let n = labels.len();
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate(format!("{n} labels contain only one class")));
    }
    let n = n as f64;
    Ok((n / (2.0 * neg as f64), n / (2.0 * pos as f64)))
}

/// Recomputes both class-weight fields from the label counts of `instances`.
pub fn assign_class_weights(instances: &mut [LabelledInstance]) -> Result<()> {
    let reuse: Vec<u8> = instances.iter().map(|i| i.label_reuse).collect();
    let ret: Vec<u8> = instances.iter().map(|i| i.label_return).collect();
    let (rn, rp) = class_weights(&reuse)?;
    let (tn, tp) = class_weights(&ret)?;
    for inst in instances {
        inst.class_weight_reuse = if inst.label_reuse == 1 { rp } else { rn };
        inst.class_weight_return = if inst.label_return == 1 { tp } else { tn };
    }
    Ok(())
}

/// Labels and weights every event. `events` must be sorted by
/// `(user_id, timestamp)`, as produced by `load_events`.
pub fn label_all(
    events: &[InteractionEvent],
    label_cfg: &LabelConfig,
    weight_cfg: &SampleWeightConfig,
) -> Result<Vec<LabelledInstance>> {
    label_cfg.validate()?;
    weight_cfg.validate()?;
    let mut out = Vec::with_capacity(events.len());
    let mut seen = HashSet::new();
    let mut start = 0;
    while start < events.len() {
        let user = &events[start].user_id;
        let mut end = start + 1;
        while end < events.len() && events[end].user_id == *user {
            end += 1;
        }
        if !seen.insert(user.as_str()) {
            return Err(Error::Unsorted(start));
        }
        let slice = &events[start..end];
        let labels = label_events(slice, label_cfg).map_err(|e| match e {
            Error::Unsorted(i) => Error::Unsorted(start + i),
            e => e,
        })?;
        let weights = sample_weights(slice, weight_cfg)?;
        for ((event, (lr, lt)), w) in slice.iter().zip(labels).zip(weights) {
            out.push(LabelledInstance {
                event: event.clone(),
                label_reuse: lr,
                label_return: lt,
                sample_weight: w,
                class_weight_reuse: 1.0,
                class_weight_return: 1.0,
            });
        }
        start = end;
    }
    assign_class_weights(&mut out)?;
    Ok(out)
}

fn history_from<'a>(
    user_id: &str,
    instances: impl Iterator<Item = &'a LabelledInstance>,
    choice: LabelChoice,
) -> UserHistory {
    let mut latest: HashMap<&str, (Timestamp, usize, u8)> = HashMap::new();
    let mut country = String::new();
    for (seq, inst) in instances.enumerate() {
        latest.insert(&inst.event.joke_id, (inst.event.timestamp, seq, inst.label(choice)));
        country.clone_from(&inst.event.country_code);
    }
    let mut decided: Vec<(Timestamp, usize, &str, u8)> =
        latest.into_iter().map(|(j, (t, s, l))| (t, s, j, l)).collect();
    decided.sort_unstable();
    let mut hist = UserHistory {
        user_id: user_id.to_string(),
        country_code: country,
        ..UserHistory::default()
    };
    for (_, _, joke, label) in decided {
        if label == 1 {
            hist.liked_joke_ids.push(joke.to_string());
        } else {
            hist.disliked_joke_ids.push(joke.to_string());
        }
    }
    hist
}

/// Liked and disliked jokes per user; a repeated joke is placed by its most
/// recent label. Lists are ordered by the time of the deciding request.
pub fn build_user_histories(instances: &[LabelledInstance], choice: LabelChoice) -> BTreeMap<String, UserHistory> {
    let mut by_user: BTreeMap<&str, Vec<&LabelledInstance>> = BTreeMap::new();
    for inst in instances {
        by_user.entry(&inst.event.user_id).or_default().push(inst);
    }
    by_user
        .into_iter()
        .map(|(user, mut list)| {
            list.sort_by_key(|i| i.event.timestamp);
            (user.to_string(), history_from(user, list.into_iter(), choice))
        })
        .collect()
}

/// Point-in-time histories: a query at `t` sees only instances whose label
/// was already final at `t`, so features never peek at the future.
#[derive(Clone, Debug)]
pub struct HistoryIndex {
    choice: LabelChoice,
    horizon: i64,
    by_user: HashMap<String, Vec<LabelledInstance>>,
}

impl HistoryIndex {
    pub fn new(instances: &[LabelledInstance], choice: LabelChoice, cfg: &LabelConfig) -> Self {
        let mut by_user: HashMap<String, Vec<LabelledInstance>> = HashMap::new();
        for inst in instances {
            by_user.entry(inst.event.user_id.clone()).or_default().push(inst.clone());
        }
        for list in by_user.values_mut() {
            list.sort_by_key(|i| i.event.timestamp);
        }
        Self {
            choice,
            horizon: cfg.horizon(choice),
            by_user,
        }
    }

    pub fn choice(&self) -> LabelChoice {
        self.choice
    }

    /// History of `user_id` as known at `t`; `country` fills in users
    /// without resolved requests.
    pub fn at(&self, user_id: &str, t: Timestamp, country: &str) -> UserHistory {
        let Some(list) = self.by_user.get(user_id) else {
            return UserHistory {
                user_id: user_id.to_string(),
                country_code: country.to_string(),
                ..UserHistory::default()
            };
        };
        let cutoff = t.unix() - self.horizon;
        let n = list.partition_point(|i| i.event.timestamp.unix() <= cutoff);
        let mut hist = history_from(user_id, list[..n].iter(), self.choice);
        hist.country_code = country.to_string();
        hist
    }

    /// Every joke the user requested, at any time.
    pub fn heard(&self, user_id: &str) -> Vec<&str> {
        self.by_user
            .get(user_id)
            .map(|l| l.iter().map(|i| i.event.joke_id.as_str()).collect())
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TABLE_ONE: [&str; 5] = [
        "2019/05/03-17:51:10",
        "2019/05/03-17:53:10",
        "2019/05/06-21:41:09",
        "2019/05/06-21:44:19",
        "2019/05/07-20:34:19",
    ];

    fn events(user: &str, times: &[i64]) -> Vec<InteractionEvent> {
        times
            .iter()
            .enumerate()
            .map(|(i, &t)| InteractionEvent {
                user_id: user.into(),
                joke_id: format!("j{i}"),
                timestamp: Timestamp::from_unix(t),
                country_code: "US".into(),
            })
            .collect()
    }

    fn table_one() -> Vec<InteractionEvent> {
        let times: Vec<i64> = TABLE_ONE.iter().map(|s| Timestamp::parse(s).unwrap().unix()).collect();
        events("u", &times)
    }

    fn brute_force(times: &[i64], cfg: &LabelConfig) -> Vec<(u8, u8)> {
        (0..times.len())
            .map(|i| {
                let mut r = 0;
                let mut t = 0;
                for j in i + 1..times.len() {
                    let d = times[j] - times[i];
                    if d > 0 && d <= cfg.reuse_window_seconds {
                        r = 1;
                    }
                    if d >= cfg.return_min_seconds && d <= cfg.return_max_seconds {
                        t = 1;
                    }
                }
                (r, t)
            })
            .collect()
    }

    #[test]
    fn table_one_labels() {
        let got = label_events(&table_one(), &LabelConfig::default()).unwrap();
        assert_eq!(got, vec![(1, 0), (0, 0), (1, 1), (0, 1), (0, 0)]);
    }

    #[test]
    fn single_event_is_negative() {
        assert_eq!(label_events(&events("u", &[5]), &LabelConfig::default()).unwrap(), vec![(0, 0)]);
    }

    #[test]
    fn unsorted_input_is_rejected() {
        let err = label_events(&events("u", &[10, 5]), &LabelConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Unsorted(1)));
    }

    #[test]
    fn window_bounds_are_inclusive() {
        let cfg = LabelConfig::default();
        assert_eq!(label_times(&[0, 300], &cfg)[0], (1, 0));
        assert_eq!(label_times(&[0, 301], &cfg)[0], (0, 0));
        assert_eq!(label_times(&[0, 3600], &cfg)[0], (0, 1));
        assert_eq!(label_times(&[0, 90_000], &cfg)[0], (0, 1));
        assert_eq!(label_times(&[0, 90_001], &cfg)[0], (0, 0));
        assert_eq!(label_times(&[0, 0], &cfg)[0], (0, 0));
    }

    #[test]
    fn sample_weight_examples() {
        let cfg = SampleWeightConfig {
            a: 1.0,
            b: 0.5,
            time_unit_seconds: 60,
        };
        let w = sample_weights(&events("u", &[0, 0, 120]), &cfg).unwrap();
        assert_eq!(w, vec![2.0, 1.25, 1.0]);
    }

    #[test]
    fn class_weight_examples() {
        let mut labels = vec![0u8; 50];
        labels.extend([1u8; 50]);
        assert_eq!(class_weights(&labels).unwrap(), (1.0, 1.0));
        let mut labels = vec![0u8; 80];
        labels.extend([1u8; 20]);
        assert_eq!(class_weights(&labels).unwrap(), (0.625, 2.5));
        assert!(matches!(class_weights(&[1, 1, 1]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn table_one_histories() {
        let inst = label_all(&table_one(), &LabelConfig::default(), &SampleWeightConfig::default()).unwrap();
        let h = &build_user_histories(&inst, LabelChoice::Reuse)["u"];
        assert_eq!(h.liked_joke_ids, ["j0", "j2"]);
        assert_eq!(h.disliked_joke_ids, ["j1", "j3", "j4"]);
        assert!(build_user_histories(&[], LabelChoice::Reuse).is_empty());
    }

    #[test]
    fn most_recent_label_wins() {
        let inst: Vec<LabelledInstance> = events("u", &[0, 10_000])
            .into_iter()
            .zip([0u8, 1])
            .map(|(mut e, label)| {
                e.joke_id = "same".into();
                LabelledInstance {
                    event: e,
                    label_reuse: label,
                    label_return: 0,
                    sample_weight: 1.0,
                    class_weight_reuse: 1.0,
                    class_weight_return: 1.0,
                }
            })
            .collect();
        let h = &build_user_histories(&inst, LabelChoice::Reuse)["u"];
        assert_eq!(h.liked_joke_ids, ["same"]);
        assert!(h.disliked_joke_ids.is_empty());
    }

    #[test]
    fn history_index_hides_unresolved_requests() {
        let inst = label_all(&table_one(), &LabelConfig::default(), &SampleWeightConfig::default()).unwrap();
        let idx = HistoryIndex::new(&inst, LabelChoice::Reuse, &LabelConfig::default());
        let t3 = Timestamp::parse(TABLE_ONE[3]).unwrap();
        // Row 3 (21:41:09) resolves at 21:46:09, after row 4's request.
        let h = idx.at("u", t3, "US");
        assert_eq!(h.liked_joke_ids, ["j0"]);
        assert_eq!(h.disliked_joke_ids, ["j1"]);
        let empty = idx.at("nobody", t3, "GB");
        assert!(empty.liked_joke_ids.is_empty());
        assert_eq!(empty.country_code, "GB");
    }

    #[test]
    fn label_all_requires_grouped_users() {
        let mut ev = events("a", &[0, 100]);
        ev.extend(events("b", &[0, 100_000]));
        ev.extend(events("a", &[200]));
        assert!(label_all(&ev, &LabelConfig::default(), &SampleWeightConfig::default()).is_err());
    }

    #[test]
    fn matches_all_pairs_scan() {
        let mut rng = 12345u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng >> 33) as i64
        };
        for _ in 0..20 {
            let mut times: Vec<i64> = (0..300).map(|_| next() % 400_000).collect();
            times.sort_unstable();
            let cfg = LabelConfig::default();
            assert_eq!(label_times(&times, &cfg), brute_force(&times, &cfg));
        }
    }

    fn sorted_times() -> impl Strategy<Value = Vec<i64>> {
        prop::collection::vec(0i64..200_000, 1..60).prop_map(|mut v| {
            v.sort_unstable();
            v
        })
    }

    proptest! {
        #[test]
        fn shrinking_reuse_window_only_removes_positives(times in sorted_times(), w in 1i64..300) {
            let wide = LabelConfig::default();
            let narrow = LabelConfig { reuse_window_seconds: w, ..wide };
            for (a, b) in label_times(&times, &wide).iter().zip(label_times(&times, &narrow)) {
                prop_assert!(b.0 <= a.0);
            }
        }

        #[test]
        fn shift_invariance(times in sorted_times(), shift in -1_000_000i64..1_000_000) {
            let cfg = LabelConfig::default();
            let wcfg = SampleWeightConfig::default();
            let shifted: Vec<i64> = times.iter().map(|t| t + shift).collect();
            prop_assert_eq!(label_times(&times, &cfg), label_times(&shifted, &cfg));
            let a = sample_weights(&events("u", &times), &wcfg).unwrap();
            let b = sample_weights(&events("u", &shifted), &wcfg).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn order_independent_after_sort(times in sorted_times(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = times.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            shuffled.sort_unstable();
            let cfg = LabelConfig::default();
            prop_assert_eq!(label_times(&times, &cfg), label_times(&shuffled, &cfg));
        }

        #[test]
        fn labels_match_brute_force(times in sorted_times()) {
            let cfg = LabelConfig::default();
            prop_assert_eq!(label_times(&times, &cfg), brute_force(&times, &cfg));
        }

        #[test]
        fn weights_decrease_toward_one(g1 in 0i64..5_000, extra in 1i64..5_000) {
            let cfg = SampleWeightConfig::default();
            let w1 = cfg.weight_for_gap(g1);
            let w2 = cfg.weight_for_gap(g1 + extra);
            prop_assert!(w2 < w1);
            prop_assert!(w2 > 1.0);
        }
    }
}
