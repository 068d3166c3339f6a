use serde::{Deserialize, Serialize};

use crate::datamodel::{LabelledInstance, Timestamp};
use crate::error::{Error, Result};

/// Time boundaries: training is `t < validation_start`, validation is
/// `validation_start <= t < test_start`, test is `t >= test_start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub validation_start: Timestamp,
    pub test_start: Timestamp,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<LabelledInstance>,
    pub validation: Vec<LabelledInstance>,
    pub test: Vec<LabelledInstance>,
}

impl SplitSpec {
    pub fn new(validation_start: Timestamp, test_start: Timestamp) -> Result<Self> {
        if validation_start >= test_start {
            return Err(Error::Config(format!(
                "split boundaries must increase: {validation_start} >= {test_start}"
            )));
        }
        Ok(Self {
            validation_start,
            test_start,
        })
    }

    /// Boundaries at the timestamps closest to the given cumulative
    /// fractions of instances, so each split receives about that share.
    pub fn from_fractions(instances: &[LabelledInstance], train: f64, validation: f64) -> Result<Self> {
        if !(train > 0.0 && validation > 0.0 && train + validation < 1.0) {
            return Err(Error::Config(format!(
                "split fractions {train} and {validation} must be positive with a non-empty test share"
            )));
        }
        let mut times: Vec<i64> = instances.iter().map(|i| i.event.timestamp.unix()).collect();
        times.sort_unstable();
        let at = |f: f64| -> Result<i64> {
            times
                .get(((times.len() as f64) * f).floor() as usize)
                .copied()
                .ok_or_else(|| Error::Degenerate("too few instances to split".into()))
        };
        Self::new(Timestamp::from_unix(at(train)?), Timestamp::from_unix(at(train + validation)?))
    }

    /// Partitions the instances, keeping their relative order, and checks
    /// that every split is non-empty and time-ordered.
    pub fn split(&self, instances: &[LabelledInstance]) -> Result<Splits> {
        let mut out = Splits::default();
        for inst in instances {
            let t = inst.event.timestamp;
            let dst = if t < self.validation_start {
                &mut out.train
            } else if t < self.test_start {
                &mut out.validation
            } else {
                &mut out.test
            };
            dst.push(inst.clone());
        }
        let span = |v: &[LabelledInstance]| {
            let min = v.iter().map(|i| i.event.timestamp).min();
            let max = v.iter().map(|i| i.event.timestamp).max();
            min.zip(max)
        };
        let (Some((_, train_max)), Some((val_min, val_max)), Some((test_min, _))) =
            (span(&out.train), span(&out.validation), span(&out.test))
        else {
            return Err(Error::Degenerate(format!(
                "empty split: {} train, {} validation, {} test",
                out.train.len(),
                out.validation.len(),
                out.test.len()
            )));
        };
        assert!(train_max < val_min && val_max < test_min, "time split is not ordered");
        Ok(out)
    }
}
