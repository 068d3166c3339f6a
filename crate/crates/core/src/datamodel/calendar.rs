use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::types::Timestamp;
use crate::error::{Error, Result};

pub const MAX_PROXIMITY_DAYS: u32 = 45;
const DEFAULT_CALENDAR: &str = include_str!("../../resources/calendar.json");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateRule {
    /// Same month and day every year.
    Fixed { month: u32, day: u32 },
    /// Movable events: one explicit date per year.
    PerYear(BTreeMap<i32, NaiveDate>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CountriesRepr", into = "CountriesRepr")]
pub enum Countries {
    All,
    Only(BTreeSet<String>),
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum CountriesRepr {
    Word(String),
    List(Vec<String>),
}

impl TryFrom<CountriesRepr> for Countries {
    type Error = String;

    fn try_from(r: CountriesRepr) -> std::result::Result<Self, String> {
        match r {
            CountriesRepr::Word(w) if w == "all" => Ok(Countries::All),
            CountriesRepr::Word(w) => Err(format!("countries must be \"all\" or a list, got \"{w}\"")),
            CountriesRepr::List(v) => Ok(Countries::Only(v.into_iter().collect())),
        }
    }
}

impl From<Countries> for CountriesRepr {
    fn from(c: Countries) -> Self {
        match c {
            Countries::All => CountriesRepr::Word("all".into()),
            Countries::Only(s) => CountriesRepr::List(s.into_iter().collect()),
        }
    }
}

impl Countries {
    pub fn matches(&self, country: &str) -> bool {
        match self {
            Countries::All => true,
            Countries::Only(s) => s.contains(country),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarEntry {
    pub event_id: String,
    pub keywords: Vec<String>,
    pub date: DateRule,
    pub countries: Countries,
    pub proximity_days: u32,
}

impl CalendarEntry {
    /// Days from `date` to the nearest occurrence of this event.
    pub fn distance_days(&self, date: NaiveDate) -> Option<i64> {
        let candidates: Vec<NaiveDate> = match &self.date {
            DateRule::Fixed { month, day } => (date.year() - 1..=date.year() + 1)
                .filter_map(|y| NaiveDate::from_ymd_opt(y, *month, *day))
                .collect(),
            DateRule::PerYear(dates) => dates.values().copied().collect(),
        };
        candidates
            .into_iter()
            .map(|d| (date - d).num_days().abs())
            .min()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCalendar {
    pub entries: Vec<CalendarEntry>,
}

impl EventCalendar {
    pub fn new(entries: Vec<CalendarEntry>) -> Result<Self> {
        let cal = Self { entries };
        cal.validate()?;
        Ok(cal)
    }

    /// The bundled calendar: Christmas, Halloween, New Year and US Mother's Day.
    pub fn default_calendar() -> Self {
        Self::from_json(DEFAULT_CALENDAR).expect("bundled calendar is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cal: Self = serde_json::from_str(text)?;
        cal.validate()?;
        Ok(cal)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for e in &self.entries {
            if !ids.insert(e.event_id.as_str()) {
                return Err(Error::Config(format!("duplicate calendar event `{}`", e.event_id)));
            }
            if e.keywords.is_empty() {
                return Err(Error::Config(format!("event `{}` has no keywords", e.event_id)));
            }
            if let Some(k) = e.keywords.iter().find(|k| k.is_empty() || k.to_lowercase() != **k) {
                return Err(Error::Config(format!(
                    "event `{}` keyword `{k}` must be non-empty lowercase",
                    e.event_id
                )));
            }
            if e.proximity_days > MAX_PROXIMITY_DAYS {
                return Err(Error::Config(format!(
                    "event `{}` proximity {} exceeds {MAX_PROXIMITY_DAYS} days",
                    e.event_id, e.proximity_days
                )));
            }
            if let DateRule::Fixed { month, day } = e.date {
                // 2020 is a leap year, so Feb 29 is accepted.
                if NaiveDate::from_ymd_opt(2020, month, day).is_none() {
                    return Err(Error::Config(format!("event `{}` has invalid date {month}/{day}", e.event_id)));
                }
            }
        }
        Ok(())
    }

    pub fn event_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.event_id.clone()).collect()
    }

    /// Events whose nearest occurrence lies within their proximity window of
    /// `t` and whose country scope includes `country`.
    pub fn active_events(&self, t: Timestamp, country: &str) -> BTreeSet<String> {
        let date = t.date();
        self.entries
            .iter()
            .filter(|e| e.countries.matches(country))
            .filter(|e| e.distance_days(date).is_some_and(|d| d <= i64::from(e.proximity_days)))
            .map(|e| e.event_id.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(y: i32, m: u32, d: u32) -> Timestamp {
        Timestamp::from_ymd_hms(y, m, d, 12, 0, 0).unwrap()
    }

    #[test]
    fn default_calendar_loads() {
        let cal = EventCalendar::default_calendar();
        assert_eq!(cal.entries.len(), 4);
    }

    #[test]
    fn christmas_window() {
        let cal = EventCalendar::default_calendar();
        assert!(cal.active_events(at(2019, 12, 20), "GB").contains("christmas"));
        assert!(cal.active_events(at(2019, 7, 1), "GB").is_empty());
    }

    #[test]
    fn country_filter() {
        let cal = EventCalendar::default_calendar();
        assert!(cal.active_events(at(2019, 5, 10), "US").contains("mothers_day_us"));
        assert!(!cal.active_events(at(2019, 5, 10), "GB").contains("mothers_day_us"));
    }

    #[test]
    fn movable_date_follows_year() {
        let cal = EventCalendar::default_calendar();
        // 2019-05-12 vs 2020-05-10: May 19 is 7 days after in 2019, 9 in 2020.
        assert!(cal.active_events(at(2019, 5, 19), "US").contains("mothers_day_us"));
        assert!(!cal.active_events(at(2020, 5, 19), "US").contains("mothers_day_us"));
    }

    #[test]
    fn new_year_wraps_across_years() {
        let cal = EventCalendar::default_calendar();
        assert!(cal.active_events(at(2019, 12, 29), "AU").contains("new_year"));
    }

    #[test]
    fn rejects_large_proximity_and_empty_keywords() {
        let mut cal = EventCalendar::default_calendar();
        cal.entries[0].proximity_days = 46;
        assert!(EventCalendar::new(cal.entries.clone()).is_err());
        cal.entries[0].proximity_days = 10;
        cal.entries[0].keywords.clear();
        assert!(EventCalendar::new(cal.entries).is_err());
    }

    #[test]
    fn countries_round_trip() {
        let cal = EventCalendar::default_calendar();
        let text = serde_json::to_string(&cal).unwrap();
        assert_eq!(EventCalendar::from_json(&text).unwrap(), cal);
    }

    proptest::proptest! {
        #[test]
        fn membership_is_symmetric_around_event(d in 0i64..60, year in 2018i32..2026) {
            let cal = EventCalendar::default_calendar();
            let ts = |nd: NaiveDate| Timestamp::from_ymd_hms(nd.year(), nd.month(), nd.day(), 0, 0, 0).unwrap();
            for e in &cal.entries {
                let center = match &e.date {
                    DateRule::Fixed { month, day } => NaiveDate::from_ymd_opt(year, *month, *day).unwrap(),
                    DateRule::PerYear(dates) => match dates.get(&year) {
                        Some(d) => *d,
                        None => continue,
                    },
                };
                let before = ts(center - chrono::Duration::days(d));
                let after = ts(center + chrono::Duration::days(d));
                proptest::prop_assert_eq!(
                    cal.active_events(before, "US").contains(&e.event_id),
                    cal.active_events(after, "US").contains(&e.event_id),
                    "{} at +-{} days", e.event_id, d
                );
            }
        }
    }
}
