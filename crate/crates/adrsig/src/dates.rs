//! Calendar days as plain integers.
//!
//! Every record date is converted to a day number once at load time so that
//! window arithmetic in the counting passes is integer add/compare, nothing
//! else. The unit is days from the Common Era as defined by
//! [`chrono::Datelike::num_days_from_ce`].

use chrono::{Datelike, NaiveDate};

/// One calendar day, counted from 0001-01-01 (day 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Day(pub i32);

impl Day {
    /// Parse an ISO 8601 calendar date (`YYYY-MM-DD`).
    pub fn parse_iso(s: &str) -> Option<Day> {
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .ok()
            .map(|d| Day(d.num_days_from_ce()))
    }

    pub fn from_date(d: NaiveDate) -> Day {
        Day(d.num_days_from_ce())
    }

    pub fn to_date(self) -> NaiveDate {
        NaiveDate::from_num_days_from_ce_opt(self.0).expect("day number out of calendar range")
    }

    /// ISO 8601 rendering, inverse of [`Day::parse_iso`].
    pub fn to_iso(self) -> String {
        self.to_date().format("%Y-%m-%d").to_string()
    }

    pub fn year(self) -> i32 {
        self.to_date().year()
    }

    pub fn offset(self, days: i32) -> Day {
        Day(self.0 + days)
    }

    /// Signed whole days from `earlier` to `self`.
    pub fn days_since(self, earlier: Day) -> i32 {
        self.0 - earlier.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iso_round_trip() {
        for s in ["2000-01-01", "1970-01-01", "2004-02-29", "1999-12-31"] {
            let d = Day::parse_iso(s).unwrap();
            assert_eq!(d.to_iso(), s);
        }
    }

    #[test]
    fn rejects_malformed_dates() {
        for s in ["2000-13-01", "2001-02-29", "20000101", "2000-1-1x", ""] {
            assert!(Day::parse_iso(s).is_none(), "{s:?} should not parse");
        }
    }

    #[test]
    fn day_arithmetic_crosses_months() {
        let d = Day::parse_iso("2000-01-31").unwrap();
        assert_eq!(d.offset(1).to_iso(), "2000-02-01");
        assert_eq!(d.offset(30).to_iso(), "2000-03-01");
        assert_eq!(d.offset(30).days_since(d), 30);
    }
}
