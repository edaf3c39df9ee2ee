//! Calendar arithmetic for the consolidation windows. All in UTC.

use chrono::{DateTime, Datelike, Duration, NaiveDate, SecondsFormat, TimeZone, Utc};

use crate::tmt::{TemporalInterval, Timestamp};

pub fn format_ts(ts: &Timestamp) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Parses an RFC 3339 timestamp and truncates it to whole seconds in UTC.
pub fn parse_ts(text: &str) -> Result<Timestamp, chrono::ParseError> {
    let parsed = DateTime::parse_from_rfc3339(text)?;
    Ok(truncate(parsed.with_timezone(&Utc)))
}

pub fn truncate(ts: Timestamp) -> Timestamp {
    Utc.timestamp_opt(ts.timestamp(), 0).single().expect("in range")
}

pub fn from_unix(secs: i64) -> Option<Timestamp> {
    Utc.timestamp_opt(secs, 0).single()
}

fn day_start(date: NaiveDate) -> Timestamp {
    Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight"))
}

fn last_second_before(date: NaiveDate) -> Timestamp {
    day_start(date) - Duration::seconds(1)
}

pub fn day_key(ts: &Timestamp) -> NaiveDate {
    ts.date_naive()
}

pub fn day_window(date: NaiveDate) -> TemporalInterval {
    TemporalInterval {
        start: day_start(date),
        end: last_second_before(date.succ_opt().expect("date in range")),
    }
}

/// ISO-8601 week, keyed by its Monday.
pub fn week_key(ts: &Timestamp) -> NaiveDate {
    let date = ts.date_naive();
    date - Duration::days(date.weekday().num_days_from_monday() as i64)
}

pub fn week_window(monday: NaiveDate) -> TemporalInterval {
    TemporalInterval {
        start: day_start(monday),
        end: last_second_before(monday + Duration::days(7)),
    }
}

pub fn week_label(monday: NaiveDate) -> String {
    let iso = monday.iso_week();
    format!("{}-W{:02}", iso.year(), iso.week())
}

/// Calendar month, keyed by its first day.
pub fn month_key(ts: &Timestamp) -> NaiveDate {
    let date = ts.date_naive();
    NaiveDate::from_ymd_opt(date.year(), date.month(), 1).expect("first of month")
}

pub fn month_window(first: NaiveDate) -> TemporalInterval {
    let next = if first.month() == 12 {
        NaiveDate::from_ymd_opt(first.year() + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(first.year(), first.month() + 1, 1)
    }
    .expect("month in range");
    TemporalInterval {
        start: day_start(first),
        end: last_second_before(next),
    }
}

pub fn month_label(first: NaiveDate) -> String {
    format!("{}-{:02}", first.year(), first.month())
}
