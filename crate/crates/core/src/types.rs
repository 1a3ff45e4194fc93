//! Data model shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds since the Unix epoch, UTC.
pub type UtcSeconds = f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Channel {
    Eda,
    Bvp,
    AccX,
    AccY,
    AccZ,
    AccMag,
    St,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Eda => "EDA",
            Channel::Bvp => "BVP",
            Channel::AccX => "ACC_X",
            Channel::AccY => "ACC_Y",
            Channel::AccZ => "ACC_Z",
            Channel::AccMag => "ACC_MAG",
            Channel::St => "ST",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A uniformly sampled channel anchored to UTC.
///
/// Sample `i` is taken at `start_time + i / sample_rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTrace {
    pub channel: Channel,
    pub start_time: UtcSeconds,
    pub sample_rate: f64,
    pub values: Vec<f64>,
}

impl SensorTrace {
    pub fn new(channel: Channel, start_time: UtcSeconds, sample_rate: f64, values: Vec<f64>) -> Result<Self> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::validation(format!(
                "{channel}: sample rate must be positive, got {sample_rate}"
            )));
        }
        if !start_time.is_finite() {
            return Err(Error::validation(format!("{channel}: start time is not finite")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("{channel}: sample {i} is not finite")));
        }
        Ok(SensorTrace {
            channel,
            start_time,
            sample_rate,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.values.len() as f64 / self.sample_rate
    }

    pub fn end_time(&self) -> UtcSeconds {
        self.start_time + self.duration()
    }

    pub fn timestamp(&self, i: usize) -> UtcSeconds {
        self.start_time + i as f64 / self.sample_rate
    }

    /// Same channel and timing, new values.
    pub fn with_values(&self, values: Vec<f64>) -> SensorTrace {
        SensorTrace {
            channel: self.channel,
            start_time: self.start_time,
            sample_rate: self.sample_rate,
            values,
        }
    }

    /// Keeps the samples whose timestamps fall in `[t0, t1)`.
    pub fn clip(&self, t0: UtcSeconds, t1: UtcSeconds) -> SensorTrace {
        let first = ((t0 - self.start_time) * self.sample_rate).ceil().max(0.0) as usize;
        let last = ((t1 - self.start_time) * self.sample_rate).ceil().max(0.0) as usize;
        let first = first.min(self.values.len());
        let last = last.clamp(first, self.values.len());
        SensorTrace {
            channel: self.channel,
            start_time: self.timestamp(first),
            sample_rate: self.sample_rate,
            values: self.values[first..last].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Student,
    Teacher,
}

/// One continuous recording: every trace shares the same start time.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start_time: UtcSeconds,
    pub traces: Vec<SensorTrace>,
}

impl Segment {
    pub fn trace(&self, channel: Channel) -> Option<&SensorTrace> {
        self.traces.iter().find(|t| t.channel == channel)
    }

    /// Shortest channel duration in seconds.
    pub fn duration(&self) -> f64 {
        if self.traces.is_empty() {
            return 0.0;
        }
        self.traces
            .iter()
            .map(SensorTrace::duration)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn end_time(&self) -> UtcSeconds {
        self.start_time + self.duration()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantDay {
    pub participant_id: String,
    pub role: Role,
    pub date: NaiveDate,
    pub segments: Vec<Segment>,
}

impl ParticipantDay {
    /// All traces of one channel across segments, in time order.
    pub fn traces(&self, channel: Channel) -> Vec<&SensorTrace> {
        self.segments.iter().filter_map(|s| s.trace(channel)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subject {
    Maths,
    English,
    Language,
    Science,
    Politics,
    PE,
    Health,
    Chapel,
}

impl Subject {
    pub const ALL: [Subject; 8] = [
        Subject::Maths,
        Subject::English,
        Subject::Language,
        Subject::Science,
        Subject::Politics,
        Subject::PE,
        Subject::Health,
        Subject::Chapel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subject::Maths => "Maths",
            Subject::English => "English",
            Subject::Language => "Language",
            Subject::Science => "Science",
            Subject::Politics => "Politics",
            Subject::PE => "PE",
            Subject::Health => "Health",
            Subject::Chapel => "Chapel",
        }
    }
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subject {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subject::ALL
            .iter()
            .copied()
            .find(|subject| subject.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::validation(format!("unknown subject {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassInfo {
    pub class_id: String,
    pub room_id: String,
    pub subject: Subject,
    pub date: NaiveDate,
    pub scheduled_start: UtcSeconds,
    pub scheduled_end: UtcSeconds,
    /// Filled in by class-boundary segmentation.
    pub actual_start: Option<UtcSeconds>,
    pub actual_end: Option<UtcSeconds>,
    pub enrolled: Vec<String>,
    pub teacher: Option<String>,
}

impl ClassInfo {
    /// The class window, preferring segmented boundaries over the schedule.
    pub fn window(&self) -> (UtcSeconds, UtcSeconds) {
        (
            self.actual_start.unwrap_or(self.scheduled_start),
            self.actual_end.unwrap_or(self.scheduled_end),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSample {
    pub timestamp: UtcSeconds,
    pub temp_c: f64,
    pub humidity_pct: f64,
    pub co2_ppm: f64,
    pub sound_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvTrace {
    pub room_id: String,
    pub samples: Vec<EnvSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyResponse {
    pub participant_id: String,
    pub class_id: String,
    pub submitted_at: UtcSeconds,
    /// Likert answers q1..q5, each in -2..=2.
    pub items: [i8; 5],
    pub completion_seconds: f64,
}

impl SurveyResponse {
    pub fn new(
        participant_id: impl Into<String>,
        class_id: impl Into<String>,
        submitted_at: UtcSeconds,
        items: [i8; 5],
        completion_seconds: f64,
    ) -> Result<Self> {
        if let Some((i, q)) = items.iter().enumerate().find(|(_, q)| !(-2..=2).contains(*q)) {
            return Err(Error::validation(format!("q{} = {q} is outside -2..=2", i + 1)));
        }
        Ok(SurveyResponse {
            participant_id: participant_id.into(),
            class_id: class_id.into(),
            submitted_at,
            items,
            completion_seconds,
        })
    }
}

/// A fixed offset from UTC used to interpret wall-clock times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UtcOffset {
    pub seconds: i32,
}

impl UtcOffset {
    pub const UTC: UtcOffset = UtcOffset { seconds: 0 };

    /// UTC seconds of `hh:mm` local time on `date`.
    pub fn local_to_utc(self, date: NaiveDate, hour: u32, minute: u32) -> UtcSeconds {
        let midnight = date
            .and_hms_opt(0, 0, 0)
            .expect("midnight exists")
            .and_utc()
            .timestamp() as f64;
        midnight + f64::from(hour * 3600 + minute * 60) - f64::from(self.seconds)
    }

    /// Local calendar date of a UTC instant.
    pub fn local_date(self, t: UtcSeconds) -> NaiveDate {
        let local = (t + f64::from(self.seconds)).floor() as i64;
        chrono::DateTime::from_timestamp(local, 0)
            .map(|dt| dt.date_naive())
            .unwrap_or_default()
    }
}

impl fmt::Display for UtcOffset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.seconds < 0 { '-' } else { '+' };
        let abs = self.seconds.unsigned_abs();
        write!(f, "{sign}{:02}:{:02}", abs / 3600, (abs % 3600) / 60)
    }
}

impl FromStr for UtcOffset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::validation(format!("timezone offset {s:?} is not of the form +HH:MM"));
        if s.eq_ignore_ascii_case("utc") || s == "Z" {
            return Ok(UtcOffset::UTC);
        }
        let (sign, rest) = match s.as_bytes().first() {
            Some(b'+') => (1, &s[1..]),
            Some(b'-') => (-1, &s[1..]),
            _ => return Err(bad()),
        };
        let (h, m) = rest.split_once(':').ok_or_else(bad)?;
        let h: i32 = h.parse().map_err(|_| bad())?;
        let m: i32 = m.parse().map_err(|_| bad())?;
        if !(0..=14).contains(&h) || !(0..60).contains(&m) {
            return Err(bad());
        }
        Ok(UtcOffset {
            seconds: sign * (h * 3600 + m * 60),
        })
    }
}

impl Serialize for UtcOffset {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for UtcOffset {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_round_trips() {
        for s in ["+10:00", "-03:30", "+00:00"] {
            let off: UtcOffset = s.parse().unwrap();
            assert_eq!(off.to_string(), s);
        }
        assert!("10:00".parse::<UtcOffset>().is_err());
        assert!("+25:00".parse::<UtcOffset>().is_err());
    }

    #[test]
    fn local_window_respects_offset() {
        let date = NaiveDate::from_ymd_opt(2019, 9, 11).unwrap();
        let utc_nine = UtcOffset::UTC.local_to_utc(date, 9, 0);
        let sydney_nine = UtcOffset { seconds: 36000 }.local_to_utc(date, 9, 0);
        assert_eq!(utc_nine - sydney_nine, 36000.0);
        assert_eq!(UtcOffset::UTC.local_date(utc_nine), date);
    }

    #[test]
    fn clip_keeps_half_open_window() {
        let t = SensorTrace::new(Channel::Eda, 100.0, 4.0, (0..8).map(f64::from).collect()).unwrap();
        let c = t.clip(100.5, 101.5);
        assert_eq!(c.values, vec![2.0, 3.0, 4.0, 5.0]);
        assert_eq!(c.start_time, 100.5);
    }

    #[test]
    fn trace_rejects_bad_rate_and_nan() {
        assert!(SensorTrace::new(Channel::Eda, 0.0, 0.0, vec![1.0]).is_err());
        assert!(SensorTrace::new(Channel::Eda, 0.0, 4.0, vec![f64::NAN]).is_err());
    }

    #[test]
    fn survey_range_is_checked() {
        assert!(SurveyResponse::new("s1", "c1", 0.0, [2, -2, 2, -2, 2], 30.0).is_ok());
        assert!(SurveyResponse::new("s1", "c1", 0.0, [0, 0, 3, 0, 0], 30.0).is_err());
    }
}
