//! CSV tables: indoor environment, class schedule and surveys.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::types::{ClassInfo, EnvSample, EnvTrace, Subject, SurveyResponse};

pub const ENV_HEADER: &str = "timestamp,room_id,temp_c,humidity_pct,co2_ppm,sound_db";
pub const SCHEDULE_HEADER: &str =
    "class_id,room_id,subject,date,scheduled_start,scheduled_end,teacher_id,participant_ids";
pub const SURVEY_HEADER: &str = "participant_id,class_id,submitted_at,q1,q2,q3,q4,q5,completion_seconds";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Deserializes every row, checking the header first. Line numbers in errors
/// are 1-based file lines.
fn rows<T: for<'de> Deserialize<'de>>(file: &str, content: &str, header: &str) -> Result<Vec<(usize, T)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(content.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(file, 1, e.to_string()))?
        .clone();
    let found = headers.iter().collect::<Vec<_>>().join(",");
    if found != header {
        return Err(Error::parse(
            file,
            1,
            format!("expected header `{header}`, found `{found}`"),
        ));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(file, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row: T = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::parse(file, line, e.to_string()))?;
        out.push((line, row));
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct EnvRow {
    timestamp: f64,
    room_id: String,
    temp_c: f64,
    humidity_pct: f64,
    co2_ppm: f64,
    sound_db: f64,
}

pub fn parse_env_csv(file: &str, content: &str) -> Result<Vec<EnvTrace>> {
    let mut rooms: BTreeMap<String, Vec<EnvSample>> = BTreeMap::new();
    for (line, row) in rows::<EnvRow>(file, content, ENV_HEADER)? {
        let finite = [row.timestamp, row.temp_c, row.humidity_pct, row.co2_ppm, row.sound_db]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::parse(file, line, "non-finite value"));
        }
        if !(0.0..=100.0).contains(&row.humidity_pct) {
            return Err(Error::parse(
                file,
                line,
                format!("humidity {} outside [0, 100]", row.humidity_pct),
            ));
        }
        if row.co2_ppm < 0.0 {
            return Err(Error::parse(file, line, format!("negative CO2 {}", row.co2_ppm)));
        }
        let samples = rooms.entry(row.room_id.clone()).or_default();
        if let Some(prev) = samples.last() {
            if row.timestamp <= prev.timestamp {
                return Err(Error::parse(
                    file,
                    line,
                    format!(
                        "room {}: timestamp {} does not increase (previous {})",
                        row.room_id, row.timestamp, prev.timestamp
                    ),
                ));
            }
        }
        samples.push(EnvSample {
            timestamp: row.timestamp,
            temp_c: row.temp_c,
            humidity_pct: row.humidity_pct,
            co2_ppm: row.co2_ppm,
            sound_db: row.sound_db,
        });
    }
    Ok(rooms
        .into_iter()
        .map(|(room_id, samples)| EnvTrace { room_id, samples })
        .collect())
}

pub fn load_env_csv(path: &Path) -> Result<Vec<EnvTrace>> {
    parse_env_csv(&path.display().to_string(), &read(path)?)
}

/// Rows are emitted in timestamp order across rooms.
pub fn render_env_csv(traces: &[EnvTrace]) -> String {
    let mut rows: Vec<(&str, &EnvSample)> = traces
        .iter()
        .flat_map(|t| t.samples.iter().map(move |s| (t.room_id.as_str(), s)))
        .collect();
    rows.sort_by(|a, b| a.1.timestamp.total_cmp(&b.1.timestamp).then(a.0.cmp(b.0)));
    let mut out = format!("{ENV_HEADER}\n");
    for (room, s) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.timestamp, room, s.temp_c, s.humidity_pct, s.co2_ppm, s.sound_db
        );
    }
    out
}

#[derive(Debug, Deserialize)]
struct ScheduleRow {
    class_id: String,
    room_id: String,
    subject: String,
    date: String,
    scheduled_start: f64,
    scheduled_end: f64,
    teacher_id: String,
    participant_ids: String,
}

pub fn parse_schedule_csv(file: &str, content: &str) -> Result<Vec<ClassInfo>> {
    let mut seen = HashSet::new();
    let mut classes = Vec::new();
    for (line, row) in rows::<ScheduleRow>(file, content, SCHEDULE_HEADER)? {
        let subject: Subject = row
            .subject
            .parse()
            .map_err(|e: Error| Error::parse(file, line, e.to_string()))?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
            .map_err(|_| Error::parse(file, line, format!("date {:?} is not YYYY-MM-DD", row.date)))?;
        if !row.scheduled_start.is_finite() || !(row.scheduled_end > row.scheduled_start) {
            return Err(Error::parse(file, line, "scheduled_end must be after scheduled_start"));
        }
        if row.class_id.is_empty() {
            return Err(Error::parse(file, line, "empty class_id"));
        }
        if !seen.insert(row.class_id.clone()) {
            return Err(Error::parse(file, line, format!("duplicate class_id {}", row.class_id)));
        }
        let enrolled = row
            .participant_ids
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        classes.push(ClassInfo {
            class_id: row.class_id,
            room_id: row.room_id,
            subject,
            date,
            scheduled_start: row.scheduled_start,
            scheduled_end: row.scheduled_end,
            actual_start: None,
            actual_end: None,
            enrolled,
            teacher: Some(row.teacher_id).filter(|t| !t.is_empty()),
        });
    }
    Ok(classes)
}

pub fn render_schedule_csv(classes: &[ClassInfo]) -> String {
    let mut out = format!("{SCHEDULE_HEADER}\n");
    for c in classes {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.class_id,
            c.room_id,
            c.subject,
            c.date.format("%Y-%m-%d"),
            c.scheduled_start,
            c.scheduled_end,
            c.teacher.as_deref().unwrap_or(""),
            c.enrolled.join(";")
        );
    }
    out
}

#[derive(Debug, Deserialize)]
struct SurveyRow {
    participant_id: String,
    class_id: String,
    submitted_at: f64,
    q1: i64,
    q2: i64,
    q3: i64,
    q4: i64,
    q5: i64,
    completion_seconds: f64,
}

pub fn parse_surveys_csv(file: &str, content: &str) -> Result<Vec<SurveyResponse>> {
    let mut out = Vec::new();
    for (line, row) in rows::<SurveyRow>(file, content, SURVEY_HEADER)? {
        let raw = [row.q1, row.q2, row.q3, row.q4, row.q5];
        let mut items = [0i8; 5];
        for (k, (&q, slot)) in raw.iter().zip(items.iter_mut()).enumerate() {
            if !(-2..=2).contains(&q) {
                return Err(Error::parse(file, line, format!("q{} = {q} is outside -2..=2", k + 1)));
            }
            *slot = q as i8;
        }
        let survey = SurveyResponse::new(
            row.participant_id,
            row.class_id,
            row.submitted_at,
            items,
            row.completion_seconds,
        )
        .map_err(|e| Error::parse(file, line, e.to_string()))?;
        out.push(survey);
    }
    Ok(out)
}

pub fn render_surveys_csv(surveys: &[SurveyResponse]) -> String {
    let mut out = format!("{SURVEY_HEADER}\n");
    for s in surveys {
        let q = s.items;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.participant_id, s.class_id, s.submitted_at, q[0], q[1], q[2], q[3], q[4], s.completion_seconds
        );
    }
    out
}

/// Checks that every survey refers to a scheduled class.
pub fn cross_reference(classes: &[ClassInfo], surveys: &[SurveyResponse]) -> Result<()> {
    let known: HashSet<&str> = classes.iter().map(|c| c.class_id.as_str()).collect();
    for s in surveys {
        if !known.contains(s.class_id.as_str()) {
            return Err(Error::validation(format!(
                "survey from {} refers to unknown class_id {}",
                s.participant_id, s.class_id
            )));
        }
    }
    Ok(())
}

pub fn load_schedule_and_surveys(
    schedule_path: &Path,
    survey_path: &Path,
) -> Result<(Vec<ClassInfo>, Vec<SurveyResponse>)> {
    let classes = parse_schedule_csv(&schedule_path.display().to_string(), &read(schedule_path)?)?;
    let surveys = parse_surveys_csv(&survey_path.display().to_string(), &read(survey_path)?)?;
    cross_reference(&classes, &surveys)?;
    Ok((classes, surveys))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_rows_group_by_room() {
        let csv = format!(
            "{ENV_HEADER}\n0,R1,22,50,500,40\n0,R2,21,45,450,38\n300,R1,22.1,50,520,41\n300,R2,21,45,460,39\n600,R1,22.2,51,540,42\n"
        );
        let traces = parse_env_csv("env.csv", &csv).unwrap();
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[0].room_id, "R1");
        assert_eq!(traces[0].samples.len(), 3);
        assert_eq!(traces[1].samples.len(), 2);
    }

    #[test]
    fn env_validation_errors() {
        let humid = format!("{ENV_HEADER}\n0,R1,22,140,500,40\n");
        assert!(matches!(
            parse_env_csv("env.csv", &humid),
            Err(Error::Parse { line: 2, .. })
        ));
        let co2 = format!("{ENV_HEADER}\n0,R1,22,40,-5,40\n");
        assert!(parse_env_csv("env.csv", &co2).is_err());
        let order = format!("{ENV_HEADER}\n300,R1,22,40,500,40\n0,R2,22,40,500,40\n0,R1,22,40,500,40\n");
        match parse_env_csv("env.csv", &order) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 4);
                assert!(message.contains("R1"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn surveys_range_checked() {
        let ok = format!("{SURVEY_HEADER}\ns1,c1,100,2,-2,2,-2,2,45\n");
        let s = parse_surveys_csv("surveys.csv", &ok).unwrap();
        assert_eq!(s[0].items, [2, -2, 2, -2, 2]);
        let bad = format!("{SURVEY_HEADER}\ns1,c1,100,0,0,3,0,0,45\n");
        assert!(matches!(
            parse_surveys_csv("surveys.csv", &bad),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn unknown_class_is_rejected() {
        let sched = format!("{SCHEDULE_HEADER}\nc1,R1,Maths,2019-09-11,1000,3400,t1,s1;s2\n");
        let classes = parse_schedule_csv("schedule.csv", &sched).unwrap();
        assert_eq!(classes[0].enrolled, vec!["s1", "s2"]);
        assert_eq!(classes[0].teacher.as_deref(), Some("t1"));
        let ok = SurveyResponse::new("s1", "c1", 0.0, [0; 5], 10.0).unwrap();
        let bad = SurveyResponse::new("s1", "c9", 0.0, [0; 5], 10.0).unwrap();
        assert!(cross_reference(&classes, std::slice::from_ref(&ok)).is_ok());
        assert!(cross_reference(&classes, &[ok, bad]).is_err());
    }

    #[test]
    fn schedule_rejects_inverted_times_and_bad_subject() {
        let inverted = format!("{SCHEDULE_HEADER}\nc1,R1,Maths,2019-09-11,3400,1000,,s1\n");
        assert!(parse_schedule_csv("schedule.csv", &inverted).is_err());
        let subject = format!("{SCHEDULE_HEADER}\nc1,R1,Alchemy,2019-09-11,1000,3400,,s1\n");
        assert!(parse_schedule_csv("schedule.csv", &subject).is_err());
    }

    #[test]
    fn wrong_header_is_a_parse_error() {
        assert!(matches!(
            parse_env_csv("env.csv", "time,room\n1,R1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
