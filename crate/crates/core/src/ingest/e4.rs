//! Wristband export layout: one directory per participant-day holding
//! `EDA.csv`, `BVP.csv`, `TEMP.csv` and `ACC.csv`, either directly or in one
//! subdirectory per recording segment.
//!
//! Each channel file starts with the UTC start time and the sample rate
//! (repeated per column for `ACC.csv`), followed by one sample per line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::config::IngestConfig;
use crate::error::{Error, Result};
use crate::types::{Channel, ParticipantDay, Role, Segment, SensorTrace};

/// File name and the channels it carries, in column order.
pub const CHANNEL_FILES: [(&str, &[Channel]); 4] = [
    ("EDA.csv", &[Channel::Eda]),
    ("BVP.csv", &[Channel::Bvp]),
    ("ACC.csv", &[Channel::AccX, Channel::AccY, Channel::AccZ]),
    ("TEMP.csv", &[Channel::St]),
];

/// Parsed content of one channel file.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFile {
    pub start_time: f64,
    pub sample_rate: f64,
    /// `columns[c][i]` is sample `i` of column `c`.
    pub columns: Vec<Vec<f64>>,
}

fn parse_header_row(file: &str, line_no: usize, line: Option<&str>, columns: usize) -> Result<f64> {
    let line = line.ok_or_else(|| Error::parse(file, line_no, "missing header row"))?;
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 1 && fields.len() != columns {
        return Err(Error::parse(
            file,
            line_no,
            format!("header row has {} fields, expected 1 or {columns}", fields.len()),
        ));
    }
    let mut value = None;
    for field in fields {
        let v: f64 = field
            .parse()
            .map_err(|_| Error::parse(file, line_no, format!("malformed header value {field:?}")))?;
        if !v.is_finite() {
            return Err(Error::parse(file, line_no, "header value is not finite"));
        }
        match value {
            None => value = Some(v),
            Some(first) if first != v => {
                return Err(Error::parse(file, line_no, "header columns disagree"));
            }
            Some(_) => {}
        }
    }
    value.ok_or_else(|| Error::parse(file, line_no, "empty header row"))
}

/// Parses a channel file with `columns` value columns.
pub fn parse_channel_file(file: &str, content: &str, columns: usize) -> Result<ChannelFile> {
    let mut lines = content.lines();
    let start_time = parse_header_row(file, 1, lines.next(), columns)?;
    let sample_rate = parse_header_row(file, 2, lines.next(), columns)?;
    if sample_rate <= 0.0 {
        return Err(Error::parse(
            file,
            2,
            format!("declared sample rate {sample_rate} must be positive"),
        ));
    }

    let mut data = vec![Vec::new(); columns];
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 3;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut n = 0;
        for field in line.split(',') {
            if n == columns {
                return Err(Error::parse(file, line_no, format!("more than {columns} columns")));
            }
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(file, line_no, format!("malformed value {:?}", field.trim())))?;
            if !v.is_finite() {
                return Err(Error::parse(file, line_no, "value is not finite"));
            }
            data[n].push(v);
            n += 1;
        }
        if n != columns {
            return Err(Error::parse(
                file,
                line_no,
                format!("expected {columns} columns, found {n}"),
            ));
        }
    }

    Ok(ChannelFile {
        start_time,
        sample_rate,
        columns: data,
    })
}

/// Renders traces of one file in the export layout. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn render_channel_file(traces: &[&SensorTrace]) -> String {
    let mut out = String::new();
    let header = |out: &mut String, v: f64| {
        let row: Vec<String> = traces.iter().map(|_| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    };
    let first = traces[0];
    header(&mut out, first.start_time);
    header(&mut out, first.sample_rate);
    for i in 0..first.len() {
        for (c, t) in traces.iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", t.values[i]);
        }
        out.push('\n');
    }
    out
}

fn read_segment(dir: &Path) -> Result<Option<Segment>> {
    let mut traces = Vec::new();
    let mut start: Option<f64> = None;
    for (name, channels) in CHANNEL_FILES {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        let content = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let parsed = parse_channel_file(&path.display().to_string(), &content, channels.len())?;
        match start {
            None => start = Some(parsed.start_time),
            Some(s) if (s - parsed.start_time).abs() > 1e-6 => {
                return Err(Error::validation(format!(
                    "{}: start time {} differs from the segment start {s}",
                    path.display(),
                    parsed.start_time
                )));
            }
            Some(_) => {}
        }
        for (&channel, values) in channels.iter().zip(parsed.columns) {
            traces.push(SensorTrace::new(
                channel,
                parsed.start_time,
                parsed.sample_rate,
                values,
            )?);
        }
    }
    Ok(start.map(|start_time| Segment { start_time, traces }))
}

fn segment_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if CHANNEL_FILES.iter().any(|(name, _)| dir.join(name).exists()) {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Restricts a segment to `[t0, t1)`. All channels are cut at the same
/// instant, chosen on the grid of the slowest channel.
pub fn clip_segment(segment: &Segment, t0: f64, t1: f64) -> Segment {
    let slowest = segment
        .traces
        .iter()
        .map(|t| t.sample_rate)
        .fold(f64::INFINITY, f64::min);
    let cut = if t0 > segment.start_time && slowest.is_finite() {
        segment.start_time + ((t0 - segment.start_time) * slowest).ceil() / slowest
    } else {
        segment.start_time
    };
    let traces: Vec<SensorTrace> = segment.traces.iter().map(|t| t.clip(cut, t1)).collect();
    let start_time = traces.first().map_or(cut, |t| t.start_time);
    Segment { start_time, traces }
}

/// Loads one participant-day, keeps only the school-day window and drops
/// segments that are too short to be useful.
pub fn load_e4_day(dir: &Path, participant_id: &str, role: Role, cfg: &IngestConfig) -> Result<ParticipantDay> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "participant-day directory not found"),
        ));
    }
    let mut raw = Vec::new();
    for seg_dir in segment_dirs(dir)? {
        if let Some(seg) = read_segment(&seg_dir)? {
            raw.push(seg);
        }
    }
    raw.sort_by(|a, b| a.start_time.total_cmp(&b.start_time));

    let date = dir
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| NaiveDate::parse_from_str(n, "%Y-%m-%d").ok())
        .or_else(|| raw.first().map(|s| cfg.timezone.local_date(s.start_time)))
        .ok_or_else(|| Error::InsufficientData(format!("{}: no recording segments", dir.display())))?;

    Ok(ParticipantDay {
        participant_id: participant_id.to_string(),
        role,
        date,
        segments: retain_school_day(raw, date, cfg),
    })
}

/// Clips segments to the configured school-day window of `date` and drops
/// the ones shorter than the minimum segment length.
pub fn retain_school_day(segments: Vec<Segment>, date: NaiveDate, cfg: &IngestConfig) -> Vec<Segment> {
    let (t0, t1) = cfg.school_day(date);
    segments
        .into_iter()
        .map(|s| clip_segment(&s, t0, t1))
        .filter(|s| !s.traces.is_empty() && s.duration() >= cfg.min_segment_seconds)
        .collect()
}

/// Writes a participant-day in the export layout, one `segNN` subdirectory
/// per segment.
pub fn write_e4_day(dir: &Path, day: &ParticipantDay) -> Result<()> {
    for (k, segment) in day.segments.iter().enumerate() {
        let seg_dir = dir.join(format!("seg{k:02}"));
        fs::create_dir_all(&seg_dir).map_err(|e| Error::io(&seg_dir, e))?;
        for (name, channels) in CHANNEL_FILES {
            let traces: Vec<&SensorTrace> = channels.iter().filter_map(|&c| segment.trace(c)).collect();
            if traces.len() != channels.len() {
                continue;
            }
            let path = seg_dir.join(name);
            fs::write(&path, render_channel_file(&traces)).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}
