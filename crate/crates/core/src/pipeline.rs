//! From recordings, schedule, room sensors and surveys to the per-session
//! feature table.
//!
//! Processing runs one school day at a time: class boundaries are estimated
//! from the students' movement, every (participant, class) session is
//! screened and decomposed, and synchrony features are computed once all
//! sessions of a class are available.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use chrono::NaiveDate;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::eda::{cvxeda_decompose, mean_std, normalize_eda, EdaDecomposition};
use crate::error::{Error, Result};
use crate::features::{
    context_features, dtw_sync, eda_session_features, engagement_scores, pearson_sync, peer_average, FeatureMap,
    FeatureRow, FeatureTable,
};
use crate::hrv::{hrv_features, HrvFeatures};
use crate::ingest::load_e4_day;
use crate::preprocess::{acc_magnitude, eda_quality_gate, median_filter, QualityReport};
use crate::resample::{slice_resample, slice_resample_many, Aggregator};
use crate::segment::{class_boundary, BoundarySide};
use crate::synth::Cohort;
use crate::types::{Channel, ClassInfo, EnvTrace, ParticipantDay, Role, SensorTrace, SurveyResponse, UtcSeconds};

/// Where a day's recordings come from.
pub trait DaySource {
    /// Recordings of the listed participants on `date`. Participants without
    /// data are left out.
    fn load_day(&self, date: NaiveDate, participants: &[(String, Role)]) -> Result<Vec<ParticipantDay>>;
}

/// Recordings laid out as `<root>/<YYYY-MM-DD>/<participant_id>/`.
#[derive(Debug, Clone)]
pub struct DirSource {
    pub root: PathBuf,
    pub ingest: crate::config::IngestConfig,
}

impl DaySource for DirSource {
    fn load_day(&self, date: NaiveDate, participants: &[(String, Role)]) -> Result<Vec<ParticipantDay>> {
        let day_dir = self.root.join(date.format("%Y-%m-%d").to_string());
        let mut out = Vec::new();
        for (pid, role) in participants {
            let dir = day_dir.join(pid);
            if dir.is_dir() {
                out.push(load_e4_day(&dir, pid, *role, &self.ingest)?);
            }
        }
        Ok(out)
    }
}

impl DaySource for Cohort {
    fn load_day(&self, date: NaiveDate, participants: &[(String, Role)]) -> Result<Vec<ParticipantDay>> {
        let Some(day) = self.dates.iter().position(|d| *d == date) else {
            return Ok(Vec::new());
        };
        let wanted: BTreeSet<&str> = participants.iter().map(|(p, _)| p.as_str()).collect();
        Ok(self
            .simulate_day(day)?
            .into_iter()
            .filter(|d| wanted.contains(d.participant_id.as_str()))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassBoundaries {
    pub class_id: String,
    pub actual_start: UtcSeconds,
    pub actual_end: UtcSeconds,
    pub n_participants_used: usize,
    /// A side fell back to the schedule for lack of movement data.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionQuality {
    pub participant_id: String,
    pub class_id: String,
    pub report: QualityReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub boundaries: Vec<ClassBoundaries>,
    pub quality: Vec<SessionQuality>,
    pub table: FeatureTable,
}

/// Signals of one accepted session, sliced to the class window.
#[derive(Debug, Clone)]
pub struct SessionSignals {
    pub eda: SensorTrace,
    pub decomposition: EdaDecomposition,
    pub acc_mag: Option<SensorTrace>,
    pub bvp: Option<SensorTrace>,
    pub st: Option<SensorTrace>,
}

fn native_rate(traces: &[&SensorTrace]) -> Option<f64> {
    traces.first().map(|t| t.sample_rate)
}

fn slice_channel(day: &ParticipantDay, channel: Channel, window: (f64, f64), max_gap: f64) -> Option<SensorTrace> {
    let traces = day.traces(channel);
    let rate = native_rate(&traces)?;
    slice_resample_many(&traces, window.0, window.1, rate, Aggregator::Mean, max_gap).ok()
}

/// Slices the raw EDA of a session to 4 Hz and screens it. `Ok(None)` means
/// the participant has no EDA overlapping the window.
pub fn screen_session(
    day: &ParticipantDay,
    window: (UtcSeconds, UtcSeconds),
    cfg: &PipelineConfig,
) -> Result<Option<(Option<SensorTrace>, QualityReport)>> {
    let traces = day.traces(Channel::Eda);
    let overlaps = traces
        .iter()
        .any(|t| t.start_time < window.1 && t.end_time() > window.0 && !t.is_empty());
    if !overlaps {
        return Ok(None);
    }
    match slice_resample_many(
        &traces,
        window.0,
        window.1,
        crate::eda::EDA_RATE_HZ,
        Aggregator::Mean,
        cfg.resample.max_gap_seconds,
    ) {
        Ok(eda) => {
            let report = eda_quality_gate(&eda, &cfg.gate);
            Ok(Some((Some(eda), report)))
        }
        Err(e) => Ok(Some((
            None,
            QualityReport {
                flat_fraction: 0.0,
                n_abrupt_drops: 0,
                quantization_flag: false,
                accepted: false,
                reasons: vec![format!("incomplete recording: {e}")],
            },
        ))),
    }
}

/// Filters and decomposes an accepted session and slices its other channels.
pub fn prepare_session(
    day: &ParticipantDay,
    eda: SensorTrace,
    window: (UtcSeconds, UtcSeconds),
    cfg: &PipelineConfig,
) -> Result<SessionSignals> {
    let filtered = median_filter(&eda, cfg.filters.eda_median_seconds)?;
    let decomposition = cvxeda_decompose(&filtered, &cfg.cvxeda)?;
    let gap = cfg.resample.max_gap_seconds;
    let acc_mag = match (
        slice_channel(day, Channel::AccX, window, gap),
        slice_channel(day, Channel::AccY, window, gap),
        slice_channel(day, Channel::AccZ, window, gap),
    ) {
        (Some(x), Some(y), Some(z)) => acc_magnitude(&x, &y, &z, cfg.filters.acc_median_seconds).ok(),
        _ => None,
    };
    let st = slice_channel(day, Channel::St, window, gap)
        .and_then(|t| median_filter(&t, cfg.filters.st_median_seconds).ok());
    Ok(SessionSignals {
        eda: filtered,
        decomposition,
        acc_mag,
        bvp: slice_channel(day, Channel::Bvp, window, gap),
        st,
    })
}

/// HRV descriptors of a session; `None` when too few beats were found.
pub fn session_hrv(signals: &SessionSignals, cfg: &PipelineConfig) -> Option<HrvFeatures> {
    let bvp = signals.bvp.as_ref()?;
    hrv_features(bvp, &cfg.hrv).ok().map(|(_, f)| f)
}

fn insert_hrv(map: &mut FeatureMap, f: &HrvFeatures) {
    let values = [
        ("hrv_bpm", Some(f.bpm)),
        ("hrv_meani", Some(f.meani)),
        ("hrv_sdnn", Some(f.sdnn)),
        ("hrv_lf_power", f.lf_power),
        ("hrv_hf_power", f.hf_power),
        ("hrv_ratio_lf_hf", f.ratio_lf_hf),
        ("hrv_rmssd", Some(f.rmssd)),
        ("hrv_sdsd", Some(f.sdsd)),
        ("hrv_pnn50", Some(f.pnn50)),
        ("hrv_pnn20", Some(f.pnn20)),
    ];
    for (name, v) in values {
        if let Some(v) = v.filter(|v| v.is_finite()) {
            map.insert(name.to_string(), v);
        }
    }
}

/// 1 Hz z-normalized copy of a series sampled at `rate` from `start`.
fn sync_series(values: &[f64], start: f64, rate: f64, window: (f64, f64), cfg: &PipelineConfig) -> Option<Vec<f64>> {
    let trace = SensorTrace::new(Channel::Eda, start, rate, values.to_vec()).ok()?;
    let one_hz = slice_resample(
        &trace,
        window.0,
        window.1,
        cfg.sync.rate_hz,
        Aggregator::Mean,
        cfg.resample.max_gap_seconds,
    )
    .ok()?;
    let (mean, std) = mean_std(&one_hz.values);
    let scale = if std > 0.0 { std } else { 1.0 };
    Some(one_hz.values.iter().map(|v| (v - mean) / scale).collect())
}

/// Synchrony inputs of one session: EDA mixed, tonic, phasic and ACC.
struct SyncSet {
    series: [Option<Vec<f64>>; 4],
}

const SYNC_SIGNALS: [&str; 3] = ["eda", "tonic", "phasic"];

fn sync_set(s: &SessionSignals, window: (f64, f64), cfg: &PipelineConfig) -> SyncSet {
    let d = &s.decomposition;
    let eda = |v: &[f64]| sync_series(v, d.start_time, d.sample_rate, window, cfg);
    let acc = s
        .acc_mag
        .as_ref()
        .and_then(|a| sync_series(&a.values, a.start_time, a.sample_rate, window, cfg));
    SyncSet {
        series: [eda(&d.mixed), eda(&d.tonic), eda(&d.phasic), acc],
    }
}

fn insert_sync(map: &mut FeatureMap, own: &SyncSet, reference: [Option<&[f64]>; 4], suffix: char, band: f64) {
    for (k, own) in own.series.iter().enumerate() {
        let (Some(a), Some(b)) = (own.as_deref(), reference[k]) else {
            continue;
        };
        let pcc = pearson_sync(a, b);
        let dtw = Some(dtw_sync(a, b, band)).filter(|v| v.is_finite());
        let (pcc_name, dtw_name) = if k < 3 {
            (
                format!("{}_pcc{suffix}", SYNC_SIGNALS[k]),
                format!("{}_dtw{suffix}", SYNC_SIGNALS[k]),
            )
        } else {
            (format!("acc_pcc_{suffix}"), format!("acc_dtw_{suffix}"))
        };
        if let Some(v) = pcc {
            map.insert(pcc_name, v);
        }
        if let Some(v) = dtw {
            map.insert(dtw_name, v);
        }
    }
}

/// Estimated actual boundaries of every class, from the ACC magnitude of
/// its enrolled students.
pub fn estimate_boundaries(
    days: &[ParticipantDay],
    classes: &[&ClassInfo],
    cfg: &PipelineConfig,
) -> Vec<ClassBoundaries> {
    let mags: BTreeMap<&str, Vec<SensorTrace>> = days
        .iter()
        .filter(|d| d.role == Role::Student)
        .map(|d| {
            let traces = d
                .segments
                .iter()
                .filter_map(|s| {
                    let (x, y, z) = (
                        s.trace(Channel::AccX)?,
                        s.trace(Channel::AccY)?,
                        s.trace(Channel::AccZ)?,
                    );
                    acc_magnitude(x, y, z, cfg.filters.acc_median_seconds).ok()
                })
                .collect();
            (d.participant_id.as_str(), traces)
        })
        .collect();
    classes
        .iter()
        .map(|class| {
            let per: Vec<Vec<&SensorTrace>> = class
                .enrolled
                .iter()
                .filter_map(|p| mags.get(p.as_str()))
                .map(|ts| ts.iter().collect())
                .collect();
            let (lo, hi) = (
                class.scheduled_start - cfg.segmentation.window_seconds,
                class.scheduled_end + cfg.segmentation.window_seconds,
            );
            let covered = per.iter().flatten().any(|t| t.start_time < hi && t.end_time() > lo);
            if !covered {
                log::debug!("{}: nobody recorded; keeping the scheduled times", class.class_id);
                return ClassBoundaries {
                    class_id: class.class_id.clone(),
                    actual_start: class.scheduled_start,
                    actual_end: class.scheduled_end,
                    n_participants_used: 0,
                    fallback: true,
                };
            }
            let start = class_boundary(
                &per,
                class.scheduled_start,
                BoundarySide::Start,
                &cfg.segmentation,
                &cfg.resample,
            );
            let end = class_boundary(
                &per,
                class.scheduled_end,
                BoundarySide::End,
                &cfg.segmentation,
                &cfg.resample,
            );
            let (mut a, mut e) = (start.time, end.time);
            if e <= a {
                (a, e) = (class.scheduled_start, class.scheduled_end);
            }
            ClassBoundaries {
                class_id: class.class_id.clone(),
                actual_start: a,
                actual_end: e,
                n_participants_used: start.n_used.min(end.n_used),
                fallback: start.fallback || end.fallback,
            }
        })
        .collect()
}

fn day_participants(classes: &[&ClassInfo]) -> Vec<(String, Role)> {
    let mut students = BTreeSet::new();
    let mut teachers = BTreeSet::new();
    for c in classes {
        students.extend(c.enrolled.iter().cloned());
        teachers.extend(c.teacher.iter().cloned());
    }
    students
        .into_iter()
        .map(|s| (s, Role::Student))
        .chain(teachers.into_iter().map(|t| (t, Role::Teacher)))
        .collect()
}

/// Classes grouped by date, in date order.
fn classes_by_date(classes: &[ClassInfo]) -> BTreeMap<NaiveDate, Vec<&ClassInfo>> {
    let mut out: BTreeMap<NaiveDate, Vec<&ClassInfo>> = BTreeMap::new();
    for c in classes {
        out.entry(c.date).or_default().push(c);
    }
    for list in out.values_mut() {
        list.sort_by(|a, b| {
            a.scheduled_start
                .total_cmp(&b.scheduled_start)
                .then(a.class_id.cmp(&b.class_id))
        });
    }
    out
}

/// Runs boundary estimation, screening and feature extraction over every
/// scheduled class. Feature rows are produced for accepted student sessions;
/// teachers serve as the synchrony reference only.
pub fn run_pipeline(
    source: &dyn DaySource,
    classes: &[ClassInfo],
    env: &[EnvTrace],
    surveys: &[SurveyResponse],
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    process(source, classes, env, surveys, cfg, true)
}

/// Boundary estimation and quality screening only; the feature table of
/// the output is empty.
pub fn run_screening(source: &dyn DaySource, classes: &[ClassInfo], cfg: &PipelineConfig) -> Result<PipelineOutput> {
    process(source, classes, &[], &[], cfg, false)
}

fn process(
    source: &dyn DaySource,
    classes: &[ClassInfo],
    env: &[EnvTrace],
    surveys: &[SurveyResponse],
    cfg: &PipelineConfig,
    extract: bool,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut labels: BTreeMap<(&str, &str), &SurveyResponse> = BTreeMap::new();
    for s in surveys {
        let key = (s.participant_id.as_str(), s.class_id.as_str());
        let keep = labels.get(&key).is_none_or(|old| s.submitted_at < old.submitted_at);
        if keep {
            labels.insert(key, s);
        }
    }
    let rooms: BTreeMap<&str, &EnvTrace> = env.iter().map(|e| (e.room_id.as_str(), e)).collect();

    let mut boundaries = Vec::new();
    let mut quality = Vec::new();
    let mut rows = Vec::new();
    for (date, day_classes) in classes_by_date(classes) {
        let days = source.load_day(date, &day_participants(&day_classes))?;
        if days.is_empty() {
            boundaries.extend(day_classes.iter().map(|c| ClassBoundaries {
                class_id: c.class_id.clone(),
                actual_start: c.scheduled_start,
                actual_end: c.scheduled_end,
                n_participants_used: 0,
                fallback: true,
            }));
            continue;
        }
        let by_id: BTreeMap<&str, &ParticipantDay> = days.iter().map(|d| (d.participant_id.as_str(), d)).collect();
        let day_bounds = estimate_boundaries(&days, &day_classes, cfg);
        for (class, bounds) in day_classes.iter().zip(&day_bounds) {
            let window = (bounds.actual_start, bounds.actual_end);
            let mut members: Vec<&str> = class.enrolled.iter().map(String::as_str).collect();
            members.sort_unstable();
            members.dedup();

            let mut accepted: Vec<(&str, SessionSignals)> = Vec::new();
            for pid in &members {
                let Some(day) = by_id.get(pid) else { continue };
                let Some((eda, report)) = screen_session(day, window, cfg)? else {
                    continue;
                };
                let ok = report.accepted;
                quality.push(SessionQuality {
                    participant_id: pid.to_string(),
                    class_id: class.class_id.clone(),
                    report,
                });
                if let (true, true, Some(eda)) = (extract, ok, eda) {
                    match prepare_session(day, eda, window, cfg) {
                        Ok(signals) => accepted.push((pid, signals)),
                        Err(e) => log::warn!("{pid} in {}: {e}", class.class_id),
                    }
                }
            }

            let teacher_sync = class
                .teacher
                .as_deref()
                .filter(|_| extract)
                .and_then(|t| by_id.get(t))
                .and_then(|day| match screen_session(day, window, cfg) {
                    Ok(Some((Some(eda), report))) if report.accepted => prepare_session(day, eda, window, cfg).ok(),
                    _ => None,
                })
                .map(|s| sync_set(&s, window, cfg));

            let syncs: Vec<SyncSet> = accepted.iter().map(|(_, s)| sync_set(s, window, cfg)).collect();
            for (i, (pid, signals)) in accepted.iter().enumerate() {
                let (mut features, _) = eda_session_features(
                    &signals.decomposition,
                    &normalize_eda(&signals.decomposition, cfg.eda.normalization),
                    &cfg.eda,
                );
                if let Some(h) = session_hrv(signals, cfg) {
                    insert_hrv(&mut features, &h);
                }
                features.extend(context_features(
                    rooms.get(class.room_id.as_str()).copied(),
                    signals.st.as_ref(),
                    signals.acc_mag.as_ref(),
                    window,
                ));
                if let Some(t) = &teacher_sync {
                    let reference = [0, 1, 2, 3].map(|k| t.series[k].as_deref());
                    insert_sync(&mut features, &syncs[i], reference, 't', cfg.sync.dtw_band_fraction);
                }
                let peers: [Option<Vec<f64>>; 4] = [0, 1, 2, 3].map(|k| {
                    let named: Vec<(&str, &[f64])> = accepted
                        .iter()
                        .zip(&syncs)
                        .filter_map(|((p, _), s)| s.series[k].as_deref().map(|v| (*p, v)))
                        .collect();
                    peer_average(&named, pid)
                });
                let reference = [0, 1, 2, 3].map(|k| peers[k].as_deref());
                insert_sync(&mut features, &syncs[i], reference, 's', cfg.sync.dtw_band_fraction);

                rows.push(FeatureRow {
                    participant_id: pid.to_string(),
                    class_id: class.class_id.clone(),
                    subject: class.subject,
                    features,
                    scores: labels
                        .get(&(*pid, class.class_id.as_str()))
                        .map(|s| engagement_scores(s)),
                });
            }
        }
        boundaries.extend(day_bounds);
    }
    quality.sort_by(|a, b| (&a.participant_id, &a.class_id).cmp(&(&b.participant_id, &b.class_id)));
    Ok(PipelineOutput {
        boundaries,
        quality,
        table: FeatureTable::new(cfg.eda.levels, rows),
    })
}

pub fn boundaries_csv(rows: &[ClassBoundaries]) -> String {
    let mut out = String::from("class_id,actual_start,actual_end,n_participants_used\n");
    for b in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            b.class_id, b.actual_start, b.actual_end, b.n_participants_used
        );
    }
    out
}

pub fn quality_csv(rows: &[SessionQuality]) -> String {
    let mut out =
        String::from("participant_id,class_id,accepted,flat_fraction,n_abrupt_drops,quantization_flag,reasons\n");
    for q in rows {
        let r = &q.report;
        let reasons = r.reasons.join("; ").replace(['"', ','], " ");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            q.participant_id, q.class_id, r.accepted, r.flat_fraction, r.n_abrupt_drops, r.quantization_flag, reasons
        );
    }
    out
}

/// `t,mixed,tonic,phasic,driver,residual` with `t` in UTC seconds.
pub fn decomposition_csv(d: &EdaDecomposition) -> String {
    let mut out = String::from("t,mixed,tonic,phasic,driver,residual\n");
    for i in 0..d.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            d.start_time + i as f64 / d.sample_rate,
            d.mixed[i],
            d.tonic[i],
            d.phasic[i],
            d.driver[i],
            d.residual[i]
        );
    }
    out
}

pub fn hrv_csv(f: &HrvFeatures) -> String {
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    format!(
        "hrv_bpm,hrv_meani,hrv_sdnn,hrv_lf_power,hrv_hf_power,hrv_ratio_lf_hf,hrv_rmssd,hrv_sdsd,hrv_pnn50,hrv_pnn20\n{},{},{},{},{},{},{},{},{},{}\n",
        f.bpm,
        f.meani,
        f.sdnn,
        cell(f.lf_power),
        cell(f.hf_power),
        cell(f.ratio_lf_hf),
        f.rmssd,
        f.sdsd,
        f.pnn50,
        f.pnn20
    )
}

/// Loads one session, identified as `<participant_id>/<class_id>`, with its
/// class window estimated from the other students of the class.
pub fn load_session(
    source: &dyn DaySource,
    classes: &[ClassInfo],
    session: &str,
    cfg: &PipelineConfig,
) -> Result<(SessionSignals, QualityReport)> {
    let (pid, class_id) = session
        .split_once('/')
        .ok_or_else(|| Error::validation(format!("session {session:?} is not <participant_id>/<class_id>")))?;
    let class = classes
        .iter()
        .find(|c| c.class_id == class_id)
        .ok_or_else(|| Error::validation(format!("unknown class_id {class_id}")))?;
    let mut who = day_participants(&[class]);
    if !who.iter().any(|(p, _)| p == pid) {
        who.push((pid.to_string(), Role::Student));
    }
    let days = source.load_day(class.date, &who)?;
    let bounds = estimate_boundaries(&days, &[class], cfg).remove(0);
    let window = (bounds.actual_start, bounds.actual_end);
    let day = days
        .iter()
        .find(|d| d.participant_id == pid)
        .ok_or_else(|| Error::InsufficientData(format!("no recordings for {pid} on {}", class.date)))?;
    let Some((Some(eda), report)) = screen_session(day, window, cfg)? else {
        return Err(Error::InsufficientData(format!(
            "{pid} has no complete EDA during {class_id}"
        )));
    };
    Ok((prepare_session(day, eda, window, cfg)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_cohort, plan_cohort, SynthConfig};

    fn small() -> SynthConfig {
        SynthConfig {
            n_students: 4,
            n_teachers: 2,
            days: 1,
            dropout_rate: 0.0,
            bad_contact_rate: 0.0,
            ..SynthConfig::default()
        }
    }

    fn run(source: &dyn DaySource, cohort: &Cohort) -> PipelineOutput {
        let cfg = PipelineConfig::default();
        run_pipeline(source, &cohort.classes, &cohort.env, &cohort.surveys, &cfg).unwrap()
    }

    #[test]
    fn small_cohort_end_to_end() {
        let cohort = plan_cohort(&small()).unwrap();
        let out = run(&cohort, &cohort);
        assert_eq!(out.boundaries.len(), cohort.classes.len());
        for ((b, c), (a, e)) in out.boundaries.iter().zip(&cohort.classes).zip(&cohort.actual_times) {
            let recorded = cohort.recorded[cohort.classes.iter().position(|x| x.class_id == c.class_id).unwrap()];
            if recorded {
                assert!(!b.fallback);
                assert_eq!(b.n_participants_used, 4);
                assert!((b.actual_start - a).abs() <= 10.0, "{} vs {a}", b.actual_start);
                assert!((b.actual_end - e).abs() <= 10.0, "{} vs {e}", b.actual_end);
            } else {
                assert!(b.fallback);
            }
        }
        assert_eq!(out.quality.len(), 12);
        assert!(out.quality.iter().all(|q| q.report.accepted));
        assert_eq!(out.table.rows.len(), 12);
        let row = &out.table.rows[0];
        for name in [
            "eda_avg",
            "phasic_n_p",
            "hrv_rmssd",
            "hrv_hf_power",
            "acc_avg",
            "sktemp_avg",
            "mean_co2",
        ] {
            assert!(row.features.contains_key(name), "{name}");
        }
        for name in ["eda_pccs", "tonic_dtws", "acc_pcc_s"] {
            assert!(row.features.contains_key(name), "{name}");
        }
        assert!(out.table.rows.iter().any(|r| r.features.contains_key("phasic_pcct")));
        let labelled = out.table.rows.iter().filter(|r| r.scores.is_some()).count();
        let expected = cohort.surveys.len();
        assert_eq!(labelled, expected);
        let hr = row.features["hrv_bpm"];
        assert!((55.0..100.0).contains(&hr), "{hr}");
    }

    #[test]
    fn directory_source_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_students: 3,
            ..small()
        };
        let cohort = generate_cohort(&cfg, dir.path()).unwrap();
        let disk = DirSource {
            root: dir.path().to_path_buf(),
            ingest: cfg.ingest_config(),
        };
        let a = run(&cohort, &cohort);
        let b = run(&disk, &cohort);
        assert_eq!(a, b);
        assert_eq!(a.table.to_csv(), b.table.to_csv());
        assert!(boundaries_csv(&a.boundaries).starts_with("class_id,actual_start,actual_end,n_participants_used\n"));
        assert_eq!(quality_csv(&a.quality).lines().count(), 1 + a.quality.len());
    }

    #[test]
    fn bad_contact_is_rejected() {
        let cfg = SynthConfig {
            bad_contact_rate: 1.0,
            ..small()
        };
        let cohort = plan_cohort(&cfg).unwrap();
        let out = run(&cohort, &cohort);
        assert!(out.quality.iter().all(|q| !q.report.accepted));
        assert!(out.table.rows.is_empty());
    }

    #[test]
    fn single_session_helpers() {
        let cohort = plan_cohort(&small()).unwrap();
        let cfg = PipelineConfig::default();
        let id = format!("S02/{}", cohort.classes[1].class_id);
        let (signals, report) = load_session(&cohort, &cohort.classes, &id, &cfg).unwrap();
        assert!(report.accepted);
        let csv = decomposition_csv(&signals.decomposition);
        assert_eq!(csv.lines().count(), 1 + signals.decomposition.len());
        let h = session_hrv(&signals, &cfg).unwrap();
        assert_eq!(hrv_csv(&h).lines().count(), 2);
        assert!(load_session(&cohort, &cohort.classes, "S02", &cfg).is_err());
        assert!(load_session(&cohort, &cohort.classes, "S02/nope", &cfg).is_err());
    }
}
