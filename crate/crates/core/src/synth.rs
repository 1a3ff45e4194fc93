//! Seeded synthetic cohort with known latent engagement.
//!
//! Each student carries a trait vector (behavioural, emotional, cognitive);
//! every class draws a latent around it. The latent drives the recorded
//! signals: emotional engagement sets the SCR rate, cognitive engagement the
//! high-frequency heart-rate modulation and behavioural engagement the rate
//! of movement bursts. Students walk between classes, which gives the
//! boundary detector a level change to find.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::config::IngestConfig;
use crate::error::{Error, Result};
use crate::ingest::e4::{retain_school_day, write_e4_day};
use crate::ingest::tables::{render_env_csv, render_schedule_csv, render_surveys_csv};
use crate::types::{
    Channel, ClassInfo, EnvSample, EnvTrace, ParticipantDay, Role, Segment, SensorTrace, Subject, SurveyResponse,
    UtcOffset, UtcSeconds,
};

pub const EDA_HZ: f64 = 4.0;
pub const BVP_HZ: f64 = 64.0;
pub const ACC_HZ: f64 = 32.0;
pub const ST_HZ: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_students: usize,
    pub n_teachers: usize,
    pub n_rooms: usize,
    pub days: usize,
    pub classes_per_day: usize,
    pub seed: u64,
    /// First school day, `YYYY-MM-DD`; weekends are skipped.
    pub start_date: String,
    pub timezone: UtcOffset,
    pub class_minutes: f64,
    /// Recording before the scheduled start and after the scheduled end.
    pub margin_seconds: f64,
    /// Largest offset of the actual start or end from the schedule.
    pub max_shift_seconds: f64,
    /// 1-based periods with a survey; only these are recorded.
    pub survey_periods: Vec<usize>,
    pub response_rate: f64,
    pub trait_mean: f64,
    pub trait_sd: f64,
    pub session_sd: f64,
    pub couplings: Couplings,
    pub noise: NoiseScales,
    /// SCRs per minute at neutral emotional engagement.
    pub scr_rate_per_min: f64,
    /// Movement bursts per minute at neutral behavioural engagement.
    pub burst_rate_per_min: f64,
    /// HF amplitude of the RR modulation at neutral cognitive engagement, ms.
    pub hf_amplitude_ms: f64,
    pub lf_amplitude_ms: f64,
    /// Probability that a wristband comes off during a class.
    pub dropout_rate: f64,
    /// Probability of a long loss of skin contact during a class.
    pub bad_contact_rate: f64,
    /// Probability of a stray few-second recording before a class.
    pub stray_segment_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Couplings {
    pub c_eda: f64,
    pub c_hrv: f64,
    /// Must be ≤ 0: more engaged students move less.
    pub c_acc: f64,
    /// CO₂ rise per occupied minute, ppm.
    pub c_env: f64,
}

impl Default for Couplings {
    fn default() -> Self {
        Couplings {
            c_eda: 0.4,
            c_hrv: 0.5,
            c_acc: -0.45,
            c_env: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseScales {
    /// μS.
    pub eda: f64,
    /// Relative to the pulse amplitude.
    pub bvp: f64,
    /// g.
    pub acc: f64,
    /// °C.
    pub st: f64,
    /// Probability that a survey item moves one step from the latent.
    pub survey: f64,
    /// Standard deviation of the RR intervals' beat-to-beat jitter, ms.
    pub rr: f64,
}

impl Default for NoiseScales {
    fn default() -> Self {
        NoiseScales {
            eda: 0.003,
            bvp: 0.002,
            acc: 0.02,
            st: 0.02,
            survey: 0.2,
            rr: 8.0,
        }
    }
}

impl NoiseScales {
    pub fn zero() -> Self {
        NoiseScales {
            eda: 0.0,
            bvp: 0.0,
            acc: 0.0,
            st: 0.0,
            survey: 0.0,
            rr: 0.0,
        }
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_students: 23,
            n_teachers: 6,
            n_rooms: 4,
            days: 16,
            classes_per_day: 5,
            seed: 42,
            start_date: "2019-09-02".into(),
            timezone: UtcOffset::UTC,
            class_minutes: 15.0,
            margin_seconds: 330.0,
            max_shift_seconds: 180.0,
            survey_periods: vec![2, 4, 5],
            response_rate: 0.353,
            trait_mean: 3.4,
            trait_sd: 0.5,
            session_sd: 0.7,
            couplings: Couplings::default(),
            noise: NoiseScales::default(),
            scr_rate_per_min: 4.0,
            burst_rate_per_min: 1.5,
            hf_amplitude_ms: 25.0,
            lf_amplitude_ms: 30.0,
            dropout_rate: 0.02,
            bad_contact_rate: 0.02,
            stray_segment_rate: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SynthConfig =
            toml::from_str(text).map_err(|e| Error::validation(format!("synth config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn first_date(&self) -> Result<NaiveDate> {
        NaiveDate::parse_from_str(&self.start_date, "%Y-%m-%d")
            .map_err(|_| Error::validation(format!("start_date {:?} is not YYYY-MM-DD", self.start_date)))
    }

    /// Minutes between period starts within the school day.
    fn slot_minutes(&self) -> f64 {
        395.0 / self.classes_per_day as f64
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_students", self.n_students),
            ("n_teachers", self.n_teachers),
            ("n_rooms", self.n_rooms),
            ("days", self.days),
            ("classes_per_day", self.classes_per_day),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::validation(format!("synth: {name} must be at least 1")));
            }
        }
        self.first_date()?;
        if self.couplings.c_acc > 0.0 {
            return Err(Error::validation("synth: c_acc must be ≤ 0"));
        }
        if !(self.class_minutes >= 5.0) {
            return Err(Error::validation("synth: class_minutes must be at least 5"));
        }
        if self.max_shift_seconds < 0.0 || self.max_shift_seconds >= self.margin_seconds {
            return Err(Error::validation(
                "synth: max_shift_seconds must lie in [0, margin_seconds)",
            ));
        }
        if self.class_minutes + 2.0 * self.margin_seconds / 60.0 > self.slot_minutes() {
            return Err(Error::validation(format!(
                "synth: a {}-minute class with {} s margins does not fit a {:.1}-minute period",
                self.class_minutes,
                self.margin_seconds,
                self.slot_minutes()
            )));
        }
        if self.survey_periods.iter().any(|&p| p == 0 || p > self.classes_per_day) {
            return Err(Error::validation(
                "synth: survey_periods must lie in 1..=classes_per_day",
            ));
        }
        let probs = [
            ("response_rate", self.response_rate),
            ("noise.survey", self.noise.survey),
            ("dropout_rate", self.dropout_rate),
            ("bad_contact_rate", self.bad_contact_rate),
            ("stray_segment_rate", self.stray_segment_rate),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!("synth: {name} must lie in [0, 1]")));
            }
        }
        let scales = [
            self.trait_sd,
            self.session_sd,
            self.noise.eda,
            self.noise.bvp,
            self.noise.acc,
            self.noise.st,
            self.noise.rr,
            self.scr_rate_per_min,
            self.burst_rate_per_min,
            self.hf_amplitude_ms,
            self.lf_amplitude_ms,
        ];
        if scales.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::validation(
                "synth: rates, amplitudes and noise scales must be finite and ≥ 0",
            ));
        }
        Ok(())
    }

    /// Ingest settings matching the generated timestamps.
    pub fn ingest_config(&self) -> IngestConfig {
        IngestConfig {
            timezone: self.timezone,
            ..IngestConfig::default()
        }
    }
}

const STREAM_TRAIT: u64 = 1;
const STREAM_LATENT: u64 = 2;
const STREAM_SURVEY: u64 = 3;
const STREAM_CLASS: u64 = 4;
const STREAM_ENV: u64 = 5;
const STREAM_DAY: u64 = 6;
const STREAM_PHYSIO: u64 = 7;

fn substream(seed: u64, kind: u64, a: usize, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((kind << 48) | ((a as u64) << 24) | b as u64);
    rng
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd > 0.0 {
        Normal::new(0.0, sd).expect("finite sd").sample(rng)
    } else {
        0.0
    }
}

/// Normal draw restricted to [1, 5] by rejection.
fn truncated(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    for _ in 0..100 {
        let v = mean + normal(rng, sd);
        if (1.0..=5.0).contains(&v) {
            return v;
        }
    }
    mean.clamp(1.0, 5.0)
}

fn quantize(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

/// Slow physiological constants of one participant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Physiology {
    pub tonic_us: f64,
    pub heart_rate_bpm: f64,
    pub resp_hz: f64,
    pub st_offset: f64,
}

impl Physiology {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Physiology {
            tonic_us: rng.random_range(1.0..6.0),
            heart_rate_bpm: rng.random_range(62.0..88.0),
            resp_hz: rng.random_range(0.2..0.3),
            st_offset: rng.random_range(-1.0..1.0),
        }
    }
}

/// What to record for one class and how the class unfolds.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionPlan {
    pub record_start: UtcSeconds,
    pub record_end: UtcSeconds,
    pub class_start: UtcSeconds,
    pub class_end: UtcSeconds,
    /// (behavioural, emotional, cognitive) in [1, 5].
    pub latent: [f64; 3],
    /// The wristband comes off at this time.
    pub dropout_at: Option<UtcSeconds>,
    /// Skin contact is lost for four minutes from this time.
    pub bad_contact_at: Option<UtcSeconds>,
    pub stray_segment: bool,
}

/// Generator-side counts for one class, used to check the couplings.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SessionTruth {
    pub n_scr: usize,
    pub n_bursts: usize,
    pub hf_amplitude_ms: f64,
}

fn bateman_kernel(rate: f64) -> Vec<f64> {
    let (tau0, tau1): (f64, f64) = (2.0, 0.7);
    let t_peak = (tau0 / tau1).ln() * tau0 * tau1 / (tau0 - tau1);
    let peak = (-t_peak / tau0).exp() - (-t_peak / tau1).exp();
    (0..(20.0 * rate) as usize)
        .map(|i| {
            let t = i as f64 / rate;
            ((-t / tau0).exp() - (-t / tau1).exp()) / peak
        })
        .collect()
}

/// Poisson event times on `[t0, t1)` with a time-varying rate in events per
/// second, by thinning against `max_rate`.
fn poisson_times(rng: &mut ChaCha8Rng, t0: f64, t1: f64, max_rate: f64, rate: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    if !(max_rate > 0.0) {
        return out;
    }
    let gap = Exp::new(max_rate).expect("positive rate");
    let mut t = t0;
    loop {
        t += gap.sample(rng);
        if t >= t1 {
            return out;
        }
        if rng.random::<f64>() * max_rate < rate(t) {
            out.push(t);
        }
    }
}

fn simulate_segment(
    plan: &SessionPlan,
    start: f64,
    end: f64,
    phys: &Physiology,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Segment, SessionTruth)> {
    let [b, e, c] = plan.latent;
    let in_class = |t: f64| t >= plan.class_start && t < plan.class_end;
    let dur = end - start;
    let mut truth = SessionTruth::default();

    // EDA: drifting tonic level plus Bateman-shaped responses.
    let n_eda = (dur * EDA_HZ).round() as usize;
    let base = cfg.scr_rate_per_min / 60.0;
    let class_rate = base * (1.0 + cfg.couplings.c_eda * (e - 3.0)).max(0.05);
    let max_rate = base.max(class_rate);
    let scr = poisson_times(
        rng,
        start,
        end,
        max_rate,
        |t| {
            if in_class(t) {
                class_rate
            } else {
                base
            }
        },
    );
    let mut impulses = vec![0.0; n_eda];
    for &t in &scr {
        let i = ((t - start) * EDA_HZ) as usize;
        if i < n_eda {
            impulses[i] += rng.random_range(0.05..0.3);
            if in_class(t) {
                truth.n_scr += 1;
            }
        }
    }
    let kernel = bateman_kernel(EDA_HZ);
    let mut tonic = phys.tonic_us;
    let mut eda = vec![0.0; n_eda];
    for i in 0..n_eda {
        tonic = (tonic + normal(rng, 0.002)).max(0.3);
        let mut phasic = 0.0;
        for (k, h) in kernel.iter().enumerate().take(i + 1) {
            phasic += impulses[i - k] * h;
        }
        eda[i] = tonic + phasic + normal(rng, cfg.noise.eda);
    }
    if let Some(t_bad) = plan.bad_contact_at {
        let lo = ((t_bad - start) * EDA_HZ).max(0.0) as usize;
        let hi = (((t_bad + 240.0) - start) * EDA_HZ).max(0.0) as usize;
        for v in eda.iter_mut().take(hi.min(n_eda)).skip(lo) {
            *v = 0.001 * rng.random::<f64>();
        }
    }
    let eda: Vec<f64> = eda.into_iter().map(|v| quantize(v.max(0.0), 1e-6)).collect();

    // BVP: fast systolic upstroke and exponential diastolic runoff at beat
    // times from a modulated RR series.
    let n_bvp = (dur * BVP_HZ).round() as usize;
    let rr0 = 60_000.0 / phys.heart_rate_bpm;
    let hf = cfg.hf_amplitude_ms * (1.0 + cfg.couplings.c_hrv * (c - 3.0)).max(0.1);
    truth.hf_amplitude_ms = hf;
    let (phi_lf, phi_hf) = (
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    let mut bvp = vec![0.0; n_bvp];
    let rise = 0.04;
    let reach = (3.0 * BVP_HZ) as isize;
    let mut t = start + rng.random_range(0.0..1.0);
    let mut rr = rr0;
    while t < end {
        let decay = 0.3 * rr / 1000.0;
        let onset = (t - start) * BVP_HZ;
        let amp = 1.0 + normal(rng, 0.05);
        let ci = onset.ceil() as isize;
        for i in ci.max(0)..(ci + reach).min(n_bvp as isize) {
            let d = (i as f64 - onset) / BVP_HZ;
            bvp[i as usize] += amp * (1.0 - (-d / rise).exp()) * (-d / decay).exp();
        }
        let tau = t - start;
        rr = rr0
            + cfg.lf_amplitude_ms * (std::f64::consts::TAU * 0.1 * tau + phi_lf).sin()
            + hf * (std::f64::consts::TAU * phys.resp_hz * tau + phi_hf).sin()
            + normal(rng, cfg.noise.rr);
        t += rr.max(300.0) / 1000.0;
    }
    let bvp: Vec<f64> = bvp
        .into_iter()
        .map(|v| quantize(100.0 * (v - 0.3 + normal(rng, cfg.noise.bvp)), 1e-3))
        .collect();

    // ACC: gravity, bursts of fidgeting in class, walking outside.
    let n_acc = (dur * ACC_HZ).round() as usize;
    let burst_rate = cfg.burst_rate_per_min / 60.0 * (1.0 + cfg.couplings.c_acc * (b - 3.0)).max(0.0);
    let bursts = poisson_times(rng, plan.class_start, plan.class_end, burst_rate, |_| burst_rate);
    truth.n_bursts = bursts.len();
    let mut motion = vec![[0.0f64; 3]; n_acc];
    for &tb in &bursts {
        let len = rng.random_range(2.0..6.0);
        let amp = rng.random_range(0.15..0.5);
        let f = rng.random_range(1.0..3.0);
        let axis = rng.random_range(0..3);
        let lo = ((tb - start) * ACC_HZ).max(0.0) as usize;
        let hi = (((tb + len) - start) * ACC_HZ) as usize;
        for (k, m) in motion.iter_mut().enumerate().take(hi.min(n_acc)).skip(lo) {
            let s = (k - lo) as f64 / ACC_HZ;
            m[axis] += amp * (std::f64::consts::TAU * f * s).sin().abs();
        }
    }
    let gait = rng.random_range(1.6..2.0);
    let (mut ax, mut ay, mut az) = (
        Vec::with_capacity(n_acc),
        Vec::with_capacity(n_acc),
        Vec::with_capacity(n_acc),
    );
    for (k, m) in motion.iter().enumerate() {
        let t = start + k as f64 / ACC_HZ;
        let walk = if in_class(t) {
            0.0
        } else {
            0.3 + 0.3 * (std::f64::consts::TAU * gait * t).sin()
        };
        ax.push(quantize(m[0] + normal(rng, cfg.noise.acc), 1e-4));
        ay.push(quantize(m[1] + normal(rng, cfg.noise.acc), 1e-4));
        az.push(quantize(1.0 + walk + m[2] + normal(rng, cfg.noise.acc), 1e-4));
    }

    // Skin temperature: slow oscillation around the personal level.
    let n_st = (dur * ST_HZ).round() as usize;
    let st: Vec<f64> = (0..n_st)
        .map(|k| {
            let t = start + k as f64 / ST_HZ;
            quantize(
                33.0 + phys.st_offset + 0.3 * (std::f64::consts::TAU * t / 1800.0).sin() + normal(rng, cfg.noise.st),
                1e-3,
            )
        })
        .collect();

    let traces = vec![
        SensorTrace::new(Channel::Eda, start, EDA_HZ, eda)?,
        SensorTrace::new(Channel::Bvp, start, BVP_HZ, bvp)?,
        SensorTrace::new(Channel::AccX, start, ACC_HZ, ax)?,
        SensorTrace::new(Channel::AccY, start, ACC_HZ, ay)?,
        SensorTrace::new(Channel::AccZ, start, ACC_HZ, az)?,
        SensorTrace::new(Channel::St, start, ST_HZ, st)?,
    ];
    Ok((
        Segment {
            start_time: start,
            traces,
        },
        truth,
    ))
}

/// Simulates one participant's recordings for a day, one segment per
/// planned class (plus stray fragments), and returns the generator counts
/// per plan.
pub fn simulate_participant_day(
    participant_id: &str,
    role: Role,
    date: NaiveDate,
    physiology: &Physiology,
    sessions: &[SessionPlan],
    cfg: &SynthConfig,
    seed: u64,
) -> Result<(ParticipantDay, Vec<SessionTruth>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = Vec::new();
    let mut truths = Vec::new();
    for plan in sessions {
        if plan.latent.iter().any(|v| !(1.0..=5.0).contains(v)) {
            return Err(Error::validation("latents must lie in [1, 5]"));
        }
        if plan.stray_segment {
            let s0 = (plan.record_start - 60.0).floor();
            let (seg, _) = simulate_segment(plan, s0, s0 + 8.0, physiology, cfg, &mut rng)?;
            segments.push(seg);
        }
        let end = plan
            .dropout_at
            .map_or(plan.record_end, |t| t.floor().min(plan.record_end));
        let (seg, truth) = simulate_segment(plan, plan.record_start, end, physiology, cfg, &mut rng)?;
        segments.push(seg);
        truths.push(truth);
    }
    Ok((
        ParticipantDay {
            participant_id: participant_id.to_string(),
            role,
            date,
            segments,
        },
        truths,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRecord {
    pub participant_id: String,
    pub class_id: String,
    pub behavioural: f64,
    pub emotional: f64,
    pub cognitive: f64,
}

/// Everything about a cohort except the sensor samples, which are
/// simulated one day at a time.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub config: SynthConfig,
    pub dates: Vec<NaiveDate>,
    pub students: Vec<String>,
    pub teachers: Vec<String>,
    /// The schedule, in time order; actual times are left unset.
    pub classes: Vec<ClassInfo>,
    /// True start and end of each class, parallel to `classes`.
    pub actual_times: Vec<(UtcSeconds, UtcSeconds)>,
    /// Whether the class is recorded (a survey period).
    pub recorded: Vec<bool>,
    pub env: Vec<EnvTrace>,
    pub surveys: Vec<SurveyResponse>,
    pub latents: Vec<LatentRecord>,
    physiology: Vec<Physiology>,
    teacher_physiology: Vec<Physiology>,
}

fn school_dates(first: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = first;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

fn likert(rng: &mut ChaCha8Rng, latent: f64, reversed: bool, noise: f64) -> i8 {
    let mut q = (latent - 3.0).round();
    if reversed {
        q = -q;
    }
    if rng.random::<f64>() < noise {
        q += if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    q.clamp(-2.0, 2.0) as i8
}

/// Plans the cohort: schedule, latents, surveys and room sensors.
pub fn plan_cohort(cfg: &SynthConfig) -> Result<Cohort> {
    cfg.validate()?;
    let dates = school_dates(cfg.first_date()?, cfg.days);
    let students: Vec<String> = (1..=cfg.n_students).map(|i| format!("S{i:02}")).collect();
    let teachers: Vec<String> = (1..=cfg.n_teachers).map(|i| format!("T{i}")).collect();
    let ingest = cfg.ingest_config();

    let mut traits = Vec::new();
    let mut physiology = Vec::new();
    for s in 0..cfg.n_students {
        let mut rng = substream(cfg.seed, STREAM_TRAIT, s, 0);
        traits.push([0; 3].map(|_| truncated(&mut rng, cfg.trait_mean, cfg.trait_sd)));
        physiology.push(Physiology::draw(&mut rng));
    }
    let teacher_physiology: Vec<Physiology> = (0..cfg.n_teachers)
        .map(|t| Physiology::draw(&mut substream(cfg.seed, STREAM_TRAIT, cfg.n_students + t, 0)))
        .collect();

    let slot = cfg.slot_minutes() * 60.0;
    let class_len = cfg.class_minutes * 60.0;
    let mut classes = Vec::new();
    let mut actual_times = Vec::new();
    let mut recorded = Vec::new();
    for (d, &date) in dates.iter().enumerate() {
        let (day_start, _) = ingest.school_day(date);
        for p in 0..cfg.classes_per_day {
            let idx = d * cfg.classes_per_day + p;
            let subject = Subject::ALL[idx % Subject::ALL.len()];
            let subject_idx = Subject::ALL.iter().position(|s| *s == subject).unwrap_or(0);
            let start = (day_start + p as f64 * slot + ((slot - class_len) / 2.0 / 60.0).floor() * 60.0).round();
            let mut rng = substream(cfg.seed, STREAM_CLASS, idx, 0);
            let mut shift = || {
                if cfg.max_shift_seconds > 0.0 {
                    rng.random_range(-cfg.max_shift_seconds..=cfg.max_shift_seconds).round()
                } else {
                    0.0
                }
            };
            let actual = (start + shift(), start + class_len + shift());
            classes.push(ClassInfo {
                class_id: format!("{}-P{}", date.format("%Y-%m-%d"), p + 1),
                room_id: format!("R{}", 1 + subject_idx % cfg.n_rooms),
                subject,
                date,
                scheduled_start: start,
                scheduled_end: start + class_len,
                actual_start: None,
                actual_end: None,
                enrolled: students.clone(),
                teacher: Some(teachers[subject_idx % cfg.n_teachers].clone()),
            });
            actual_times.push(actual);
            recorded.push(cfg.survey_periods.contains(&(p + 1)));
        }
    }

    let mut latents = Vec::new();
    let mut surveys = Vec::new();
    for (ci, class) in classes.iter().enumerate() {
        if !recorded[ci] {
            continue;
        }
        for (s, pid) in students.iter().enumerate() {
            let mut rng = substream(cfg.seed, STREAM_LATENT, s, ci);
            let [tb, te, tc] = traits[s];
            let lat = [tb, te, tc].map(|m| truncated(&mut rng, m, cfg.session_sd));
            latents.push(LatentRecord {
                participant_id: pid.clone(),
                class_id: class.class_id.clone(),
                behavioural: lat[0],
                emotional: lat[1],
                cognitive: lat[2],
            });
            let mut rng = substream(cfg.seed, STREAM_SURVEY, s, ci);
            if rng.random::<f64>() < cfg.response_rate {
                let n = cfg.noise.survey;
                let items = [
                    likert(&mut rng, lat[0], false, n),
                    likert(&mut rng, lat[0], true, n),
                    likert(&mut rng, lat[1], false, n),
                    likert(&mut rng, lat[1], true, n),
                    likert(&mut rng, lat[2], false, n),
                ];
                let submitted = (class.scheduled_end + rng.random_range(60.0..1800.0)).round();
                let completion = rng.random_range(30.0..180.0f64).round();
                surveys.push(SurveyResponse::new(
                    pid.clone(),
                    class.class_id.clone(),
                    submitted,
                    items,
                    completion,
                )?);
            }
        }
    }

    let env = simulate_env(cfg, &dates, &classes, &actual_times, &ingest);
    Ok(Cohort {
        config: cfg.clone(),
        dates,
        students,
        teachers,
        classes,
        actual_times,
        recorded,
        env,
        surveys,
        latents,
        physiology,
        teacher_physiology,
    })
}

fn simulate_env(
    cfg: &SynthConfig,
    dates: &[NaiveDate],
    classes: &[ClassInfo],
    actual: &[(f64, f64)],
    ingest: &IngestConfig,
) -> Vec<EnvTrace> {
    let step = 300.0;
    let mut out = Vec::new();
    for r in 0..cfg.n_rooms {
        let room = format!("R{}", r + 1);
        let mut samples = Vec::new();
        for (d, &date) in dates.iter().enumerate() {
            let mut rng = substream(cfg.seed, STREAM_ENV, r, d);
            let (t0, t1) = ingest.school_day(date);
            let mut co2: f64 = 420.0;
            let mut t = t0;
            while t < t1 {
                let occupied = classes
                    .iter()
                    .zip(actual)
                    .any(|(c, (a, e))| c.room_id == room && c.date == date && t >= *a && t < *e);
                if occupied {
                    co2 += cfg.couplings.c_env * step / 60.0;
                } else {
                    co2 = 420.0 + (co2 - 420.0) * (-step / 1200.0).exp();
                }
                let occ = if occupied { 1.0 } else { 0.0 };
                samples.push(EnvSample {
                    timestamp: t,
                    temp_c: quantize(21.5 + 0.6 * occ + normal(&mut rng, 0.1), 0.01),
                    humidity_pct: quantize((45.0 + 3.0 * occ + normal(&mut rng, 0.5)).clamp(0.0, 100.0), 0.01),
                    co2_ppm: quantize((co2 + normal(&mut rng, 5.0)).max(300.0), 0.1),
                    sound_db: quantize(38.0 + 20.0 * occ + normal(&mut rng, 2.0), 0.1),
                });
                t += step;
            }
        }
        out.push(EnvTrace { room_id: room, samples });
    }
    out
}

impl Cohort {
    pub fn latent(&self, participant_id: &str, class_id: &str) -> Option<[f64; 3]> {
        self.latents
            .iter()
            .find(|l| l.participant_id == participant_id && l.class_id == class_id)
            .map(|l| [l.behavioural, l.emotional, l.cognitive])
    }

    /// Participants in the order used for seeding: students, then teachers.
    pub fn participants(&self) -> Vec<(String, Role)> {
        self.students
            .iter()
            .map(|s| (s.clone(), Role::Student))
            .chain(self.teachers.iter().map(|t| (t.clone(), Role::Teacher)))
            .collect()
    }

    fn plans_for(&self, participant: usize, role: Role, day: usize) -> Vec<SessionPlan> {
        let cfg = &self.config;
        let date = self.dates[day];
        let pid = &self.participants()[participant].0;
        let mut rng = substream(cfg.seed, STREAM_DAY, participant, day);
        let mut out = Vec::new();
        for (ci, class) in self.classes.iter().enumerate() {
            if class.date != date || !self.recorded[ci] {
                continue;
            }
            let attends = match role {
                Role::Student => class.enrolled.contains(pid),
                Role::Teacher => class.teacher.as_deref() == Some(pid.as_str()),
            };
            if !attends {
                continue;
            }
            let (a, e) = self.actual_times[ci];
            let latent = match role {
                Role::Student => self.latent(pid, &class.class_id).unwrap_or([3.0; 3]),
                Role::Teacher => [3.0; 3],
            };
            let dropout = rng.random::<f64>() < cfg.dropout_rate;
            let dropout_at = dropout.then(|| rng.random_range(a + 60.0..e - 60.0));
            let bad = rng.random::<f64>() < cfg.bad_contact_rate;
            let bad_contact_at = bad.then(|| rng.random_range(a..(e - 240.0).max(a + 1.0)));
            out.push(SessionPlan {
                record_start: class.scheduled_start - cfg.margin_seconds,
                record_end: class.scheduled_end + cfg.margin_seconds,
                class_start: a,
                class_end: e,
                latent,
                dropout_at,
                bad_contact_at,
                stray_segment: rng.random::<f64>() < cfg.stray_segment_rate,
            });
        }
        out
    }

    /// Recordings of everyone on day `day` (index into `dates`), clipped to
    /// the school day exactly as the loader does. Participants without a
    /// recorded class that day are omitted.
    pub fn simulate_day(&self, day: usize) -> Result<Vec<ParticipantDay>> {
        Ok(self.simulate_day_with_truth(day)?.into_iter().map(|(d, _)| d).collect())
    }

    pub fn simulate_day_with_truth(&self, day: usize) -> Result<Vec<(ParticipantDay, Vec<SessionTruth>)>> {
        let date = *self
            .dates
            .get(day)
            .ok_or_else(|| Error::validation(format!("day {day} is outside the cohort")))?;
        let ingest = self.config.ingest_config();
        let mut out = Vec::new();
        for (p, (pid, role)) in self.participants().into_iter().enumerate() {
            let plans = self.plans_for(p, role, day);
            if plans.is_empty() {
                continue;
            }
            let phys = match role {
                Role::Student => self.physiology[p],
                Role::Teacher => self.teacher_physiology[p - self.students.len()],
            };
            let seed = substream(self.config.seed, STREAM_PHYSIO, p, day).random();
            let (mut pd, truth) = simulate_participant_day(&pid, role, date, &phys, &plans, &self.config, seed)?;
            pd.segments = retain_school_day(pd.segments, date, &ingest);
            out.push((pd, truth));
        }
        Ok(out)
    }

    pub fn latents_csv(&self) -> String {
        let mut out = String::from("participant_id,class_id,behavioural,emotional,cognitive\n");
        for l in &self.latents {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                l.participant_id, l.class_id, l.behavioural, l.emotional, l.cognitive
            );
        }
        out
    }

    /// Writes `schedule.csv`, `env.csv`, `surveys.csv`, `latents.csv` and one
    /// `<date>/<participant>/segNN/` export per recorded participant-day.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tables = [
            ("schedule.csv", render_schedule_csv(&self.classes)),
            ("env.csv", render_env_csv(&self.env)),
            ("surveys.csv", render_surveys_csv(&self.surveys)),
            ("latents.csv", self.latents_csv()),
        ];
        for (name, content) in tables {
            let path = dir.join(name);
            fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        }
        for day in 0..self.dates.len() {
            for pd in self.simulate_day(day)? {
                let pdir = dir
                    .join(pd.date.format("%Y-%m-%d").to_string())
                    .join(&pd.participant_id);
                write_e4_day(&pdir, &pd)?;
            }
        }
        Ok(())
    }
}

/// Plans the cohort and writes it under `dir`.
pub fn generate_cohort(cfg: &SynthConfig, dir: &Path) -> Result<Cohort> {
    let cohort = plan_cohort(cfg)?;
    cohort.write(dir)?;
    Ok(cohort)
}
