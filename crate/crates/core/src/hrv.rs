//! Systolic peak detection, inter-beat intervals and HRV descriptors.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::config::HrvConfig;
use crate::error::{Error, Result};
use crate::types::{SensorTrace, UtcSeconds};

const MIN_TRACE_SECONDS: f64 = 2.0;
const MIN_SPECTRUM_SECONDS: f64 = 120.0;
const INTERVAL_TOLERANCE_MS: f64 = 1e-3;

/// Centered moving average with windows truncated at the edges.
fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let half = window / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in values {
        prefix.push(prefix.last().copied().unwrap_or_default() + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Beat times (UTC seconds) of a BVP trace.
///
/// The trace is first smoothed with a short centered moving average.
/// Candidates are local maxima above the centered rolling mean; of two
/// candidates closer than the refractory period the larger survives. Peak
/// positions are refined with a parabola through the neighbouring samples.
pub fn detect_beats(bvp: &SensorTrace, cfg: &HrvConfig) -> Result<Vec<UtcSeconds>> {
    if bvp.duration() < MIN_TRACE_SECONDS {
        return Err(Error::InsufficientData(format!(
            "BVP trace of {:.2} s is shorter than {MIN_TRACE_SECONDS} s",
            bvp.duration()
        )));
    }
    let rate = bvp.sample_rate;
    let smoothing = (cfg.smoothing_seconds * rate).round() as usize;
    let smoothed;
    let v = if smoothing >= 2 {
        smoothed = rolling_mean(&bvp.values, smoothing | 1);
        &smoothed
    } else {
        &bvp.values
    };
    let window = ((cfg.rolling_window_seconds * rate).round() as usize).max(1);
    let threshold = rolling_mean(v, window);
    let refractory = cfg.refractory_ms / 1000.0 * rate;

    // One candidate per contiguous run above the threshold: its highest
    // interior local maximum.
    let is_peak = |i: usize| v[i] > v[i - 1] && v[i] >= v[i + 1];
    let mut candidates: Vec<usize> = Vec::new();
    let mut run_best: Option<usize> = None;
    for i in 1..v.len().saturating_sub(1) {
        if v[i] > threshold[i] {
            if is_peak(i) && run_best.is_none_or(|b| v[i] > v[b]) {
                run_best = Some(i);
            }
        } else if let Some(b) = run_best.take() {
            candidates.push(b);
        }
    }
    candidates.extend(run_best);

    let mut kept: Vec<usize> = Vec::new();
    for i in candidates {
        match kept.last_mut() {
            Some(last) if ((i - *last) as f64) < refractory => {
                if v[i] > v[*last] {
                    *last = i;
                }
            }
            _ => kept.push(i),
        }
    }

    Ok(kept
        .into_iter()
        .map(|k| {
            let (a, b, c) = (v[k - 1], v[k], v[k + 1]);
            let curv = a - 2.0 * b + c;
            let offset = if curv < 0.0 {
                (0.5 * (a - c) / curv).clamp(-0.5, 0.5)
            } else {
                0.0
            };
            bvp.start_time + (k as f64 + offset) / rate
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalFlag {
    Detected,
    Interpolated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IbiSeries {
    pub beat_times: Vec<UtcSeconds>,
    /// RR intervals in milliseconds; `intervals[i]` ends at `beat_times[i + 1]`.
    pub intervals: Vec<f64>,
    pub flags: Vec<IntervalFlag>,
}

impl IbiSeries {
    pub fn n_interpolated(&self) -> usize {
        self.flags.iter().filter(|f| **f == IntervalFlag::Interpolated).count()
    }
}

/// Builds RR intervals, replacing implausible interior intervals by linear
/// interpolation between the nearest valid neighbours. Invalid intervals at
/// either end are dropped and beat times are re-accumulated from the first
/// kept beat so intervals and beat times stay consistent.
pub fn ibi_from_beats(beat_times: &[UtcSeconds], cfg: &HrvConfig) -> Result<IbiSeries> {
    let raw: Vec<f64> = beat_times.windows(2).map(|w| (w[1] - w[0]) * 1000.0).collect();
    let valid: Vec<bool> = raw.iter().map(|&r| r >= cfg.min_rr_ms && r <= cfg.max_rr_ms).collect();
    let good: Vec<usize> = (0..raw.len()).filter(|&i| valid[i]).collect();
    if good.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} valid RR intervals, at least 2 are needed",
            good.len()
        )));
    }
    let (first, last) = (good[0], good[good.len() - 1]);

    let mut intervals = Vec::with_capacity(last - first + 1);
    let mut flags = Vec::with_capacity(last - first + 1);
    let mut prev_good = first;
    for i in first..=last {
        if valid[i] {
            intervals.push(raw[i]);
            flags.push(IntervalFlag::Detected);
            prev_good = i;
        } else {
            let next_good = (i + 1..=last).find(|&j| valid[j]).unwrap_or(last);
            let w = (i - prev_good) as f64 / (next_good - prev_good) as f64;
            intervals.push(raw[prev_good] + w * (raw[next_good] - raw[prev_good]));
            flags.push(IntervalFlag::Interpolated);
        }
    }

    let mut times = Vec::with_capacity(intervals.len() + 1);
    times.push(beat_times[first]);
    for rr in &intervals {
        let t = times.last().copied().unwrap_or_default() + rr / 1000.0;
        times.push(t);
    }
    Ok(IbiSeries {
        beat_times: times,
        intervals,
        flags,
    })
}

/// The ten HRV descriptors. Spectral values are absent for short sessions
/// and the ratio is absent when HF power vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HrvFeatures {
    pub bpm: f64,
    pub meani: f64,
    pub sdnn: f64,
    pub rmssd: f64,
    pub sdsd: f64,
    pub pnn50: f64,
    pub pnn20: f64,
    pub lf_power: Option<f64>,
    pub hf_power: Option<f64>,
    pub ratio_lf_hf: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeFeatures {
    pub bpm: f64,
    pub meani: f64,
    pub sdnn: f64,
    pub rmssd: f64,
    pub sdsd: f64,
    pub pnn50: f64,
    pub pnn20: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FreqFeatures {
    pub lf_power: f64,
    pub hf_power: f64,
    pub ratio_lf_hf: Option<f64>,
}

fn pop_mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn hrv_time_features(ibi: &IbiSeries) -> Result<TimeFeatures> {
    let rr = &ibi.intervals;
    if rr.len() < 2 {
        return Err(Error::InsufficientData(
            "time-domain HRV needs at least 2 intervals".into(),
        ));
    }
    let (meani, sdnn) = pop_mean_std(rr);
    let d: Vec<f64> = rr.windows(2).map(|w| w[1] - w[0]).collect();
    let rmssd = (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt();
    let (_, sdsd) = pop_mean_std(&d);
    // Beat times near 1.5e9 s carry about 0.2 us of rounding.
    let share = |limit: f64| {
        100.0 * d.iter().filter(|x| x.abs() > limit + INTERVAL_TOLERANCE_MS).count() as f64 / d.len() as f64
    };
    Ok(TimeFeatures {
        bpm: 60000.0 / meani,
        meani,
        sdnn,
        rmssd,
        sdsd,
        pnn50: share(50.0),
        pnn20: share(20.0),
    })
}

/// Welch power spectral density (density scaling, one-sided) of `x`
/// sampled at `fs`, using periodic Hann segments of `nperseg` samples with
/// 50% overlap and per-segment mean removal. Returns `(freqs, psd)`.
pub fn welch_psd(x: &[f64], fs: f64, nperseg: usize) -> (Vec<f64>, Vec<f64>) {
    let nperseg = nperseg.min(x.len()).max(1);
    let step = (nperseg / 2).max(1);
    let window: Vec<f64> = (0..nperseg)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / nperseg as f64).cos())
        .collect();
    let win_power: f64 = window.iter().map(|w| w * w).sum();
    let n_freq = nperseg / 2 + 1;
    let mut psd = vec![0.0; n_freq];
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nperseg);
    let mut buf = vec![Complex::new(0.0, 0.0); nperseg];
    let mut segments = 0usize;
    let mut start = 0;
    while start + nperseg <= x.len() {
        let seg = &x[start..start + nperseg];
        let mean = seg.iter().sum::<f64>() / nperseg as f64;
        for ((b, s), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new((s - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (p, b) in psd.iter_mut().zip(&buf) {
            *p += b.norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let scale = 1.0 / (fs * win_power * segments.max(1) as f64);
    for (k, p) in psd.iter_mut().enumerate() {
        *p *= scale;
        let nyquist = nperseg.is_multiple_of(2) && k == nperseg / 2;
        if k != 0 && !nyquist {
            *p *= 2.0;
        }
    }
    let freqs = (0..n_freq).map(|k| k as f64 * fs / nperseg as f64).collect();
    (freqs, psd)
}

/// Trapezoidal integral of `psd` over bins with `lo <= f < hi`.
pub fn band_power(freqs: &[f64], psd: &[f64], lo: f64, hi: f64) -> f64 {
    let idx: Vec<usize> = (0..freqs.len()).filter(|&k| freqs[k] >= lo && freqs[k] < hi).collect();
    idx.windows(2)
        .map(|w| 0.5 * (psd[w[0]] + psd[w[1]]) * (freqs[w[1]] - freqs[w[0]]))
        .sum()
}

/// RR series evenly resampled at `rate` Hz by linear interpolation, with the
/// mean removed. Each interval is placed at the beat that ends it.
pub fn resample_rr(ibi: &IbiSeries, rate: f64) -> Vec<f64> {
    let t = &ibi.beat_times[1..];
    let rr = &ibi.intervals;
    let t0 = t[0];
    let n = ((t[t.len() - 1] - t0) * rate).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let tk = t0 + k as f64 / rate;
        while j + 2 < t.len() && t[j + 1] < tk {
            j += 1;
        }
        let v = if t.len() == 1 {
            rr[0]
        } else {
            let w = ((tk - t[j]) / (t[j + 1] - t[j])).clamp(0.0, 1.0);
            rr[j] + w * (rr[j + 1] - rr[j])
        };
        out.push(v);
    }
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    out.iter_mut().for_each(|v| *v -= mean);
    out
}

pub fn hrv_freq_features(ibi: &IbiSeries, cfg: &HrvConfig) -> Result<FreqFeatures> {
    let span = ibi.beat_times.last().copied().unwrap_or_default() - ibi.beat_times.first().copied().unwrap_or_default();
    if span < MIN_SPECTRUM_SECONDS {
        return Err(Error::InsufficientData(format!(
            "spectral HRV needs {MIN_SPECTRUM_SECONDS} s of intervals, got {span:.1} s"
        )));
    }
    let x = resample_rr(ibi, cfg.resample_hz);
    let nperseg = (cfg.segment_seconds * cfg.resample_hz).round() as usize;
    let (freqs, psd) = welch_psd(&x, cfg.resample_hz, nperseg);
    let lf_power = band_power(&freqs, &psd, cfg.lf_band.0, cfg.lf_band.1);
    let hf_power = band_power(&freqs, &psd, cfg.hf_band.0, cfg.hf_band.1);
    Ok(FreqFeatures {
        lf_power,
        hf_power,
        ratio_lf_hf: (hf_power >= 1e-12).then(|| lf_power / hf_power),
    })
}

/// All HRV descriptors from a BVP trace. Spectral descriptors are left
/// absent when the session is too short for them.
pub fn hrv_features(bvp: &SensorTrace, cfg: &HrvConfig) -> Result<(IbiSeries, HrvFeatures)> {
    let beats = detect_beats(bvp, cfg)?;
    let ibi = ibi_from_beats(&beats, cfg)?;
    let t = hrv_time_features(&ibi)?;
    let f = hrv_freq_features(&ibi, cfg).ok();
    Ok((
        ibi,
        HrvFeatures {
            bpm: t.bpm,
            meani: t.meani,
            sdnn: t.sdnn,
            rmssd: t.rmssd,
            sdsd: t.sdsd,
            pnn50: t.pnn50,
            pnn20: t.pnn20,
            lf_power: f.map(|f| f.lf_power),
            hf_power: f.map(|f| f.hf_power),
            ratio_lf_hf: f.and_then(|f| f.ratio_lf_hf),
        },
    ))
}
